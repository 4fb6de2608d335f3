"""Finite-sample analysis of families of moduli of continuity.

A family is a finite list of moduli or a generator ``n -> sigma_n`` (``n >= 1``)
queried up to a member budget.  Every quantity computed here is an estimate
indexed by the sample grid and the budget: the underlying definitions range
over infinitely many members and a continuum of points.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, InvariantError
from .modulus import ModulusOfContinuity

DEFAULT_ZERO_THRESHOLD = 1e-9

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModulusFamily:
    """Moduli sharing the interval ``(0, interval_end]``.

    ``members`` is either a finite sequence of moduli (or plain vectorized
    callables) or a generator ``n -> member`` for ``n = 1, 2, ...``.
    """

    members: Union[Sequence, Callable[[int], object]]
    interval_end: float = 1.0
    name: str = "family"

    @property
    def is_generator(self) -> bool:
        return callable(self.members) and not isinstance(self.members, (list, tuple))

    def size(self) -> Optional[int]:
        return None if self.is_generator else len(self.members)

    def member(self, n: int):
        """The ``n``-th member, ``n >= 1``."""
        if n < 1:
            raise DomainError("members are indexed from 1")
        if self.is_generator:
            return self.members(n)
        return self.members[n - 1]

    def first(self, budget: int) -> list:
        if budget < 1:
            raise DomainError("member budget must be at least 1")
        count = budget if self.is_generator else min(budget, len(self.members))
        if count == 0:
            raise DomainError("empty family")
        return [self.member(n) for n in range(1, count + 1)]

    def union(self, other: "ModulusFamily") -> "ModulusFamily":
        """Interleaved union ``(a_1, b_1, a_2, b_2, ...)``.

        Interleaving keeps a budget of ``2n`` aligned with budget ``n`` on
        each side, so the finite-budget union law holds exactly.
        """
        if not math.isclose(self.interval_end, other.interval_end):
            raise DomainError("families must share the interval")

        def gen(n: int):
            src, idx = (self, (n + 1) // 2) if n % 2 else (other, n // 2)
            size = src.size()
            if size is not None and idx > size:
                return src.member(size)  # repeating a member leaves every infimum unchanged
            return src.member(idx)

        return ModulusFamily(gen, self.interval_end, f"{self.name}|{other.name}")


def power_family(count: Optional[int] = None, interval_end: float = 1.0) -> ModulusFamily:
    """``{t**j}``: finite with ``count`` members, otherwise a generator."""
    from .modulus import power

    if count is None:
        return ModulusFamily(lambda j: power(float(j), domain_end=interval_end), interval_end,
                             "powers")
    return ModulusFamily([power(float(j), domain_end=interval_end) for j in range(1, count + 1)],
                         interval_end, f"powers[{count}]")


def _evaluate(member, s: np.ndarray) -> np.ndarray:
    fn = member.fn if isinstance(member, ModulusOfContinuity) else member
    try:
        out = np.asarray(fn(s), dtype=float)
    except Exception as exc:  # surfaced with context, never swallowed
        raise InvariantError(f"evaluation of a family member failed: {exc}") from exc
    out = np.broadcast_to(out, s.shape)
    if np.any(np.isnan(out)):
        raise InvariantError("family member returned NaN")
    return out


def _checked_grid(grid, interval_end: float) -> np.ndarray:
    s = np.asarray(grid, dtype=float).ravel()
    if s.size == 0:
        raise DomainError("grid must be non-empty")
    if np.any(~(s > 0)) or np.any(s > interval_end * (1 + 1e-15)):
        raise DomainError(f"grid points must lie in (0, {interval_end}]")
    return s


def _running_inf(fam: ModulusFamily, s: np.ndarray, budget: int) -> tuple[np.ndarray, int]:
    members = fam.first(budget)
    inf = np.full(s.shape, np.inf)
    for m in members:
        np.minimum(inf, _evaluate(m, s), out=inf)
    return inf, len(members)


@dataclass(frozen=True)
class CollapseReport:
    mu_estimate: float
    grid: np.ndarray
    inf_values: np.ndarray
    members_evaluated: int
    zero_threshold: float

    def summary(self) -> dict:
        return {
            "mu_estimate": self.mu_estimate,
            "budget": self.members_evaluated,
            "threshold": self.zero_threshold,
            "grid_points": int(self.grid.size),
        }

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "inf_value"])
            for s, v in zip(self.grid, self.inf_values):
                w.writerow([repr(float(s)), repr(float(v))])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def collapsing_measure_estimate(fam: ModulusFamily, grid, member_budget: int,
                                zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> CollapseReport:
    """Estimate the collapsing measure ``sup{s : inf_sigma sigma(s) = 0}``.

    The infimum runs over the first ``member_budget`` members and "zero" means
    below ``zero_threshold``.  Returns 0 when no grid point collapses.  For
    generators this is a lower estimate; raising the budget can only raise it.
    """
    if not zero_threshold > 0:
        raise DomainError("zero_threshold must be positive")
    s = _checked_grid(grid, fam.interval_end)
    inf, used = _running_inf(fam, s, member_budget)
    hits = s[inf < zero_threshold]
    mu = float(hits.max()) if hits.size else 0.0
    return CollapseReport(mu, s, inf, used, zero_threshold)


@dataclass(frozen=True)
class ShoringResult:
    shored_up: bool
    min_value: float
    witness: int
    gammas_decreasing: bool
    values: np.ndarray

    def __bool__(self) -> bool:
        return self.shored_up


def is_shored_up(sigmas: Union[Sequence, Callable[[int], object]], gammas, prefix: int,
                 floor: float = 1.0) -> ShoringResult:
    """Check ``min_{n <= prefix} sigma_n(gamma_n) >= floor`` with ``gamma`` trending to 0.

    ``sigmas`` and ``gammas`` are indexed from 1 (a sequence or a callable).
    The witness is the index attaining the minimum.
    """
    if prefix < 1:
        raise DomainError("prefix must be at least 1")

    def pick(src, n):
        return src(n) if callable(src) and not isinstance(src, (list, tuple, np.ndarray)) \
            else src[n - 1]

    g = np.array([float(pick(gammas, n)) for n in range(1, prefix + 1)])
    if np.any(~(g > 0)):
        raise DomainError("gammas must be positive")
    vals = np.empty(prefix)
    for n in range(1, prefix + 1):
        sigma = pick(sigmas, n)
        v = _evaluate(sigma, np.asarray([g[n - 1]]))[0]
        if not math.isfinite(v):
            raise InvariantError(f"sigma_{n} is not finite at gamma_{n}")
        vals[n - 1] = v
    i = int(np.argmin(vals))
    # trend check: non-increasing with an overall drop (modulators are constant on blocks)
    decreasing = bool(np.all(np.diff(g) <= 0) and g[-1] < g[0]) if prefix > 1 else True
    ok = bool(vals[i] >= floor) and decreasing
    return ShoringResult(ok, float(vals[i]), i + 1, decreasing, vals)


def noncollapse_witness(fam: ModulusFamily, a: float, member_budget: int) -> float:
    """``inf`` over the first ``member_budget`` members of ``sigma(a)``.

    A positive value is evidence, not proof, that the family does not
    collapse at ``a``.
    """
    if not (math.isfinite(a) and a > 0):
        raise DomainError("a must be a positive real")
    s = _checked_grid([a], fam.interval_end)
    inf, _ = _running_inf(fam, s, member_budget)
    return float(inf[0])

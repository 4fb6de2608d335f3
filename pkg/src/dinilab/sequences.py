"""Summable sequences, block modulators and the adversarial divergence construction.

Indices start at 1 throughout.  Every infinite sequence carries a tail oracle
``tail(n) >= sum_{k>=n} a_k``; when ``exact_tail`` is set the oracle returns
the tail itself (up to rounding), which lets block sums be formed as tail
differences instead of by summing millions of terms.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np
from scipy import special

from .errors import DomainError, InconclusiveError, InvariantError

log = logging.getLogger(__name__)

ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class SummableSequence:
    kind: str
    params: dict
    term: Callable[[np.ndarray], np.ndarray]
    tail: Callable[[int], float]
    exact_tail: bool = False
    support: Optional[int] = None
    horizon: Optional[int] = None  # terms/tails are only known below this index

    def terms(self, k):
        k_arr = np.asarray(k)
        if np.any(k_arr < 1):
            raise DomainError("sequence indices start at 1")
        if self.horizon is not None and np.any(k_arr >= self.horizon):
            raise InconclusiveError(f"index beyond the constructed horizon {self.horizon}")
        out = np.asarray(self.term(k_arr), dtype=float)
        return out if out.ndim else float(out)

    def head_sum(self, n: int) -> float:
        """``sum_{k<n} a_k``."""
        if n <= 1:
            return 0.0
        if self.exact_tail:
            return self.tail(1) - self.tail(n)
        parts = []
        start = 1
        while start < n:
            stop = min(n, start + (1 << 20))
            parts.append(float(np.sum(self.term(np.arange(start, stop, dtype=np.int64)))))
            start = stop
        return math.fsum(parts)

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params}


def geometric(ratio: float, scale: float = 1.0) -> SummableSequence:
    """``scale * ratio**k``."""
    if not 0 < ratio < 1 or not scale > 0:
        raise DomainError("geometric sequence needs 0 < ratio < 1 and scale > 0")
    lq = math.log(ratio)

    def tail(n):
        return scale * math.exp(max(n, 1) * lq) / (1.0 - ratio)

    return SummableSequence(
        kind="geometric",
        params={"ratio": ratio, "scale": scale},
        term=lambda k: scale * np.exp(np.asarray(k, dtype=float) * lq),
        tail=tail,
        exact_tail=True,
    )


def power_decay(exponent: float, scale: float = 1.0) -> SummableSequence:
    """``scale * k**-exponent``, tails via the Hurwitz zeta function."""
    if not exponent > 1 or not scale > 0:
        raise DomainError("power sequence needs exponent > 1 and scale > 0")
    return SummableSequence(
        kind="power",
        params={"exponent": exponent, "scale": scale},
        term=lambda k: scale * np.power(np.asarray(k, dtype=float), -exponent),
        tail=lambda n: scale * float(special.zeta(exponent, max(n, 1))),
        exact_tail=True,
    )


def finite(values: Sequence[float]) -> SummableSequence:
    """Finitely supported sequence ``(v_1, ..., v_N, 0, 0, ...)``."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0 or np.any(v < 0):
        raise DomainError("finite sequence needs non-negative values")
    suffix = np.zeros(v.size + 2)
    for i in range(v.size - 1, -1, -1):
        suffix[i + 1] = math.fsum(v[i:])
    nz = np.nonzero(v)[0]
    support = int(nz[-1]) + 1 if nz.size else 0

    def term(k):
        k = np.asarray(k, dtype=np.int64)
        out = np.zeros(k.shape)
        inside = k <= v.size
        out[inside] = v[k[inside] - 1]
        return out

    def tail(n):
        return float(suffix[max(n, 1)]) if n <= v.size else 0.0

    return SummableSequence(kind="finite", params={"values": v.tolist()}, term=term, tail=tail,
                            exact_tail=True, support=support)


def mixture(components: Sequence[SummableSequence]) -> SummableSequence:
    """Termwise sum; tails add."""
    comps = tuple(components)
    if not comps:
        raise DomainError("empty mixture")
    exact = all(c.exact_tail for c in comps)
    return SummableSequence(
        kind="mixture",
        params={"components": [c.describe() for c in comps]},
        term=lambda k: sum(np.asarray(c.term(k), dtype=float) for c in comps),
        tail=lambda n: math.fsum(c.tail(n) for c in comps),
        exact_tail=exact,
    )


def ratio_bounded(term: Callable[[np.ndarray], np.ndarray], ratio: float, start: int = 1,
                  kind: str = "ratio_bounded") -> SummableSequence:
    """Sequence whose caller guarantees ``a_{k+1} <= ratio * a_k`` for ``k >= start``.

    The tail oracle is the geometric majorant ``a_n / (1 - ratio)`` for
    ``n >= start`` (earlier tails add the explicit head).
    """
    if not 0 < ratio < 1:
        raise DomainError("ratio bound must lie in (0, 1)")

    def tail(n):
        if n >= start:
            return float(term(np.asarray(n))) / (1.0 - ratio)
        head = float(np.sum(term(np.arange(n, start))))
        return head + float(term(np.asarray(start))) / (1.0 - ratio)

    return SummableSequence(kind=kind, params={"ratio": ratio, "start": start}, term=term, tail=tail)


def load_tabulated(path) -> SummableSequence:
    vals = []
    with open(Path(path), newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            try:
                vals.append(float(rec[-1]))
            except ValueError:
                if vals:
                    raise
    seq = finite(vals)
    return SummableSequence(seq.kind, {"csv": str(path)}, seq.term, seq.tail, True, seq.support)


def from_config(desc: dict) -> SummableSequence:
    kind = desc.get("kind")
    if kind == "geometric":
        return geometric(float(desc["ratio"]), float(desc.get("scale", 1.0)))
    if kind == "power":
        return power_decay(float(desc["exponent"]), float(desc.get("scale", 1.0)))
    if kind == "finite":
        return finite(desc["values"])
    if kind == "tabulated":
        return load_tabulated(desc["csv"])
    if kind == "mixture":
        return mixture([from_config(c) for c in desc["components"]])
    raise DomainError(f"unknown sequence kind {kind!r}")


# ---------------------------------------------------------------------------
# norms


def _first_index_below(tail: Callable[[int], float], threshold: float, start: int,
                       max_index: int, step_hint: int = 1) -> Optional[int]:
    """Least ``n >= start`` with ``tail(n) < threshold`` (tail non-increasing).

    Gallops from ``start`` with initial step ``step_hint`` and then bisects.
    """
    if tail(start) < threshold:
        return start
    step = max(1, step_hint)
    lo = start
    while True:
        hi = start + step
        if hi > max_index:
            if tail(max_index) < threshold:
                hi = max_index
                break
            return None
        if tail(hi) < threshold:
            break
        lo = hi
        step *= 2
    # tail(lo) >= threshold > tail(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail(mid) < threshold:
            hi = mid
        else:
            lo = mid
    return hi


def l1_norm(a: SummableSequence, precision: float = 1e-12,
            max_index: int = 1 << 40) -> tuple[float, float]:
    """Return ``(S, err)`` with ``|S - ||a||_1| <= err <= precision``."""
    if not precision > 0:
        raise DomainError("precision must be positive")
    if a.exact_tail:
        s = a.tail(1)
        return s, min(precision, 4 * np.finfo(float).eps * abs(s))
    n = _first_index_below(a.tail, 2 * precision, 1, max_index)
    if n is None:
        raise InconclusiveError(f"tail oracle cannot certify precision {precision} below index {max_index}")
    t = a.tail(n)
    return a.head_sum(n) + 0.5 * t, 0.5 * t


# ---------------------------------------------------------------------------
# modulators


@dataclass(frozen=True)
class MemberBounds:
    norm: float
    b_norm_lo: float
    b_norm_hi: float
    lemma_lo: float
    lemma_hi: float
    block_sums: tuple
    block_caps: tuple
    norm_err: float = 0.0

    @property
    def within_lemma(self) -> bool:
        lo_ok = self.b_norm_lo >= self.lemma_lo * (1 - ROUNDING_SLACK)
        hi_ok = self.b_norm_hi <= self.lemma_hi * (1 + ROUNDING_SLACK)
        return lo_ok and hi_ok

    @property
    def blocks_ok(self) -> bool:
        return all(s < cap * (1 + ROUNDING_SLACK) for s, cap in zip(self.block_sums, self.block_caps))


@dataclass(frozen=True)
class ModulatorResult:
    """Block modulator ``c`` with ``c_k = 1/(2^{j-1} eps)`` on ``[n_j, n_{j+1})``.

    ``blocks`` holds ``n_1 < n_2 < ... < n_M``; ``c_k`` is known for
    ``k < horizon = n_M`` (indices below ``n_2`` share the value ``1/eps``).
    """

    epsilon: float
    delta: float
    blocks: tuple
    members: tuple
    reference_norm: float
    family: tuple = field(default=(), repr=False, compare=False)

    @property
    def horizon(self) -> int:
        return self.blocks[-1]

    @property
    def b_norm_bounds(self) -> tuple[float, float]:
        m = self.members[0]
        return m.lemma_lo, m.lemma_hi

    @property
    def b_norm(self) -> tuple[float, float]:
        m = self.members[0]
        return m.b_norm_lo, m.b_norm_hi

    def c(self, k):
        k_arr = np.asarray(k, dtype=np.int64)
        if np.any(k_arr < 1):
            raise DomainError("indices start at 1")
        if np.any(k_arr >= self.horizon):
            raise InconclusiveError(f"modulator only constructed below index {self.horizon}")
        j = np.searchsorted(np.asarray(self.blocks[:-1], dtype=np.int64), k_arr, side="right")
        out = 1.0 / (np.exp2(np.maximum(j, 1) - 1.0) * self.epsilon)
        return out if out.ndim else float(out)

    def with_epsilon(self, epsilon: float) -> "ModulatorResult":
        """Same blocks, new ``epsilon`` (blocks depend on ``delta`` only)."""
        if not epsilon > 0:
            raise DomainError("epsilon must be positive")
        norms = [(m.norm, m.norm_err) for m in self.members]
        return _assemble(self.family, norms, list(self.blocks), epsilon, self.delta)

    def max_c(self) -> float:
        return 1.0 / self.epsilon

    def rows(self):
        """``(j, c_j, block_index)`` for ``j < horizon`` (block 0 is the head)."""
        blocks = np.asarray(self.blocks[:-1], dtype=np.int64)
        for k in range(1, self.horizon):
            j = int(np.searchsorted(blocks, k, side="right"))
            yield k, float(self.c(k)), j


def _block_sum(a: SummableSequence, lo: int, hi: int) -> float:
    """``sum_{k=lo}^{hi-1} a_k``."""
    if hi <= lo:
        return 0.0
    if a.exact_tail:
        return max(a.tail(lo) - a.tail(hi), 0.0)
    if hi - lo > 50_000_000:
        raise InconclusiveError("block too long for direct summation; supply an exact tail oracle")
    return a.head_sum(hi) - a.head_sum(lo)


def _norms(family: Sequence[SummableSequence]) -> list[tuple[float, float]]:
    norms = []
    for a in family:
        s, err = l1_norm(a, precision=1e-15)
        if not s - err > 0:
            raise DomainError("zero sequence: the modulator needs a positive l1 norm")
        norms.append((s, err))
    return norms


def block_boundaries(family: Sequence[SummableSequence], delta: float, horizon: int = 1,
                     max_blocks: int = 64, rel_resolution: float = 1e-10,
                     max_index: int = 1 << 62, norms=None) -> list[int]:
    """Indices ``n_1 < n_2 < ...`` with ``sup tail(n_j) < delta r / 2^(2j-1)``.

    ``r`` is the smallest norm in the family.  Boundaries are produced until
    ``n_M >= horizon`` and the unresolved part of the quotient norm, relative
    to ``r``, is below ``rel_resolution`` (or ``max_blocks`` is reached).
    They do not depend on ``epsilon``.
    """
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    if not family:
        raise DomainError("empty family")
    norms = _norms(family) if norms is None else norms
    r = min(s - err for s, err in norms)

    if len(family) == 1:
        sup_tail = family[0].tail
    else:
        def sup_tail(n):
            return max(a.tail(n) for a in family)

    all_finite = all(a.support is not None for a in family)
    blocks: list[int] = []
    prev = 0
    j = 1
    while True:
        thr = delta * r / 2.0 ** (2 * j - 1)
        hint = max(1, (blocks[-1] - blocks[-2]) // 2) if len(blocks) >= 2 else 1
        n = _first_index_below(sup_tail, thr, prev + 1, max_index, hint)
        if n is None:
            if len(blocks) >= 2:
                log.debug("modulator blocks stop at index limit %d; the residual bound covers "
                          "the rest", max_index)
                break
            raise InconclusiveError("tail oracle never drops below the first block threshold")
        blocks.append(n)
        prev = n
        if len(blocks) >= 2 and n >= horizon:
            t = sup_tail(n)
            resid = 2.0 ** (len(blocks) - 1) * t / r + delta / 2.0 ** len(blocks)
            if resid <= rel_resolution or (all_finite and t == 0.0) or len(blocks) >= max_blocks:
                break
        j += 1
    return blocks


def _modulate(family: Sequence[SummableSequence], epsilon: float, delta: float,
              horizon: int = 1, max_blocks: int = 64) -> ModulatorResult:
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    norms = _norms(family)
    blocks = block_boundaries(family, delta, horizon, max_blocks, norms=norms)
    return _assemble(family, norms, blocks, epsilon, delta)


def _assemble(family, norms, blocks, epsilon, delta) -> ModulatorResult:
    members = tuple(_member_bounds(a, s, err, blocks, epsilon, delta)
                    for a, (s, err) in zip(family, norms))
    r = min(s - err for s, err in norms)
    return ModulatorResult(epsilon, delta, tuple(blocks), members, r, tuple(family))


def _member_bounds(a: SummableSequence, norm: float, err: float, blocks: list[int],
                   epsilon: float, delta: float) -> MemberBounds:
    m = len(blocks)
    head = epsilon * a.head_sum(blocks[0])
    sums = []
    caps = []
    for j in range(1, m):
        sums.append(2.0 ** (j - 1) * epsilon * _block_sum(a, blocks[j - 1], blocks[j]))
        caps.append(epsilon * delta * (norm - err) / 2.0 ** j)
    t_last = a.tail(blocks[-1])
    resid_lo = 2.0 ** (m - 1) * epsilon * t_last if a.exact_tail else 0.0
    resid_hi = 2.0 ** (m - 1) * epsilon * t_last + epsilon * delta * (norm + err) / 2.0 ** m
    body = math.fsum([head, *sums])
    return MemberBounds(
        norm=norm,
        b_norm_lo=body + resid_lo,
        b_norm_hi=body + resid_hi,
        lemma_lo=epsilon * (1 - delta / 2) * norm,
        lemma_hi=epsilon * (1 + delta) * norm,
        block_sums=tuple(sums),
        block_caps=tuple(caps),
        norm_err=err,
    )


def dp_modulator(a: SummableSequence, epsilon: float, delta: float, *, horizon: int = 1,
                 max_blocks: int = 64) -> ModulatorResult:
    """c0 modulator with ``eps(1-delta/2)||a|| <= ||a/c|| <= eps(1+delta)||a||``.

    ``n_j`` is the least index above ``n_{j-1}`` whose tail is below
    ``delta ||a|| / 2^(2j-1)``.  Blocks are generated until ``c`` is known on
    ``[1, horizon)`` and the unresolved part of ``||a/c||`` is negligible.
    """
    return _modulate([a], epsilon, delta, horizon=horizon, max_blocks=max_blocks)


def dp_modulator_compact(family: Sequence[SummableSequence], epsilon: float, delta: float, *,
                         horizon: int = 1, max_blocks: int = 64) -> ModulatorResult:
    """One modulator valid for every member of a finite family.

    Thresholds use ``r = min ||a||`` and the largest tail across members.
    """
    fam = list(family)
    if not fam:
        raise DomainError("empty family")
    return _modulate(fam, epsilon, delta, horizon=horizon, max_blocks=max_blocks)


# ---------------------------------------------------------------------------
# adversarial construction


@dataclass(frozen=True)
class NullSequence:
    """A positive sequence ``c_j -> 0`` on Python integers.

    ``reciprocal_sum(n, m)`` returns ``sum_{j=n}^m 1/c_j`` as an mpmath number;
    the generic fallback sums directly and refuses very long ranges.
    """

    name: str
    value: Callable[[int], float]
    reciprocal_sum: Optional[Callable[[int, int], "mpmath.mpf"]] = None
    monotone: bool = True

    def recip_sum(self, n: int, m: int):
        if m < n:
            return mpmath.mpf(0)
        if self.reciprocal_sum is not None:
            return self.reciprocal_sum(n, m)
        if m - n > 20_000_000:
            raise InconclusiveError(f"{self.name}: range too long for direct summation")
        j = np.arange(n, m + 1, dtype=np.int64)
        vals = np.array([1.0 / self.value(int(x)) for x in j]) if m - n < 1000 else \
            1.0 / np.vectorize(lambda x: self.value(int(x)))(j)
        return mpmath.mpf(math.fsum(vals))


def harmonic_null() -> NullSequence:
    return NullSequence(
        "harmonic",
        lambda j: 1.0 / j,
        lambda n, m: mpmath.mpf((n + m) * (m - n + 1) // 2),
    )


def geometric_null(q: float = 0.5) -> NullSequence:
    if not 0 < q < 1:
        raise DomainError("geometric null sequence needs 0 < q < 1")
    Q = mpmath.mpf(q)

    def recip(n, m):
        return (Q ** (-(m + 1)) - Q ** (-n)) / (1 / Q - 1)

    return NullSequence(f"geometric({q})", lambda j: q ** j if j < 1074 else 0.0, recip)


def inverse_log_null() -> NullSequence:
    """``c_j = 1/log(j+1)``; reciprocal sums are log-factorial differences."""

    def value(j):
        return 1.0 / math.log(j + 1)

    def recip(n, m):
        with mpmath.workdps(30):
            return mpmath.loggamma(mpmath.mpf(m + 2)) - mpmath.loggamma(mpmath.mpf(n + 1))

    return NullSequence("inverse_log", value, recip)


def _least_below(c: NullSequence, thr: float, lower: int, max_bits: int) -> int:
    """Least ``j >= lower`` with ``c_j < thr`` for a non-increasing ``c``."""
    if c.value(lower) < thr:
        return lower
    step = 1
    lo = lower
    while True:
        hi = lower + step
        if hi.bit_length() > max_bits:
            raise InconclusiveError(f"{c.name}: no index below 2^{max_bits} with c_j < {thr}")
        if c.value(hi) < thr:
            break
        lo = hi
        step <<= 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if c.value(mid) < thr:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class AdversarialResult:
    """Monotone ``a`` with ``||a||_1 = 1`` whose quotient ``a/c`` sums past a target."""

    sequence: SummableSequence
    K: int
    partial_sum: float
    norm: float
    block_starts: tuple
    head_value: "mpmath.mpf"
    block_values: tuple
    block_contributions: tuple

    def __iter__(self):
        yield self.sequence
        yield self.K

    def is_monotone(self) -> bool:
        vals = (self.head_value, *self.block_values)
        return all(vals[i + 1] <= vals[i] for i in range(len(vals) - 1))


def adversarial_for(c: NullSequence, target: float, indices: Optional[Sequence[int]] = None,
                    max_bits: int = 200_000, max_blocks: int = 200,
                    window: int = 10_000) -> AdversarialResult:
    """Build ``a`` (monotone, unit l1 norm) with ``sum_{j<=K} a_j/c_j > target``.

    ``n_k`` satisfies ``c_j < 2^-(2k+3)`` for ``j >= n_k`` and the gaps
    ``n_1 - 1 < n_2 - n_1 < ...`` increase.  The head ``a_1..a_{n_1-1}``
    equals ``1/(2(n_1-1))`` and block ``k`` equals ``1/(2^(k+1)(n_{k+1}-n_k))``,
    so each complete block adds at least ``2^(k+2)`` to the quotient sum.
    Indices may be supplied; otherwise they are searched assuming ``c`` is
    non-increasing (non-monotone ``c`` is only checked on a finite window).
    """
    if not math.isfinite(target):
        raise DomainError("target must be finite")
    starts: list[int] = []
    supplied = list(indices) if indices is not None else None
    total = mpmath.mpf(0)
    contributions = []
    values = []
    head = None
    k = 0
    while True:
        k += 1
        if k > max_blocks:
            raise InconclusiveError(f"target {target} not exceeded within {max_blocks} blocks")
        thr = 2.0 ** -(2 * k + 3)
        if k == 1:
            lower = 2
        else:
            prev2 = starts[-2] if len(starts) >= 2 else 1
            lower = starts[-1] + (starts[-1] - prev2) + 1
        if supplied is not None:
            if k > len(supplied):
                raise InconclusiveError("supplied indices exhausted before reaching the target")
            n = int(supplied[k - 1])
            if n < lower:
                raise DomainError(f"supplied n_{k}={n} violates the increasing-gap condition")
        else:
            n = _least_below(c, thr, lower, max_bits)
        if not c.value(n) < thr:
            raise InvariantError(f"c_{n} is not below 2^-{2 * k + 3}")
        if not c.monotone:
            probe = range(n, n + window)
            if any(not c.value(j) < thr for j in probe):
                raise InvariantError(f"c exceeds 2^-{2 * k + 3} after n_{k}={n}")
        starts.append(n)
        if k == 1:
            head = mpmath.mpf(1) / (2 * (n - 1))
            total += head * c.recip_sum(1, n - 1)
            continue
        # block k-1 is now complete: [n_{k-1}, n_k)
        width = starts[-1] - starts[-2]
        v = mpmath.mpf(1) / (mpmath.mpf(2) ** k * width)
        contrib = v * c.recip_sum(starts[-2], starts[-1] - 1)
        values.append(v)
        contributions.append(contrib)
        total += contrib
        if total > target:
            break

    K = starts[-1] - 1
    nblocks = len(values)
    norm = float(mpmath.fsum([head * (starts[0] - 1)] +
                             [values[i] * (starts[i + 1] - starts[i]) for i in range(nblocks)]) +
                 mpmath.mpf(2) ** -(nblocks + 1))
    seq = _block_sequence(starts, head, values)
    return AdversarialResult(seq, K, float(total), norm, tuple(starts), head, tuple(values),
                             tuple(float(x) for x in contributions))


def _block_sequence(starts: list[int], head, values: list) -> SummableSequence:
    """Piecewise-constant sequence with exact tails (mass of block k is 2^-(k+1))."""
    bounds = list(starts)
    vals = [head, *values]
    horizon = bounds[-1]

    def value_at(k: int):
        i = 0
        for b in bounds[:-1]:
            if k >= b:
                i += 1
        return vals[i]

    def term(k):
        k = np.asarray(k)
        flat = [float(value_at(int(x))) for x in k.ravel()]
        return np.asarray(flat, dtype=float).reshape(k.shape)

    def tail(n: int) -> float:
        if n >= horizon:
            return float(mpmath.mpf(2) ** -len(vals))
        i = 0
        for b in bounds[:-1]:
            if n >= b:
                i += 1
        end = bounds[i]
        return float(vals[i] * (end - n) + mpmath.mpf(2) ** -(i + 1))

    return SummableSequence(kind="adversarial", params={"blocks_hex": [hex(b) for b in bounds]},
                            term=term, tail=tail, exact_tail=True, horizon=horizon)

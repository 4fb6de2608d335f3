"""Moduli of continuity: evaluation, generalized inversion and Dini certification.

A modulus is an increasing function ``omega`` on ``(0, T]`` with
``omega(0+) = 0``.  Besides the plain evaluator, a modulus may carry exact
helpers that the numerical routines exploit when present:

``log_u``
    ``u -> ln omega(exp(-u))``, which keeps tiny arguments representable.
``log_v``
    ``v -> ln omega(exp(-exp(v)))``, needed when certifying divergence of
    slowly decaying moduli such as ``(1 - ln t)^-1``.
``primitive_u``
    ``u -> int_0^{exp(-u)} omega(t)/t dt`` (an upper bound is acceptable),
    used to certify tails of geometric sums.
``closed_inverse``
    exact generalized inverse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InvariantError, OutOfRangeError, SandwichViolation

Array = np.ndarray

TINY = 5e-324


@dataclass(frozen=True)
class ModulusOfContinuity:
    """An increasing function on ``(0, domain_end]`` vanishing at ``0+``.

    ``fn`` must accept numpy arrays.  The optional helpers are described in the
    module docstring.
    """

    family: str
    params: dict
    domain_end: float
    fn: Callable[[Array], Array]
    log_u: Optional[Callable[[Array], Array]] = None
    log_v: Optional[Callable[[Array], Array]] = None
    primitive_u: Optional[Callable[[float], float]] = None
    closed_inverse: Optional[Callable[[float], float]] = None
    monotone_tolerance: float = 0.0
    tail_bound: float = 0.0
    vanishes: bool = True
    sup_value: Optional[float] = field(default=None, compare=False)
    power_form: Optional[tuple] = None  # (alpha, coef) when omega = coef * t**alpha

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(~(t_arr > 0)) or np.any(t_arr > self.domain_end * (1 + 1e-15)):
            raise DomainError(f"argument outside (0, {self.domain_end}] for {self.family}")
        out = np.asarray(self.fn(t_arr), dtype=float)
        if not np.all(np.isfinite(out)):
            raise InvariantError(f"non-finite value of {self.family} modulus")
        return out if out.ndim else float(out)

    def eval_u(self, u):
        """``omega(exp(-u))`` for ``u >= -ln T``; safe for very large ``u``."""
        u = np.asarray(u, dtype=float)
        if self.log_u is not None:
            return np.exp(self.log_u(u))
        t = np.exp(-u)
        return np.asarray(self.fn(np.maximum(t, TINY)), dtype=float)

    def log_eval_v(self, v):
        """``ln omega(exp(-exp(v)))`` or ``None`` when it cannot be represented."""
        v = np.asarray(v, dtype=float)
        if self.log_v is not None:
            return self.log_v(v)
        if np.all(v < 700.0):
            with np.errstate(divide="ignore"):
                return np.log(self.eval_u(np.exp(v)))
        return None

    @property
    def sup(self) -> float:
        if self.sup_value is not None:
            return self.sup_value
        if math.isinf(self.domain_end):
            return math.inf
        return float(self.fn(np.asarray(self.domain_end)))

    def describe(self) -> dict:
        return {"family": self.family, "domain_end": self.domain_end, **self.params}


@dataclass(frozen=True)
class DegeneracyLaw:
    """A modulus used as the gradient-dependent factor of the operator.

    ``sandwich_constant`` is the ``C`` of a relaxed law ``C^-1 rho <= sigma <= C rho``
    (1 when the law was given directly).
    """

    sigma: ModulusOfContinuity
    normalized: bool = True
    sandwich_constant: float = 1.0

    def __post_init__(self):
        if self.normalized:
            top = min(1.0, self.sigma.domain_end)
            if top < 1.0 or self.sigma(1.0) < 1.0:
                raise InvariantError("normalized degeneracy law requires sigma(1) >= 1")

    def __call__(self, t):
        return self.sigma(t)


@dataclass(frozen=True)
class DiniCertificate:
    verdict: str
    lower_bound: float
    upper_bound: float
    theta: float
    terms_used: int
    tau: float
    partial_sum: float = 0.0
    tail: float = math.inf
    tail_certified: bool = False

    def brackets(self, value: float) -> bool:
        return self.lower_bound <= value <= self.upper_bound


# ---------------------------------------------------------------------------
# builtin families


def power(alpha: float, coef: float = 1.0, domain_end: float = math.inf,
          monotone_tolerance: float = 0.0) -> ModulusOfContinuity:
    """``coef * t**alpha``."""
    if not alpha > 0 or not coef > 0:
        raise DomainError("power modulus needs alpha > 0 and coef > 0")
    lc = math.log(coef)
    m = ModulusOfContinuity(
        family="power",
        params={"alpha": alpha, "coef": coef},
        domain_end=domain_end,
        fn=lambda t: coef * np.power(t, alpha),
        log_u=lambda u: lc - alpha * u,
        log_v=lambda v: lc - alpha * np.exp(np.minimum(v, 700.0)),
        primitive_u=lambda u: coef * math.exp(-alpha * u) / alpha,
        closed_inverse=lambda y: (y / coef) ** (1.0 / alpha),
        monotone_tolerance=monotone_tolerance,
        power_form=(alpha, coef),
    )
    return m


def log_power(alpha: float, domain_end: float = 1.0,
              monotone_tolerance: float = 0.0) -> ModulusOfContinuity:
    """``(1 - ln t)**(-alpha)`` on ``(0, domain_end]``, ``domain_end <= 1``."""
    if not alpha > 0:
        raise DomainError("log_power needs alpha > 0")
    if not 0 < domain_end <= 1:
        raise DomainError("log_power is defined on (0, T] with T <= 1")

    def primitive(u):
        if alpha <= 1:
            return math.inf
        return (1.0 + u) ** (1.0 - alpha) / (alpha - 1.0)

    return ModulusOfContinuity(
        family="log_power",
        params={"alpha": alpha},
        domain_end=domain_end,
        fn=lambda t: np.power(1.0 - np.log(t), -alpha),
        log_u=lambda u: -alpha * np.log1p(u),
        log_v=lambda v: -alpha * np.logaddexp(0.0, v),
        primitive_u=primitive,
        closed_inverse=lambda y: math.exp(1.0 - y ** (-1.0 / alpha)),
        monotone_tolerance=monotone_tolerance,
    )


def power_series(coefficients: Sequence[float], exponents: Sequence[float],
                 tail_bound: float = 0.0, primitive_tail_bound: float = 0.0,
                 domain_end: float = 1.0) -> ModulusOfContinuity:
    """Truncated generalized power series ``sum_j a_j t**gamma_j``.

    ``tail_bound`` bounds the omitted terms on ``(0, domain_end]`` and
    ``primitive_tail_bound`` bounds ``sum_{j>N} a_j T**gamma_j / gamma_j``.
    Evaluation returns the truncated sum.
    """
    a = np.asarray(coefficients, dtype=float)
    g = np.asarray(exponents, dtype=float)
    if a.shape != g.shape or a.ndim != 1 or a.size == 0:
        raise DomainError("coefficients and exponents must be equal-length 1-d sequences")
    if np.any(a <= 0) or np.any(g <= 0):
        raise DomainError("power series needs positive coefficients and exponents")
    la = np.log(a)

    def fn(t):
        t = np.asarray(t, dtype=float)
        return np.sum(a * np.power(t[..., None], g), axis=-1)

    def log_u(u):
        u = np.asarray(u, dtype=float)
        z = la - g * u[..., None]
        zmax = np.max(z, axis=-1, keepdims=True)
        return (zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True)))[..., 0]

    def primitive(u):
        return float(np.sum(a * np.exp(-g * u) / g)) + primitive_tail_bound

    return ModulusOfContinuity(
        family="power_series",
        params={"coefficients": a.tolist(), "exponents": g.tolist(), "tail_bound": tail_bound},
        domain_end=domain_end,
        fn=fn,
        log_u=log_u,
        primitive_u=primitive,
        tail_bound=tail_bound,
    )


def root_series(terms: int = 60) -> ModulusOfContinuity:
    """``sum_j t**(1/j) / 2**j``: Dini but not Hölder of any order."""
    j = np.arange(1, terms + 1, dtype=float)
    return power_series(
        2.0 ** -j,
        1.0 / j,
        tail_bound=2.0 ** -terms,
        primitive_tail_bound=(terms + 2) * 2.0 ** -terms,
    )


def tilde_phi_weights(terms: int) -> np.ndarray:
    """Weights ``1/(2^n b_n)`` with ``b_n = int_0^1 (1 - ln t)^-(1+1/n) dt/t = n``."""
    n = np.arange(1, terms + 1, dtype=float)
    return 1.0 / (2.0 ** n * n)


def tilde_phi(terms: int = 40) -> ModulusOfContinuity:
    """``sum_n a_n (1 - ln t)^-(1+1/n)``, which dominates every ``log_power(alpha>1)``."""
    if terms < 1:
        raise DomainError("tilde_phi needs at least one term")
    n = np.arange(1, terms + 1, dtype=float)
    w = tilde_phi_weights(terms)
    p = 1.0 + 1.0 / n
    lw = np.log(w)
    tail = 2.0 ** -terms / (terms + 1)

    def fn(t):
        t = np.asarray(t, dtype=float)
        base = 1.0 - np.log(t)
        return np.sum(w * np.power(base[..., None], -p), axis=-1)

    def log_u(u):
        u = np.asarray(u, dtype=float)
        z = lw - p * np.log1p(u)[..., None]
        zmax = np.max(z, axis=-1, keepdims=True)
        return (zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True)))[..., 0]

    def log_v(v):
        v = np.asarray(v, dtype=float)
        z = lw - p * np.logaddexp(0.0, v)[..., None]
        zmax = np.max(z, axis=-1, keepdims=True)
        return (zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True)))[..., 0]

    def primitive(u):
        # a_n * n * (1+u)^(-1/n) = 2^-n (1+u)^(-1/n); omitted terms add at most 2^-N
        return float(np.sum(2.0 ** -n * (1.0 + u) ** (-1.0 / n))) + 2.0 ** -terms

    return ModulusOfContinuity(
        family="tilde_phi",
        params={"terms": terms},
        domain_end=1.0,
        fn=fn,
        log_u=log_u,
        log_v=log_v,
        primitive_u=primitive,
        tail_bound=tail,
    )


def constant(value: float = 1.0) -> ModulusOfContinuity:
    """Constant law; not a modulus (no decay) but models the uniformly elliptic cap."""
    if not value > 0:
        raise DomainError("constant law must be positive")
    lv = math.log(value)
    return ModulusOfContinuity(
        family="constant",
        params={"value": value},
        domain_end=math.inf,
        fn=lambda t: np.full(np.shape(t), value, dtype=float),
        log_u=lambda u: np.full(np.shape(u), lv),
        primitive_u=lambda u: math.inf,
        vanishes=False,
        sup_value=value,
    )


def tabulated(ts: Sequence[float], ws: Sequence[float],
              monotone_tolerance: float = 0.0) -> ModulusOfContinuity:
    """Piecewise-linear modulus through ``(t_i, w_i)``, linear to 0 below ``t_0``."""
    t = np.asarray(ts, dtype=float)
    w = np.asarray(ws, dtype=float)
    if t.ndim != 1 or t.shape != w.shape or t.size < 2:
        raise DomainError("tabulated modulus needs two equal-length columns with >= 2 rows")
    if np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise DomainError("abscissae must be positive and strictly increasing")
    if np.any(w <= 0):
        raise InvariantError("tabulated values must be positive")
    drops = w[:-1] - w[1:]
    if np.any(drops > monotone_tolerance):
        i = int(np.argmax(drops))
        raise InvariantError(f"tabulated modulus decreases between t={t[i]} and t={t[i + 1]}")
    w = np.maximum.accumulate(w)
    t0, w0 = t[0], w[0]

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < t0, w0 * x / t0, np.interp(x, t, w))

    def inverse(y):
        if y <= w0:
            return y * t0 / w0
        i = int(np.searchsorted(w, y, side="left"))
        if i >= w.size:
            raise OutOfRangeError(f"{y} exceeds the tabulated maximum {w[-1]}")
        return float(t[i - 1] + (y - w[i - 1]) * (t[i] - t[i - 1]) / (w[i] - w[i - 1]))

    return ModulusOfContinuity(
        family="tabulated",
        params={"rows": int(t.size)},
        domain_end=float(t[-1]),
        fn=fn,
        closed_inverse=inverse,
        monotone_tolerance=monotone_tolerance,
    )


def load_tabulated(path, monotone_tolerance: float = 0.0) -> ModulusOfContinuity:
    """Read a two-column CSV ``t, omega(t)`` (an optional header row is skipped)."""
    rows = []
    with open(Path(path), newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise
    if not rows:
        raise DomainError(f"no numeric rows in {path}")
    ts, ws = zip(*rows)
    m = tabulated(ts, ws, monotone_tolerance)
    return _replace(m, params={"csv": str(path), "rows": len(rows)})


def from_callable(fn: Callable[[Array], Array], domain_end: float = 1.0,
                  name: str = "callable", monotone_tolerance: float = 0.0) -> ModulusOfContinuity:
    """Wrap an arbitrary (vectorized) increasing function."""
    return ModulusOfContinuity(family=name, params={}, domain_end=domain_end,
                               fn=fn, monotone_tolerance=monotone_tolerance)


def _replace(m: ModulusOfContinuity, **changes) -> ModulusOfContinuity:
    from dataclasses import replace
    return replace(m, **changes)


# ---------------------------------------------------------------------------
# compositions


def rescale(m: ModulusOfContinuity, outer: float = 1.0, inner: float = 1.0,
            family: str = "composed") -> ModulusOfContinuity:
    """``t -> outer * omega(inner * t)``."""
    if not outer > 0 or not inner > 0:
        raise DomainError("rescale factors must be positive")
    params = {"op": "rescale", "outer": outer, "inner": inner, "of": m.describe()}
    if m.power_form is not None:
        a, c = m.power_form
        p = power(a, outer * c * inner ** a, m.domain_end / inner)
        return _replace(p, family=family, params=params)
    lo, li = math.log(outer), math.log(inner)
    log_u = None
    if m.log_u is not None:
        base = m.log_u
        log_u = lambda u: lo + base(np.asarray(u) - li)  # noqa: E731
    prim = None
    if m.primitive_u is not None:
        p = m.primitive_u
        prim = lambda u: outer * p(u - li)  # noqa: E731
    inv = None
    if m.closed_inverse is not None:
        ci = m.closed_inverse
        inv = lambda y: ci(y / outer) / inner  # noqa: E731
    sup = None if m.sup_value is None else outer * m.sup_value
    return ModulusOfContinuity(
        family=family,
        params=params,
        domain_end=m.domain_end / inner,
        fn=lambda t: outer * m.fn(inner * np.asarray(t, dtype=float)),
        log_u=log_u,
        primitive_u=prim,
        closed_inverse=inv,
        monotone_tolerance=outer * m.monotone_tolerance,
        tail_bound=outer * m.tail_bound,
        vanishes=m.vanishes,
        sup_value=sup,
    )


def gamma_of(sigma) -> ModulusOfContinuity:
    """``t -> t * sigma(t)``; its generalized inverse is the ``omega`` of the scale choice."""
    s = sigma.sigma if isinstance(sigma, DegeneracyLaw) else sigma
    if s.power_form is not None:
        a, c = s.power_form
        g = power(1.0 + a, c, s.domain_end)
        return _replace(g, family="composed", params={"op": "t*sigma", "of": s.describe()})
    if s.family == "constant":
        g = power(1.0, s.params["value"], s.domain_end)
        return _replace(g, family="composed", params={"op": "t*sigma", "of": s.describe()})
    log_u = None
    if s.log_u is not None:
        su = s.log_u
        log_u = lambda u: -np.asarray(u) + su(u)  # noqa: E731
    top = s.domain_end
    return ModulusOfContinuity(
        family="composed",
        params={"op": "t*sigma", "of": s.describe()},
        domain_end=top,
        fn=lambda t: np.asarray(t, dtype=float) * s.fn(np.asarray(t, dtype=float)),
        log_u=log_u,
        monotone_tolerance=s.monotone_tolerance,
    )


def inverse_modulus(m: ModulusOfContinuity, tol: float = 1e-13) -> ModulusOfContinuity:
    """The generalized inverse ``y -> inf{t : omega(t) >= y}`` as a modulus."""
    if m.power_form is not None:
        a, c = m.power_form
        inv = power(1.0 / a, c ** (-1.0 / a), m.sup)
        return _replace(inv, family="composed", params={"op": "inverse", "of": m.describe()})

    def one(v):
        if m.closed_inverse is not None and 0 < v <= m.sup * (1 + 1e-15):
            return min(float(m.closed_inverse(v)), m.domain_end)  # may underflow to 0
        return inverse_evaluate(m, v, tol)

    def fn(y):
        y = np.asarray(y, dtype=float)
        flat = [one(float(v)) for v in y.ravel()]
        return np.asarray(flat, dtype=float).reshape(y.shape)

    fwd = m.fn
    return ModulusOfContinuity(
        family="composed",
        params={"op": "inverse", "of": m.describe()},
        domain_end=m.sup,
        fn=fn,
        closed_inverse=lambda t: float(fwd(np.asarray(t, dtype=float))),
    )


# ---------------------------------------------------------------------------
# operations


def evaluate(m: ModulusOfContinuity, t: float) -> float:
    """``omega(t)`` with domain and finiteness checks."""
    if not (isinstance(t, (int, float, np.floating)) and math.isfinite(t)):
        raise DomainError(f"argument {t!r} is not a finite real")
    return float(m(float(t)))


def validate(m: ModulusOfContinuity, floor: float = 2.0 ** -60, vanish_ratio: float = 0.5,
             u_max: float = 1e6) -> None:
    """Check positivity, sampled monotonicity and decay to zero.

    Samples a dyadic grid from ``min(T, 1)`` down to ``floor``; when the
    modulus knows its ``log_u`` form the decay check continues out to
    ``u = u_max``.  Raises :class:`InvariantError` on violation.
    """
    top = m.domain_end if math.isfinite(m.domain_end) else 1.0
    k = int(math.ceil(math.log2(top / floor)))
    ts = top * 2.0 ** -np.arange(k + 1, dtype=float)[::-1]
    vals = np.asarray(m.fn(ts), dtype=float)
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        bad = ts[np.argmax(~(np.isfinite(vals) & (vals > 0)))]
        raise InvariantError(f"{m.family}: omega is not positive and finite at t={bad}")
    drops = vals[:-1] - vals[1:]
    if np.any(drops > m.monotone_tolerance):
        i = int(np.argmax(drops))
        raise InvariantError(f"{m.family}: omega decreases between t={ts[i]} and t={ts[i + 1]}")
    if not m.vanishes:
        return
    low = vals[0]
    if m.log_u is not None:
        low = min(low, float(np.exp(m.log_u(np.asarray(u_max)))))
    if not low <= vanish_ratio * vals[-1]:
        raise InvariantError(f"{m.family}: omega does not decay towards 0 on the sampled grid")


def _bracket_below(fn, y: float, hi: float) -> float:
    """Find ``lo < hi`` with ``fn(lo) < y`` by squaring the shrink factor."""
    step = 1
    lo = hi
    while True:
        lo = max(hi * 2.0 ** -step, TINY)
        if float(fn(np.asarray(lo))) < y or lo <= TINY:
            return lo
        step *= 2


def generalized_inverse(fn, y: float, lo: float, hi: float, tol: float,
                        monotone_tolerance: float = 0.0, max_iter: int = 4000) -> float:
    """Bisect for ``inf{t in (lo, hi] : fn(t) >= y}`` given ``fn(lo) < y <= fn(hi)``.

    Returns the right end of the final bracket, so ``fn(result) >= y`` always
    holds; the bracket is shrunk until ``hi - lo <= tol * hi``.
    """
    flo = float(fn(np.asarray(lo)))
    fhi = float(fn(np.asarray(hi)))
    if flo >= y:
        return lo
    for _ in range(max_iter):
        if hi - lo <= tol * hi:
            break
        if lo > 0 and hi > 4 * lo:
            mid = math.sqrt(lo) * math.sqrt(hi)
        else:
            mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        fm = float(fn(np.asarray(mid)))
        if fm < flo - monotone_tolerance or fm > fhi + monotone_tolerance:
            raise InvariantError(f"non-monotone evaluator detected near t={mid}")
        if fm >= y:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return hi


def inverse_evaluate(m: ModulusOfContinuity, y: float, tol: float = 1e-12) -> float:
    """Generalized (left-continuous) inverse ``inf{t : omega(t) >= y}``."""
    if not (math.isfinite(y) and y > 0):
        raise DomainError(f"inverse needs a positive finite value, got {y}")
    if not tol > 0:
        raise DomainError("tol must be positive")
    sup = m.sup
    if y > sup * (1 + 1e-15):
        raise OutOfRangeError(f"{y} exceeds sup omega = {sup}")
    if m.closed_inverse is not None:
        t = float(m.closed_inverse(y))
        if not t > 0:
            raise OutOfRangeError(f"the inverse at {y} underflows double precision")
        if t > m.domain_end * (1 + 1e-12):
            raise OutOfRangeError(f"{y} is not attained on (0, {m.domain_end}]")
        return min(t, m.domain_end)
    if math.isfinite(m.domain_end):
        hi = m.domain_end
    else:
        hi = 1.0
        for _ in range(2100):
            if float(m.fn(np.asarray(hi))) >= y:
                break
            hi *= 2.0
        else:
            raise OutOfRangeError(f"{y} not reached on the sampled range")
    lo = _bracket_below(m.fn, y, hi)
    return generalized_inverse(m.fn, y, lo, hi, tol, m.monotone_tolerance)


def dini_integral(m: ModulusOfContinuity, tau: float = 1.0, theta: float = 0.5,
                  cap: float = 1e6, tol: float = 1e-6, max_terms: int = 1 << 27,
                  accelerate_after: int = 1 << 16, max_pieces: int = 50_000_000) -> DiniCertificate:
    """Bracket ``int_0^tau omega(t)/t dt`` through sums along ``tau * theta**n``.

    With ``S_N = sum_{n<=N} omega(tau theta^n)`` the certificate reports
    ``lower = (1-theta) S_N`` and ``upper = (1-theta)/theta (omega(tau) + S_N + tail)``.
    ``tail`` bounds ``sum_{n>N} omega(tau theta^n)``; it is certified when the
    modulus has a primitive and estimated from the decay ratio otherwise.

    If the tail is infinite (known divergent primitive, or no geometric decay
    left) after ``accelerate_after`` terms, the lower bound is pushed further
    by partitioning in ``v = ln ln(1/t)``, which reaches arguments far below
    double precision.
    """
    if not 0 < tau <= m.domain_end:
        raise DomainError(f"tau must lie in (0, {m.domain_end}]")
    if not 0 < theta < 1:
        raise DomainError("theta must lie in (0, 1)")
    if not cap > 0 or not tol > 0:
        raise DomainError("cap and tol must be positive")

    u0 = -math.log(tau)
    step = -math.log(theta)
    w_tau = float(m.eval_u(np.asarray(u0)))
    factor_lo = 1.0 - theta
    factor_hi = (1.0 - theta) / theta

    partials: list[float] = []
    n_done = 0
    chunk = 64
    last_two = (math.nan, math.nan)
    tail = math.inf
    certified = False

    def make(verdict, lower, extra=0):
        upper = factor_hi * (w_tau + s + tail) if math.isfinite(tail) else math.inf
        if verdict == "divergent":
            upper = math.inf
        return DiniCertificate(verdict, lower, max(upper, lower), theta, n_done + extra, tau,
                               s, tail, certified)

    s = 0.0
    while n_done < max_terms:
        k = min(chunk, max_terms - n_done)
        n = np.arange(n_done + 1, n_done + k + 1, dtype=float)
        vals = m.eval_u(u0 + n * step)
        if not np.all(np.isfinite(vals)):
            raise InvariantError(f"{m.family}: non-finite value in geometric sum")
        partials.append(float(np.sum(vals)))
        s = math.fsum(partials)
        n_done += k
        if k >= 2:
            last_two = (float(vals[-2]), float(vals[-1]))
        u_n = u0 + n_done * step
        if m.primitive_u is not None:
            tail = m.primitive_u(u_n) / step
            certified = True
        else:
            prev, cur = last_two
            q = cur / prev if prev > 0 else 0.0
            tail = cur * q / (1.0 - q) if q < 1.0 else math.inf
            certified = False
        lower = factor_lo * s
        if lower > cap:
            return make("divergent", lower)
        if tail < tol:
            return make("dini", lower)
        if math.isinf(tail) and n_done >= accelerate_after:
            break
        chunk = min(chunk * 2, 1 << 20)
    else:
        return make("inconclusive", factor_lo * s)

    # Divergence acceleration: pieces [u_i, u_{i+1}] with ln u_{i+1} = ln u_i + 1.
    # int_{u_i}^{u_{i+1}} omega(e^-u) du >= omega(e^-u_{i+1}) (u_{i+1} - u_i).
    lower = factor_lo * s
    v = math.log(u0 + n_done * step)
    pieces = 0
    acc = [lower]
    drop = math.log1p(-math.exp(-1.0))
    while pieces < max_pieces:
        k = min(1 << 18, max_pieces - pieces)
        vs = v + np.arange(1, k + 1, dtype=float)
        lw = m.log_eval_v(vs)
        if lw is None:
            break
        incr = np.exp(lw + vs + drop)
        acc.append(float(np.sum(incr)))
        pieces += k
        v += k
        lower = math.fsum(acc)
        if lower > cap:
            return make("divergent", lower, pieces)
    return make("inconclusive", lower, pieces)


def xi_norm(sigma, tau: float = 1.0, theta: float = 0.5) -> tuple[float, float]:
    """Bracket ``sigma(1) + int_0^tau sigma^-1(l)/l dl``."""
    s = sigma.sigma if isinstance(sigma, DegeneracyLaw) else sigma
    inv = inverse_modulus(s)
    cert = dini_integral(inv, tau=min(tau, inv.domain_end), theta=theta, tol=1e-9)
    base = evaluate(s, 1.0)
    return base + cert.lower_bound, base + cert.upper_bound


def equivalent_law_rescue(sigma_raw: Callable[[Array], Array], rho: ModulusOfContinuity,
                          C: float, grid: Sequence[float]) -> DegeneracyLaw:
    """Replace a non-monotone law by a comparable modulus ``rho``.

    Accepts when ``rho/C <= sigma_raw <= C rho`` on every grid point; the
    returned law carries ``C`` so sources can be rescaled by the bounded ratio.
    """
    if not C >= 1:
        raise DomainError("sandwich constant must be >= 1")
    pts = np.sort(np.asarray(grid, dtype=float))
    if pts.size == 0:
        raise DomainError("empty grid")
    raw = np.asarray(sigma_raw(pts), dtype=float)
    ref = np.asarray(rho(pts), dtype=float)
    ok = (raw * C >= ref * (1 - 1e-15)) & (raw <= C * ref * (1 + 1e-15))
    if not np.all(ok):
        i = int(np.argmin(ok))
        raise SandwichViolation(float(pts[i]),
                                f"sandwich fails at t={pts[i]}: sigma={raw[i]}, rho={ref[i]}, C={C}")
    normalized = rho.domain_end >= 1 and float(rho(1.0)) >= 1
    return DegeneracyLaw(rho, normalized=normalized, sandwich_constant=float(C))


# ---------------------------------------------------------------------------
# config (JSON) descriptors


def from_config(desc: dict) -> ModulusOfContinuity:
    """Build a modulus from ``{"family": ..., ...}`` records."""
    fam = desc.get("family")
    end = desc.get("domain_end")
    if fam == "power":
        return power(float(desc["alpha"]), float(desc.get("coef", 1.0)),
                     math.inf if end is None else float(end))
    if fam == "log_power":
        return log_power(float(desc["alpha"]), 1.0 if end is None else float(end))
    if fam == "power_series":
        if "coefficients" in desc:
            return power_series(desc["coefficients"], desc["exponents"],
                                float(desc.get("tail_bound", 0.0)),
                                float(desc.get("primitive_tail_bound", 0.0)),
                                1.0 if end is None else float(end))
        return root_series(int(desc.get("terms", 60)))
    if fam == "tilde_phi":
        return tilde_phi(int(desc.get("terms", 40)))
    if fam == "constant":
        return constant(float(desc.get("value", 1.0)))
    if fam == "tabulated":
        return load_tabulated(desc["csv"], float(desc.get("monotone_tolerance", 0.0)))
    raise DomainError(f"unknown modulus family {fam!r}")

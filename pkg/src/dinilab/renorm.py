"""Scale selection, the shoring-up recursion and the resulting C1 modulus.

Given a degeneracy law ``sigma`` the recursion builds products
``tau_k = mu_1 ... mu_k`` and renormalized laws

    sigma_k(t) = tau_k / r**k * sigma(tau_k * t),

choosing each ``mu_k`` so that ``sigma_k(c_k) >= 1`` along a block modulator
``c`` of the sequence ``a_k = sigma^-1(theta**k)``.  All products are carried
in log space; ``tau_k`` and ``r**k`` leave the double range quickly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize

from . import modulus as mod
from . import sequences as seq
from .errors import ConfigError, DomainError, InconclusiveError, InvariantError

log = logging.getLogger(__name__)

CASE1 = "case1"
CASE2 = "case2"


@dataclass(frozen=True)
class RenormParams:
    """Inputs of the recursion.

    ``L`` and ``beta`` are the constants of the approximation step (taken as
    given), ``alpha`` is the exponent used when ``omega = O(t**beta)``.
    """

    sigma: mod.DegeneracyLaw
    L: float = 2.0
    beta: float = 0.5
    alpha: Optional[float] = None
    delta: float = 1.0 / 20.0
    depth: int = 40
    root_tol: float = 1e-14
    case_override: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.sigma, mod.DegeneracyLaw):
            raise ConfigError("sigma must be a DegeneracyLaw")
        if not self.L > 1:
            raise ConfigError(f"L must exceed 1, got {self.L}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.alpha is not None and not 0 < self.alpha < self.beta:
            raise ConfigError(f"alpha must lie in (0, beta) = (0, {self.beta}), got {self.alpha}")
        if not 0 < self.delta < 0.1:
            raise ConfigError(f"delta must lie in the open interval (0, 1/10), got {self.delta}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise ConfigError(f"depth must be a positive integer, got {self.depth}")
        if not self.root_tol > 0:
            raise ConfigError("root_tol must be positive")
        if self.case_override not in (None, CASE1, CASE2):
            raise ConfigError(f"case_override must be {CASE1!r} or {CASE2!r}")

    @property
    def epsilon(self) -> float:
        return 1.0 / (1.0 + self.delta)


@dataclass(frozen=True)
class InitialScale:
    case_tag: str
    r: float
    mu1: float
    theta: float
    auxiliary: bool = False  # r was not a root of the defining equation


def _log_sigma(sigma: mod.ModulusOfContinuity, x: float) -> float:
    """``ln sigma(x)`` without underflow for tiny ``x``."""
    if sigma.log_u is not None:
        return float(sigma.log_u(np.asarray(-math.log(x))))
    val = float(sigma.fn(np.asarray(x)))
    if not val > 0:
        raise InvariantError(f"sigma vanishes at {x}; its logarithm is undefined")
    return math.log(val)


def _omega(p: RenormParams) -> mod.ModulusOfContinuity:
    """Generalized inverse of ``t -> t sigma(t)``."""
    return mod.inverse_modulus(mod.gamma_of(p.sigma))


def decide_case(p: RenormParams, max_level: int = 60) -> str:
    """Compare ``omega(t)`` with ``t**beta`` along ``t = 2**-m``, ``m <= max_level``.

    ``omega / t**beta`` growing by three orders of magnitude selects the case
    ``t**beta = o(omega)``; a ratio that stays within a factor 10 of its early
    maximum selects ``omega = O(t**beta)``.  Anything else is undecided.
    """
    if p.case_override is not None:
        return p.case_override
    omega = _omega(p)
    ms = np.arange(1, max_level + 1, dtype=float)
    ts = 2.0 ** -ms
    q = np.array([mod.inverse_evaluate(mod.gamma_of(p.sigma), t) for t in ts]) / ts ** p.beta \
        if omega.power_form is None else np.asarray(omega.fn(ts)) / ts ** p.beta
    if q[-1] >= 1e3 * q[0] and np.all(np.diff(q[-20:]) >= 0):
        return CASE1
    if q[-1] <= 10.0 * np.max(q[: max_level // 2]):
        return CASE2
    raise InconclusiveError("cannot decide the scale case from dyadic samples; set case_override")


def choose_initial_scale(p: RenormParams, check_dini: bool = True) -> InitialScale:
    """Pick ``r < mu_1 < 1`` and ``theta = r / mu_1``.

    Case 1 solves ``2 L r**beta = omega(r)`` on ``(0, 1/2)`` and sets
    ``mu_1 = omega(r)``; case 2 sets ``r = (2L)**(1/(alpha - beta))`` and
    ``mu_1 = r**alpha``.
    """
    sigma = p.sigma.sigma
    if check_dini and sigma.vanishes:
        inv = mod.inverse_modulus(sigma)
        cert = mod.dini_integral(inv, tau=min(1.0, inv.domain_end), max_terms=1 << 20)
        if cert.verdict == "divergent":
            raise DomainError("the inverse of sigma violates the Dini condition")
        if cert.verdict == "inconclusive":
            log.warning("Dini condition for the inverse of sigma is not certified")
    case = decide_case(p)
    if case == CASE2:
        if p.alpha is None:
            raise ConfigError("the second scale case needs alpha in (0, beta)")
        r = (2.0 * p.L) ** (1.0 / (p.alpha - p.beta))
        if not r < 0.5:
            raise DomainError(f"r = (2L)^(1/(alpha-beta)) = {r} is not below 1/2")
        mu1 = r ** p.alpha
        return InitialScale(CASE2, r, mu1, r / mu1)

    omega = _omega(p)
    log2l = math.log(2.0 * p.L)

    def gap(x):  # ln(2 L r^beta) - ln omega(r) at r = e^x
        r = math.exp(x)
        return log2l + p.beta * x - math.log(mod.inverse_evaluate(mod.gamma_of(p.sigma), r)
                                             if omega.power_form is None else float(omega.fn(r)))

    hi = math.log(0.5)
    if gap(hi) > 0:
        lo = hi
        for _ in range(200):
            lo -= max(1.0, abs(lo))
            if gap(lo) < 0 or lo < -700:
                break
        if not gap(lo) < 0:
            raise DomainError("no r in (0, 1/2) with 2 L r^beta <= omega(r)")
        x = optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        r = math.exp(x)
        while gap(math.log(r)) > 0:  # keep the side where 2 L r^beta <= omega(r)
            r = math.nextafter(r, 0.0)
    else:
        # no root below 1/2: take the largest dyadic r with 2 L r^beta <= omega(r)
        r = 0.25
        while gap(math.log(r)) > 0:
            r *= 0.5
            if r < 1e-300:
                raise DomainError("no admissible r below 1/2")
        log.warning("no root of 2 L r^beta = omega(r) below 1/2; using auxiliary r = %g", r)
        mu1 = float(omega(r))
        if not r < mu1 < 1:
            raise DomainError(f"auxiliary scale r = {r} gives mu_1 = {mu1} outside (r, 1)")
        return InitialScale(CASE1, r, mu1, r / mu1, auxiliary=True)
    mu1 = float(omega(r))
    if not r < mu1 < 1:
        raise DomainError(f"mu_1 = {mu1} is not in (r, 1) = ({r}, 1)")
    return InitialScale(CASE1, r, mu1, r / mu1)


def build_theta_sequence(p: RenormParams, theta: float) -> seq.SummableSequence:
    """``a_k = sigma^-1(theta**k)`` for ``k >= 1``.

    Power laws give an exact geometric sequence.  Otherwise tails use
    ``sum_{k>n} a_k <= int_0^{theta^n} sigma^-1(t)/t dt / ln(1/theta)`` when the
    inverse has a primitive, and a decay-ratio bound as a last resort.
    """
    if not 0 < theta < 1:
        raise DomainError("theta must lie in (0, 1)")
    inv = mod.inverse_modulus(p.sigma.sigma)
    if inv.power_form is not None:
        a_exp, coef = inv.power_form
        q = theta ** a_exp
        return seq.geometric(q, coef)
    lt = -math.log(theta)

    def term(k):
        k = np.asarray(k, dtype=float)
        flat = [float(inv.eval_u(np.asarray(x * lt))) if inv.log_u is not None
                else float(inv.fn(np.asarray(math.exp(-x * lt)))) for x in k.ravel()]
        return np.asarray(flat).reshape(k.shape)

    if inv.primitive_u is not None:
        def tail(n):
            n = max(n, 1)
            return float(term(np.asarray(n))) + inv.primitive_u(n * lt) / lt
        return seq.SummableSequence("theta_sequence", {"theta": theta}, term, tail)
    vals = term(np.arange(1, 66))
    # fast decay underflows to 0; only pairs of representable terms carry a ratio
    pos = np.flatnonzero(vals[1:] > 0)
    if pos.size < 2:
        raise InconclusiveError("theta-sequence underflows before its decay can be sampled")
    ks = pos[-32:]
    q = float(np.max(vals[ks + 1] / vals[ks]))
    if not q < 1:
        raise InconclusiveError("theta-sequence shows no geometric decay; cannot bound its tail")
    log.warning("theta-sequence tail bounded by a sampled decay ratio %.3g", q)
    return seq.ratio_bounded(term, q, start=int(ks[0]) + 1, kind="theta_sequence")


@dataclass(frozen=True)
class StepRecord:
    k: int
    mu: float
    log_tau: float
    c: float
    sigma_at_c: float
    branch: str

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)


@dataclass(frozen=True)
class RenormalizationTrace:
    params: RenormParams
    scale: InitialScale
    a: seq.SummableSequence
    c: seq.ModulatorResult
    steps: tuple
    clamped: int
    quotient_sum: float = field(default=math.nan)  # sum_{k<=N} a_k / c_k
    a_norm: float = field(default=math.nan)

    @property
    def case_tag(self) -> str:
        return self.scale.case_tag

    @property
    def r(self) -> float:
        return self.scale.r

    @property
    def theta(self) -> float:
        return self.scale.theta

    @property
    def depth(self) -> int:
        return len(self.steps)

    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.steps])

    def mus(self) -> np.ndarray:
        return np.array([s.mu for s in self.steps])

    @property
    def tau_sum(self) -> float:
        return math.fsum(self.taus())

    @property
    def tau_l1_bound(self) -> float:
        """``sum_k sigma^-1(theta^k)``; a bound on ``sum tau_k`` only without clamps."""
        return self.a_norm if self.clamped == 0 else math.inf

    def raised_steps(self) -> list:
        return [s for s in self.steps if s.branch == "raised"]

    def summary(self) -> dict:
        return {
            "case": self.case_tag,
            "r": self.r,
            "mu1": self.scale.mu1,
            "theta": self.theta,
            "depth": self.depth,
            "clamped": self.clamped,
            "raised": len(self.raised_steps()),
            "tau_sum": self.tau_sum,
            "quotient_sum": self.quotient_sum,
            "a_norm": self.a_norm,
            "modulator_blocks": list(self.c.blocks),
            "auxiliary_scale": self.scale.auxiliary,
        }

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mu_k", "tau_k", "c_k", "sigma_k_at_c_k", "branch"])
            for s in self.steps:
                w.writerow([s.k, repr(s.mu), repr(s.tau), repr(s.c), repr(s.sigma_at_c), s.branch])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _log_sigma_k(sigma, log_tau: float, k: int, log_r: float, t: float) -> float:
    return log_tau - k * log_r + _log_sigma(sigma, math.exp(log_tau) * t)


def run_shoring_algorithm(p: RenormParams) -> RenormalizationTrace:
    """Run the recursion for ``k = 1..depth``.

    Step ``k >= 2`` first keeps ``mu_k = mu_{k-1}``; when that leaves
    ``sigma_k(c_k) < 1`` it raises ``mu_k`` by bisection until
    ``sigma_k(c_k) = 1`` (the returned side satisfies ``>= 1``).  If even
    ``mu_k -> 1`` does not reach 1 the step is clamped just below 1 and a
    warning is logged.
    """
    scale = choose_initial_scale(p)
    a = build_theta_sequence(p, scale.theta)
    c = seq.dp_modulator(a, p.epsilon, p.delta, horizon=p.depth + 2)
    sigma = p.sigma.sigma
    log_r = math.log(scale.r)
    cs = c.c(np.arange(1, p.depth + 1))

    steps = []
    log_tau = math.log(scale.mu1)
    val1 = math.exp(_log_sigma_k(sigma, log_tau, 1, log_r, float(cs[0])))
    steps.append(StepRecord(1, scale.mu1, log_tau, float(cs[0]), val1, "initial"))
    clamped = 0
    mu = scale.mu1
    for k in range(2, p.depth + 1):
        ck = float(cs[k - 1])
        prev = log_tau

        def value(m):
            return math.exp(_log_sigma_k(sigma, prev + math.log(float(m)), k, log_r, ck))

        v = value(mu)
        if v >= 1.0:
            branch = "kept"
        else:
            top = math.nextafter(1.0, 0.0)
            if value(top) < 1.0:
                log.warning("step %d: sigma_k(c_k) stays below 1 as mu -> 1; clamping", k)
                mu, branch = top, "clamped"
                clamped += 1
            else:
                mu = mod.generalized_inverse(value, 1.0, mu, top, p.root_tol)
                branch = "raised"
            v = value(mu)
        log_tau = prev + math.log(mu)
        steps.append(StepRecord(k, mu, log_tau, ck, v, branch))

    ks = np.arange(1, p.depth + 1)
    quotient = math.fsum(np.asarray(a.terms(ks)) / cs)
    a_norm, _ = seq.l1_norm(a)
    return RenormalizationTrace(p, scale, a, c, tuple(steps), clamped, quotient, a_norm)


def renormalized_sigma_eval(trace: RenormalizationTrace, n: int, t: float) -> float:
    """``sigma_n(t) = tau_n / r**n * sigma(tau_n * t)``; ``n = 0`` gives ``sigma``."""
    if n < 0 or n > trace.depth:
        raise DomainError(f"n must lie in [0, {trace.depth}]")
    if not t > 0:
        raise DomainError("t must be positive")
    sigma = trace.params.sigma.sigma
    if n == 0:
        return float(sigma(t))
    s = trace.steps[n - 1]
    arg = math.exp(s.log_tau) * t
    if not arg <= sigma.domain_end:
        raise DomainError(f"tau_n * t = {arg} is outside the domain of sigma")
    return math.exp(_log_sigma_k(sigma, s.log_tau, n, math.log(trace.r), t))


def renormalized_family(trace: RenormalizationTrace) -> list:
    """Vectorized evaluators ``sigma_1 .. sigma_N`` (for shoring and collapse checks)."""
    sigma = trace.params.sigma.sigma
    log_r = math.log(trace.r)
    out = []
    for s in trace.steps:
        def f(t, s=s):
            t = np.asarray(t, dtype=float)
            return np.exp(s.log_tau - s.k * log_r) * np.asarray(sigma.fn(math.exp(s.log_tau) * t))
        out.append(f)
    return out


def modulator_tail(trace: RenormalizationTrace) -> float:
    """Upper bound on ``sum_{k > N} a_k / c_k``."""
    N = trace.depth
    c = trace.c
    end = c.horizon
    ks = np.arange(N + 1, end)
    head = math.fsum(np.asarray(trace.a.terms(ks)) / np.asarray(c.c(ks))) if ks.size else 0.0
    m = len(c.blocks)
    member = c.members[0]
    resid = (2.0 ** (m - 1) * c.epsilon * trace.a.tail(end)
             + c.epsilon * c.delta * member.norm / 2.0 ** m)
    return head + resid


def c1_modulus(trace: RenormalizationTrace, C: float, t, tail: str = "modulator"):
    """``C * (sum_{i=floor(ln 1/t)}^{N} tau_i + tail)`` with ``tau_0 = 1``.

    ``tail="modulator"`` bounds the terms beyond the trace by
    ``sum_{k>N} a_k / c_k``; ``tail="geometric"`` extends the last ratio
    ``mu_N`` indefinitely (exact for a trace that has stabilized).
    """
    if not C > 0:
        raise DomainError("C must be positive")
    if tail not in ("modulator", "geometric"):
        raise DomainError("tail must be 'modulator' or 'geometric'")
    taus = np.concatenate([[1.0], trace.taus()])
    N = trace.depth
    if tail == "modulator":
        extra = modulator_tail(trace)
    else:
        mu = trace.steps[-1].mu
        extra = taus[-1] * mu / (1.0 - mu)
    suffix = np.concatenate([np.cumsum(taus[::-1])[::-1], [0.0]])

    t_arr = np.asarray(t, dtype=float)
    if np.any(~(t_arr > 0)) or np.any(t_arr >= 1):
        raise DomainError("t must lie in (0, 1)")
    m = np.floor(-np.log(t_arr)).astype(np.int64)
    if np.any(m > N):
        raise InconclusiveError(f"t requires tau beyond depth {N}; run a deeper trace")
    out = C * (suffix[m] + extra)
    return out if out.ndim else float(out)


def write_c1_samples(trace: RenormalizationTrace, C: float, path, count: int = 200) -> None:
    N = trace.depth
    ts = np.exp(-np.linspace(N + 0.5, 1e-3, count))
    vals = c1_modulus(trace, C, ts)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "gamma_t"])
        for t, v in zip(ts, vals):
            w.writerow([repr(float(t)), repr(float(v))])


def xi_norm_report(p: RenormParams, tau: float = 1.0) -> dict:
    lo, hi = mod.xi_norm(p.sigma, tau=tau)
    return {"xi_norm_lower": lo, "xi_norm_upper": hi, "tau": tau}

"""Acceptance checks for the numerical laboratory.

Each criterion is a function returning ``(passed, detail)``.  Under pytest
every check prints one ``ACCEPTANCE <n> PASS|FAIL`` line and fails the test
when its criterion does not hold; ``python3 tests/test_acceptance.py`` prints
the same lines without pytest.  Tolerances are fixed here and never tuned to
the observed results.
"""

from __future__ import annotations

import json
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from dinilab import cli
from dinilab import collapse as col
from dinilab import modulus as mod
from dinilab import pdeverify as pde
from dinilab import renorm
from dinilab import sequences as seq

SEED = 20240611
RESULTS: dict = {}


def _report(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line, flush=True)


def _linear_trace():
    p = renorm.RenormParams(sigma=mod.DegeneracyLaw(mod.power(1.0)), L=2.0, beta=0.75,
                            delta=1 / 20, depth=40)
    return renorm.run_shoring_algorithm(p)


# ---------------------------------------------------------------------------


def check_modulator_bounds():
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = None
    failures = 0
    checked = 0
    for _ in range(1000):
        a = cli._random_sequence(rng)
        for delta in (0.05, 0.09):
            base = seq.dp_modulator(a, 1.0, delta)
            for eps in (0.5, 1.0):
                res = base if eps == 1.0 else base.with_epsilon(eps)
                m = res.members[0]
                # certified: the true norm lies in [norm - err, norm + err]
                lo_req = eps * (1 - delta / 2) * (m.norm + m.norm_err)
                hi_req = eps * (1 + delta) * (m.norm - m.norm_err)
                ok = (res.max_c() <= 1 / eps
                      and m.b_norm_lo >= lo_req * (1 - 1e-12)
                      and m.b_norm_hi <= hi_req * (1 + 1e-12))
                for j, s in enumerate(m.block_sums, start=1):
                    ok = ok and s < eps * delta * (m.norm + m.norm_err) / 2 ** j * (1 + 1e-12)
                checked += 1
                if not ok:
                    failures += 1
                    worst = worst or (a.describe(), eps, delta)
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 10.0
    return ok, (f"{checked} modulator checks, {failures} violations"
                f"{'' if worst is None else f' (first {worst})'}; {elapsed:.2f} s (limit 10 s)")


def check_adversarial():
    start = time.perf_counter()
    nulls = [seq.harmonic_null(), seq.geometric_null(0.5), seq.inverse_log_null()]
    parts = []
    ok = True
    for c in nulls:
        res = seq.adversarial_for(c, 1e3)
        good = (res.is_monotone() and abs(res.norm - 1.0) <= 1e-10 and res.partial_sum > 1e3)
        ok = ok and good
        k_desc = f"2^{int(res.K).bit_length() - 1}" if res.K > 2 ** 40 else str(res.K)
        parts.append(f"{c.name}: K~{k_desc}, sum={float(res.partial_sum):.4g}, "
                     f"|norm-1|={abs(float(res.norm) - 1):.1e}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5.0
    return ok, "; ".join(parts) + f"; {elapsed:.2f} s (limit 5 s)"


def check_dini():
    start = time.perf_counter()
    ok = True
    worst_tail = 0.0
    for theta in (0.1, 0.5, 0.9):
        for alpha in (0.25, 0.5, 1.0, 2.0):
            cert = mod.dini_integral(mod.power(alpha, domain_end=1.0), theta=theta)
            ok = ok and cert.verdict == "dini" and cert.brackets(1 / alpha)
            worst_tail = max(worst_tail, cert.tail)
        cert = mod.dini_integral(mod.log_power(2.0), theta=theta)
        ok = ok and cert.verdict == "dini" and cert.brackets(1.0)
        worst_tail = max(worst_tail, cert.tail)
    div = mod.dini_integral(mod.log_power(1.0), cap=1e6)
    ok = ok and div.verdict == "divergent" and div.lower_bound > 1e6 and worst_tail <= 1e-6
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5.0
    return ok, (f"all closed forms bracketed, largest tail {worst_tail:.2e} (limit 1e-6); "
                f"log_power 1 {div.verdict} with lower {div.lower_bound:.3g}; "
                f"{elapsed:.2f} s (limit 5 s)")


def check_renorm_trace():
    start = time.perf_counter()
    tr = _linear_trace()
    notes = []
    ok = True

    def need(cond, msg):
        nonlocal ok
        if not cond:
            ok = False
            notes.append(msg)

    need(abs(tr.r - 1 / 256) <= 1e-12, f"r={tr.r!r}")
    need(abs(tr.scale.mu1 - 1 / 16) <= 1e-12, f"mu1={tr.scale.mu1!r}")
    need(abs(tr.theta - 1 / 16) <= 1e-12, f"theta={tr.theta!r}")
    need(abs(renorm.renormalized_sigma_eval(tr, 1, 1.0) - 1.0) <= 1e-10, "sigma_1(1) != 1")
    low = min(renorm.renormalized_sigma_eval(tr, s.k, s.c) for s in tr.steps[1:])
    need(low >= 1 - 1e-9, f"min sigma_k(c_k)={low!r}")
    taus = tr.taus()
    need(bool(np.all(np.diff(taus) < 0)), "tau not strictly decreasing")
    # sigma(t) = t, so sigma^-1(theta^k) = theta^k
    ks = np.arange(1, 41)
    cs = np.array([s.c for s in tr.steps])
    bound = math.fsum(tr.theta ** ks / cs)
    tau_sum = math.fsum(taus)
    need(tau_sum <= bound, f"sum tau={tau_sum:.7g} > sum theta^k/c_k={bound:.7g}")
    for s in tr.steps:
        if s.branch == "raised":
            need(s.tau <= tr.theta ** s.k / s.c, f"raised step {s.k} exceeds theta^k/c_k")
    need(tr.clamped == 0, f"{tr.clamped} clamped steps")
    elapsed = time.perf_counter() - start
    need(elapsed < 5.0, f"runtime {elapsed:.2f} s")
    raised = [s.k for s in tr.steps if s.branch == "raised"]
    detail = (f"r={tr.r:.12g}, mu1={tr.scale.mu1:.12g}, min sigma_k(c_k)={low:.12g}, "
              f"raised steps {raised}, sum tau={tau_sum:.7g} vs sum theta^k/c_k={bound:.7g}; "
              f"{elapsed:.2f} s")
    return ok, detail + ("" if ok else "; violated: " + ", ".join(notes))


def check_shoring():
    start = time.perf_counter()
    tr = _linear_trace()
    fam = renorm.renormalized_family(tr)
    shored = col.is_shored_up(fam, [s.c for s in tr.steps], tr.depth, floor=1 - 1e-9)
    grid = np.linspace(0.0, 1.0, 1001)[1:]
    powers = col.collapsing_measure_estimate(col.power_family(200), grid, 200)
    finite = col.collapsing_measure_estimate(col.power_family(2), grid, 2)
    elapsed = time.perf_counter() - start
    ok = bool(shored) and powers.mu_estimate >= 0.99 and finite.mu_estimate == 0.0 \
        and elapsed < 10.0
    return ok, (f"shored-up={bool(shored)} (min {shored.min_value:.12g}); "
                f"mu(t^j, j<=200)={powers.mu_estimate:.4g} (need >= 0.99, zero threshold "
                f"{powers.zero_threshold:g}); mu(t, t^2)={finite.mu_estimate:g}; {elapsed:.2f} s")


def check_pde_oracle():
    start = time.perf_counter()
    errs = {}
    for h in (1e-3, 5e-4):
        sol = pde.solve(pde.benchmark_problem(h=h))
        x, u = sol.points()
        errs[h] = float(np.max(np.abs(u - pde.benchmark_exact(x[:, 0]))))
    ratio = errs[1e-3] / errs[5e-4]
    fine = pde.solve(pde.benchmark_problem(h=2e-5))
    rep = pde.fit_tangent_planes(fine, [0.0], 0.25, 6)
    ne = rep.normalized_errors()
    monotone = len(rep.scales) == 6 and bool(np.all(np.diff(ne) < 0))
    elapsed = time.perf_counter() - start
    ok = (errs[1e-3] <= 5e-3 and ratio >= 1.8 and abs(rep.holder_exponent - 0.5) <= 0.05
          and monotone and elapsed < 60.0)
    return ok, (f"max error {errs[1e-3]:.3e} at h=1e-3 (limit 5e-3), halving ratio {ratio:.3f} "
                f"(need >= 1.8), gradient exponent {rep.holder_exponent:.4f} from "
                f"{rep.exponent_source} (need 0.50 +- 0.05), E_n/r^n decreasing={monotone}; "
                f"{elapsed:.2f} s (limit 60 s)")


def check_shift_uniformity():
    start = time.perf_counter()
    seminorms = {}
    gammas = {}
    for xi in (0.0, 10.0, 100.0):
        sol = pde.solve(pde.benchmark_problem(h=1e-3, xi=xi))
        g = pde.fit_holder_exponent(sol)
        gammas[xi] = g
        seminorms[xi] = pde.holder_seminorm(sol, 0.0, 0.5, g)
    vals = list(seminorms.values())
    spread = max(vals) / min(vals) - 1.0
    elapsed = time.perf_counter() - start
    ok = spread <= 0.10 and elapsed < 120.0
    desc = ", ".join(f"xi={xi:g}: [u]={seminorms[xi]:.4g} (gamma {gammas[xi]:.3f})"
                     for xi in seminorms)
    return ok, f"{desc}; relative spread {spread:.3g} (limit 0.10); {elapsed:.2f} s (limit 120 s)"


DETERMINISM_CONFIGS = [
    {"command": "modulator", "random": {"count": 50}, "epsilon": 0.5, "delta": 0.05},
    {"command": "adversary", "c": ["harmonic", "geometric", "inverse_log"], "target": 1000},
    {"command": "dini", "modulus": {"family": "log_power", "alpha": 2.0}, "thetas": [0.1, 0.5, 0.9]},
    {"command": "renorm", "sigma": {"family": "power", "alpha": 1.0}, "L": 2, "beta": 0.75,
     "delta": 0.05, "depth": 40},
    {"command": "collapse", "family": {"kind": "powers", "count": 200}, "budget": 200},
    {"command": "pde", "problem": {"h": 1e-3}, "xi_values": [0, 10, 100], "probe": [0.0],
     "depth": 4},
]


def check_determinism():
    start = time.perf_counter()
    mismatched = []
    compared = 0
    with tempfile.TemporaryDirectory() as tmp:
        for i, cfg in enumerate(DETERMINISM_CONFIGS):
            outs = []
            for rep in range(2):
                out = Path(tmp) / f"{i}_{rep}"
                cli.run_config(json.loads(json.dumps(cfg)), out, seed=SEED,
                               threads=1 + 2 * rep)
                outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
            compared += len(outs[0])
            if not outs[0] or outs[0] != outs[1]:
                mismatched.append(cfg["command"])
    elapsed = time.perf_counter() - start
    ok = not mismatched
    return ok, (f"{compared} CSV files across {len(DETERMINISM_CONFIGS)} pipelines, "
                f"mismatches: {mismatched or 'none'}; {elapsed:.2f} s")


CHECKS = {
    1: check_modulator_bounds,
    2: check_adversarial,
    3: check_dini,
    4: check_renorm_trace,
    5: check_shoring,
    6: check_pde_oracle,
    7: check_shift_uniformity,
    8: check_determinism,
}


@pytest.mark.parametrize("n", sorted(CHECKS))
def test_acceptance(n):
    ok, detail = CHECKS[n]()
    _report(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for n in sorted(CHECKS):
        ok, detail = CHECKS[n]()
        _report(n, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)

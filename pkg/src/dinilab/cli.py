"""Command-line experiment runner.

A JSON config names the command and its inputs; every run writes CSV, JSON
and SVG artifacts plus ``manifest.json`` listing each file with its SHA-256.

Exit codes: 0 success, 2 invalid configuration, 3 numeric failure
(non-convergence or inconclusive certification), 4 input/output error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from . import collapse as col
from . import modulus as mod
from . import pdeverify as pde
from . import renorm as ren
from . import sequences as seq
from . import svgplot
from .errors import (ConfigError, ConvergenceError, DiniLabError, DomainError,
                     InconclusiveError, InvariantError, OutOfRangeError)

log = logging.getLogger("dinilab")

COMMANDS = ("dini", "modulator", "adversary", "collapse", "renorm", "pde", "pipeline")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, out: Path, threads: int, seed: int):
        self.out = out
        self.threads = max(1, threads)
        self.seed = seed
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, payload: dict) -> None:
        self.path(name).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")

    def write_rows(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, int) and obj.bit_length() > 60:
        return hex(obj)
    return obj


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    return cfg[key]


def _law(desc: dict) -> mod.DegeneracyLaw:
    m = mod.from_config(desc)
    normalized = desc.get("normalized", True)
    return mod.DegeneracyLaw(m, normalized=bool(normalized))


# ---------------------------------------------------------------------------
# commands


def cmd_dini(cfg: dict, run: Run) -> dict:
    m = mod.from_config(_require(cfg, "modulus"))
    thetas = cfg.get("thetas", [cfg.get("theta", 0.5)])
    rows = []
    for theta in thetas:
        cert = mod.dini_integral(m, tau=float(cfg.get("tau", 1.0)), theta=float(theta),
                                 cap=float(cfg.get("cap", 1e6)), tol=float(cfg.get("tol", 1e-6)),
                                 max_terms=int(cfg.get("max_terms", 1 << 27)))
        rows.append(cert)
    run.write_rows("dini.csv", ["theta", "verdict", "lower_bound", "upper_bound", "terms_used",
                                "tail", "tail_certified"],
                   [(c.theta, c.verdict, c.lower_bound, c.upper_bound, c.terms_used, c.tail,
                     c.tail_certified) for c in rows])
    first = rows[0]
    summary = {"modulus": m.describe(), "verdict": first.verdict,
               "lower_bound": first.lower_bound, "upper_bound": first.upper_bound,
               "certificates": [c.__dict__ for c in rows]}
    run.write_json("dini.json", summary)
    if any(c.verdict == "inconclusive" for c in rows) and cfg.get("fail_on_inconclusive", False):
        raise InconclusiveError("Dini certification inconclusive")
    return summary


def _random_sequence(rng: np.random.Generator) -> seq.SummableSequence:
    comps = []
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            comps.append(seq.geometric(float(rng.uniform(0.05, 0.98)), float(rng.uniform(0.1, 10))))
        else:
            comps.append(seq.power_decay(float(rng.uniform(1.2, 4.0)), float(rng.uniform(0.1, 10))))
    return comps[0] if len(comps) == 1 else seq.mixture(comps)


def cmd_modulator(cfg: dict, run: Run) -> dict:
    eps = float(cfg.get("epsilon", 1.0 / 1.05))
    delta = float(cfg.get("delta", 0.05))
    horizon = int(cfg.get("horizon", 1))
    if "random" in cfg:
        count = int(cfg["random"].get("count", 100))
        rng = np.random.default_rng(run.seed)
        family = [_random_sequence(rng) for _ in range(count)]

        def work(a):
            res = seq.dp_modulator(a, eps, delta, horizon=horizon)
            m = res.members[0]
            return (m.norm, m.b_norm_lo, m.b_norm_hi, m.within_lemma, m.blocks_ok, len(res.blocks))

        with ThreadPoolExecutor(run.threads) as pool:
            results = list(pool.map(work, family))
        run.write_rows("modulator_sweep.csv",
                       ["index", "norm", "b_norm_lo", "b_norm_hi", "within_bounds", "blocks_ok",
                        "blocks"], [(i, *r) for i, r in enumerate(results)])
        summary = {"count": count, "epsilon": eps, "delta": delta,
                   "all_within_bounds": all(r[3] for r in results),
                   "all_blocks_ok": all(r[4] for r in results)}
        run.write_json("modulator.json", summary)
        return summary
    a = seq.from_config(_require(cfg, "sequence"))
    res = seq.dp_modulator(a, eps, delta, horizon=horizon)
    run.write_rows("modulator.csv", ["j", "c_j", "block_index"], res.rows())
    m = res.members[0]
    summary = {"blocks": list(res.blocks), "norm": m.norm, "b_norm": [m.b_norm_lo, m.b_norm_hi],
               "bounds": [m.lemma_lo, m.lemma_hi], "within_bounds": m.within_lemma,
               "blocks_ok": m.blocks_ok}
    run.write_json("modulator.json", summary)
    return summary


def _null_sequence(desc) -> seq.NullSequence:
    kind = desc if isinstance(desc, str) else desc.get("kind")
    if kind == "harmonic":
        return seq.harmonic_null()
    if kind == "geometric":
        q = 0.5 if isinstance(desc, str) else float(desc.get("q", 0.5))
        return seq.geometric_null(q)
    if kind == "inverse_log":
        return seq.inverse_log_null()
    raise ConfigError(f"unknown null sequence {kind!r}")


def cmd_adversary(cfg: dict, run: Run) -> dict:
    target = float(cfg.get("target", 1000.0))
    specs = cfg.get("c", ["harmonic"])
    specs = specs if isinstance(specs, list) else [specs]
    rows = []
    out = {}
    for spec in specs:
        c = _null_sequence(spec)
        res = seq.adversarial_for(c, target)
        out[c.name] = {"K_bits": res.K.bit_length(), "K": res.K, "partial_sum": res.partial_sum,
                       "norm": res.norm, "monotone": res.is_monotone()}
        for k, (start, contrib) in enumerate(zip(res.block_starts, (0.0, *res.block_contributions))):
            rows.append((c.name, k + 1, hex(start), contrib))
    run.write_rows("adversary_blocks.csv", ["c", "k", "n_k_hex", "block_contribution"], rows)
    run.write_json("adversary.json", out)
    return out


def _family(desc: dict) -> col.ModulusFamily:
    kind = desc.get("kind", "powers")
    if kind == "powers":
        count = desc.get("count")
        return col.power_family(None if count is None else int(count))
    if kind == "list":
        return col.ModulusFamily([mod.from_config(m) for m in desc["members"]])
    raise ConfigError(f"unknown family kind {kind!r}")


def cmd_collapse(cfg: dict, run: Run) -> dict:
    fam = _family(_require(cfg, "family"))
    n = int(cfg.get("grid_points", 1000))
    grid = np.linspace(1.0 / n, 1.0, n)
    rep = col.collapsing_measure_estimate(fam, grid, int(cfg.get("budget", 200)),
                                          float(cfg.get("threshold", col.DEFAULT_ZERO_THRESHOLD)))
    rep.write_csv(run.path("collapse.csv"))
    rep.write_json(run.path("collapse.json"))
    return rep.summary()


def _renorm_params(cfg: dict) -> ren.RenormParams:
    return ren.RenormParams(
        sigma=_law(_require(cfg, "sigma")),
        L=float(cfg.get("L", 2.0)),
        beta=float(cfg.get("beta", 0.5)),
        alpha=None if cfg.get("alpha") is None else float(cfg["alpha"]),
        delta=float(cfg.get("delta", 1.0 / 20.0)),
        depth=int(cfg.get("depth", 40)),
        root_tol=float(cfg.get("root_tol", 1e-14)),
        case_override=cfg.get("case"),
    )


def _trace_outputs(trace: ren.RenormalizationTrace, run: Run, C: float) -> dict:
    trace.write_csv(run.path("trace.csv"))
    shoring = col.is_shored_up(ren.renormalized_family(trace)[1:],
                               [s.c for s in trace.steps[1:]], trace.depth - 1, 1.0 - 1e-9) \
        if trace.depth > 1 else None
    summary = trace.summary()
    if shoring is not None:
        summary["shored_up"] = shoring.shored_up
        summary["shoring_min"] = shoring.min_value
        summary["shoring_witness"] = shoring.witness + 1
    ren.write_c1_samples(trace, C, run.path("c1_modulus.csv"))
    ts = np.exp(-np.linspace(trace.depth + 0.5, 1e-3, 200))
    svgplot.line_plot(run.path("c1_modulus.svg"),
                      [("gamma(t)", np.log10(ts), ren.c1_modulus(trace, C, ts))],
                      "C1 modulus", "log10 t", "gamma(t)", logy=True)
    run.write_json("trace.json", summary)
    return summary


def cmd_renorm(cfg: dict, run: Run) -> dict:
    trace = ren.run_shoring_algorithm(_renorm_params(cfg))
    return _trace_outputs(trace, run, float(cfg.get("C", 1.0)))


def _boundary(desc) -> Any:
    if desc is None or desc == "benchmark":
        return lambda *c: np.full(c[0].shape, pde.BENCHMARK_BOUNDARY)
    kind = desc.get("kind")
    if kind == "constant":
        v = float(desc["value"])
        return lambda *c: np.full(c[0].shape, v)
    if kind == "linear":
        coef = [float(v) for v in desc["coef"]]
        off = float(desc.get("offset", 0.0))
        return lambda *c: off + sum(a * x for a, x in zip(coef, c))
    raise ConfigError(f"unknown boundary kind {kind!r}")


def _problem(desc: dict, xi=None) -> pde.ProblemSpec:
    sigma = _law(desc.get("sigma", {"family": "power", "alpha": 1.0}))
    return pde.ProblemSpec(
        dimension=int(desc.get("dimension", 1)),
        sigma=sigma,
        source=float(desc.get("source", 1.0)),
        boundary=_boundary(desc.get("boundary")),
        xi=desc.get("xi", 0.0) if xi is None else xi,
        h=float(desc.get("h", 1e-3)),
        floor=float(desc.get("floor", 1e-8)),
        relax=float(desc.get("relax", 0.5)),
    )


def _decay_outputs(rep: pde.DecayReport, run: Run, prefix: str) -> None:
    rep.write_csv(run.path(f"{prefix}decay.csv"))
    series = [("E_n", rep.scales, rep.E), ("E_n / r^n", rep.scales, rep.normalized_errors())]
    if rep.predicted is not None:
        series.append(("tau_n r^n", rep.scales, rep.predicted))
    svgplot.line_plot(run.path(f"{prefix}decay.svg"), series, "Oscillation decay", "n", "error",
                      logy=True)


def cmd_pde(cfg: dict, run: Run, taus=None) -> dict:
    desc = _require(cfg, "problem")
    tol = float(cfg.get("tol", 1e-10))
    max_iter = int(cfg.get("max_iter", 2000))
    xis = cfg.get("xi_values")
    summary: dict = {}
    if xis:
        def work(xi):
            sol = pde.solve(_problem(desc, xi), tol, max_iter)
            g = pde.fit_holder_exponent(sol)
            return xi, sol, g, pde.holder_seminorm(sol, exponent=g)

        with ThreadPoolExecutor(run.threads) as pool:
            results = list(pool.map(work, xis))
        run.write_rows("xi_sweep.csv", ["xi", "holder_exponent", "seminorm", "iterations"],
                       [(float(np.atleast_1d(xi)[0]), g, s, sol.iterations)
                        for xi, sol, g, s in results])
        summary["xi_sweep"] = [{"xi": xi, "exponent": g, "seminorm": s}
                               for xi, _, g, s in results]
    p = _problem(desc)
    sol = pde.solve(p, tol, max_iter)
    sol.write_csv(run.path("solution.csv"))
    summary.update({"iterations": sol.iterations, "residual": sol.residual_norm,
                    "floor_activations": sol.floor_activations})
    if p.dimension == 1 and desc.get("boundary") in (None, "benchmark") and \
            desc.get("sigma") in (None, {"family": "power", "alpha": 1.0}) and \
            float(desc.get("source", 1.0)) == 1.0 and float(np.atleast_1d(p.xi)[0]) == 0.0:
        summary["max_error_vs_exact"] = float(np.max(np.abs(sol.values -
                                                             pde.benchmark_exact(sol.coords[0]))))
    if "probe" in cfg:
        rep = pde.fit_tangent_planes(sol, cfg["probe"], float(cfg.get("ratio", 0.25)),
                                     int(cfg.get("depth", 6)), taus=taus)
        _decay_outputs(rep, run, "")
        summary.update({"holder_exponent": rep.holder_exponent,
                        "exponent_source": rep.exponent_source, "fitted_C": rep.fitted_C,
                        "E_n": rep.E, "E_n_over_r_n": rep.normalized_errors()})
    run.write_json("pde.json", summary)
    return summary


def cmd_pipeline(cfg: dict, run: Run) -> dict:
    trace = ren.run_shoring_algorithm(_renorm_params(_require(cfg, "renorm")))
    pde_cfg = dict(_require(cfg, "pde"))
    pde_cfg.setdefault("probe", [0.0])
    pde_cfg.setdefault("ratio", trace.r ** 0.25 if trace.r < 1e-3 else 0.25)
    decay = cmd_pde(pde_cfg, run, taus=trace.taus())
    C = decay.get("fitted_C") or 1.0
    summary = {"renorm": _trace_outputs(trace, run, float(C)), "pde": decay,
               "fitted_C": decay.get("fitted_C")}
    run.write_json("pipeline.json", summary)
    return summary


DISPATCH = {
    "dini": cmd_dini,
    "modulator": cmd_modulator,
    "adversary": cmd_adversary,
    "collapse": cmd_collapse,
    "renorm": cmd_renorm,
    "pde": cmd_pde,
    "pipeline": cmd_pipeline,
}


def _versions() -> dict:
    import mpmath
    import scipy

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "mpmath": mpmath.__version__, "dinilab": __version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_config(cfg: dict, out: Path, seed: int = 0, threads: int = 1) -> dict:
    """Execute one config and write the manifest; returns the command summary."""
    command = cfg.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}; got {command!r}")
    run = Run(out, threads, int(cfg.get("seed", seed)))
    start = time.perf_counter()
    summary = DISPATCH[command](cfg, run)
    wall = time.perf_counter() - start
    manifest = {
        "command": command,
        "config": cfg,
        "seed": run.seed,
        "versions": _versions(),
        "wall_time_s": wall,
        "files": [{"name": name, "sha256": _sha256(out / name)} for name in sorted(set(run.files))],
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True)
                                       + "\n")
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dinilab", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized sweeps")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(cfg, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run_config(cfg, Path(args.out), args.seed, args.threads)
    except (ConfigError, DomainError, OutOfRangeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, InconclusiveError, InvariantError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except DiniLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_jsonable(summary), sort_keys=True)[:2000])
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

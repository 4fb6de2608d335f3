import hashlib
import json

import pytest

from dinilab import cli


def _run(tmp_path, cfg, name="out", extra=()):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = cli.main(["--config", str(cfg_path), "--out", str(out), *extra])
    return code, out


def _csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_renorm_command_writes_manifest(tmp_path):
    cfg = {"command": "renorm", "sigma": {"family": "power", "alpha": 1.0}, "L": 2, "beta": 0.75,
           "depth": 40}
    code, out = _run(tmp_path, cfg)
    assert code == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"] == cfg
    assert {"numpy", "scipy", "mpmath", "python"} <= set(manifest["versions"])
    assert manifest["files"]
    for entry in manifest["files"]:
        digest = hashlib.sha256((out / entry["name"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]


@pytest.mark.parametrize("cfg", [
    {"command": "dini", "modulus": {"family": "log_power", "alpha": 2.0}, "thetas": [0.5]},
    {"command": "collapse", "family": {"kind": "powers", "count": 20}, "budget": 20,
     "grid_points": 50},
    {"command": "adversary", "c": ["harmonic", "geometric"], "target": 10},
    {"command": "pde", "problem": {"h": 0.01}, "probe": [0.0], "depth": 3},
])
def test_commands_succeed(tmp_path, cfg):
    code, out = _run(tmp_path, cfg)
    assert code == cli.EXIT_OK
    assert (out / "manifest.json").exists()


def test_seeded_sweep_is_byte_identical(tmp_path):
    cfg = {"command": "modulator", "random": {"count": 20}, "epsilon": 0.5, "delta": 0.05}
    code1, out1 = _run(tmp_path, cfg, "a", ("--seed", "7"))
    code2, out2 = _run(tmp_path, cfg, "b", ("--seed", "7", "--threads", "3"))
    assert code1 == code2 == cli.EXIT_OK
    assert _csv_bytes(out1) and _csv_bytes(out1) == _csv_bytes(out2)


def test_config_errors_exit_two(tmp_path):
    assert _run(tmp_path, {"command": "nope"})[0] == cli.EXIT_CONFIG
    bad_delta = {"command": "renorm", "sigma": {"family": "power", "alpha": 1.0}, "delta": 0.5}
    assert _run(tmp_path, bad_delta, "d")[0] == cli.EXIT_CONFIG
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert cli.main(["--config", str(broken), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG


def test_missing_config_exits_four(tmp_path):
    assert cli.main(["--config", str(tmp_path / "absent.json")]) == cli.EXIT_IO


def test_inconclusive_dini_exits_three(tmp_path):
    cfg = {"command": "dini", "modulus": {"family": "tilde_phi", "terms": 30}, "max_terms": 1024,
           "fail_on_inconclusive": True}
    assert _run(tmp_path, cfg)[0] == cli.EXIT_NUMERIC

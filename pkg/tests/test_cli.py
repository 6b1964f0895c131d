import json
import time

import pytest

from skdv2.cli import main
from skdv2.config import SimConfig
from skdv2.field import read_snapshot

SMALL = ["n=64", "length=20", "dt=1e-3", "t_end=0.02", "snapshot_every=5", "noise.modes=16",
         "window_k=5", "weight.param=3"]


def run(args, tmp_path, overrides=()):
    argv = list(args) + ["--out", str(tmp_path)]
    for o in list(SMALL) + list(overrides):
        argv += ["--override", o]
    return main(argv)


def test_simulate_zero_noise(tmp_path, capsys):
    code = run(["simulate"], tmp_path, ["noise.kind=zero", "variant=kdv2", "epsilon=0", "t_end=0.1"])
    assert code == 0
    for name in ("config.resolved", "diagnostics.jsonl", "l2.csv", "h1.csv", "h2.csv", "h1_win.csv",
                 "F.csv", "norms.png"):
        assert (tmp_path / name).exists()
    snaps = sorted((tmp_path / "snapshots").glob("u_*.skdv"))
    first, _ = read_snapshot(snaps[0])
    last, t = read_snapshot(snaps[-1])
    assert t == pytest.approx(0.1)
    m0 = first.grid.spacing * first.values.sum()
    m1 = last.grid.spacing * last.values.sum()
    assert abs(m1 - m0) < 1e-8 * abs(m0)
    lines = (tmp_path / "diagnostics.jsonl").read_text().splitlines()
    assert "config" in json.loads(lines[0])
    assert len(lines) == 1 + 21


def test_simulate_negative_epsilon(tmp_path, capsys):
    assert run(["simulate"], tmp_path, ["epsilon=-1"]) == 2
    assert "DriftSpec invariant" in capsys.readouterr().err


def test_override_echoed(tmp_path):
    assert run(["simulate"], tmp_path, ["dt=5e-4"]) == 0
    echo = SimConfig.from_text((tmp_path / "config.resolved").read_text())
    assert echo["stepper.dt"] == 5e-4
    first = json.loads((tmp_path / "diagnostics.jsonl").read_text().splitlines()[0])
    assert "stepper.dt = 0.0005" in first["config"]
    assert "# stepper.dt = 0.0005" in (tmp_path / "l2.csv").read_text()


def test_config_file_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 3\n" + "".join(f"{o.split('=')[0]} = {o.split('=')[1]}\n" for o in SMALL))
    monkeypatch.setenv("SKDV2_SEED", "11")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert SimConfig.from_text((tmp_path / "o" / "config.resolved").read_text())["seed"] == 11


def test_ensemble_bytes_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["ensemble", "--paths", "2"], a) == 0
    assert run(["ensemble", "--paths", "2"], b) == 0
    assert (a / "ensemble_stats.json").read_bytes() == (b / "ensemble_stats.json").read_bytes()
    assert (a / "ensemble_means.png").exists()


def test_ensemble_per_path(tmp_path):
    assert run(["ensemble", "--paths", "2", "--per-path"], tmp_path) == 0
    lines = (tmp_path / "per_path.jsonl").read_text().splitlines()
    assert len(lines) == 1 + 2 * 5


def test_ensemble_zero_paths(tmp_path, capsys):
    assert run(["ensemble", "--paths", "0"], tmp_path) == 2
    assert "paths" in capsys.readouterr().err


def test_sweep_outputs(tmp_path, capsys):
    assert run(["sweep", "--paths", "2"], tmp_path, ["epsilons=0.1,0.01"]) == 0
    csv = (tmp_path / "sweep.csv").read_text()
    assert "epsilon,m,est_4a" in csv and (tmp_path / "sweep.png").exists()
    assert "epsilon,m,est_4a" in capsys.readouterr().out


@pytest.mark.slow
def test_additive_smoke_budget(tmp_path):
    t0 = time.perf_counter()
    code = main(["ensemble", "--paths", "100", "--out", str(tmp_path),
                 "--override", "noise.kind=additive"])
    elapsed = time.perf_counter() - t0
    assert code == 0
    stats = json.loads((tmp_path / "ensemble_stats.json").read_text())
    assert stats["blowup_fraction"] == 0.0
    assert elapsed < 60.0


def test_verify_identities(tmp_path, capsys):
    assert main(["verify", "identities", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["passed"]
    scaled = [c["measured"] for c in rep["suites"][0]["checks"] if c["name"].endswith("scaled_residual")]
    assert len(scaled) == 8 and max(scaled) < 1e-8
    assert "scaled_residual" in capsys.readouterr().out


def test_verify_noise_w1_zero(tmp_path):
    assert run(["verify", "noise_w1"], tmp_path, ["noise.kind=zero"]) == 0
    info = json.loads((tmp_path / "verify_report.json").read_text())["suites"][0]["info"]
    assert info["kappa1"] == 0.0 and info["kappa2"] == 0.0


def test_verify_failure_exit_code(tmp_path, capsys):
    # est_4a scales with epsilon, so a two-decade sweep fails the ratio check
    code = run(["verify", "moments", "--paths", "2"], tmp_path, ["epsilons=0.1,0.001"])
    assert code == 1
    assert "first failing check moments." in capsys.readouterr().err


def test_verify_unknown_suite(tmp_path):
    assert main(["verify", "bogus", "--out", str(tmp_path)]) == 2


def test_bad_arguments():
    assert main([]) == 2
    assert main(["simulate", "--paths", "x"]) == 2

import numpy as np
import pytest

from skdv2.config import SimConfig
from skdv2.diagnostics import COL
from skdv2.ensemble import SWEEP_COLUMNS, EnsembleConfig, run_ensemble, sweep_epsilon
from skdv2.errors import ConfigError

SMALL = ["n=64", "length=20", "dt=1e-3", "t_end=0.02", "snapshot_every=5", "noise.modes=16",
         "window_k=5", "weight.param=3"]


def small(*extra):
    return SimConfig().with_overrides(SMALL + list(extra))


def test_single_path_has_no_se():
    stats = run_ensemble(EnsembleConfig(1, small()))
    assert stats.se is None and stats.paths == 1
    assert stats.to_dict()["se"] is None


@pytest.mark.parametrize("field,value", [("paths", 0), ("workers", 0), ("chunk_size", -1), ("paths", 2.5)])
def test_invariants(field, value):
    kw = dict(paths=2, sim=small(), workers=1, chunk_size=4)
    kw[field] = value
    with pytest.raises(ConfigError):
        EnsembleConfig(**kw)


def test_worker_count_does_not_change_results():
    sim = small()
    a = run_ensemble(EnsembleConfig(12, sim, workers=1, chunk_size=4))
    b = run_ensemble(EnsembleConfig(12, sim, workers=3, chunk_size=4))
    assert a.records.tobytes() == b.records.tobytes()
    assert a.to_json() == b.to_json()


def test_chunking_does_not_change_results():
    sim = small()
    a = run_ensemble(EnsembleConfig(10, sim, chunk_size=3))
    b = run_ensemble(EnsembleConfig(10, sim, chunk_size=128))
    assert a.records.tobytes() == b.records.tobytes()


def test_zero_drift_additive_mean():
    sim = small("variant=zero", "epsilon=0", "noise.kind=additive", "initial_condition.amplitude=0")
    stats = run_ensemble(EnsembleConfig(400, sim))
    noise = sim.noise_model()
    l2 = stats.column_mean("l2")
    se = stats.se[:, COL["l2"]]
    expected = stats.times * noise.total_variance
    assert np.all(np.abs(l2 - expected)[1:] <= 3 * se[1:] + 1e-15)


def test_single_eps_sweep_matches_run():
    sim = small()
    ens = EnsembleConfig(4, sim)
    sw = sweep_epsilon(ens, [0.05])
    direct = run_ensemble(ens, epsilon=0.05)
    assert sw.rows[0] == direct.moments
    assert sw.path_distance == []


def test_sweep_uses_common_random_numbers():
    sw = sweep_epsilon(EnsembleConfig(4, small()), [0.1, 0.05])
    assert sw.stats[0].draw_hashes == sw.stats[1].draw_hashes


def test_zero_noise_sweep_paths_converge():
    sim = small("noise.kind=zero", "t_end=0.1")
    sw = sweep_epsilon(EnsembleConfig(1, sim), [0.1, 0.01, 0.001, 0.0001])
    d = sw.path_distance
    assert all(a > b for a, b in zip(d[:-1], d[1:]))


def test_sweep_csv_layout():
    sw = sweep_epsilon(EnsembleConfig(2, small()), [0.1, 0.01])
    text = sw.to_csv(["# hello"])
    lines = text.splitlines()
    assert lines[0] == "# hello"
    assert lines[1] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 4


def test_sweep_rejects_bad_epsilon():
    with pytest.raises(ConfigError):
        sweep_epsilon(EnsembleConfig(2, small()), [0.1, -0.1])
    with pytest.raises(ConfigError):
        sweep_epsilon(EnsembleConfig(2, small()), [])


def test_invalid_config_fails_before_running():
    with pytest.raises(ConfigError):
        run_ensemble(EnsembleConfig(2, small("window_k=50")))

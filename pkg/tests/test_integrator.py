import copy

import numpy as np
import pytest

from skdv2.dynamics import DriftSpec
from skdv2.errors import BlowUpError, ConfigError, PreconditionError
from skdv2.field import Field, Grid
from skdv2.integrator import Engine, PathState, StepperConfig, run_path, step
from skdv2.noise import NoiseModel, NoiseStream

from conftest import gaussian

ZERO = DriftSpec("zero", 0.0)
KDV2 = DriftSpec("kdv2", 0.0)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0, t_end=1.0), dict(dt=-1e-3, t_end=1.0),
                                    dict(dt=1e-3, t_end=-1.0), dict(dt=0.2, t_end=0.1),
                                    dict(dt=1e-3, t_end=1.0, scheme="euler"),
                                    dict(dt=1e-3, t_end=1.0, snapshot_every=0),
                                    dict(dt=1e-12, t_end=1.0)])
def test_stepper_invariants(kwargs):
    with pytest.raises(ConfigError, match="stepper invariant"):
        StepperConfig(**kwargs)


def test_snapshot_steps_include_final():
    cfg = StepperConfig(0.1, 1.0, snapshot_every=3)
    assert list(cfg.snapshot_steps()) == [0, 3, 6, 9, 10]
    assert np.allclose(cfg.times(), [0, 0.3, 0.6, 0.9, 1.0])


def test_rk4_with_noise_rejected(grid):
    with pytest.raises(ConfigError):
        Engine(grid, KDV2, NoiseModel(grid, kind="additive"), StepperConfig(1e-3, 0.1, "deterministic_rk4"))


def test_zero_t_end_gives_single_record(grid):
    recs, state = run_path(gaussian(grid), KDV2, NoiseModel(grid, kind="zero"), StepperConfig(1e-3, 0.0))
    assert len(recs) == 1 and recs[0].t == 0.0
    assert np.allclose(state.u.values, gaussian(grid).values, rtol=0, atol=1e-15)


def test_additive_zero_drift_variance():
    # u(T) = sum_i q_i e_i W_i(T), so E|u|^2 = T sum q_i^2
    g = Grid(64, 20.0)
    noise = NoiseModel(g, kind="additive", modes=16)
    cfg = StepperConfig(0.01, 0.02)
    paths = 10000
    eng = Engine(g, ZERO, noise, cfg)
    res = eng.run(np.zeros((paths, g.n)), [NoiseStream(7, i, 16) for i in range(paths)])
    l2 = g.spacing * np.sum(res.final_values**2, axis=1)
    assert l2.mean() == pytest.approx(cfg.t_end * noise.total_variance, rel=0.05)


def test_airy_linear_mode():
    g = Grid(64, 40.0)
    k = 2 * np.pi * 3 / g.length
    a = 1e-6
    u0 = Field(g, a * np.cos(k * g.x))
    cfg = StepperConfig(1e-3, 1.0, "deterministic_rk4", snapshot_every=1000)
    _, state = run_path(u0, KDV2, NoiseModel(g, kind="zero"), cfg)
    gain = np.fft.rfft(state.u.values)[3] / np.fft.rfft(u0.values)[3]
    assert abs(gain) == pytest.approx(1.0, rel=1e-6)
    # u_t = -u_xxx moves cos(kx) to cos(kx + k^3 t)
    assert np.angle(gain) == pytest.approx(k**3 * 1.0, abs=1e-6)


def _final(g, spec, u0, dt, t_end, scheme):
    cfg = StepperConfig(dt, t_end, scheme, snapshot_every=10**6)
    eng = Engine(g, spec, NoiseModel(g, kind="zero"), cfg)
    return eng.run(u0.values[None, :]).final_values[0]


def test_imex_first_order_deterministic():
    g = Grid(64, 40.0)
    spec = DriftSpec("regularized", 0.1)
    u0 = gaussian(g, 0.5, 2.0)
    ref = _final(g, spec, u0, 1e-4, 0.2, "deterministic_rk4")
    errs = [np.sqrt(g.spacing * np.sum((_final(g, spec, u0, dt, 0.2, "imex_em") - ref) ** 2))
            for dt in (4e-3, 2e-3, 1e-3)]
    for a, b in zip(errs[:-1], errs[1:]):
        assert a / b == pytest.approx(2.0, abs=0.2)


def test_rk4_self_convergence_sech2():
    g = Grid(64, 40.0)
    u0 = Field(g, 0.4 / np.cosh(g.x / 2.0) ** 2)
    f = [_final(g, KDV2, u0, dt, 0.5, "deterministic_rk4") for dt in (0.004, 0.002, 0.001)]
    ratio = np.linalg.norm(f[0] - f[1]) / np.linalg.norm(f[1] - f[2])
    assert ratio == pytest.approx(16.0, rel=0.15)


def test_imex_stable_on_stiff_mode():
    g = Grid(64, 20.0)
    spec = DriftSpec("regularized", 0.1)
    kk = 2 * np.pi * 25 / g.length
    u0 = Field(g, 1e-6 * np.cos(kk * g.x))
    imex = _final(g, spec, u0, 0.05, 1.0, "imex_em")
    assert np.max(np.abs(imex)) < 1e-6
    cfg = StepperConfig(0.05, 1.0, "explicit_em")
    res = Engine(g, spec, NoiseModel(g, kind="zero"), cfg).run(u0.values[None, :])
    assert res.blown[0]


def test_imex_amplification_factor_bounded():
    g = Grid(128, 40.0)
    eng = Engine(g, DriftSpec("regularized", 0.01), NoiseModel(g, kind="zero"), StepperConfig(0.1, 1.0))
    sym = eng.op.base_symbol
    assert np.all(np.abs(1.0 / (1.0 - 0.1 * sym)) <= 1.0)


def test_run_is_deterministic(grid):
    noise = NoiseModel(grid)
    cfg = StepperConfig(1e-3, 0.05, snapshot_every=5)
    spec = DriftSpec("regularized", 0.1)
    a, _ = run_path(gaussian(grid), spec, noise, cfg, stream=3)
    b, _ = run_path(gaussian(grid), spec, noise, cfg, stream=3)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


def test_blowup_flagged_with_partial_records():
    g = Grid(64, 40.0)
    u0 = gaussian(g, 5.0, 1.0)
    cfg = StepperConfig(0.05, 2.0, "explicit_em", snapshot_every=1)
    recs, state = run_path(u0, KDV2, NoiseModel(g, kind="zero", lambda_cap=10.0), cfg)
    assert state.blow_up
    assert recs[-1].blow_up and not any(r.blow_up for r in recs[:-1])
    assert len(recs) < cfg.n_steps + 1
    assert np.all(np.isfinite(state.u.values))


def test_blown_rows_do_not_disturb_others():
    g = Grid(64, 40.0)
    cfg = StepperConfig(0.05, 1.0, "explicit_em")
    eng = Engine(g, KDV2, NoiseModel(g, kind="zero"), cfg)
    good = gaussian(g, 1e-3, 4.0).values
    both = eng.run(np.stack([gaussian(g, 5.0, 1.0).values, good]))
    alone = eng.run(good[None, :])
    assert both.blown.tolist() == [True, False]
    assert np.array_equal(both.final_values[1], alone.final_values[0])


def test_step_leaves_input_untouched(grid):
    stream = NoiseStream(4, 0, 32)
    state = PathState(0.0, gaussian(grid), stream=stream)
    before = copy.deepcopy(stream)
    new = step(state, DriftSpec("regularized", 0.1), NoiseModel(grid), StepperConfig(1e-3, 1.0))
    assert stream.step == before.step and stream.draw_hash() == before.draw_hash()
    assert new.step == 1 and new.t == pytest.approx(1e-3)
    assert new.stream.step == 1


def test_step_raises_on_blowup():
    g = Grid(64, 40.0)
    state = PathState(0.0, gaussian(g, 50.0, 0.5))
    with pytest.raises(BlowUpError):
        step(state, KDV2, NoiseModel(g, kind="zero", lambda_cap=10.0), StepperConfig(0.5, 1.0, "explicit_em"))
    with pytest.raises(PreconditionError):
        step(PathState(0.0, gaussian(g), blow_up=True), KDV2, NoiseModel(g, kind="zero"), StepperConfig(0.1, 1.0))


def test_engine_input_checks(grid):
    eng = Engine(grid, KDV2, NoiseModel(grid, kind="additive"), StepperConfig(1e-3, 0.01))
    with pytest.raises(PreconditionError):
        eng.run(np.zeros((2, grid.n)), [NoiseStream(1, 0, 32)])
    with pytest.raises(PreconditionError):
        eng.run(np.zeros((1, grid.n)), [NoiseStream(1, 0, 5)])
    with pytest.raises(PreconditionError):
        eng.run(np.zeros((1, grid.n - 1)), [NoiseStream(1, 0, 32)])

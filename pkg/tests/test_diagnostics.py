import json
import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skdv2.diagnostics import (COL, RECORD_FIELDS, DiagnosticsRecord, SnapshotDiagnostics,
                               functional_f, ibp_identity_residuals, ito_budget_check, ito_trace,
                               martingale_probe, moment_estimators)
from skdv2.dynamics import DriftSpec
from skdv2.errors import PreconditionError
from skdv2.field import Field, Grid, derivative, to_hat, from_hat
from skdv2.integrator import Engine, StepperConfig
from skdv2.noise import NoiseModel, NoiseStream
from skdv2.weights import make_weight, periodic_weight

from conftest import gaussian, random_band_limited

ATAN = dict(profile="atan", params={"scale": 5.0, "offset": 2.0})


def _run(g, spec, noise, weight, u0, cfg, paths=1, seed=1, probes=None, window_k=5.0):
    diag = SnapshotDiagnostics(g, spec, noise, weight, window_k, probes)
    eng = Engine(g, spec, noise, cfg)
    streams = [NoiseStream(seed, i, noise.modes) for i in range(paths)]
    return eng.run(np.tile(u0, (paths, 1)), streams, diagnostics=diag)


def test_functional_f_constants(grid):
    one = make_weight("const", {"value": 1.0}, 10.0, grid)
    assert functional_f(Field(grid, np.full(grid.n, 0.3)), one) == pytest.approx(0.09 * grid.length, rel=1e-14)
    assert functional_f(Field.zeros(grid), one) == 0.0


def test_functional_f_fine_grid_oracle(grid):
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, grid)
    fine = Grid(4 * grid.n, grid.length)
    ref = fine.spacing * np.sum(p.on_grid(fine) * gaussian(fine).values ** 2)
    assert functional_f(gaussian(grid), p) == pytest.approx(ref, rel=1e-8)


def test_functional_f_flags_contamination(grid, caplog):
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, grid)
    with caplog.at_level(logging.WARNING):
        functional_f(Field(grid, np.ones(grid.n)), p)
    assert "contamination" in caplog.text


def test_identities_constant_weight(grid):
    one = make_weight("const", {"value": 1.0}, 10.0, grid)
    u = random_band_limited(grid, np.random.default_rng(0))
    assert ibp_identity_residuals(u, one)[0] < 1e-10
    assert np.all(ibp_identity_residuals(Field.zeros(grid), one) == 0.0)


def test_identities_periodic_weight():
    g = Grid(256, 40.0)
    p = periodic_weight(g.length)
    u = random_band_limited(g, np.random.default_rng(5), band=40)
    hat = to_hat(u.values)
    h2 = np.sqrt(sum(g.spacing * np.sum(from_hat(hat * g.symbol(j), g) ** 2) for j in (1, 2))
                 + g.spacing * np.sum(u.values**2))
    assert np.all(ibp_identity_residuals(u, p) < 1e-8 * (1 + h2**3))


def test_identities_atan_weight(grid):
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, grid)
    r = ibp_identity_residuals(gaussian(grid, 0.7, 1.5, 2.0), p)
    assert np.all(r < 1e-9)


def test_identity_d_needs_factor_two(grid):
    # the recombined cubic identity fails if the p' u u_x^2 term keeps coefficient 1
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, grid)
    u = gaussian(grid, 0.7, 1.5, 2.0)
    d = [u.values] + [derivative(u, j).values for j in (1, 2, 3)]
    w = [p.on_grid(grid, j) for j in range(3)]
    h = grid.spacing
    lhs = h * np.sum(w[0] * d[0] * (3 * d[1] * d[2] + d[0] * d[3]))
    one = h * np.sum(w[2] * d[0] ** 2 * d[1] + w[1] * d[0] * d[1] ** 2 + w[0] * d[0] * d[1] * d[2])
    assert abs(lhs - one) > 1e-4
    assert ibp_identity_residuals(u, p)[3] < 1e-10


def test_identities_need_clean_boundary(grid):
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, grid)
    with pytest.raises(PreconditionError):
        ibp_identity_residuals(Field(grid, np.ones(grid.n)), p)


def test_ito_trace_examples(grid):
    one = make_weight("const", {"value": 1.0}, 10.0, grid)
    u = gaussian(grid)
    assert ito_trace(u, one, NoiseModel(grid, kind="zero")) == 0.0
    add = NoiseModel(grid, kind="additive")
    assert ito_trace(u, one, add) == pytest.approx(2 * np.sum(add.q**2), rel=1e-12)


@given(st.integers(0, 10**6), st.floats(0.01, 20.0))
def test_ito_trace_bound(seed, scale):
    g = Grid(64, 20.0)
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, g)
    m = NoiseModel(g, kind="diagonal_multiplicative", modes=16)
    u = Field(g, scale * random_band_limited(g, np.random.default_rng(seed)).values)
    l2 = np.sqrt(g.spacing * np.sum(u.values**2))
    bound = 2 * p.sup * (m.kappa1 * max(l2 * l2, l2) + m.kappa2) ** 2
    assert ito_trace(u, p, m) <= bound * (1 + 1e-12)


def test_budget_zero_noise():
    g = Grid(128, 40.0)
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, g)
    res = _run(g, DriftSpec("regularized", 0.1), NoiseModel(g, kind="zero"), p,
               gaussian(g).values, StepperConfig(1e-4, 0.02))
    rep = ito_budget_check(res.records, res.times)
    assert abs(rep.discrepancy) < 1e-6
    assert rep.underpowered and rep.paths == 1


def test_budget_zero_noise_first_order():
    g = Grid(128, 40.0)
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, g)
    disc = []
    for dt in (2e-4, 1e-4):
        res = _run(g, DriftSpec("regularized", 0.1), NoiseModel(g, kind="zero"), p,
                   gaussian(g).values, StepperConfig(dt, 0.05))
        disc.append(ito_budget_check(res.records, res.times, min_paths=1).discrepancy)
    assert disc[0] / disc[1] == pytest.approx(2.0, abs=0.5)


def test_budget_additive_zero_drift():
    g = Grid(64, 20.0)
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, g)
    noise = NoiseModel(g, kind="additive", modes=16)
    res = _run(g, DriftSpec("zero", 0.0), noise, p, np.zeros(g.n), StepperConfig(0.01, 0.1),
               paths=2000)
    rep = ito_budget_check(res.records, res.times)
    expected = 0.1 * np.sum(noise.q**2 * g.spacing * np.sum(p.on_grid(g) * noise.basis**2, axis=1))
    assert rep.rhs == pytest.approx(expected, rel=1e-12)
    assert abs(rep.lhs - expected) <= 3 * rep.se
    assert rep.passed and not rep.underpowered


def test_martingale_zero_noise_small():
    g = Grid(128, 40.0)
    one = make_weight("const", {"value": 1.0}, 10.0, g)
    res = _run(g, DriftSpec("regularized", 0.1), NoiseModel(g, kind="zero"), one,
               gaussian(g).values, StepperConfig(1e-4, 0.1, snapshot_every=1))
    m = martingale_probe(res.records, res.times, 0.05, 0.1, abs_tol=1e-6)
    assert abs(m.increment_mean) < 1e-6 and m.passed


def test_martingale_orthogonal_probe():
    g = Grid(64, 20.0)
    one = make_weight("const", {"value": 1.0}, 10.0, g)
    noise = NoiseModel(g, kind="additive", modes=16)
    a = np.cos(2 * np.pi * 20 * g.x / g.length)
    res = _run(g, DriftSpec("zero", 0.0), noise, one, np.zeros(g.n), StepperConfig(0.01, 0.2),
               paths=50, probes=(a, a))
    m = martingale_probe(res.records, res.times, 0.1, 0.2, abs_tol=1e-12)
    assert abs(m.increment_mean) < 1e-12 and abs(m.qv_stat_mean) < 1e-12
    assert m.passed


def test_martingale_needs_ordered_times():
    recs = np.zeros((2, 3, len(COL)))
    with pytest.raises(PreconditionError):
        martingale_probe(recs, np.array([0.0, 0.1, 0.2]), 0.2, 0.1)
    with pytest.raises(PreconditionError):
        martingale_probe(recs, np.array([0.0, 0.1, 0.2]), 0.05, 0.1)


def test_moments_zero_noise_degenerate(grid):
    one = make_weight("const", {"value": 1.0}, 10.0, grid)
    res = _run(grid, DriftSpec("regularized", 0.1), NoiseModel(grid, kind="zero"), one,
               gaussian(grid).values, StepperConfig(1e-3, 0.1), paths=3)
    est = moment_estimators(res.records, res.times, 0.1)
    assert est.est_4a_se == 0.0 and est.est_4c_se == 0.0 and est.paths_used == 3


def test_moments_window_doubling(grid):
    one = make_weight("const", {"value": 1.0}, 10.0, grid)
    u0 = gaussian(grid, 0.3, 1.0).values
    cfg = StepperConfig(1e-3, 0.05)
    est = []
    for k in (5.0, 10.0):
        res = _run(grid, DriftSpec("regularized", 0.1), NoiseModel(grid), one, u0, cfg,
                   paths=20, window_k=k)
        est.append(moment_estimators(res.records, res.times, 0.1))
    assert abs(est[0].est_4c - est[1].est_4c) <= max(est[0].est_4c_se, 1e-9 * est[0].est_4c)


def test_moments_all_blown():
    recs = np.zeros((2, 3, len(COL)))
    recs[:, -1, COL["blowup"]] = 1.0
    with pytest.raises(PreconditionError):
        moment_estimators(recs, np.array([0.0, 0.1, 0.2]), 0.1)


@given(st.integers(0, 10**6))
def test_f_dominates_delta0_l2(seed):
    g = Grid(64, 20.0)
    p = make_weight(ATAN["profile"], ATAN["params"], 10.0, g)
    diag = SnapshotDiagnostics(g, DriftSpec("regularized", 0.1), NoiseModel(g, modes=16), p, 5.0)
    u = random_band_limited(g, np.random.default_rng(seed))
    row = diag.rows(0.0, to_hat(u.values)[None, :])[0]
    assert row[COL["F"]] >= p.delta0 * row[COL["l2"]]
    assert row[COL["l2"]] <= row[COL["h1"]] <= row[COL["h2"]]
    assert 0.0 <= row[COL["h1_win"]] <= row[COL["h1"]] * (1 + 1e-12)


def test_record_json_order_and_nan():
    row = np.arange(len(COL), dtype=float)
    row[COL["l2"]] = np.nan
    row[COL["blowup"]] = 1.0
    rec = DiagnosticsRecord.from_row(row)
    d = json.loads(rec.to_json())
    assert tuple(d) == RECORD_FIELDS
    assert d["l2"] is None and d["blowup"] is True

"""Property suites behind ``skdv2 verify``.

Each suite returns a :class:`SuiteReport` listing every check with its
measured value, tolerance and verdict.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import SimConfig
from .diagnostics import ibp_identity_residuals, ito_budget_check, martingale_probe
from .ensemble import EnsembleConfig, run_ensemble, sweep_epsilon
from .errors import ConfigError
from .field import Field, Grid, norm_sq_from_hat, to_hat
from .integrator import Engine, StepperConfig
from .noise import W1_MARGIN, NoiseStream
from .weights import make_weight, periodic_weight

SUITES = ("identities", "noise_w1", "martingale", "ito_budget", "moments", "all")
IDENTITY_NAMES = ("a", "b", "c", "d")


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    note: str = ""

    def to_dict(self):
        d = asdict(self)
        for k in ("measured", "tolerance"):
            v = float(d[k])
            d[k] = v if np.isfinite(v) else None
        d["passed"] = bool(d["passed"])
        return d


@dataclass
class SuiteReport:
    suite: str
    checks: List[Check] = field(default_factory=list)
    info: Dict[str, object] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> Optional[Check]:
        return next((c for c in self.checks if not c.passed), None)

    def add(self, name, measured, tolerance, passed, note=""):
        self.checks.append(Check(name, float(measured), float(tolerance), bool(passed), note))

    def to_dict(self):
        ff = self.first_failure
        return {"suite": self.suite, "passed": self.passed,
                "first_failure": None if ff is None else ff.name,
                "seconds": round(self.seconds, 3), "info": self.info,
                "checks": [c.to_dict() for c in self.checks]}

    def lines(self) -> List[str]:
        return [f"{'PASS' if c.passed else 'FAIL'} {self.suite}.{c.name}: measured={c.measured:.6g} "
                f"tolerance={c.tolerance:.6g}{(' ' + c.note) if c.note else ''}" for c in self.checks]


# --------------------------------------------------------------------------
# identity test fields
# --------------------------------------------------------------------------

class PeriodicTestField:
    """Random real trigonometric polynomial with wavenumbers ``1..band``."""

    def __init__(self, rng, length: float, band: int, decay: float):
        j = np.arange(1, band + 1)
        self.j = j
        self.c = (rng.standard_normal(band) + 1j * rng.standard_normal(band)) * np.exp(-j / decay)
        self.length = length

    def on(self, grid: Grid) -> Field:
        if self.j[-1] >= grid.n // 2:
            raise ConfigError("test field band exceeds the grid")
        hat = np.zeros(grid.nk, dtype=complex)
        hat[1: self.j[-1] + 1] = 0.5 * grid.n * self.c
        return Field(grid, np.fft.irfft(hat, grid.n))


class LocalizedTestField:
    """Gaussian envelope times a few random cosines; decays well before the box edges."""

    def __init__(self, rng, length: float, kmax: float, width: float):
        self.k = rng.uniform(0.0, kmax, 4)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, 4)
        self.amp = rng.standard_normal(4)
        self.center = rng.uniform(-0.075, 0.075) * length
        self.width = width

    def on(self, grid: Grid) -> Field:
        x = grid.x
        env = np.exp(-((x - self.center) ** 2) / (2.0 * self.width**2))
        carrier = sum(a * np.cos(k * x + p) for a, k, p in zip(self.amp, self.k, self.phase))
        return Field(grid, env * carrier)


def h2_norm(u: Field) -> float:
    hat = to_hat(u.values)
    return float(np.sqrt(sum(norm_sq_from_hat(hat, u.grid, o) for o in (0, 1, 2))))


def identity_test_fields(profile: str, length: float, n: int, count: int, seed: int = 0):
    """Reproducible test fields for the identity suite on a base grid of ``n`` nodes.

    Periodic-weight fields are band-limited between ``n/3`` and ``n/2`` so
    cubic integrands alias on the base grid but not on the doubled one.
    """
    rng = np.random.default_rng(seed)
    kmax = np.pi * n / length
    out = []
    for _ in range(count):
        if profile == "periodic":
            band = int(rng.integers(n // 3 + 1, n // 2))
            out.append(PeriodicTestField(rng, length, band, n / 32.0))
        else:
            out.append(LocalizedTestField(rng, length, 0.5 * kmax, 20.0 / kmax))
    return out


def identities_suite(sim: SimConfig, n: int = 256, count: int = 100, refine: int = 2,
                     rel_tol: float = 1e-8, min_gain: float = 10.0) -> SuiteReport:
    """Residuals below ``rel_tol (1 + |u|_{H2}^3)`` on ``n`` nodes, and a ``min_gain``
    reduction of the largest residual when the grid is refined."""
    rep = SuiteReport("identities")
    L = sim["grid.length"]
    lam = sim["lambda"]
    for profile in ("periodic", "atan"):
        coarse, fine = Grid(n, L), Grid(refine * n, L)
        if profile == "periodic":
            weights = {coarse: periodic_weight(L, lambda_cap=lam), fine: periodic_weight(L, lambda_cap=lam)}
        else:
            scale = sim["weight.param"] if sim["weight.profile"] == "atan" else 5.0
            weights = {g: make_weight("atan", {"scale": scale}, lam, g) for g in (coarse, fine)}
        fields = identity_test_fields(profile, L, n, count, seed=sim["seed"])
        res_c = np.array([ibp_identity_residuals(f.on(coarse), weights[coarse]) for f in fields])
        res_f = np.array([ibp_identity_residuals(f.on(fine), weights[fine]) for f in fields])
        scale_c = 1.0 + np.array([h2_norm(f.on(coarse)) for f in fields]) ** 3
        rel = res_c / scale_c[:, None]
        for i, name in enumerate(IDENTITY_NAMES):
            rep.add(f"{profile}.{name}.scaled_residual", rel[:, i].max(), rel_tol, rel[:, i].max() < rel_tol,
                    f"max abs residual {res_c[:, i].max():.3e}")
        worst_c, worst_f = res_c.max(), res_f.max()
        gain = worst_c / worst_f if worst_f > 0 else np.inf
        rep.add(f"{profile}.refinement_gain", gain, min_gain, gain >= min_gain,
                f"max residual n={n}: {worst_c:.3e}, n={refine * n}: {worst_f:.3e}")
        rep.info[f"{profile}.per_identity_gain"] = [
            float(a / b) if b > 0 else None for a, b in zip(res_c.max(0), res_f.max(0))]
        rep.info[f"{profile}.max_residual"] = float(worst_c)
    return rep


# --------------------------------------------------------------------------
# noise growth
# --------------------------------------------------------------------------

def noise_w1_suite(sim: SimConfig, steps: int = 1000, paths: int = 4) -> SuiteReport:
    """Certified constants against the closed form, then a ``steps``-long run with the per-step check on."""
    rep = SuiteReport("noise_w1")
    g = sim.grid()
    noise = sim.noise_model(g)
    a1, a2 = noise.analytic_kappas()
    rep.info.update({"kappa1": noise.kappa1, "kappa2": noise.kappa2, "kappa1_closed_form": a1,
                     "kappa2_closed_form": a2, "kind": noise.kind})
    rep.add("kappa1_le_closed_form", noise.kappa1, a1, noise.kappa1 <= a1 * (1 + 1e-10))
    rep.add("kappa2_le_closed_form", noise.kappa2, a2, noise.kappa2 <= a2 * (1 + 1e-10))
    if noise.kind == "zero":
        rep.add("zero_noise_kappas", abs(noise.kappa1) + abs(noise.kappa2), 0.0,
                noise.kappa1 == 0.0 and noise.kappa2 == 0.0)
        return rep
    dt = sim["stepper.dt"]
    cfg = StepperConfig(dt, steps * dt, sim["stepper.scheme"], steps)
    eng = Engine(g, sim.drift_spec(), noise, cfg)
    u0 = sim.initial_field(g).values
    streams = [NoiseStream(sim["seed"], i, noise.modes) for i in range(paths)]
    res = eng.run(np.tile(u0, (paths, 1)), streams)
    worst = float(res.w1_max.max())
    rep.info.update({"steps": steps, "paths": paths, "blown_paths": int(res.blown.sum())})
    rep.add("max_hs_over_bound", worst, W1_MARGIN, worst <= W1_MARGIN)
    return rep


# --------------------------------------------------------------------------
# ensemble suites
# --------------------------------------------------------------------------

def constant_probe(grid: Grid) -> np.ndarray:
    """The normalised constant, i.e. basis field ``e_0``."""
    return np.full(grid.n, 1.0 / np.sqrt(grid.length))


def budget_from_stats(stats, rel_band: float = 0.02) -> SuiteReport:
    rep = SuiteReport("ito_budget")
    r = ito_budget_check(stats.records, stats.times, rel_band=rel_band)
    rep.info.update(r.to_dict())
    rep.add("budget_discrepancy", abs(r.discrepancy), r.tolerance, r.passed,
            f"lhs={r.lhs:.6g} rhs={r.rhs:.6g} se={r.se:.3g} band={r.band:.3g}")
    rep.add("blowup_fraction", stats.blowup_fraction, 0.0, stats.blowup_fraction == 0.0)
    return rep


def martingale_from_stats(stats, noise, s: float, t: float, qv_rel: float = 0.05) -> SuiteReport:
    rep = SuiteReport("martingale")
    mp = martingale_probe(stats.records, stats.times, s, t)
    rep.info.update(mp.to_dict())
    tol_inc = 3.0 * mp.increment_se + mp.tolerance_abs
    rep.add("increment_mean", abs(mp.increment_mean), tol_inc, abs(mp.increment_mean) <= tol_inc)
    tol_phi = 3.0 * mp.increment_phi_se + mp.tolerance_abs
    rep.add("weighted_increment_mean", abs(mp.increment_phi_mean), tol_phi, abs(mp.increment_phi_mean) <= tol_phi)
    tol_qv = 3.0 * mp.qv_stat_se + mp.tolerance_abs
    rep.add("qv_discrepancy", abs(mp.qv_stat_mean), tol_qv, abs(mp.qv_stat_mean) <= tol_qv)
    if noise.kind == "additive":
        closed = float(noise.q[0] ** 2 * (t - s))
        rel = abs(mp.identity_qv - closed) / closed
        rep.add("qv_closed_form", rel, qv_rel, rel <= qv_rel,
                f"E[M_t^2 - M_s^2]={mp.identity_qv:.6g} q0^2(t-s)={closed:.6g} realized={mp.realized_qv:.6g}")
        rep.info["closed_form_qv"] = closed
    return rep


def ensemble_for_probes(sim: SimConfig, paths: Optional[int] = None, workers: Optional[int] = None):
    g = sim.grid()
    a = constant_probe(g)
    ens = EnsembleConfig.from_sim(sim, paths, workers)
    return run_ensemble(ens, probes=(a, a))


def martingale_suite(sim: SimConfig, paths: Optional[int] = None, workers: Optional[int] = None,
                     s: Optional[float] = None, t: Optional[float] = None, stats=None) -> SuiteReport:
    stats = stats if stats is not None else ensemble_for_probes(sim, paths, workers)
    times = stats.times
    t = float(times[-1]) if t is None else t
    s = float(times[min(len(times) - 1, max(1, len(times) // 10))]) if s is None else s
    return martingale_from_stats(stats, sim.noise_model(), s, t)


def ito_budget_suite(sim: SimConfig, paths: Optional[int] = None, workers: Optional[int] = None,
                     stats=None) -> SuiteReport:
    stats = stats if stats is not None else ensemble_for_probes(sim, paths, workers)
    return budget_from_stats(stats)


def moments_from_sweep(sweep, max_ratio: float = 1.5, max_blowup: float = 0.01) -> SuiteReport:
    rep = SuiteReport("moments")
    a = np.array([r.est_4a for r in sweep.rows])
    c = np.array([r.est_4c for r in sweep.rows])
    eps = [r.epsilon for r in sweep.rows]
    order = np.argsort(eps)[::-1]
    a_dec = a[order]
    rep.info.update({"epsilons": [eps[i] for i in order], "est_4a": [float(v) for v in a_dec],
                     "est_4c": [float(v) for v in c[order]], "blowup": [sweep.blowup[i] for i in order],
                     "path_distance": sweep.path_distance})
    finite_a = bool(np.all(np.isfinite(a)) and np.all(a > 0))
    ratio = float(a.max() / a.min()) if finite_a else np.inf
    rep.info["est_4a_monotone_increasing"] = bool(np.all(np.diff(a_dec) > 0)) if finite_a else None
    rep.add("est_4a_max_over_min", ratio, max_ratio, ratio <= max_ratio,
            "no increasing trend as epsilon decreases")
    c_max = float(np.max(c)) if np.all(np.isfinite(c)) else np.inf
    rep.add("est_4c_finite", c_max, np.inf, bool(np.isfinite(c_max)))
    b = float(max(sweep.blowup))
    rep.add("blowup_fraction", b, max_blowup, b < max_blowup)
    return rep


def moments_suite(sim: SimConfig, paths: Optional[int] = None, workers: Optional[int] = None,
                  epsilons=None) -> SuiteReport:
    ens = EnsembleConfig.from_sim(sim, paths, workers)
    sweep = sweep_epsilon(ens, epsilons)
    return moments_from_sweep(sweep)


def run_suite(name: str, sim: SimConfig, paths: Optional[int] = None,
              workers: Optional[int] = None) -> List[SuiteReport]:
    if name not in SUITES:
        raise ConfigError(f"unknown verification suite '{name}'; expected one of {SUITES}")
    sim.validate()
    out: List[SuiteReport] = []

    def timed(fn, *args, **kw):
        t0 = time.perf_counter()
        rep = fn(*args, **kw)
        rep.seconds = time.perf_counter() - t0
        out.append(rep)
        return rep

    if name in ("identities", "all"):
        timed(identities_suite, sim)
    if name in ("noise_w1", "all"):
        timed(noise_w1_suite, sim)
    if name in ("martingale", "ito_budget", "all"):
        t0 = time.perf_counter()
        stats = ensemble_for_probes(sim, paths, workers)
        shared = time.perf_counter() - t0
        if name in ("martingale", "all"):
            timed(martingale_suite, sim, stats=stats).seconds += shared
        if name in ("ito_budget", "all"):
            timed(ito_budget_suite, sim, stats=stats).seconds += shared
    if name in ("moments", "all"):
        timed(moments_suite, sim, paths, workers)
    return out


def report_json(reports: List[SuiteReport], config_text: str) -> str:
    body = {"config": config_text, "passed": all(r.passed for r in reports),
            "suites": [r.to_dict() for r in reports]}
    return json.dumps(body, indent=1, allow_nan=False) + "\n"

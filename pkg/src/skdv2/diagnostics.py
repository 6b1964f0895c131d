"""Computable analysis objects: weighted energy, its Ito budget, integration-by-parts
identities, the noise trace term, the martingale part of a path and the
time-integrated Sobolev moments.

Per-snapshot values are stored as rows of a float array whose column layout is
:data:`COLUMNS`; the first ten columns are the public record schema, the rest
are probe pairings used by :func:`martingale_probe`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .dynamics import DriftOperator, DriftSpec
from .errors import PreconditionError
from .field import (CONTAMINATION_TOL, Field, Grid, boundary_contamination, derivative_hat,
                    from_hat, norm_sq_from_hat, to_hat, window_quadrature)
from .noise import NoiseModel
from .weights import WeightFunction

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("t", "l2", "h1", "h2", "h1_win", "F", "ito_drift", "ito_trace", "bc", "blowup")
PROBE_FIELDS = ("ua", "ub", "da", "db", "qv_ab", "qv_aa", "qv_bb")
COLUMNS = RECORD_FIELDS + PROBE_FIELDS
COL = {name: i for i, name in enumerate(COLUMNS)}


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    l2_sq: float
    h1_sq: float
    h2_sq: float
    h1_window_sq: float
    f_value: float
    ito_drift_term: float
    ito_trace_term: float
    boundary_contamination: float
    blow_up: bool

    @classmethod
    def from_row(cls, row: np.ndarray) -> "DiagnosticsRecord":
        vals = [float(row[COL[k]]) for k in RECORD_FIELDS]
        return cls(*vals[:-1], bool(vals[-1]))

    def to_dict(self) -> Dict[str, object]:
        vals = list(asdict(self).values())
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in zip(RECORD_FIELDS, vals)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False)


def bump(x: np.ndarray, center: float, half_width: float) -> np.ndarray:
    """C-infinity bump ``exp(-1 / (1 - s^2))`` supported on ``|x - center| < half_width``."""
    s = (np.asarray(x, dtype=float) - center) / half_width
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def bump_probe(grid: Grid, center: float, half_width: float) -> np.ndarray:
    """L2-normalised bump sampled on the grid."""
    v = bump(grid.x, center, half_width)
    norm = np.sqrt(grid.spacing * np.sum(v * v))
    if norm == 0:
        raise PreconditionError("probe support contains no grid nodes")
    return v / norm


def default_probes(grid: Grid, k: float) -> Tuple[np.ndarray, np.ndarray]:
    """Two overlapping bumps supported inside ``[-k, k]``."""
    return bump_probe(grid, 0.0, k), bump_probe(grid, k / 3.0, 2.0 * k / 3.0)


class SnapshotDiagnostics:
    """Evaluates one row of :data:`COLUMNS` per path for a batch of spectra."""

    def __init__(self, grid: Grid, drift: DriftSpec, noise: NoiseModel,
                 weight: WeightFunction, window_k: Optional[float] = None,
                 probes: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        self.grid = grid
        self.op = DriftOperator(grid, drift)
        self.noise = noise
        self.weight = weight
        self.p = weight.on_grid(grid)
        half = 0.5 * grid.length
        k = half if window_k is None else float(window_k)
        self.window = (max(-k, -half), min(k, half))
        if probes is None:
            probes = default_probes(grid, min(k, 0.9 * half))
        a, b = (np.asarray(v, dtype=float) for v in probes)
        self.a, self.b = a, b
        mask = self.op.mask
        if mask is not None:
            # <P_m Phi e_i, a> = <Phi e_i, P_m a>
            a = from_hat(to_hat(a) * mask, grid)
            b = from_hat(to_hat(b) * mask, grid)
        self.pa, self.pb = a, b

    def _trace(self, u: np.ndarray) -> np.ndarray:
        mask = self.op.mask
        if mask is None or self.noise.kind == "zero":
            return self.noise.trace_values(u, self.p)
        g = self.noise.gain(u)[..., None, :] * self.noise.basis
        proj = from_hat(to_hat(g) * mask, self.grid)
        q2 = self.noise.q**2
        per_mode = self.grid.spacing * np.sum(self.p * proj * proj, axis=-1)
        return 2.0 * np.sum(q2 * per_mode, axis=-1)

    def rows(self, t: float, u_hat: np.ndarray, blown: Optional[np.ndarray] = None) -> np.ndarray:
        g = self.grid
        h = g.spacing
        u_hat = np.atleast_2d(u_hat)
        out = np.empty((u_hat.shape[0], len(COLUMNS)))
        u = from_hat(u_hat, g)
        ux = from_hat(derivative_hat(u_hat, g, 1), g)
        d = from_hat(self.op.drift_hat(u_hat), g)
        n0 = norm_sq_from_hat(u_hat, g, 0)
        n1 = norm_sq_from_hat(u_hat, g, 1)
        n2 = norm_sq_from_hat(u_hat, g, 2)
        out[:, COL["t"]] = t
        out[:, COL["l2"]] = n0
        out[:, COL["h1"]] = n0 + n1
        out[:, COL["h2"]] = n0 + n1 + n2
        out[:, COL["h1_win"]] = window_quadrature(u * u + ux * ux, g, self.window)
        out[:, COL["F"]] = h * np.sum(self.p * u * u, axis=-1)
        out[:, COL["ito_drift"]] = 2.0 * h * np.sum(self.p * u * d, axis=-1)
        out[:, COL["ito_trace"]] = self._trace(u)
        out[:, COL["bc"]] = boundary_contamination(u)
        out[:, COL["blowup"]] = 0.0
        out[:, COL["ua"]] = h * (np.sum(u * self.a, axis=-1))
        out[:, COL["ub"]] = h * (np.sum(u * self.b, axis=-1))
        out[:, COL["da"]] = h * (np.sum(d * self.a, axis=-1))
        out[:, COL["db"]] = h * (np.sum(d * self.b, axis=-1))
        ca = self.noise.adjoint_coeffs(u, self.pa)
        cb = self.noise.adjoint_coeffs(u, self.pb)
        out[:, COL["qv_ab"]] = np.sum(ca * cb, axis=-1)
        out[:, COL["qv_aa"]] = np.sum(ca * ca, axis=-1)
        out[:, COL["qv_bb"]] = np.sum(cb * cb, axis=-1)
        if blown is not None and np.any(blown):
            out[blown, 1:] = np.nan
            out[blown, COL["blowup"]] = 1.0
        return out


# --------------------------------------------------------------------------
# single-field functionals
# --------------------------------------------------------------------------

def _periodic_compatible(p: WeightFunction) -> bool:
    return p.profile in ("periodic", "const")


def functional_f(u: Field, p: WeightFunction) -> float:
    """``F(u) = integral p u^2``; logs a warning when ``p`` is non-periodic and ``u`` reaches the edges."""
    if not _periodic_compatible(p):
        bc = float(boundary_contamination(u.values))
        if bc > CONTAMINATION_TOL:
            logger.warning("F(u) flagged: boundary contamination %.2e with non-periodic weight", bc)
    return float(u.grid.spacing * np.sum(p.on_grid(u.grid) * u.values**2))


def ibp_identity_residuals(u: Field, p: WeightFunction) -> np.ndarray:
    """Absolute residuals of four exact weighted integration-by-parts identities.

    (a) int p u u_3x            = 3/2 int p' u_x^2 - 1/2 int p''' u^2
    (b) int p u^2 u_x           = -1/3 int p' u^3
    (c) int p u u_4x            = int p u_2x^2 - 2 int p'' u_x^2 + 1/2 int p'''' u^2
    (d) int p u (3 u_x u_2x + u u_3x) = int p'' u^2 u_x + 2 int p' u u_x^2 + int p u u_x u_2x

    Both sides are separate grid quadratures; with a non-periodic weight the
    field must vanish at the box edges.
    """
    g = u.grid
    if not _periodic_compatible(p):
        bc = float(boundary_contamination(u.values))
        if bc > CONTAMINATION_TOL:
            raise PreconditionError(
                f"identities need a boundary-clean field for weight '{p.profile}' (contamination {bc:.2e})")
    hat = to_hat(u.values)
    d = [u.values] + [from_hat(derivative_hat(hat, g, j), g) for j in (1, 2, 3, 4)]
    w = [p.on_grid(g, j) for j in range(5)]
    h = g.spacing

    def q(f):
        return h * float(np.sum(f))

    u0, u1, u2, u3, u4 = d
    lhs = np.array([
        q(w[0] * u0 * u3),
        q(w[0] * u0 * u0 * u1),
        q(w[0] * u0 * u4),
        q(w[0] * u0 * (3.0 * u1 * u2 + u0 * u3)),
    ])
    rhs = np.array([
        1.5 * q(w[1] * u1 * u1) - 0.5 * q(w[3] * u0 * u0),
        -q(w[1] * u0**3) / 3.0,
        q(w[0] * u2 * u2) - 2.0 * q(w[2] * u1 * u1) + 0.5 * q(w[4] * u0 * u0),
        q(w[2] * u0 * u0 * u1) + 2.0 * q(w[1] * u0 * u1 * u1) + q(w[0] * u0 * u1 * u2),
    ])
    return np.abs(lhs - rhs)


def ito_trace(u: Field, p: WeightFunction, noise: NoiseModel) -> float:
    """``2 sum_i int p (Phi(u) e_i)^2`` over the retained modes."""
    return float(noise.trace_values(u.values, p.on_grid(u.grid)))


# --------------------------------------------------------------------------
# ensemble-level checks
# --------------------------------------------------------------------------

def _se(samples: np.ndarray) -> float:
    n = samples.shape[0]
    if n < 2:
        return float("nan")
    return float(np.std(samples, ddof=1) / np.sqrt(n))


def _valid_paths(records: np.ndarray) -> np.ndarray:
    return ~np.any(records[:, :, COL["blowup"]] > 0, axis=1)


def _time_index(times: np.ndarray, t: float) -> int:
    idx = int(np.argmin(np.abs(times - t)))
    if abs(times[idx] - t) > 1e-9 * max(1.0, abs(t)):
        raise PreconditionError(f"time {t} is not a snapshot time")
    return idx


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (float, np.floating)):
            v = float(v)
            out[k] = v if np.isfinite(v) else None
        elif isinstance(v, np.bool_):
            out[k] = bool(v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class BudgetReport:
    lhs: float
    rhs: float
    discrepancy: float
    se: float
    band: float
    tolerance: float
    paths: int
    underpowered: bool
    passed: bool

    def to_dict(self):
        return _clean(asdict(self))


def ito_budget_check(records: np.ndarray, times: np.ndarray, rel_band: float = 0.02,
                     abs_band: float = 0.0, n_se: float = 3.0,
                     min_paths: int = 1000) -> BudgetReport:
    """Compare ``E F(u(T)) - F(u0)`` with the time integral of ``E[ito_drift + trace / 2]``.

    The per-path difference is the weighted-energy martingale plus
    discretisation error, so its standard error is the Monte Carlo error.
    """
    recs = records[_valid_paths(records)]
    n = recs.shape[0]
    if n == 0:
        raise PreconditionError("all paths blew up; budget undefined")
    if n < min_paths:
        logger.warning("Ito budget check underpowered: %d paths (< %d)", n, min_paths)
    F = recs[:, :, COL["F"]]
    rate = recs[:, :, COL["ito_drift"]] + 0.5 * recs[:, :, COL["ito_trace"]]
    integral = trapezoid(rate, times, axis=1)
    change = F[:, -1] - F[:, 0]
    diff = change - integral
    lhs, rhs = float(change.mean()), float(integral.mean())
    disc = float(diff.mean())
    se = _se(diff)
    band = max(rel_band * abs(rhs), abs_band)
    tol = n_se * (0.0 if not np.isfinite(se) else se) + band
    return BudgetReport(lhs, rhs, disc, se, band, tol, n, n < min_paths, abs(disc) <= tol)


@dataclass(frozen=True)
class MartingaleProbe:
    s: float
    t: float
    increment_mean: float
    increment_se: float
    increment_phi_mean: float
    increment_phi_se: float
    qv_stat_mean: float
    qv_stat_se: float
    predicted_qv: float
    realized_qv: float
    identity_qv: float
    tolerance_abs: float
    passed_increment: bool
    passed_qv: bool

    @property
    def passed(self) -> bool:
        return self.passed_increment and self.passed_qv

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return _clean(d)


def martingale_parts(records: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``<M(t), a>`` and ``<M(t), b>`` per path and snapshot.

    ``M(t) = u(t) - u0 - int_0^t drift ds`` with the drift integral taken by
    the trapezoid rule over snapshots.
    """
    ma = []
    for u_col, d_col in (("ua", "da"), ("ub", "db")):
        u = records[:, :, COL[u_col]]
        d = records[:, :, COL[d_col]]
        ma.append(u - u[:, :1] - cumulative_trapezoid(d, times, axis=1, initial=0.0))
    return ma[0], ma[1]


def martingale_probe(records: np.ndarray, times: np.ndarray, s: float, t: float,
                     abs_tol: float = 1e-6, n_se: float = 3.0,
                     phi: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> MartingaleProbe:
    """Empirical martingale and quadratic-variation identities on probe pairings.

    Tests ``E <M(t) - M(s), a> phi = 0`` and
    ``E[<M(t),a><M(t),b> - <M(s),a><M(s),b> - int_s^t <Phi* a, Phi* b>] = 0``,
    each within ``n_se`` standard errors plus ``abs_tol``.  ``phi`` maps the
    time-``s`` pairings ``(<u(s),a>, <u(s),b>)`` to bounded weights; default
    ``tanh`` of the first.
    """
    if not s < t:
        raise PreconditionError("martingale probe needs s < t")
    recs = records[_valid_paths(records)]
    if recs.shape[0] == 0:
        raise PreconditionError("all paths blew up; probe undefined")
    i, j = _time_index(times, s), _time_index(times, t)
    ma, mb = martingale_parts(recs, times)
    inc = ma[:, j] - ma[:, i]
    if phi is None:
        phi_w = np.tanh(recs[:, i, COL["ua"]])
    else:
        phi_w = phi(recs[:, i, COL["ua"]], recs[:, i, COL["ub"]])
    qv = recs[:, :, COL["qv_ab"]]
    pred = trapezoid(qv[:, i:j + 1], times[i:j + 1], axis=1)
    stat = ma[:, j] * mb[:, j] - ma[:, i] * mb[:, i] - pred
    realized = np.sum(np.diff(ma[:, i:j + 1], axis=1) * np.diff(mb[:, i:j + 1], axis=1), axis=1)
    inc_m, inc_se = float(inc.mean()), _se(inc)
    ip = inc * phi_w
    ip_m, ip_se = float(ip.mean()), _se(ip)
    st_m, st_se = float(stat.mean()), _se(stat)

    def ok(mean, se):
        return abs(mean) <= n_se * (0.0 if not np.isfinite(se) else se) + abs_tol

    identity = float(np.mean(ma[:, j] * mb[:, j] - ma[:, i] * mb[:, i]))
    return MartingaleProbe(
        s, t, inc_m, inc_se, ip_m, ip_se, st_m, st_se, float(pred.mean()), float(realized.mean()),
        identity, abs_tol, ok(inc_m, inc_se) and ok(ip_m, ip_se), ok(st_m, st_se))


@dataclass(frozen=True)
class MomentEstimates:
    epsilon: float
    est_4a: float
    est_4a_se: float
    est_4c: float
    est_4c_se: float
    paths_used: int
    blowup_frac: float

    def to_dict(self):
        return _clean(asdict(self))


def moment_estimators(records: np.ndarray, times: np.ndarray, epsilon: float) -> MomentEstimates:
    """``eps E int |u|_{H^2}^2 dt`` and ``E int |u|_{H^1(-k,k)}^2 dt`` (trapezoid in time)."""
    valid = _valid_paths(records)
    if not np.any(valid):
        raise PreconditionError("all paths blew up; moment estimators undefined")
    recs = records[valid]
    a = epsilon * trapezoid(recs[:, :, COL["h2"]], times, axis=1)
    c = trapezoid(recs[:, :, COL["h1_win"]], times, axis=1)
    return MomentEstimates(float(epsilon), float(a.mean()), _se(a), float(c.mean()), _se(c),
                           int(valid.sum()), float(1.0 - valid.mean()))


def records_to_jsonl(rows: Sequence[np.ndarray]) -> str:
    return "".join(DiagnosticsRecord.from_row(r).to_json() + "\n" for r in rows)

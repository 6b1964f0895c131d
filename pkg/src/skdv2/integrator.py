"""Time stepping for batches of paths.

Three schemes share one engine working on arrays of rfft coefficients of shape
``(batch, nk)``:

``imex_em``
    Euler-Maruyama with the linear dispersive/dissipative symbol implicit,
    ``u_new = (u + dt N(u) + Phi(u) dW) / (1 - dt S)``.  For the Galerkin
    variant the cutoff factors inside ``S`` are frozen at the current state.
``explicit_em``
    Fully explicit Euler-Maruyama (only stable for tiny ``dt``).
``deterministic_rk4``
    Classical RK4 on the drift; refuses an active noise model.

A path is flagged as blown up when its values become non-finite or exceed
``10 * lambda`` in sup norm; it is frozen at zero afterwards and its records
carry ``blowup = 1``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .diagnostics import COL, COLUMNS, DiagnosticsRecord, SnapshotDiagnostics
from .dynamics import DriftOperator, DriftSpec
from .errors import BlowUpError, ConfigError, ConsistencyError, PreconditionError
from .field import Field, Grid, from_hat, norm_sq_from_hat, to_hat
from .noise import STREAM_BLOCK, W1_MARGIN, NoiseModel, NoiseStream
from .weights import WeightFunction, make_weight

logger = logging.getLogger(__name__)

SCHEMES = ("imex_em", "explicit_em", "deterministic_rk4")
MAX_STEPS = 10**8
BLOWUP_FACTOR = 10.0

IncrementSource = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    t_end: float
    scheme: str = "imex_em"
    snapshot_every: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"stepper invariant violated: scheme must be one of {SCHEMES} (got {self.scheme!r})")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"stepper invariant violated: dt must be positive (got {self.dt})")
        if not (np.isfinite(self.t_end) and self.t_end >= 0):
            raise ConfigError(f"stepper invariant violated: t_end must be nonnegative (got {self.t_end})")
        if self.t_end > 0 and self.dt > self.t_end:
            raise ConfigError(f"stepper invariant violated: dt ({self.dt}) exceeds t_end ({self.t_end})")
        if self.t_end / self.dt > MAX_STEPS:
            raise ConfigError(f"stepper invariant violated: t_end / dt exceeds {MAX_STEPS:.0e}")
        se = self.snapshot_every
        if isinstance(se, bool) or int(se) != se or se < 1:
            raise ConfigError(f"stepper invariant violated: snapshot_every must be a positive integer (got {se})")
        object.__setattr__(self, "snapshot_every", int(se))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def snapshot_steps(self) -> np.ndarray:
        steps = list(range(0, self.n_steps + 1, self.snapshot_every))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return np.array(steps)

    def times(self) -> np.ndarray:
        return self.snapshot_steps() * self.dt


@dataclass
class BatchResult:
    times: np.ndarray
    records: Optional[np.ndarray]
    final_values: np.ndarray
    blown: np.ndarray
    blowup_time: np.ndarray
    last_good: np.ndarray
    w1_max: np.ndarray
    fields: Optional[np.ndarray] = None


class Engine:
    """Steps a batch of spectra for one drift/noise/stepper combination."""

    def __init__(self, grid: Grid, drift: DriftSpec, noise: NoiseModel, cfg: StepperConfig,
                 lambda_cap: Optional[float] = None, check_w1: bool = True):
        if noise.grid != grid:
            raise ConfigError("noise model and simulation use different grids")
        active = noise.kind != "zero" and noise.total_variance > 0
        if cfg.scheme == "deterministic_rk4" and active:
            raise ConfigError("deterministic_rk4 requires the zero noise model")
        self.grid = grid
        self.spec = drift
        self.op = DriftOperator(grid, drift)
        self.noise = noise
        self.cfg = cfg
        self.active = active
        self.lambda_cap = noise.lambda_cap if lambda_cap is None else float(lambda_cap)
        self.check_w1 = check_w1
        self.mask = self.op.mask
        # additive HS norm does not depend on the state
        self._hs_const = float(np.sqrt(noise.total_variance)) if noise.kind == "additive" else None

    # -- single step -------------------------------------------------------

    def _noise_hat(self, u: np.ndarray, xi: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if not self.active or xi is None:
            return None
        nh = self.noise.noise_hat(u, xi)
        if self.mask is not None:
            nh = nh * self.mask
        return nh

    def step_hat(self, u_hat: np.ndarray, u: np.ndarray, xi: Optional[np.ndarray]) -> np.ndarray:
        """Advance spectra ``u_hat`` (physical values ``u``) by one step."""
        dt = self.cfg.dt
        scheme = self.cfg.scheme
        if scheme == "deterministic_rk4":
            f = self.op.drift_hat
            k1 = f(u_hat)
            k2 = f(u_hat + 0.5 * dt * k1)
            k3 = f(u_hat + 0.5 * dt * k2)
            k4 = f(u_hat + dt * k3)
            return u_hat + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sym, nl = self.op.split(u_hat)
        nh = self._noise_hat(u, xi)
        if scheme == "imex_em":
            rhs = u_hat + dt * nl
            if nh is not None:
                rhs = rhs + nh
            return rhs / (1.0 - dt * sym)
        out = u_hat + dt * (sym * u_hat + nl)
        if nh is not None:
            out = out + nh
        return out

    def w1_ratio(self, u_hat: np.ndarray, u: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros(u_hat.shape[0])
        noise = self.noise
        l2 = np.sqrt(norm_sq_from_hat(u_hat, self.grid, 0))
        bound = noise.kappa1 * np.maximum(l2 * l2, l2) + noise.kappa2
        hs = self._hs_const if self._hs_const is not None else np.sqrt(noise.hs_norm_sq_values(u))
        hs = np.broadcast_to(hs, bound.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(bound > 0, hs / np.where(bound > 0, bound, 1.0), np.where(hs > 0, np.inf, 0.0))

    # -- batch run ---------------------------------------------------------

    def run(self, u0: np.ndarray, streams: Optional[Sequence[NoiseStream]] = None,
            increments: Optional[IncrementSource] = None,
            diagnostics: Optional[SnapshotDiagnostics] = None,
            keep_fields: bool = False) -> BatchResult:
        """Integrate every row of ``u0`` to ``t_end``.

        Increments come from ``increments(step)`` when given (already scaled
        by ``sqrt(dt)``), otherwise from ``streams`` (one per row).
        """
        g, cfg = self.grid, self.cfg
        u0 = np.atleast_2d(np.asarray(u0, dtype=float))
        batch = u0.shape[0]
        if u0.shape[1] != g.n:
            raise PreconditionError(f"initial fields have {u0.shape[1]} samples, grid expects {g.n}")
        if not np.all(np.isfinite(u0)):
            raise PreconditionError("initial field is not finite")
        if self.active and increments is None:
            if streams is None or len(streams) != batch:
                raise PreconditionError("an active noise model needs one stream per path")
            if any(s.modes != self.noise.modes for s in streams):
                raise PreconditionError("stream width does not match the number of noise modes")
        u_hat = to_hat(u0)
        if self.mask is not None:
            u_hat = u_hat * self.mask
        snaps = cfg.snapshot_steps()
        times = snaps * cfg.dt
        records = np.empty((batch, len(snaps), len(COLUMNS))) if diagnostics is not None else None
        fields = np.empty((batch, len(snaps), g.n)) if keep_fields else None
        blown = np.zeros(batch, dtype=bool)
        blowup_time = np.full(batch, np.nan)
        w1_max = np.zeros(batch)
        last_good = u0.copy()
        root = np.sqrt(cfg.dt)
        buf = None
        limit = BLOWUP_FACTOR * self.lambda_cap
        snap_i = 0
        for step in range(cfg.n_steps + 1):
            u = from_hat(u_hat, g)
            bad = ~np.all(np.isfinite(u), axis=1) | (np.max(np.abs(u), axis=1) > limit)
            new_bad = bad & ~blown
            if np.any(new_bad):
                blown |= new_bad
                blowup_time[new_bad] = step * cfg.dt
                for b in np.flatnonzero(new_bad):
                    logger.warning("path row %d blew up at t = %.4g", b, step * cfg.dt)
            if np.any(blown):
                u_hat[blown] = 0.0
                u[blown] = 0.0
            last_good[~blown] = u[~blown]
            if self.check_w1 and self.active:
                r = self.w1_ratio(u_hat, u)
                r[blown] = 0.0
                w1_max = np.maximum(w1_max, r)
                if np.any(r > W1_MARGIN):
                    raise ConsistencyError(
                        f"noise growth bound violated at t = {step * cfg.dt:.4g}: ratio {float(np.max(r)):.4f}")
            if snap_i < len(snaps) and step == snaps[snap_i]:
                if records is not None:
                    records[:, snap_i] = diagnostics.rows(step * cfg.dt, u_hat, blown)
                if fields is not None:
                    fields[:, snap_i] = u
                    fields[blown, snap_i] = np.nan
                snap_i += 1
            if step == cfg.n_steps:
                break
            xi = None
            if self.active:
                if increments is not None:
                    xi = np.asarray(increments(step), dtype=float)
                else:
                    j = step % STREAM_BLOCK
                    if j == 0:
                        buf = np.stack([s.take(STREAM_BLOCK) for s in streams])
                    xi = buf[:, j] * root
                if np.any(blown):
                    xi = xi.copy()
                    xi[blown] = 0.0
            with np.errstate(over="ignore", invalid="ignore"):
                u_hat = self.step_hat(u_hat, u, xi)
        return BatchResult(times, records, u, blown, blowup_time, last_good, w1_max, fields)


# --------------------------------------------------------------------------
# single-path API
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PathState:
    t: float
    u: Field
    step: int = 0
    stream: Optional[NoiseStream] = None
    blow_up: bool = False


def step(state: PathState, drift: DriftSpec, noise: NoiseModel, cfg: StepperConfig) -> PathState:
    """One step from ``state``; the input state (and its stream) is left untouched."""
    if state.blow_up:
        raise PreconditionError("cannot step a path that has blown up")
    eng = Engine(state.u.grid, drift, noise, cfg)
    stream = copy.deepcopy(state.stream) if state.stream is not None else None
    xi = None
    if eng.active:
        if stream is None:
            raise PreconditionError("an active noise model needs a stream")
        xi = stream.normals()[None, :] * np.sqrt(cfg.dt)
    u_hat = to_hat(state.u.values)[None, :]
    if eng.mask is not None:
        u_hat = u_hat * eng.mask
    u = from_hat(u_hat, state.u.grid)
    if eng.active:
        eng_r = eng.w1_ratio(u_hat, u)
        if eng_r[0] > W1_MARGIN:
            raise ConsistencyError(f"noise growth bound violated: ratio {eng_r[0]:.4f}")
    with np.errstate(over="ignore", invalid="ignore"):
        new = from_hat(eng.step_hat(u_hat, u, xi), state.u.grid)[0]
    if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > BLOWUP_FACTOR * eng.lambda_cap:
        raise BlowUpError(f"blow-up at t = {state.t + cfg.dt:.4g}")
    return PathState(state.t + cfg.dt, Field(state.u.grid, new), state.step + 1, stream, False)


def run_path(u0: Field, drift: DriftSpec, noise: NoiseModel, cfg: StepperConfig,
             stream: Union[NoiseStream, int, None] = None, weight: Optional[WeightFunction] = None,
             window_k: Optional[float] = None,
             probes: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[List[DiagnosticsRecord], PathState]:
    """Integrate one path and return its diagnostic records and final state.

    ``stream`` may be a :class:`NoiseStream` or an integer seed (path index 0).
    On blow-up the records end with a flagged entry and the final state holds
    the last finite field.
    """
    grid = u0.grid
    if stream is None or isinstance(stream, (int, np.integer)):
        stream = NoiseStream(0 if stream is None else int(stream), 0, noise.modes)
    if weight is None:
        weight = make_weight("const", lambda_cap=noise.lambda_cap)
    diag = SnapshotDiagnostics(grid, drift, noise, weight, window_k, probes)
    eng = Engine(grid, drift, noise, cfg)
    res = eng.run(u0.values[None, :], [stream], diagnostics=diag)
    rows = res.records[0]
    recs = []
    for row in rows:
        recs.append(DiagnosticsRecord.from_row(row))
        if row[COL["blowup"]] > 0:
            break
    if res.blown[0]:
        t = float(res.blowup_time[0])
        state = PathState(t, Field(grid, res.last_good[0]), int(round(t / cfg.dt)), stream, True)
    else:
        state = PathState(float(res.times[-1]), Field(grid, res.final_values[0]), cfg.n_steps, stream, False)
    return recs, state

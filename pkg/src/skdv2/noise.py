"""Truncated cylindrical Wiener process and a diagonal Hilbert-Schmidt noise family.

The noise operator acts on the ``i``-th basis field as

    Phi(u) e_i = q_i * g(u) * e_i,     q_i = sigma0 * (1 + i)^(-decay_r),

with ``g(u) = 1`` (additive), ``clamp(u, -clip, clip)`` (diagonal
multiplicative) or ``0`` (zero).  The basis is the real Fourier basis of the
box, L2-normalised under the grid quadrature: ``e_0`` is constant, odd
indices are cosines and even indices sines of wavenumber ``(i + 1) // 2``.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import zeta

from .errors import ConfigError, ConsistencyError, PreconditionError
from .field import Field, Grid, check_finite, from_hat, to_hat

logger = logging.getLogger(__name__)

NOISE_KINDS = ("zero", "additive", "diagonal_multiplicative")
W1_MARGIN = 1.1
TAIL_TOL = 1e-6
STREAM_BLOCK = 64


def mode_wavenumber(i):
    """Wavenumber index ``j`` carried by basis field ``e_i``."""
    return (np.asarray(i) + 1) // 2


def fourier_basis(grid: Grid, modes: int) -> np.ndarray:
    """Rows ``e_0 .. e_{modes-1}`` sampled on the grid."""
    if modes > grid.n - 1:
        raise ConfigError(f"noise invariant violated: at most n - 1 = {grid.n - 1} modes fit the grid")
    x = grid.x
    L = grid.length
    basis = np.empty((modes, grid.n))
    for i in range(modes):
        j = (i + 1) // 2
        if i == 0:
            basis[i] = 1.0 / np.sqrt(L)
        elif i % 2:
            basis[i] = np.sqrt(2.0 / L) * np.cos(2.0 * np.pi * j * x / L)
        else:
            basis[i] = np.sqrt(2.0 / L) * np.sin(2.0 * np.pi * j * x / L)
    return basis


# Row-wise reduction instead of BLAS matmul: gemm rounding depends on the batch
# shape and thread count, which would make ensemble bits depend on chunking.

def _pair(values: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """``sum_x values[..., x] * basis[i, x]`` for every mode ``i``."""
    return np.sum(values[..., None, :] * basis, axis=-1)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Parameters of ``Phi`` plus derived basis data and the growth certificate.

    ``weights`` is a test hook replacing the power-law ``q_i``.
    """

    grid: Grid
    kind: str = "additive"
    sigma0: float = 0.1
    decay_r: float = 2.5
    modes: int = 32
    clip: float = 1.0
    lambda_cap: float = 10.0
    weights: Optional[Tuple[float, ...]] = None
    kappa1: float = field(init=False, default=0.0)
    kappa2: float = field(init=False, default=0.0)
    tail_fraction: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise invariant violated: kind must be one of {NOISE_KINDS} (got {self.kind!r})")
        if not self.sigma0 >= 0:
            raise ConfigError(f"noise invariant violated: sigma0 must be >= 0 (got {self.sigma0})")
        if not self.decay_r > 0.5:
            raise ConfigError(f"noise invariant violated: decay_r must exceed 1/2 (got {self.decay_r})")
        if int(self.modes) != self.modes or self.modes < 1:
            raise ConfigError(f"noise invariant violated: modes must be a positive integer (got {self.modes})")
        if not self.clip > 0:
            raise ConfigError(f"noise invariant violated: clip must be positive (got {self.clip})")
        if self.clip > self.lambda_cap:
            raise ConfigError(
                f"noise invariant violated: clip ({self.clip}) must not exceed lambda ({self.lambda_cap})")
        modes = int(self.modes)
        object.__setattr__(self, "modes", modes)
        if self.weights is not None:
            q = np.asarray(self.weights, dtype=float)
            if q.shape != (modes,):
                raise ConfigError("noise weights override must have one entry per mode")
            tail = 0.0
        else:
            q = self.sigma0 * (1.0 + np.arange(modes)) ** (-self.decay_r)
            s = 2.0 * self.decay_r
            tail = float(zeta(s, modes + 1) / zeta(s, 1))
        if np.any(q < 0) or (q.size > 1 and np.any(np.diff(q) >= 0) and np.any(q > 0)):
            raise ConfigError("noise invariant violated: mode weights must be strictly decreasing")
        if tail >= TAIL_TOL:
            logger.warning("noise truncation tail %.2e of the total variance exceeds %.0e", tail, TAIL_TOL)
        q.setflags(write=False)
        basis = fourier_basis(self.grid, modes)
        basis.setflags(write=False)
        basis_hat = to_hat(basis)
        basis_hat.setflags(write=False)
        density = (q[:, None] ** 2 * basis**2).sum(axis=0)
        density.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "basis_hat", basis_hat)
        # each e_i has a single rfft coefficient, at wavenumber index j(i)
        idx = mode_wavenumber(np.arange(modes))
        object.__setattr__(self, "_hat_index", idx)
        object.__setattr__(self, "_hat_coeff", basis_hat[np.arange(modes), idx])
        object.__setattr__(self, "variance_density", density)
        object.__setattr__(self, "tail_fraction", tail)
        k1, k2 = certify_w1(self, default_trial_fields(self.grid, self.lambda_cap))
        object.__setattr__(self, "kappa1", k1)
        object.__setattr__(self, "kappa2", k2)

    @property
    def total_variance(self) -> float:
        """``sum q_i^2`` over retained modes."""
        return float(np.sum(self.q**2))

    def analytic_kappas(self) -> Tuple[float, float]:
        """Closed-form growth constants for this family.

        Multiplicative: ``||Phi(u)||_HS^2 = int g(u)^2 sum q_i^2 e_i^2 <= S |u|^2`` with
        ``S = q_0^2 / L + (2 / L) sum_j max(q_{2j-1}, q_{2j})^2`` since ``|g(u)| <= |u|``.
        """
        if self.kind == "zero" or self.sigma0 == 0 and self.weights is None:
            return 0.0, 0.0
        if self.kind == "additive":
            return 0.0, float(np.sqrt(self.total_variance))
        L = self.grid.length
        q2 = self.q**2
        s = q2[0] / L
        for j in range(1, mode_wavenumber(self.modes - 1) + 1):
            pair = q2[2 * j - 1: 2 * j + 1]
            s += 2.0 / L * float(np.max(pair))
        return float(np.sqrt(s)), 0.0

    # -- array kernels (trailing axis = space) ---------------------------

    def gain(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "additive":
            return np.ones_like(u)
        if self.kind == "zero":
            return np.zeros_like(u)
        return np.clip(u, -self.clip, self.clip)

    def covariance_field(self, xi: np.ndarray) -> np.ndarray:
        """``sum_i q_i xi_i e_i`` for a batch of increments ``xi`` (..., modes)."""
        return from_hat(self._covariance_hat(xi), self.grid)

    def _covariance_hat(self, xi: np.ndarray) -> np.ndarray:
        c = np.asarray(xi) * self.q * self._hat_coeff
        out = np.zeros(c.shape[:-1] + (self.grid.nk,), dtype=complex)
        # even i (constant, sines) and odd i (cosines) each hit distinct indices
        out[..., self._hat_index[0::2]] = c[..., 0::2]
        out[..., self._hat_index[1::2]] += c[..., 1::2]
        return out

    def noise_values(self, u: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(u)
        base = self.covariance_field(xi)
        if self.kind == "additive":
            return np.broadcast_to(base, np.broadcast_shapes(base.shape, u.shape)).copy()
        return self.gain(u) * base

    def noise_hat(self, u: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Spectrum of ``Phi(u) dW`` (additive noise avoids the FFT)."""
        if self.kind == "zero":
            return np.zeros(u.shape[:-1] + (self.grid.nk,), dtype=complex)
        if self.kind == "additive":
            return self._covariance_hat(xi)
        return to_hat(self.noise_values(u, xi))

    def hs_norm_sq_values(self, u: np.ndarray) -> np.ndarray:
        g = self.gain(u)
        return self.grid.spacing * np.sum(g * g * self.variance_density, axis=-1)

    def trace_values(self, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        """``2 sum_i int p (Phi(u) e_i)^2`` for weight samples ``p``."""
        g = self.gain(u)
        return 2.0 * self.grid.spacing * np.sum(p * g * g * self.variance_density, axis=-1)

    def adjoint_coeffs(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Components ``(Phi(u)^* a)_i = q_i <g(u) e_i, a>``."""
        g = self.gain(u)
        return self.q * _pair(g * a, self.basis) * self.grid.spacing

    def w1_bound(self, u: np.ndarray) -> np.ndarray:
        l2 = np.sqrt(self.grid.spacing * np.sum(u * u, axis=-1))
        return self.kappa1 * np.maximum(l2 * l2, l2) + self.kappa2

    def w1_ratio(self, u: np.ndarray) -> np.ndarray:
        """``||Phi(u)||_HS / (kappa1 max{|u|^2, |u|} + kappa2)``; 0 when both vanish."""
        hs = np.sqrt(self.hs_norm_sq_values(u))
        bound = self.w1_bound(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(bound > 0, hs / np.where(bound > 0, bound, 1.0), np.where(hs > 0, np.inf, 0.0))
        return r

    def assert_w1(self, u: np.ndarray, margin: float = W1_MARGIN) -> np.ndarray:
        r = self.w1_ratio(u)
        if np.any(r > margin):
            raise ConsistencyError(
                f"noise growth bound violated: HS norm / certified bound = {float(np.max(r)):.4f} > {margin}")
        return r


@dataclass(frozen=True)
class WienerIncrement:
    dt: float
    xi: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise PreconditionError(f"Wiener increment needs dt > 0 (got {self.dt})")
        check_finite(np.asarray(self.xi), "Wiener increment")


class NoiseStream:
    """Deterministic standard-normal cursor owned by one ensemble path.

    The generator is PCG64 seeded from ``SeedSequence(seed, spawn_key=(path,))``;
    step ``s`` consumes row ``s`` of the stream, so draws depend only on
    ``(seed, path, step)`` and never on how paths are scheduled.
    """

    def __init__(self, seed: int, path: int, modes: int, block: int = STREAM_BLOCK):
        self.seed = int(seed)
        self.path = int(path)
        self.modes = int(modes)
        self.block = int(block)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.path,))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._buf = np.empty((0, self.modes))
        self._pos = 0
        self._hashed = 0
        self._sha = hashlib.sha256()
        self.step = 0

    def __deepcopy__(self, memo):
        new = copy.copy(self)
        new._gen = copy.deepcopy(self._gen, memo)
        new._buf = self._buf.copy()
        new._sha = self._sha.copy()
        return new

    def _flush_hash(self):
        if self._hashed < self._pos:
            self._sha.update(np.ascontiguousarray(self._buf[self._hashed:self._pos]).tobytes())
            self._hashed = self._pos

    def _refill(self):
        self._flush_hash()
        self._buf = self._gen.standard_normal((self.block, self.modes))
        self._pos = 0
        self._hashed = 0

    def normals(self) -> np.ndarray:
        """Next row of ``modes`` independent N(0, 1) draws."""
        if self._pos >= len(self._buf):
            self._refill()
        row = self._buf[self._pos]
        self._pos += 1
        self.step += 1
        return row

    def take(self, count: int) -> np.ndarray:
        """Next ``count`` rows at once; identical to ``count`` calls of :meth:`normals`."""
        out = np.empty((count, self.modes))
        filled = 0
        while filled < count:
            if self._pos >= len(self._buf):
                self._refill()
            k = min(count - filled, len(self._buf) - self._pos)
            out[filled:filled + k] = self._buf[self._pos:self._pos + k]
            self._pos += k
            filled += k
        self.step += count
        return out

    def draw_hash(self) -> str:
        """SHA-256 of every draw consumed so far."""
        self._flush_hash()
        return self._sha.hexdigest()


def sample_increment(stream: NoiseStream, dt: float) -> WienerIncrement:
    if not dt > 0:
        raise PreconditionError(f"Wiener increment needs dt > 0 (got {dt})")
    return WienerIncrement(dt, stream.normals() * np.sqrt(dt))


def draw_batch(streams: Sequence[NoiseStream], dt: float) -> np.ndarray:
    """Stack one increment per stream, shape ``(len(streams), modes)``."""
    root = np.sqrt(dt)
    return np.stack([s.normals() for s in streams]) * root


def apply_phi(model: NoiseModel, u: Field, dw: WienerIncrement) -> Field:
    if np.shape(dw.xi) != (model.modes,):
        raise PreconditionError(f"increment has shape {np.shape(dw.xi)}, model expects ({model.modes},)")
    return Field(model.grid, model.noise_values(u.values, np.asarray(dw.xi)))


def hs_norm_sq(model: NoiseModel, u: Field) -> float:
    """``||Phi(u)||_HS^2 = sum_i q_i^2 |g(u) e_i|^2``."""
    return float(model.hs_norm_sq_values(u.values))


def phi_pairing(model: NoiseModel, u: Field, a: np.ndarray, b: np.ndarray) -> float:
    """``<Phi(u) a, Phi(u) b>`` for input-space vectors ``a``, ``b`` sampled on the grid."""
    h = model.grid.spacing
    qa = model.covariance_field(h * _pair(a, model.basis))
    qb = model.covariance_field(h * _pair(b, model.basis))
    g = model.gain(u.values)
    return float(h * np.sum(g * g * qa * qb))


def default_trial_fields(grid: Grid, lambda_cap: float) -> np.ndarray:
    """Trial set for growth certification.

    Contains the zero field, constants and bumps at amplitude ``lambda``, a
    discrete delta at every node (these realise the pointwise supremum of the
    noise variance density) and a few smooth random fields.
    """
    x = grid.x
    rows = [np.zeros(grid.n), np.full(grid.n, lambda_cap), np.full(grid.n, -lambda_cap)]
    for width in (0.05, 0.2, 1.0):
        for c in np.linspace(-0.4, 0.4, 9) * grid.length:
            bump = np.exp(-((x - c) / (width * grid.length / 8.0)) ** 2)
            rows.extend([lambda_cap * bump, 0.5 * bump, 1e-3 * bump])
    rows.extend(np.eye(grid.n) * 1e-3)
    rng = np.random.default_rng(0)
    for _ in range(8):
        coef = rng.standard_normal(8) / (1.0 + np.arange(8)) ** 2
        f = sum(c * np.cos(2 * np.pi * (j + 1) * x / grid.length + j) for j, c in enumerate(coef))
        rows.append(f)
    return np.array(rows)


def certify_w1(model: NoiseModel, trial_fields: Iterable) -> Tuple[float, float]:
    """Tight growth constants ``(kappa1, kappa2)`` valid on every trial field.

    The runtime check allows a further 10 % margin (``W1_MARGIN``).
    """
    trials = np.array([t.values if isinstance(t, Field) else np.asarray(t, dtype=float)
                       for t in trial_fields])
    if trials.size == 0:
        raise PreconditionError("growth certification needs a non-empty trial set")
    if trials.ndim != 2 or trials.shape[1] != model.grid.n:
        raise PreconditionError("trial fields must be sampled on the model grid")
    if not np.any(np.all(trials == 0.0, axis=1)):
        raise PreconditionError("trial set must include the zero field")
    if not np.any(np.max(np.abs(trials), axis=1) >= model.lambda_cap):
        raise PreconditionError("trial set must include a field at amplitude lambda")
    hs = np.sqrt(model.hs_norm_sq_values(trials))
    l2 = np.sqrt(model.grid.spacing * np.sum(trials * trials, axis=1))
    growth = np.maximum(l2 * l2, l2)
    a1, a2 = model.analytic_kappas()
    if model.kind == "zero" or not np.any(hs > 0):
        k1, k2 = 0.0, 0.0
    elif model.kind == "additive":
        k1, k2 = 0.0, float(np.max(hs))
    else:
        nz = growth > 0
        k1, k2 = float(np.max(hs[nz] / growth[nz])), 0.0
    slack = 1.0 + 1e-10
    if k1 > a1 * slack + 1e-300 or k2 > a2 * slack + 1e-300:
        raise ConsistencyError(
            f"empirical growth constants ({k1:.4e}, {k2:.4e}) exceed the closed form ({a1:.4e}, {a2:.4e})")
    if np.any(hs > (k1 * growth + k2) * slack + 1e-300):
        raise ConsistencyError("growth bound unsatisfiable on the trial set")
    return k1, k2

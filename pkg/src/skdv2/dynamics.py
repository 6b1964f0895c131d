"""Drift operators of the stochastic KdV2 family.

Written as ``du = drift(u) dt + Phi(u) dW`` the drift is the negated bracket

    kdv2:         -(u_3x + u u_x + u u_3x + 3 u_x u_2x)
    regularized:  kdv2 - eps u_4x
    galerkin:     -P_m(th1 eps u_4x + th2 u u_x + th3 u_3x + 3 th4 u_x u_2x + th3 u u_3x)

with cutoff factors ``th1 = theta(|u_4x|^2/m)``, ``th2 = theta(|u_x|^2/m)``,
``th3 = theta(|u_3x|^2/m)``, ``th4 = theta(|u_x u_2x|^2/m)`` (squared L2 norms).
Quadratic products are formed on the 3/2-padded grid.

:class:`DriftOperator` splits the drift into a diagonal linear symbol and a
nonlinear remainder so the integrator can treat the stiff part implicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, PreconditionError
from .field import (Field, Grid, from_hat, from_padded, norm_sq_from_hat, to_hat,
                    to_padded)
from .weights import theta

VARIANTS = ("kdv2", "regularized", "galerkin_cutoff", "zero")
BAND_TOL = 1e-10
ROUNDOFF_BAND_TOL = 1e-13


@dataclass(frozen=True)
class DriftSpec:
    """Which drift to use.  ``zero`` is a test hook (no drift at all)."""

    variant: str = "regularized"
    epsilon: float = 0.1
    m: Optional[int] = None

    def __post_init__(self):
        v, eps = self.variant, self.epsilon
        if v not in VARIANTS:
            raise ConfigError(f"DriftSpec invariant violated: unknown variant {v!r}; expected one of {VARIANTS}")
        if not np.isfinite(eps):
            raise ConfigError(f"DriftSpec invariant violated: epsilon must be finite (got {eps})")
        if v in ("kdv2", "zero") and eps != 0:
            raise ConfigError(f"DriftSpec invariant violated: variant {v!r} requires epsilon = 0 (got {eps})")
        if v in ("regularized", "galerkin_cutoff") and not eps > 0:
            raise ConfigError(f"DriftSpec invariant violated: variant {v!r} requires epsilon > 0 (got {eps})")
        if v == "galerkin_cutoff":
            m = self.m
            if m is None or isinstance(m, bool) or int(m) != m or m < 1:
                raise ConfigError(f"DriftSpec invariant violated: galerkin_cutoff needs a positive integer m (got {m})")
            object.__setattr__(self, "m", int(m))


class DriftOperator:
    """Batched drift evaluation on one grid (arrays of rfft coefficients)."""

    def __init__(self, grid: Grid, spec: DriftSpec):
        self.grid = grid
        self.spec = spec
        self.s1, self.s2, self.s3, self.s4 = (grid.symbol(o) for o in (1, 2, 3, 4))
        if spec.variant == "galerkin_cutoff":
            if spec.m > grid.n // 2:
                raise ConfigError(f"Galerkin dimension m = {spec.m} exceeds n/2 = {grid.n // 2}")
            self.mask = grid.mode_mask(spec.m)
        else:
            self.mask = None
        if spec.variant == "zero":
            self.base_symbol = np.zeros(grid.nk, dtype=complex)
        else:
            self.base_symbol = -self.s3 - spec.epsilon * self.s4

    def _padded_parts(self, u_hat):
        g = self.grid
        u = to_padded(u_hat, g)
        ux = to_padded(u_hat * self.s1, g)
        uxx = to_padded(u_hat * self.s2, g)
        uxxx = to_padded(u_hat * self.s3, g)
        return u, ux, uxx, uxxx

    def cutoffs(self, u_hat: np.ndarray) -> np.ndarray:
        """Cutoff factors ``(th1, th2, th3, th4)`` stacked on the last axis."""
        _, ux, uxx, _ = self._padded_parts(u_hat)
        return self._cutoffs(u_hat, ux, uxx)

    def _cutoffs(self, u_hat, ux, uxx):
        g, m = self.grid, self.spec.m
        prod = ux * uxx
        args = (
            norm_sq_from_hat(u_hat, g, 4) / m,
            norm_sq_from_hat(u_hat, g, 1) / m,
            norm_sq_from_hat(u_hat, g, 3) / m,
            g.length / g.padded_n * np.sum(prod * prod, axis=-1) / m,
        )
        return np.stack([np.asarray(theta(np.maximum(a, 0.0))) for a in args], axis=-1)

    def split(self, u_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(symbol, nonlinear_hat)`` with ``drift_hat = symbol * u_hat + nonlinear_hat``.

        ``symbol`` is the shared 1-D array except for the Galerkin variant,
        whose cutoff factors make it path dependent.
        """
        v = self.spec.variant
        if v == "zero":
            return self.base_symbol, np.zeros_like(u_hat, dtype=complex)
        u, ux, uxx, uxxx = self._padded_parts(u_hat)
        if v != "galerkin_cutoff":
            nl = -from_padded(u * ux + u * uxxx + 3.0 * ux * uxx, self.grid)
            return self.base_symbol, nl
        th = self._cutoffs(u_hat, ux, uxx)
        t1, t2, t3, t4 = (th[..., i, None] for i in range(4))
        prod = t2 * u * ux + t3 * u * uxxx + 3.0 * t4 * ux * uxx
        nl = -from_padded(prod, self.grid) * self.mask
        sym = -(t3 * self.s3 + self.spec.epsilon * t1 * self.s4) * self.mask
        return sym, nl

    def drift_hat(self, u_hat: np.ndarray) -> np.ndarray:
        sym, nl = self.split(u_hat)
        return sym * u_hat + nl


def _as_hat(u: Field) -> np.ndarray:
    return to_hat(u.values)


def _apply(u: Field, spec: DriftSpec) -> Field:
    op = DriftOperator(u.grid, spec)
    return Field(u.grid, from_hat(op.drift_hat(_as_hat(u)), u.grid))


def drift_kdv2(u: Field) -> Field:
    """``-(u_3x + u u_x + u u_3x + 3 u_x u_2x)``."""
    return _apply(u, DriftSpec("kdv2", 0.0))


def drift_regularized(u: Field, epsilon: float) -> Field:
    """KdV2 drift minus ``epsilon * u_4x``; ``epsilon = 0`` reproduces :func:`drift_kdv2`."""
    if not epsilon >= 0:
        raise PreconditionError(f"epsilon must be nonnegative (got {epsilon})")
    if epsilon == 0:
        return drift_kdv2(u)
    return _apply(u, DriftSpec("regularized", float(epsilon)))


def is_band_limited(u: Field, m: int, tol: float = BAND_TOL) -> bool:
    hat = _as_hat(u)
    scale = max(float(np.max(np.abs(hat))), 1e-300)
    return bool(np.all(np.abs(hat[m + 1:]) <= tol * scale))


def drift_galerkin(u: Field, epsilon: float, m: int) -> Field:
    """Cutoff Galerkin drift; ``u`` must already lie in the range of ``P_m``."""
    if m > u.grid.n // 2:
        raise PreconditionError(f"Galerkin dimension m = {m} exceeds n/2 = {u.grid.n // 2}")
    if not is_band_limited(u, m):
        raise PreconditionError(f"field is not band-limited to |k| <= {m}; project it first")
    return _apply(u, DriftSpec("galerkin_cutoff", float(epsilon), int(m)))


def drift(u: Field, spec: DriftSpec) -> Field:
    if spec.variant == "galerkin_cutoff":
        return drift_galerkin(u, spec.epsilon, spec.m)
    return _apply(u, spec)


def project(u: Field, m: int) -> Field:
    """Orthogonal projection onto wavenumbers ``|k| <= m``."""
    if m > u.grid.n // 2 or m < 0:
        raise PreconditionError(f"projection dimension must satisfy 0 <= m <= n/2 (got {m})")
    if is_band_limited(u, m, ROUNDOFF_BAND_TOL):
        return u
    hat = _as_hat(u) * u.grid.mode_mask(m)
    return Field(u.grid, from_hat(hat, u.grid))

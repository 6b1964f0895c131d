"""Energy weight ``p`` with certified derivative bounds, and the Galerkin cutoff ``theta``.

A weight must satisfy, on the sampled region,

* ``p`` nondecreasing,
* ``p > delta0 > 0``,
* ``|p^(n)| < delta_n`` for ``n = 1, 2, 3``,
* ``(lambda - 2) * delta2 >= delta3``.

Bounds are measured on a refinement of the sampling grid and inflated by a
10 % safety factor.  A periodic ``offset + amplitude * sin`` profile is also
provided for identity checks; it is not monotone and is built through
:func:`periodic_weight` rather than :func:`make_weight`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from .errors import InvariantViolation, PreconditionError
from .field import Grid

SAFETY = 1.1
REFINE = 8
MAX_WEIGHT_ORDER = 4


def _atan(x, order, offset=2.0, scale=5.0):
    s = x / scale
    q = 1.0 + s * s
    if order == 0:
        return offset + np.arctan(s)
    if order == 1:
        return 1.0 / (scale * q)
    if order == 2:
        return -2.0 * s / (scale**2 * q**2)
    if order == 3:
        return (6.0 * s * s - 2.0) / (scale**3 * q**3)
    return 24.0 * s * (1.0 - s * s) / (scale**4 * q**4)


def _const(x, order, value=1.0):
    x = np.asarray(x, dtype=float)
    return np.full_like(x, value) if order == 0 else np.zeros_like(x)


def _periodic(x, order, offset=2.0, amplitude=1.0, period=1.0):
    kappa = 2.0 * np.pi / period
    base = offset if order == 0 else 0.0
    return base + amplitude * kappa**order * np.sin(kappa * x + 0.5 * np.pi * order)


_PROFILES = {
    "atan": (_atan, {"offset": 2.0, "scale": 5.0}),
    "const": (_const, {"value": 1.0}),
    "periodic": (_periodic, {"offset": 2.0, "amplitude": 1.0, "period": 1.0}),
}


def _infimum(profile: str, params: Mapping[str, float]) -> Optional[float]:
    """Closed-form infimum over the real line, where one is known."""
    if profile == "atan":
        return params["offset"] - 0.5 * np.pi
    if profile == "const":
        return params["value"]
    if profile == "periodic":
        return params["offset"] - abs(params["amplitude"])
    return None


@dataclass(frozen=True)
class WeightFunction:
    profile: str
    params: Dict[str, float]
    lambda_cap: float
    deltas: tuple = field(default=(0.0, 0.0, 0.0, 0.0))
    monotone: bool = True

    @property
    def delta0(self) -> float:
        return self.deltas[0]

    @property
    def delta1(self) -> float:
        return self.deltas[1]

    @property
    def delta2(self) -> float:
        return self.deltas[2]

    @property
    def delta3(self) -> float:
        return self.deltas[3]

    def __call__(self, x, order: int = 0) -> np.ndarray:
        if order not in range(MAX_WEIGHT_ORDER + 1):
            raise PreconditionError(f"weight derivative order must be 0..4 (got {order})")
        func, _ = _PROFILES[self.profile]
        return np.asarray(func(np.asarray(x, dtype=float), order, **self.params), dtype=float)

    def on_grid(self, grid: Grid, order: int = 0) -> np.ndarray:
        return self(grid.x, order)

    @property
    def sup(self) -> float:
        """Upper bound of ``p`` over the real line (used by trace estimates)."""
        if self.profile == "atan":
            return self.params["offset"] + 0.5 * np.pi
        if self.profile == "const":
            return self.params["value"]
        return self.params["offset"] + abs(self.params["amplitude"])

    def check(self, grid: Grid) -> Dict[str, bool]:
        """Grid-level truth of conditions (i)-(iv) for this weight."""
        x = grid.x
        p = self(x)
        out = {
            "increasing": bool(np.all(np.diff(p) >= 0.0)),
            "positive": bool(np.all(p > self.delta0) and self.delta0 > 0.0),
        }
        for n in (1, 2, 3):
            dn = np.abs(self(x, n))
            bound = self.deltas[n]
            out[f"bound_{n}"] = bool(np.all(dn < bound) if bound > 0 else np.all(dn == 0.0))
        out["lambda_condition"] = (self.lambda_cap - 2.0) * self.delta2 >= self.delta3
        return out


def _samples(grid: Optional[Grid], params: Mapping[str, float]) -> np.ndarray:
    if grid is not None:
        return np.linspace(grid.x[0], grid.x[-1], REFINE * (grid.n - 1) + 1)
    span = 100.0 * max(params.get("scale", 1.0), params.get("period", 1.0), 1.0)
    return np.linspace(-span, span, 40001)


def _certify(profile: str, params: Dict[str, float], grid: Optional[Grid]) -> tuple:
    func, _ = _PROFILES[profile]
    xs = _samples(grid, params)
    lo = float(np.min(func(xs, 0, **params)))
    inf = _infimum(profile, params)
    if inf is not None:
        lo = min(lo, inf)
    if lo <= 0.0:
        raise InvariantViolation(f"weight '{profile}' is not bounded below by a positive constant")
    bounds = [lo / SAFETY]
    for n in (1, 2, 3):
        bounds.append(SAFETY * float(np.max(np.abs(func(xs, n, **params)))))
    return tuple(bounds), xs


def make_weight(profile: str = "atan", params: Optional[Mapping[str, float]] = None,
                lambda_cap: float = 10.0, grid: Optional[Grid] = None) -> WeightFunction:
    """Build a monotone weight with certified bounds ``delta0..delta3``.

    Parameters
    ----------
    profile : {"atan", "const"}
        ``offset + arctan(x / scale)`` or a constant ``value``.
    params : mapping, optional
        Overrides for the profile defaults.
    lambda_cap : float
        Amplitude bound; must exceed 2.
    grid : Grid, optional
        Bounds are sampled on an 8x refinement of this grid; without one a
        wide default interval is used.
    """
    if profile not in ("atan", "const"):
        if profile in _PROFILES:
            raise InvariantViolation(
                f"profile '{profile}' is not monotone; use periodic_weight for identity checks")
        raise InvariantViolation(f"unknown weight profile '{profile}'")
    if not lambda_cap > 2.0:
        raise InvariantViolation(
            f"weight invariant violated: (lambda - 2) * delta2 >= delta3 needs lambda > 2 (got {lambda_cap})")
    full = dict(_PROFILES[profile][1])
    full.update({k: float(v) for k, v in (params or {}).items()})
    if profile == "atan" and full["scale"] <= 0:
        raise InvariantViolation("atan weight needs a positive scale")
    deltas, xs = _certify(profile, full, grid)
    p = _PROFILES[profile][0](xs, 0, **full)
    if np.any(np.diff(p) < 0.0):
        raise InvariantViolation(f"weight '{profile}' is not nondecreasing on the grid")
    if not (lambda_cap - 2.0) * deltas[2] >= deltas[3]:
        raise InvariantViolation(
            f"weight invariant violated: (lambda - 2) * delta2 = {(lambda_cap - 2.0) * deltas[2]:.3e}"
            f" < delta3 = {deltas[3]:.3e}")
    return WeightFunction(profile, full, float(lambda_cap), deltas, monotone=True)


def periodic_weight(length: float, offset: float = 2.0, amplitude: float = 1.0,
                    lambda_cap: float = 10.0) -> WeightFunction:
    """Smooth periodic weight for exact integration-by-parts checks (not monotone)."""
    if not offset > abs(amplitude):
        raise InvariantViolation("periodic weight must stay positive: offset > |amplitude|")
    params = {"offset": float(offset), "amplitude": float(amplitude), "period": float(length)}
    xs = np.linspace(-0.5 * length, 0.5 * length, 4097)
    deltas = [(offset - abs(amplitude)) / SAFETY]
    for n in (1, 2, 3):
        deltas.append(SAFETY * float(np.max(np.abs(_periodic(xs, n, **params)))))
    return WeightFunction("periodic", params, float(lambda_cap), tuple(deltas), monotone=False)


def weight_from_config(profile: str, param: float, lambda_cap: float, grid: Grid) -> WeightFunction:
    """Weight named by the config keys ``weight.profile`` / ``weight.param`` / ``lambda``."""
    if profile == "atan":
        return make_weight("atan", {"scale": param}, lambda_cap, grid)
    if profile == "const":
        return make_weight("const", {"value": param}, lambda_cap, grid)
    if profile == "periodic":
        return periodic_weight(grid.length, offset=2.0, amplitude=param, lambda_cap=lambda_cap)
    raise InvariantViolation(f"unknown weight profile '{profile}'")


# --------------------------------------------------------------------------
# cutoff
# --------------------------------------------------------------------------

def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """C-infinity step from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a = _psi(t)
    b = _psi(1.0 - t)
    return a / (a + b)


def theta(xi):
    """Cutoff: 1 on [0, 1], 0 on [2, inf), smooth and nonincreasing between."""
    arr = np.asarray(xi, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise PreconditionError("theta is defined for nonnegative arguments only")
    out = np.where(arr <= 1.0, 1.0, np.where(arr >= 2.0, 0.0, 1.0 - smoothstep(arr - 1.0)))
    return float(out) if out.ndim == 0 else out

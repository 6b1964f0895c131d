"""Grid functions on a uniform periodic box and their spectral calculus.

The box is ``[-L/2, L/2)`` with ``n`` equispaced nodes.  Spectral work uses the
real FFT layout (``n // 2 + 1`` coefficients).  Derivative symbols vanish at
the Nyquist wavenumber for every order, which keeps ``d1 o d1 == d2`` exact.

Most kernels here act on the trailing axis of plain arrays so the integrator
can push a whole batch of ensemble paths through one FFT call; the
:class:`Field` wrappers are the single-path public surface.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import BlowUpError, ConfigError, PreconditionError

logger = logging.getLogger(__name__)

CONTAMINATION_TOL = 1e-8
MAX_DERIVATIVE_ORDER = 4

SNAPSHOT_MAGIC = b"SKDV"
SNAPSHOT_VERSION = 1
_SNAPSHOT_HEADER = struct.Struct("<4sIQdd")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` nodes on a box of length ``length``."""

    n: int
    length: float

    def __post_init__(self):
        n = self.n
        if isinstance(n, bool) or int(n) != n:
            raise ConfigError(f"Grid invariant violated: n must be an integer (got {n!r})")
        n = int(n)
        if n < 8 or n & (n - 1):
            raise ConfigError(f"Grid invariant violated: n must be a power of two >= 8 (got {n})")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ConfigError(f"Grid invariant violated: length must be positive (got {self.length})")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def nk(self) -> int:
        """Number of real-FFT coefficients."""
        return self.n // 2 + 1

    @property
    def padded_n(self) -> int:
        """Size of the 3/2-padded grid used for dealiased products."""
        return 3 * self.n // 2

    @cached_property
    def x(self) -> np.ndarray:
        x = -0.5 * self.length + self.spacing * np.arange(self.n)
        x.setflags(write=False)
        return x

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers ``2 pi j / L`` for the rfft layout."""
        k = 2.0 * np.pi / self.length * np.arange(self.nk)
        k.setflags(write=False)
        return k

    @cached_property
    def parseval_weights(self) -> np.ndarray:
        """Weights turning ``sum w |c|^2`` into ``integral u^2`` for rfft coefficients."""
        w = np.full(self.nk, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        w *= self.length / self.n**2
        w.setflags(write=False)
        return w

    def symbol(self, order: int) -> np.ndarray:
        """Fourier multiplier ``(i k)^order`` with the Nyquist entry zeroed."""
        return _symbol(self, order)

    def mode_mask(self, m: int) -> np.ndarray:
        """Boolean mask of wavenumber indices ``|j| <= m``."""
        return np.arange(self.nk) <= m

    def interval_contains(self, a: float, b: float) -> bool:
        half = 0.5 * self.length
        return -half <= a < b <= half


def _symbol(grid: Grid, order: int) -> np.ndarray:
    cache = grid.__dict__.setdefault("_symbols", {})
    if order not in cache:
        s = (1j * grid.k) ** order
        if order > 0:
            s[-1] = 0.0
        s.setflags(write=False)
        cache[order] = s
    return cache[order]


# --------------------------------------------------------------------------
# array kernels (trailing axis = space)
# --------------------------------------------------------------------------

def to_hat(values: np.ndarray) -> np.ndarray:
    return np.fft.rfft(values, axis=-1)


def from_hat(hat: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.irfft(hat, grid.n, axis=-1)


def derivative_hat(hat: np.ndarray, grid: Grid, order: int) -> np.ndarray:
    return hat * grid.symbol(order)


def norm_sq_from_hat(hat: np.ndarray, grid: Grid, order: int = 0) -> np.ndarray:
    """``integral (d^order u)^2`` over the box, via Parseval."""
    mult = grid.k ** (2 * order) if order else 1.0
    if order:
        mult = mult.copy()
        mult[-1] = 0.0
    return np.sum(grid.parseval_weights * mult * np.abs(hat) ** 2, axis=-1)


def to_padded(hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Physical values on the 3/2-padded grid of a spectrally given field."""
    m = grid.padded_n
    padded = np.zeros(hat.shape[:-1] + (m // 2 + 1,), dtype=complex)
    padded[..., : grid.nk - 1] = hat[..., : grid.nk - 1]
    return np.fft.irfft(padded, m, axis=-1) * (m / grid.n)


def from_padded(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Truncate padded-grid physical values back to the base spectrum."""
    m = grid.padded_n
    full = np.fft.rfft(values, axis=-1)
    hat = np.zeros(values.shape[:-1] + (grid.nk,), dtype=complex)
    hat[..., : grid.nk - 1] = full[..., : grid.nk - 1] * (grid.n / m)
    return hat


def dealiased_product_hat(a_hat: np.ndarray, b_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectrum of ``a * b`` computed on the padded grid (2/3-rule dealiasing)."""
    return from_padded(to_padded(a_hat, grid) * to_padded(b_hat, grid), grid)


def check_finite(values: np.ndarray, what: str = "field") -> None:
    if not np.all(np.isfinite(values)):
        raise BlowUpError(f"blow-up detected: non-finite values in {what}")


# --------------------------------------------------------------------------
# single-path value types
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Field:
    """Real grid function.  Immutable: operations return new fields."""

    grid: Grid
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.grid.n,):
            raise PreconditionError(
                f"field has {v.shape} samples, grid expects ({self.grid.n},)")
        check_finite(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, np.broadcast_to(func(grid.x), (grid.n,)))

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.n))

    def spectrum(self) -> "Spectrum":
        return Spectrum(self.grid, to_hat(self.values))

    def _coerce(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise PreconditionError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._coerce(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Real-FFT coefficients of a field (Hermitian half-spectrum)."""

    grid: Grid
    coeffs: np.ndarray = dc_field(repr=False)

    def to_field(self) -> Field:
        return Field(self.grid, from_hat(self.coeffs, self.grid))

    def full(self) -> np.ndarray:
        """Full two-sided coefficient array in ``numpy.fft.fft`` order."""
        n = self.grid.n
        out = np.empty(n, dtype=complex)
        out[: self.grid.nk] = self.coeffs
        out[self.grid.nk:] = np.conj(self.coeffs[1: n - self.grid.nk + 1][::-1])
        return out


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def derivative(f: Field, order: int) -> Field:
    """Spectral derivative of order 1..4."""
    if order not in range(1, MAX_DERIVATIVE_ORDER + 1):
        raise PreconditionError(f"derivative order must be in 1..4 (got {order})")
    return Field(f.grid, from_hat(derivative_hat(to_hat(f.values), f.grid, order), f.grid))


def integrate(f: Field) -> float:
    """Periodic trapezoid rule, ``spacing * sum(values)``."""
    return float(f.grid.spacing * np.sum(f.values))


def window_quadrature(values: np.ndarray, grid: Grid,
                      window: Optional[Tuple[float, float]]) -> np.ndarray:
    """Integral over the box (periodic rule) or over ``[a, b]`` (trapezoid on the nodes inside)."""
    if window is None:
        return grid.spacing * np.sum(values, axis=-1)
    a, b = window
    if not grid.interval_contains(a, b):
        raise ConfigError(
            f"window [{a}, {b}] is not inside the domain [{-grid.length / 2}, {grid.length / 2})")
    idx = np.flatnonzero((grid.x >= a) & (grid.x <= b))
    if idx.size < 2:
        return np.zeros(values.shape[:-1])
    # uniform nodes: trapezoid = spacing * (sum - half the end values); a basic
    # slice keeps rows contiguous so the sum order does not depend on the batch
    sub = values[..., idx[0]: idx[-1] + 1]
    return grid.spacing * (np.sum(sub, axis=-1) - 0.5 * (sub[..., 0] + sub[..., -1]))


def sobolev_norm_sq(f: Field, s: int, window: Optional[Tuple[float, float]] = None) -> float:
    """``sum_{j<=s} integral (d^j f)^2``, derivatives taken globally then restricted."""
    if s not in (0, 1, 2):
        raise PreconditionError(f"Sobolev index must be 0, 1 or 2 (got {s})")
    if window is not None and not f.grid.interval_contains(*window):
        raise ConfigError(f"window {window} is not inside the domain")
    hat = to_hat(f.values)
    total = 0.0
    for j in range(s + 1):
        dj = f.values if j == 0 else from_hat(derivative_hat(hat, f.grid, j), f.grid)
        total += float(window_quadrature(dj * dj, f.grid, window))
    return total


def boundary_contamination(values: np.ndarray) -> np.ndarray:
    """Edge amplitude relative to the field maximum (0 for the zero field)."""
    edge = np.maximum(np.abs(values[..., 0]), np.abs(values[..., -1]))
    peak = np.max(np.abs(values), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(peak > 0, edge / np.where(peak > 0, peak, 1.0), 0.0)
    return ratio


def check_contamination(f: Field, tol: float = CONTAMINATION_TOL) -> float:
    """Return the contamination ratio, logging a warning above ``tol``."""
    ratio = float(boundary_contamination(f.values))
    if ratio > tol:
        logger.warning("domain contamination: edge/max amplitude ratio %.3e exceeds %.1e",
                       ratio, tol)
    return ratio


# --------------------------------------------------------------------------
# binary snapshots
# --------------------------------------------------------------------------

def encode_snapshot(f: Field, t: float) -> bytes:
    header = _SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, f.grid.n, f.grid.length, float(t))
    return header + np.asarray(f.values, dtype="<f8").tobytes()


def decode_snapshot(data: bytes) -> Tuple[Field, float]:
    if len(data) < _SNAPSHOT_HEADER.size:
        raise ConfigError("snapshot truncated: header incomplete")
    magic, version, n, length, t = _SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ConfigError(f"not a field snapshot (magic {magic!r})")
    if version != SNAPSHOT_VERSION:
        raise ConfigError(f"unsupported snapshot version {version}")
    body = data[_SNAPSHOT_HEADER.size:]
    if len(body) != 8 * n:
        raise ConfigError(f"snapshot body has {len(body)} bytes, expected {8 * n}")
    values = np.frombuffer(body, dtype="<f8").astype(float)
    return Field(Grid(n, length), values), t


def write_snapshot(path, f: Field, t: float) -> None:
    Path(path).write_bytes(encode_snapshot(f, t))


def read_snapshot(path) -> Tuple[Field, float]:
    return decode_snapshot(Path(path).read_bytes())

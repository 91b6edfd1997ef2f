"""Periodic uniform grids, scalar fields and the discrete calculus on them.

The computational domain is the torus [-L/2, L/2)^n sampled at N points per
axis. Quadrature is the plain lattice sum times dx^n. Derivatives are spectral
with the Nyquist wavenumber removed from first derivatives, and the Laplacian
is defined as divergence of the gradient so that the identity holds exactly.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

log = logging.getLogger(__name__)

MAX_POINTS = 2**31
MAGIC = b"KSF1"


def fft_workers() -> int:
    env = os.environ.get("KS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class GridSpec:
    n: int
    N: int
    L: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")
        if self.N < 8:
            raise ValueError(f"need at least 8 points per axis, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")
        if self.N**self.n > MAX_POINTS:
            raise ValueError(f"{self.N}^{self.n} points exceeds the 2^31 limit")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx**self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    def axis(self) -> np.ndarray:
        return -self.L / 2 + self.dx * np.arange(self.N)

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        x = self.axis()
        out = []
        for j in range(self.n):
            shp = [1] * self.n
            shp[j] = self.N
            out.append(x.reshape(shp))
        return out

    def radius_squared(self, center: Sequence[float] | None = None) -> np.ndarray:
        center = [0.0] * self.n if center is None else list(center)
        r2 = np.zeros(self.shape)
        for xj, cj in zip(self.coords(), center):
            r2 = r2 + (xj - cj) ** 2
        return r2


@lru_cache(maxsize=32)
def _wavenumbers(grid: GridSpec) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Derivative wavenumbers (Nyquist zeroed) on the rfft layout, and |k|^2."""
    N, dx, n = grid.N, grid.dx, grid.n
    full = 2 * np.pi * np.fft.fftfreq(N, dx)
    half = 2 * np.pi * np.fft.rfftfreq(N, dx)
    if N % 2 == 0:
        full[N // 2] = 0.0
        half[-1] = 0.0
    ks = []
    for j in range(n):
        kj = half if j == n - 1 else full
        shp = [1] * n
        shp[j] = kj.size
        ks.append(kj.reshape(shp))
    k2 = sum(k**2 for k in ks)
    return tuple(ks), k2


def wavenumbers(grid: GridSpec):
    return _wavenumbers(grid)


def rfft(values: np.ndarray) -> np.ndarray:
    return sfft.rfftn(values, workers=fft_workers())


def irfft(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    return sfft.irfftn(coeffs, s=grid.shape, workers=fft_workers())


class ScalarField:
    """A real field on a GridSpec. Values are stored read-only."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1 and grid.n > 1 and arr.size == grid.N**grid.n:
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise ValueError(f"values shape {arr.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains non-finite values")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    def _coerce(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._coerce(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __repr__(self):
        return f"ScalarField(grid={self.grid}, min={self.values.min():.4g}, max={self.values.max():.4g})"


def same_grid(*fields: ScalarField) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError(f"grid mismatch: {grid} vs {f.grid}")
    return grid


def lp_norm(field: ScalarField, p: float) -> float:
    """Lattice L^p norm (sum |v|^p dx^n)^{1/p}; p = inf gives max |v|."""
    if not p >= 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    a = np.abs(field.values)
    vmax = float(a.max())
    if p == math.inf:
        return vmax
    if vmax == 0.0:
        return 0.0
    # scale by the max so that large p cannot overflow
    s = float(np.sum((a / vmax) ** p)) * field.grid.cell_volume
    return vmax * s ** (1.0 / p)


def vector_lp_norm(components: Sequence[ScalarField], p: float) -> float:
    """L^p norm of the pointwise Euclidean length of a vector field."""
    grid = same_grid(*components)
    mag = np.sqrt(sum(c.values**2 for c in components))
    return lp_norm(ScalarField(grid, mag), p)


def mass(field: ScalarField) -> float:
    return float(np.sum(field.values)) * field.grid.cell_volume


def integrate(values: np.ndarray, grid: GridSpec) -> float:
    return float(np.sum(values)) * grid.cell_volume


def _fd_derivative(v: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (np.roll(v, -1, axis) - np.roll(v, 1, axis)) / (2 * dx)


def gradient(field: ScalarField, method: Literal["spectral", "fd"] = "spectral") -> list[ScalarField]:
    grid = field.grid
    if method == "fd":
        return [ScalarField(grid, _fd_derivative(field.values, j, grid.dx)) for j in range(grid.n)]
    ks, _ = wavenumbers(grid)
    fh = rfft(field.values)
    return [ScalarField(grid, irfft(1j * k * fh, grid)) for k in ks]


def divergence(components: Sequence[ScalarField], method: Literal["spectral", "fd"] = "spectral") -> ScalarField:
    grid = same_grid(*components)
    if len(components) != grid.n:
        raise ValueError(f"need {grid.n} components, got {len(components)}")
    if method == "fd":
        return ScalarField(grid, sum(_fd_derivative(c.values, j, grid.dx) for j, c in enumerate(components)))
    ks, _ = wavenumbers(grid)
    acc = sum(1j * k * rfft(c.values) for k, c in zip(ks, components))
    return ScalarField(grid, irfft(acc, grid))


def laplacian(field: ScalarField, method: Literal["spectral", "fd"] = "spectral") -> ScalarField:
    grid = field.grid
    if method == "fd":
        v = field.values
        out = sum(np.roll(v, -1, j) - 2 * v + np.roll(v, 1, j) for j in range(grid.n)) / grid.dx**2
        return ScalarField(grid, out)
    _, k2 = wavenumbers(grid)
    return ScalarField(grid, irfft(-k2 * rfft(field.values), grid))


def apply_multiplier(field: ScalarField, symbol: np.ndarray) -> ScalarField:
    """Apply a Fourier multiplier given on the rfft layout."""
    return ScalarField(field.grid, irfft(symbol * rfft(field.values), field.grid))


def solve_helmholtz(source: ScalarField) -> ScalarField:
    """Solve -Lap c + c = source spectrally."""
    _, k2 = wavenumbers(source.grid)
    return apply_multiplier(source, 1.0 / (1.0 + k2))


@dataclass(frozen=True)
class Mollifier:
    width: float
    kind: Literal["gaussian", "bump"] = "gaussian"

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"mollifier width must be positive, got {self.width}")
        if self.kind not in ("gaussian", "bump"):
            raise ValueError(f"unknown mollifier kind {self.kind!r}")

    @classmethod
    def default(cls, grid: GridSpec) -> "Mollifier":
        return cls(width=2 * grid.dx, kind="gaussian")


@lru_cache(maxsize=32)
def mollifier_taps(grid: GridSpec, mollifier: Mollifier) -> np.ndarray:
    """Odd-length 1D tap vector, periodised and normalised so that sum(taps) * dx = 1.

    The n-D kernel is the tensor product of these taps.
    """
    N, dx, L, w = grid.N, grid.dx, grid.L, mollifier.width
    half = (N - 1) // 2
    d = dx * np.arange(-half, half + 1)
    images = np.arange(-2, 3)[:, None] * L
    if mollifier.kind == "gaussian":
        taps = np.exp(-((d[None, :] + images) ** 2) / (2 * w**2)).sum(axis=0)
    else:
        z = np.abs(d[None, :] + images) / w
        with np.errstate(divide="ignore", over="ignore"):
            taps = np.where(z < 1, np.exp(-1.0 / np.maximum(1 - z**2, 1e-300)), 0.0).sum(axis=0)
        if taps.sum() == 0.0:
            taps[half] = 1.0
    # drop negligible tails
    keep = np.nonzero(taps > 1e-18 * taps.max())[0]
    h = max(half - keep[0], keep[-1] - half)
    taps = taps[half - h : half + h + 1]
    return taps / (taps.sum() * dx)


def mollifier_field(grid: GridSpec, mollifier: Mollifier) -> ScalarField:
    """The kernel itself as a field centred at the origin."""
    delta = np.zeros(grid.shape)
    delta[(grid.N // 2,) * grid.n] = 1.0 / grid.cell_volume
    return convolve(ScalarField(grid, delta), mollifier)


def convolve(field: ScalarField, mollifier: Mollifier) -> ScalarField:
    """Circular convolution with the tensor-product kernel, in real space.

    Real-space application keeps nonnegative inputs exactly nonnegative.
    """
    grid = field.grid
    taps = mollifier_taps(grid, mollifier) * grid.dx
    v = field.values
    for axis in range(grid.n):
        v = ndimage.correlate1d(v, taps, axis=axis, mode="wrap")
    return ScalarField(grid, v)


def edge_mass_fraction(field: ScalarField, band: float = 0.1) -> float:
    """Fraction of |mass| in cells within ``band * L`` of the box boundary."""
    grid = field.grid
    a = np.abs(field.values)
    total = a.sum()
    if total == 0:
        return 0.0
    edge = np.zeros(grid.shape, dtype=bool)
    for x in grid.coords():
        edge = edge | (np.abs(x) >= (0.5 - band) * grid.L)
    return float(a[edge].sum() / total)


def check_edge_mass(field: ScalarField, reference_mass: float | None = None, tol: float = 1e-6) -> bool:
    """Warn when the boundary band carries more than ``tol`` of the reference mass."""
    ref = reference_mass if reference_mass else float(np.abs(field.values).sum()) * field.grid.cell_volume
    if ref == 0:
        return True
    frac = edge_mass_fraction(field) * float(np.abs(field.values).sum()) * field.grid.cell_volume / ref
    if frac > tol:
        log.warning("edge-band mass fraction %.3e exceeds %.1e; torus proxy for R^n is suspect", frac, tol)
        return False
    return True


class FieldFormatError(ValueError):
    pass


def write_field(path, field: ScalarField) -> None:
    grid = field.grid
    header = MAGIC + struct.pack("<I", grid.n) + struct.pack(f"<{grid.n}I", *grid.shape) + struct.pack("<d", grid.L)
    data = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(header + data)


def read_field(path) -> ScalarField:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FieldFormatError(f"{path}: file too short for header")
    if raw[:4] != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (n,) = struct.unpack_from("<I", raw, 4)
    if not 1 <= n <= 8:
        raise FieldFormatError(f"{path}: bad dimension field n={n}")
    off = 8
    if len(raw) < off + 4 * n + 8:
        raise FieldFormatError(f"{path}: truncated header (axis sizes / L)")
    sizes = struct.unpack_from(f"<{n}I", raw, off)
    off += 4 * n
    if len(set(sizes)) != 1:
        raise FieldFormatError(f"{path}: bad axis sizes {sizes}; only equal N per axis is supported")
    (L,) = struct.unpack_from("<d", raw, off)
    off += 8
    if not (math.isfinite(L) and L > 0):
        raise FieldFormatError(f"{path}: bad box length L={L}")
    count = int(np.prod(sizes))
    if len(raw) - off != 8 * count:
        raise FieldFormatError(f"{path}: payload holds {(len(raw) - off) / 8:g} values, header says {count}")
    try:
        grid = GridSpec(n, sizes[0], L)
    except ValueError as exc:
        raise FieldFormatError(f"{path}: bad axis size N={sizes[0]}: {exc}") from None
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(grid.shape)
    return ScalarField(grid, values)

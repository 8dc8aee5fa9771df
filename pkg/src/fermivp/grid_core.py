"""Periodic grids, unitary FFTs, spectral derivatives and quadrature.

Position grids live on the torus ``[0, L)^d`` with ``n`` points per axis
(``n`` a power of two).  Phase grids pair a position grid with an
independent momentum axis ``[-P, P)`` sampled with ``m`` points.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a grid or run configuration violates a hard requirement."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on ``[0, L)^dim``."""

    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not _is_power_of_two(int(self.n)):
            raise ConfigurationError(f"points per axis must be a power of two, got {self.n}")
        if not self.L > 0:
            raise ConfigurationError(f"box length must be positive, got {self.L}")

    @property
    def spacing(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def center(self) -> float:
        return 0.5 * self.L

    @property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    @property
    def wavenumbers(self) -> np.ndarray:
        """Dual lattice along one axis in FFT order, spacing 2*pi/L."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    def wavevectors(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij")

    def k_squared(self) -> np.ndarray:
        return sum(k ** 2 for k in self.wavevectors())

    def min_image(self, dx):
        """Map displacements to the symmetric interval ``[-L/2, L/2)``."""
        return (np.asarray(dx) + 0.5 * self.L) % self.L - 0.5 * self.L

    def header(self) -> dict:
        return {"dim": self.dim, "n": self.n, "L": self.L}


@dataclass(frozen=True)
class PhaseGrid:
    """Position grid times a momentum axis ``p_j = -P + j * 2P/m``."""

    position: SpatialGrid
    P: float
    m: int

    def __post_init__(self):
        if not _is_power_of_two(int(self.m)):
            raise ConfigurationError(f"momentum count must be a power of two, got {self.m}")
        if not self.P > 0:
            raise ConfigurationError(f"momentum extent must be positive, got {self.P}")

    @property
    def dim(self) -> int:
        return self.position.dim

    @property
    def momentum_spacing(self) -> float:
        return 2 * self.P / self.m

    @property
    def momenta(self) -> np.ndarray:
        return -self.P + np.arange(self.m) * self.momentum_spacing

    @property
    def positions(self) -> np.ndarray:
        return self.position.axis

    @property
    def shape(self) -> tuple[int, ...]:
        return self.position.shape + (self.m,) * self.dim

    @property
    def cell_weight(self) -> float:
        return self.position.cell_volume * self.momentum_spacing ** self.dim

    @property
    def momentum_wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.m, d=self.momentum_spacing)

    def header(self) -> dict:
        return {"dim": self.dim, "n": self.position.n, "L": self.position.L,
                "m": self.m, "P": self.P}


def _axes(field: np.ndarray, dim: int) -> tuple[int, ...]:
    return tuple(range(field.ndim - dim, field.ndim))


def _check_shape(field: np.ndarray, dim: int):
    for s in field.shape[field.ndim - dim:]:
        if not _is_power_of_two(s):
            raise ConfigurationError(f"transform size {s} is not a power of two")


def fft_forward(field, dim: int | None = None) -> np.ndarray:
    """Unitary DFT over the trailing ``dim`` axes (all axes by default)."""
    field = np.asarray(field)
    dim = field.ndim if dim is None else dim
    _check_shape(field, dim)
    return np.fft.fftn(field, axes=_axes(field, dim), norm="ortho")


def fft_inverse(coeffs, dim: int | None = None) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    dim = coeffs.ndim if dim is None else dim
    _check_shape(coeffs, dim)
    return np.fft.ifftn(coeffs, axes=_axes(coeffs, dim), norm="ortho")


def spectral_gradient(field, grid: SpatialGrid) -> tuple[np.ndarray, ...]:
    """Gradient by multiplication with ``i k``; real input gives real output."""
    field = np.asarray(field)
    coeffs = fft_forward(field, grid.dim)
    out = []
    for k in grid.wavevectors():
        k = k.copy()
        if grid.n % 2 == 0:
            # drop the unpaired Nyquist mode so real fields stay real
            k[np.isclose(np.abs(k), np.pi / grid.spacing)] = 0.0
        g = fft_inverse(1j * k * coeffs, grid.dim)
        out.append(g.real if np.isrealobj(field) else g)
    return tuple(out)


def spectral_derivative_1d(values: np.ndarray, spacing: float, axis: int = -1) -> np.ndarray:
    """Spectral derivative of periodic samples along one axis."""
    n = values.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(n, d=spacing)
    k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    d = np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)
    return d.real if np.isrealobj(values) else d


def integrate(field, grid) -> complex | float:
    """Cell sum times cell volume (``SpatialGrid``) or cell weight (``PhaseGrid``)."""
    weight = grid.cell_weight if isinstance(grid, PhaseGrid) else grid.cell_volume
    return np.sum(field) * weight


def write_field(path, values: np.ndarray, header: dict) -> Path:
    """Write ``<path>.json`` plus ``<path>.bin``.

    The payload is row-major float64; complex arrays are stored as
    interleaved real/imaginary pairs.
    """
    path = Path(path)
    values = np.ascontiguousarray(values)
    meta = dict(header)
    meta["shape"] = list(values.shape)
    meta["complex"] = bool(np.iscomplexobj(values))
    if meta["complex"]:
        payload = np.ascontiguousarray(values.astype(np.complex128)).view(np.float64)
    else:
        payload = values.astype(np.float64)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload.tofile(path.with_suffix(".bin"))
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return path.with_suffix(".json")


def read_field(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.fromfile(path.with_suffix(".bin"), dtype=np.float64)
    shape = tuple(meta["shape"])
    expected = int(np.prod(shape)) * (2 if meta["complex"] else 1)
    if raw.size != expected:
        raise ValueError(f"{path}: payload has {raw.size} values, header implies {expected}")
    values = raw.view(np.complex128).reshape(shape) if meta["complex"] else raw.reshape(shape)
    return values, meta

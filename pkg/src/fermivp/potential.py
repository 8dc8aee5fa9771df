"""Gaussian-regularized Coulomb kernel on the periodic grid.

The kernel is stored through its Fourier multiplier

    V_hat(k) = C / |k|^2 * exp(-(|k| beta / 2)^2),   V_hat(0) = 0,

where ``C`` is the strength of the Poisson Green's function in the grid
dimension (``4 pi`` in 3D, ``2 pi`` in 2D, ``2`` in 1D).  With this
choice the 3D kernel tends to ``1/|x|`` as ``beta -> 0``.  The mollifier
is the unit-mass Gaussian ``(pi beta^2)^{-d/2} exp(-|x|^2/beta^2)``.

Real-space samples carry a constant shift so that their minimum is zero.
Forces and commutators are unaffected by the shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid_core import ConfigurationError, SpatialGrid

GREEN_STRENGTH = {"coulomb3d": 4 * np.pi, "green2d": 2 * np.pi, "green1d": 2.0}
MODE_DIM = {"coulomb3d": 3, "green2d": 2, "green1d": 1}

# Wigner constant of the simple cubic lattice: the periodic, background
# neutralized 1/r potential at the origin minus 1/r, in units of 1/L.
CUBIC_LATTICE_CONSTANT = -2.837297479480619


def regularization_width(N: int, epsilon: float) -> float:
    """Mollifier width ``N**(-epsilon)``."""
    if not 0 < epsilon < 1 / 24:
        raise ConfigurationError(f"epsilon must lie in (0, 1/24), got {epsilon}")
    return float(N) ** (-epsilon)


@dataclass(frozen=True)
class RegularizedKernel:
    grid: SpatialGrid
    beta: float
    mode: str
    multiplier: np.ndarray = field(repr=False)
    real_space: np.ndarray = field(repr=False)
    gauge_shift: float

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def strength(self) -> float:
        return GREEN_STRENGTH[self.mode]

    def gradient(self) -> tuple[np.ndarray, ...]:
        """Samples of the kernel gradient, one array per axis."""
        g = self.grid
        scale = g.size / g.L ** g.dim
        return tuple(np.fft.ifftn(1j * k * self.multiplier).real * scale
                     for k in _nyquist_free(g))

    def convolve(self, rho) -> np.ndarray:
        """``(V * rho)(x)`` without the gauge shift (mean-zero potential)."""
        return np.fft.ifftn(self.multiplier * np.fft.fftn(rho)).real

    def gradient_modes(self, tol: float = 1e-17):
        """Fourier coefficients of the 1D gradient that exceed ``tol`` relative.

        Returns ``(k, c)`` with ``dV/dx(x) = sum_j c_j exp(i k_j x)`` for
        any real ``x``.  Used to evaluate the force off the grid.
        """
        if self.dim != 1:
            raise ConfigurationError("off-grid gradient modes are implemented for d = 1")
        k = _nyquist_free(self.grid)[0]
        c = 1j * k * self.multiplier / self.grid.L
        keep = np.abs(c) > tol * max(np.abs(c).max(), 1e-300)
        return k[keep], c[keep]


def _nyquist_free(grid: SpatialGrid) -> tuple[np.ndarray, ...]:
    out = []
    for k in grid.wavevectors():
        k = k.copy()
        k[np.isclose(np.abs(k), np.pi / grid.spacing)] = 0.0
        out.append(k)
    return tuple(out)


def kernel_multiplier(grid: SpatialGrid, beta: float, mode: str) -> np.ndarray:
    k2 = grid.k_squared()
    with np.errstate(divide="ignore"):
        table = GREEN_STRENGTH[mode] / k2 * np.exp(-k2 * beta ** 2 / 4)
    table.flat[0] = 0.0
    return table


def build_kernel(beta: float, grid: SpatialGrid, mode: str | None = None,
                 *, allow_bare: bool = False) -> RegularizedKernel:
    """Build the regularized kernel of width ``beta`` on ``grid``.

    ``allow_bare=True`` admits ``beta = 0`` (the unmollified Green's
    function), which is what the kinetic limit equation uses.
    """
    if grid is None or grid.size == 0:
        raise ConfigurationError("kernel needs a non-empty grid")
    mode = mode or {1: "green1d", 2: "green2d", 3: "coulomb3d"}[grid.dim]
    if mode not in GREEN_STRENGTH:
        raise ConfigurationError(f"unknown kernel mode {mode!r}")
    if MODE_DIM[mode] != grid.dim:
        raise ConfigurationError(f"mode {mode} needs a {MODE_DIM[mode]}D grid")
    if beta < 0 or (beta == 0 and not allow_bare):
        raise ConfigurationError(f"beta must be positive, got {beta}")
    if 0 < beta < 2 * grid.spacing:
        raise ConfigurationError(
            f"beta={beta} is below the resolvable width 2*spacing={2 * grid.spacing}")
    table = kernel_multiplier(grid, beta, mode)
    samples = np.fft.ifftn(table).real * grid.size / grid.L ** grid.dim
    shift = -float(samples.min())
    table.setflags(write=False)
    samples = samples + shift
    samples.setflags(write=False)
    return RegularizedKernel(grid, float(beta), mode, table, samples, shift)


def grad_sup_norm(kernel: RegularizedKernel) -> float:
    """Maximum over the grid of ``|grad V|``."""
    grads = kernel.gradient()
    return float(np.sqrt(sum(g ** 2 for g in grads)).max())


def convolve_force(kernel: RegularizedKernel, rho) -> tuple[np.ndarray, ...]:
    """``(grad V) * rho`` by spectral convolution, one array per axis."""
    rho_hat = np.fft.fftn(np.asarray(rho, dtype=float))
    return tuple(np.fft.ifftn(1j * k * kernel.multiplier * rho_hat).real
                 for k in _nyquist_free(kernel.grid))


def origin_value(kernel: RegularizedKernel) -> float:
    """Kernel at ``x = 0`` in the mean-zero gauge (no positivity shift)."""
    return float(kernel.real_space.flat[0] - kernel.gauge_shift)


def free_space_origin_value(kernel: RegularizedKernel) -> float:
    """Origin value with the cubic-lattice image and background terms removed.

    For a Gaussian-smeared unit charge in a periodic cube with a
    neutralizing background, the mean-zero potential at the origin
    exceeds the isolated value by ``xi/L + pi beta^2 / L^3`` as long as
    ``beta`` is small against ``L``.
    """
    if kernel.mode != "coulomb3d":
        raise ConfigurationError("lattice correction is defined for the 3D kernel")
    L, b = kernel.grid.L, kernel.beta
    return origin_value(kernel) - CUBIC_LATTICE_CONSTANT / L - np.pi * b ** 2 / L ** 3

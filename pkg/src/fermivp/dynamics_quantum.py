"""Split-step propagators for few-body wavefunctions and Hartree-Fock densities.

Both use the Hamiltonian ``-hbar^2/2 sum Laplacian + (1/2N) sum_{i != j} V``,
with a half kinetic step, a potential step and another half kinetic step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .grid_core import ConfigurationError, SpatialGrid
from .potential import RegularizedKernel
from .quantum_state import (CapabilityError, FewBodyWavefunction, OneBodyDensity,
                            _apply_dft, kinetic_expectation)


class PropagationError(RuntimeError):
    pass


def pair_potential_matrix(kernel: RegularizedKernel) -> np.ndarray:
    """``V(x_u - x_w)`` for all pairs of grid points, shape (S, S)."""
    grid = kernel.grid
    idx = np.indices(grid.shape).reshape(grid.dim, -1)
    diff = (idx[:, :, None] - idx[:, None, :]) % grid.n
    return kernel.real_space[tuple(diff)]


# ---------------------------------------------------------------- few-body

def _few_body_kinetic_phase(grid: SpatialGrid, N: int, hbar: float, dt: float) -> np.ndarray:
    k2 = grid.wavenumbers ** 2
    total = sum(np.expand_dims(k2, tuple(a for a in range(N) if a != i)) for i in range(N))
    return np.exp(-0.5j * hbar * total * dt / 2)


def _few_body_potential(kernel: RegularizedKernel, N: int) -> np.ndarray:
    if kernel.dim != 1:
        raise CapabilityError("few-body propagation is implemented for d = 1")
    n = kernel.grid.n
    idx = np.arange(n)
    total = 0
    for i, j in combinations(range(N), 2):
        shape_i = [1] * N
        shape_j = [1] * N
        shape_i[i] = n
        shape_j[j] = n
        diff = (idx.reshape(shape_i) - idx.reshape(shape_j)) % n
        total = total + kernel.real_space[diff]
    return np.broadcast_to(total, (n,) * N) / N if N > 1 else np.zeros((n,))


def few_body_energy(wf: FewBodyWavefunction, kernel: RegularizedKernel | None, hbar: float) -> float:
    grid = wf.grid
    N = wf.particle_count
    vol = grid.cell_volume ** N
    coeffs = np.fft.fftn(wf.psi, norm="ortho")
    k2 = grid.wavenumbers ** 2
    kin = sum(np.expand_dims(k2, tuple(a for a in range(N) if a != i)) for i in range(N))
    energy = 0.5 * hbar ** 2 * np.sum(kin * np.abs(coeffs) ** 2) * vol
    if kernel is not None and N > 1:
        energy += np.sum(_few_body_potential(kernel, N) * np.abs(wf.psi) ** 2) * vol
    return float(energy)


def evolve_exact(wf: FewBodyWavefunction, kernel: RegularizedKernel | None, hbar: float,
                 dt: float, steps: int, snapshot_every: int | None = None):
    """Strang split-step evolution of an antisymmetric few-body state.

    Returns the final state, or the list of snapshots (initial state
    included) when ``snapshot_every`` is given.
    """
    N = wf.particle_count
    if N > 3:
        raise CapabilityError("exact propagation is limited to N <= 3")
    grid = wf.grid
    half_kin = _few_body_kinetic_phase(grid, N, hbar, dt)
    pot = _few_body_potential(kernel, N) if kernel is not None else np.zeros((grid.n,) * N)
    pot_phase = np.exp(-1j * dt / hbar * pot)
    norm0 = wf.norm()
    psi = wf.psi.astype(complex)
    snaps = [wf]
    for step in range(1, steps + 1):
        psi = np.fft.ifftn(half_kin * np.fft.fftn(psi))
        psi = pot_phase * psi
        psi = np.fft.ifftn(half_kin * np.fft.fftn(psi))
        if snapshot_every and step % snapshot_every == 0:
            snaps.append(FewBodyWavefunction(grid, psi.copy()))
    out = FewBodyWavefunction(grid, psi)
    drift = abs(out.norm() - norm0)
    if drift > 1e-6:
        raise PropagationError(f"norm drifted by {drift:.3e}")
    return snaps if snapshot_every else out


# ---------------------------------------------------------------- Hartree-Fock

def max_occupied_kinetic(gamma: OneBodyDensity, tol: float = 1e-10) -> float:
    """Largest ``(hbar k)^2/2`` over momentum modes with occupation above ``tol * N``."""
    a = _apply_dft(gamma.matrix, gamma.grid)
    occ = np.real(np.diag(_apply_dft(a.conj().T, gamma.grid)))
    k2 = gamma.grid.k_squared().reshape(-1)
    used = occ > tol * gamma.particle_count
    return float(0.5 * gamma.hbar ** 2 * k2[used].max()) if used.any() else 0.0


@dataclass(frozen=True)
class HFConfig:
    dt: float
    steps: int
    hbar: float
    N: int
    kernel: RegularizedKernel | None
    exchange: bool = True
    dt_bound: float = field(default=math.inf)

    @classmethod
    def build(cls, gamma: OneBodyDensity, kernel, dt: float, steps: int,
              exchange: bool | None = None) -> "HFConfig":
        """Validate ``dt`` against ``hbar / e_max`` for the occupied kinetic range."""
        e_max = max_occupied_kinetic(gamma)
        bound = gamma.hbar / e_max if e_max > 0 else math.inf
        if dt > bound:
            raise ConfigurationError(f"dt={dt} exceeds the phase-resolution bound {bound:.3e}")
        if exchange is None:
            exchange = gamma.particle_count <= 32
        return cls(dt, steps, gamma.hbar, gamma.particle_count, kernel, exchange, bound)


class HartreeFockPropagator:
    """Unitary split-step map for a one-body density matrix."""

    def __init__(self, grid: SpatialGrid, config: HFConfig):
        self.grid = grid
        self.config = config
        k2 = grid.k_squared().reshape(-1)
        self.half_kin = np.exp(-0.25j * config.hbar * k2 * config.dt)
        kernel = config.kernel
        self.pair = pair_potential_matrix(kernel) if kernel is not None else None

    def _kinetic(self, mat: np.ndarray) -> np.ndarray:
        a = _apply_dft(mat, self.grid) * self.half_kin[:, None]
        a = _inverse_rows(a, self.grid)
        b = _apply_dft(a.conj().T, self.grid) * self.half_kin[:, None]
        return _inverse_rows(b, self.grid).conj().T

    def mean_field(self, mat: np.ndarray) -> np.ndarray | tuple:
        """Mean-field Hamiltonian: a diagonal (Hartree) or a full matrix (with exchange)."""
        cfg = self.config
        grid = self.grid
        rho = np.real(np.diag(mat)).reshape(grid.shape) / grid.cell_volume / cfg.N
        kernel = cfg.kernel
        hartree = (kernel.convolve(rho) + kernel.gauge_shift * rho.sum() * grid.cell_volume)
        hartree = hartree.reshape(-1)
        if not cfg.exchange:
            return hartree
        h = -self.pair * mat / cfg.N
        h[np.diag_indices_from(h)] += hartree
        return 0.5 * (h + h.conj().T)

    def _potential_unitary(self, h, tau: float):
        if h.ndim == 1:
            return np.exp(-1j * tau / self.config.hbar * h)
        w, v = np.linalg.eigh(h)
        return (v * np.exp(-1j * tau / self.config.hbar * w)) @ v.conj().T

    @staticmethod
    def _conjugate(u, mat):
        if u.ndim == 1:
            return u[:, None] * mat * u.conj()[None, :]
        return u @ mat @ u.conj().T

    def step(self, mat: np.ndarray) -> np.ndarray:
        cfg = self.config
        mat = self._kinetic(mat)
        if cfg.kernel is not None:
            h = self.mean_field(mat)
            if h.ndim == 2:
                # midpoint predictor: re-evaluate the exchange after half the step
                mid = self._conjugate(self._potential_unitary(h, cfg.dt / 2), mat)
                h = self.mean_field(mid)
            mat = self._conjugate(self._potential_unitary(h, cfg.dt), mat)
        return self._kinetic(mat)


def _inverse_rows(a: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    cols = a.shape[1]
    b = np.fft.ifftn(a.reshape(grid.shape + (cols,)), axes=tuple(range(grid.dim)), norm="ortho")
    return b.reshape(grid.size, cols)


def evolve_hartree_fock(gamma: OneBodyDensity, config: HFConfig,
                        snapshot_every: int = 1) -> list[OneBodyDensity]:
    """Trajectory of the Hartree-Fock density, initial state first."""
    prop = HartreeFockPropagator(gamma.grid, config)
    mat = gamma.matrix.astype(complex)
    trace0 = gamma.trace()
    out = [gamma]
    for step in range(1, config.steps + 1):
        mat = prop.step(mat)
        if step % snapshot_every == 0 or step == config.steps:
            drift = abs(np.real(np.trace(mat)) - trace0)
            if drift > 1e-6:
                raise PropagationError(f"trace drifted by {drift:.3e} at step {step}")
            out.append(gamma.with_matrix(mat.copy()))
    return out


def interaction_energy(gamma: OneBodyDensity, kernel: RegularizedKernel) -> tuple[float, float]:
    """Direct and exchange parts of ``(1/2N) iint V [rho rho - |gamma|^2]``."""
    pair = pair_potential_matrix(kernel)
    G = gamma.matrix
    diag = np.real(np.diag(G))
    direct = float(diag @ pair @ diag) / (2 * gamma.particle_count)
    exchange = float(np.sum(pair * np.abs(G) ** 2)) / (2 * gamma.particle_count)
    return direct, exchange


def total_energy(gamma: OneBodyDensity, kernel: RegularizedKernel | None,
                 exchange: bool = True) -> float:
    """Energy conserved by the Hartree-Fock flow (``exchange=False``: Hartree flow)."""
    kin = kinetic_expectation(gamma)
    if kernel is None:
        return kin
    direct, exch = interaction_energy(gamma, kernel)
    return kin + direct - (exch if exchange else 0.0)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Trace norm of the Hermitian difference of two operator matrices."""
    d = a - b
    return float(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))).sum())

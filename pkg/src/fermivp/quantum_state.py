"""Reduced density matrices of fermionic states on a periodic grid.

Operators are stored as matrices in the orthonormal grid basis, so a
one-body density ``G`` relates to its integral kernel by
``G[u, w] = h^d * gamma(x_u; x_w)`` and ``trace(G) = N``.  Grid functions
``f`` become vectors ``sqrt(h^d) * f``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import NamedTuple

import numpy as np
from scipy.special import gamma as gamma_fn

from .grid_core import ConfigurationError, SpatialGrid


class StateValidationError(ValueError):
    pass


class CapabilityError(RuntimeError):
    pass


def _apply_dft(mat: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Unitary DFT acting on the row index of an operator matrix."""
    cols = mat.shape[1]
    a = mat.reshape(grid.shape + (cols,))
    a = np.fft.fftn(a, axes=tuple(range(grid.dim)), norm="ortho")
    return a.reshape(grid.size, cols)


def _permutation_sign(perm) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


@dataclass(frozen=True)
class SlaterState:
    grid: SpatialGrid
    orbitals: np.ndarray  # (k, *grid.shape), L2-normalized functions

    @property
    def particle_count(self) -> int:
        return self.orbitals.shape[0]

    def vectors(self) -> np.ndarray:
        """Orbitals as orthonormal columns in the grid basis, shape (S, k)."""
        k = self.orbitals.shape[0]
        return (self.orbitals.reshape(k, -1) * math.sqrt(self.grid.cell_volume)).T

    def overlap_error(self) -> float:
        v = self.vectors()
        return float(np.abs(v.conj().T @ v - np.eye(v.shape[1])).max())


@dataclass(frozen=True)
class OneBodyDensity:
    grid: SpatialGrid
    matrix: np.ndarray
    hbar: float
    particle_count: int

    @property
    def kernel(self) -> np.ndarray:
        """Integral kernel ``gamma(x; y)`` sampled on the grid."""
        return self.matrix / self.grid.cell_volume

    @property
    def density(self) -> np.ndarray:
        """Diagonal ``gamma(x; x)`` reshaped to the grid."""
        return np.real(np.diag(self.matrix)).reshape(self.grid.shape) / self.grid.cell_volume

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def hermiticity_error(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def occupations(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))

    def projector_error(self) -> float:
        return float(np.abs(self.matrix @ self.matrix - self.matrix).max())

    def validate(self, tol: float = 1e-8):
        if self.hermiticity_error() > 1e-10:
            raise StateValidationError("density matrix is not Hermitian")
        occ = self.occupations()
        if occ.min() < -tol or occ.max() > 1 + tol:
            raise StateValidationError(
                f"occupations outside [0, 1]: [{occ.min():.3e}, {occ.max():.3e}]")
        if abs(self.trace() - self.particle_count) > tol:
            raise StateValidationError(
                f"trace {self.trace()} differs from particle count {self.particle_count}")

    def with_matrix(self, matrix: np.ndarray) -> "OneBodyDensity":
        return OneBodyDensity(self.grid, matrix, self.hbar, self.particle_count)


def orthonormalize(grid: SpatialGrid, functions: np.ndarray) -> np.ndarray:
    """Symmetric (Loewdin) orthonormalization of grid functions."""
    k = functions.shape[0]
    v = functions.reshape(k, -1).T * math.sqrt(grid.cell_volume)
    s = v.conj().T @ v
    w, u = np.linalg.eigh(s)
    if w.min() < 1e-12 * w.max():
        raise StateValidationError("orbitals are linearly dependent")
    v = v @ (u @ np.diag(w ** -0.5) @ u.conj().T)
    return (v.T / math.sqrt(grid.cell_volume)).reshape(functions.shape)


def _mode_order(count: int) -> list[int]:
    out = [0]
    j = 1
    while len(out) < count:
        out.extend([j, -j])
        j += 1
    return out[:count]


def lowest_mode_orbitals(grid: SpatialGrid, count: int) -> np.ndarray:
    """Plane waves on the torus, lowest ``|k|`` first (1D ordering 0, 1, -1, 2, ...)."""
    if grid.dim != 1:
        raise CapabilityError("lowest-mode orbitals are built for d = 1")
    x = grid.axis
    return np.array([np.exp(2j * np.pi * j * x / grid.L) / math.sqrt(grid.L)
                     for j in _mode_order(count)])


def harmonic_orbitals(grid: SpatialGrid, count: int, hbar: float,
                      center: float | None = None, width: float = 1.0) -> np.ndarray:
    """Lowest ``count`` eigenfunctions of ``-hbar^2/2 d^2 + x^2/(2 width^4)``.

    The filled levels occupy the phase-space disc of radius
    ``sqrt(2 count hbar)`` (for ``width = 1``).
    """
    if grid.dim != 1:
        raise CapabilityError("harmonic orbitals are built for d = 1")
    center = grid.center if center is None else center
    s = width * math.sqrt(hbar)
    xi = grid.min_image(grid.axis - center) / s
    out = np.empty((count, grid.n))
    prev = np.zeros_like(xi)
    cur = np.pi ** -0.25 * np.exp(-xi ** 2 / 2)
    for j in range(count):
        out[j] = cur
        nxt = math.sqrt(2 / (j + 1)) * xi * cur - math.sqrt(j / (j + 1)) * prev
        prev, cur = cur, nxt
    return orthonormalize(grid, out / math.sqrt(s) + 0j)


def gaussian_orbitals(grid: SpatialGrid, count: int, hbar: float,
                      rng: np.random.Generator, spread: float = 1.0) -> np.ndarray:
    """Seeded Gaussian wave packets, orthonormalized."""
    if grid.dim != 1:
        raise CapabilityError("gaussian orbitals are built for d = 1")
    centers = grid.center + spread * rng.uniform(-1, 1, count)
    momenta = spread * rng.uniform(-1, 1, count)
    s = math.sqrt(hbar)
    funcs = []
    for q, p in zip(centers, momenta):
        d = grid.min_image(grid.axis - q)
        funcs.append(np.exp(-d ** 2 / (2 * s * s) + 1j * p * d / hbar))
    return orthonormalize(grid, np.array(funcs))


def slater_density(state: SlaterState, hbar: float, tol: float = 1e-10) -> OneBodyDensity:
    err = state.overlap_error()
    if err > tol:
        raise StateValidationError(f"orbitals are not orthonormal (error {err:.2e})")
    v = state.vectors()
    return OneBodyDensity(state.grid, v @ v.conj().T, float(hbar), state.particle_count)


# ---------------------------------------------------------------- two-body views

class TwoBodyView:
    """Two-body reduced density, normalized to ``N (N-1)``.

    Subclasses provide ``contract`` and ``pair_form``; ``matrix`` builds the
    full operator only for small grids.
    """

    grid: SpatialGrid
    particle_count: int

    def contract(self, weights) -> np.ndarray:
        """``C[u, w] = sum_z weights(z) G2[(u, z), (w, z)]``."""
        raise NotImplementedError

    def pair_form(self, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
        """``<g1 x g2, G2 g1 x g2>`` for columns of ``g1`` against columns of ``g2``."""
        raise NotImplementedError

    def matrix(self) -> np.ndarray:
        raise NotImplementedError

    def partial_trace(self) -> np.ndarray:
        return self.contract(np.ones(self.grid.size))

    def contract_band(self, weights: np.ndarray, half: int) -> np.ndarray:
        """Band entries ``C_k[u, u + d - half]`` of ``contract(weights[k])``.

        Returns shape (K, S, 2 half + 1), indices taken modulo S.
        """
        S = self.grid.size
        cols = _band_columns(S, half)
        rows = np.arange(S)[:, None]
        return np.array([self.contract(w)[rows, cols] for w in np.atleast_2d(weights)])


def _dense_guard(grid: SpatialGrid):
    if grid.size ** 4 > 2 ** 24:
        raise CapabilityError("dense two-body matrix too large for this grid")


def _band_columns(S: int, half: int) -> np.ndarray:
    return (np.arange(S)[:, None] + np.arange(-half, half + 1)[None, :]) % S


class QuasiFreeTwoBody(TwoBodyView):
    """Wick factorization ``G2 = G x G - exchange`` over a one-body density."""

    exchange_sign = True

    def __init__(self, gamma: OneBodyDensity):
        self.gamma = gamma
        self.grid = gamma.grid
        self.particle_count = gamma.particle_count

    def _low_rank(self, tol: float = 1e-10):
        G = self.gamma.matrix
        w, v = np.linalg.eigh(0.5 * (G + G.conj().T))
        keep = np.abs(w) > tol
        return v[:, keep], w[keep]

    def contract_band(self, weights, half):
        weights = np.atleast_2d(weights)
        G = self.gamma.matrix
        S = G.shape[0]
        cols = _band_columns(S, half)
        rows = np.arange(S)[:, None]
        band = G[rows, cols]
        direct = weights @ np.real(np.diag(G))
        out = direct[:, None, None] * band[None]
        if self.exchange_sign:
            v, lam = self._low_rank()
            vb = v[cols].conj()  # (S, 2 half + 1, r)
            for k, w in enumerate(weights):
                a = (v.conj().T * w[None, :]) @ v
                p = v @ (lam[:, None] * a * lam[None, :])
                out[k] -= np.einsum("ub,udb->ud", p, vb, optimize=True)
        return out

    def contract(self, weights):
        G = self.gamma.matrix
        w = np.asarray(weights).reshape(-1)
        direct = np.sum(w * np.diag(G))
        return G * direct - (G * w[None, :]) @ G

    def pair_form(self, g1, g2):
        G = self.gamma.matrix
        m1 = np.real(np.sum(g1.conj() * (G @ g1), axis=0))
        m2 = np.real(np.sum(g2.conj() * (G @ g2), axis=0))
        cross = g1.conj().T @ G @ g2
        return m1[:, None] * m2[None, :] - np.abs(cross) ** 2

    def matrix(self):
        _dense_guard(self.grid)
        G = self.gamma.matrix
        S = G.shape[0]
        direct = np.einsum("ac,bd->abcd", G, G)
        exch = np.einsum("ad,bc->abcd", G, G)
        return (direct - exch).reshape(S * S, S * S)


class ProductTwoBody(QuasiFreeTwoBody):
    """Direct product ``G x G`` with no exchange term."""

    exchange_sign = False

    def contract(self, weights):
        G = self.gamma.matrix
        w = np.asarray(weights).reshape(-1)
        return G * np.sum(w * np.diag(G))

    def pair_form(self, g1, g2):
        G = self.gamma.matrix
        m1 = np.real(np.sum(g1.conj() * (G @ g1), axis=0))
        m2 = np.real(np.sum(g2.conj() * (G @ g2), axis=0))
        return m1[:, None] * m2[None, :]

    def matrix(self):
        _dense_guard(self.grid)
        G = self.gamma.matrix
        S = G.shape[0]
        return np.einsum("ac,bd->abcd", G, G).reshape(S * S, S * S)


# ---------------------------------------------------------------- few-body states

@dataclass(frozen=True)
class FewBodyWavefunction:
    grid: SpatialGrid
    psi: np.ndarray  # shape (n,) * N, L2-normalized function values

    @property
    def particle_count(self) -> int:
        return self.psi.ndim

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.cell_volume ** self.psi.ndim))

    def antisymmetry_error(self) -> float:
        worst = 0.0
        for perm in permutations(range(self.psi.ndim)):
            diff = np.transpose(self.psi, perm) - _permutation_sign(perm) * self.psi
            worst = max(worst, float(np.abs(diff).max()))
        scale = float(np.abs(self.psi).max()) or 1.0
        return worst / scale

    def validate(self, tol: float = 1e-10):
        if abs(self.norm() - 1) > tol:
            raise StateValidationError(f"wavefunction norm {self.norm()} differs from 1")
        if self.antisymmetry_error() > tol:
            raise StateValidationError("wavefunction is not antisymmetric")

    def vector(self) -> np.ndarray:
        return self.psi * math.sqrt(self.grid.cell_volume) ** self.psi.ndim


def slater_wavefunction(state: SlaterState) -> FewBodyWavefunction:
    """Antisymmetrized product ``det[e_j(x_i)] / sqrt(N!)`` for N <= 3."""
    N = state.particle_count
    if state.grid.dim != 1:
        raise CapabilityError("few-body wavefunctions are built for d = 1")
    if N > 3:
        raise CapabilityError("few-body wavefunctions are limited to N <= 3")
    letters = "abc"[:N]
    psi = 0
    for perm in permutations(range(N)):
        ops = [state.orbitals[j] for j in perm]
        subscripts = ",".join(letters) + "->" + letters
        psi = psi + _permutation_sign(perm) * np.einsum(subscripts, *ops)
    return FewBodyWavefunction(state.grid, psi / math.sqrt(math.factorial(N)))


def one_body_from_wavefunction(wf: FewBodyWavefunction, hbar: float) -> OneBodyDensity:
    N = wf.particle_count
    S = wf.grid.size
    v = wf.vector().reshape(S, -1)
    return OneBodyDensity(wf.grid, N * v @ v.conj().T, float(hbar), N)


class DenseTwoBody(TwoBodyView):
    """Two-body density of an explicit few-body wavefunction."""

    def __init__(self, wf: FewBodyWavefunction):
        if wf.particle_count not in (2, 3):
            raise CapabilityError("dense two-body densities need N in {2, 3}")
        self.wf = wf
        self.grid = wf.grid
        self.particle_count = wf.particle_count
        S = wf.grid.size
        N = wf.particle_count
        # G2 = N(N-1) sum_r phi[:, :, r] phi[:, :, r]^*
        self.factor = wf.vector().reshape(S, S, -1) * math.sqrt(N * (N - 1))

    def contract(self, weights):
        w = np.asarray(weights).reshape(-1)
        phi = self.factor
        return np.einsum("uzr,z,wzr->uw", phi, w, phi.conj(), optimize=True)

    def pair_form(self, g1, g2):
        amp = np.einsum("ua,zb,uzr->abr", g1.conj(), g2.conj(), self.factor, optimize=True)
        return np.sum(np.abs(amp) ** 2, axis=-1)

    def matrix(self):
        _dense_guard(self.grid)
        S = self.grid.size
        phi = self.factor.reshape(S * S, -1)
        return phi @ phi.conj().T


def quasi_free_two_body(gamma: OneBodyDensity) -> QuasiFreeTwoBody:
    return QuasiFreeTwoBody(gamma)


def two_body_from_wavefunction(wf: FewBodyWavefunction) -> DenseTwoBody:
    wf.validate()
    return DenseTwoBody(wf)


# ---------------------------------------------------------------- expectations

def kinetic_expectation(gamma: OneBodyDensity) -> float:
    """``(hbar^2 / 2) tr(-Laplacian gamma)`` evaluated spectrally."""
    grid = gamma.grid
    a = _apply_dft(gamma.matrix, grid)
    b = _apply_dft(a.conj().T, grid)
    occupation = np.real(np.diag(b))  # diagonal of F G F^dagger
    return float(0.5 * gamma.hbar ** 2 * np.sum(grid.k_squared().reshape(-1) * occupation))


def ball_volume(dim: int, radius: float) -> float:
    return math.pi ** (dim / 2) / gamma_fn(dim / 2 + 1) * radius ** dim


class CutoffNumber(NamedTuple):
    value: float
    bound: float


def cutoff_number_expectation(gamma: OneBodyDensity, radius: float) -> CutoffNumber:
    """Localized number ``iint dq dx chi(|x-q| <= sqrt(hbar) R) gamma(x;x)``.

    The comparison bound is ``hbar^{-d/2} * |B_R|``, which the value meets
    with equality when ``hbar^d N = 1``.
    """
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    grid = gamma.grid
    r = math.sqrt(gamma.hbar) * radius
    dist2 = sum(grid.min_image(c) ** 2 for c in grid.coordinates())
    indicator = (dist2 <= r * r).astype(float)
    # translation invariance: the q-integral of the indicator is the same for every x
    ball = indicator.sum() * grid.cell_volume
    value = ball * float(np.sum(gamma.density) * grid.cell_volume)
    bound = gamma.hbar ** (-grid.dim / 2) * ball_volume(grid.dim, radius)
    return CutoffNumber(value, bound)

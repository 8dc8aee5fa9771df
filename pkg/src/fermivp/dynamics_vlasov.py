"""Vlasov-Poisson on a 1D periodic phase grid by spectral operator splitting.

Each step shifts ``m`` along ``q`` by ``p dt/2``, kicks it along ``p`` with
the self-consistent force, and shifts along ``q`` again.  All shifts are
Fourier phase multiplications, so the zero mode (the mass) never changes
and a step with ``-dt`` undoes a step with ``dt``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid_core import ConfigurationError, PhaseGrid
from .potential import RegularizedKernel, convolve_force
from .quantum_state import CapabilityError


class CFLError(RuntimeError):
    pass


@dataclass(frozen=True)
class VlasovState:
    m: np.ndarray  # shape (nq, mp)
    phase: PhaseGrid
    t: float = 0.0

    def mass(self) -> float:
        return float(np.sum(self.m) * self.phase.cell_weight)

    def density(self) -> np.ndarray:
        return np.sum(self.m, axis=1) * self.phase.momentum_spacing


def _wavenumbers(count: int, spacing: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(count, d=spacing)
    k[count // 2] = 0.0  # unpaired Nyquist mode is left in place
    return k


def _transport(m: np.ndarray, phase: PhaseGrid, tau: float) -> np.ndarray:
    k = _wavenumbers(phase.position.n, phase.position.spacing)
    shift = np.exp(-1j * np.outer(k, phase.momenta) * tau)
    return np.fft.ifft(shift * np.fft.fft(m, axis=0), axis=0).real


def _kick(m: np.ndarray, phase: PhaseGrid, force: np.ndarray, tau: float) -> np.ndarray:
    kappa = _wavenumbers(phase.m, phase.momentum_spacing)
    # m(q, p) <- m(q, p + grad U(q) tau)
    shift = np.exp(1j * np.outer(force, kappa) * tau)
    return np.fft.ifft(shift * np.fft.fft(m, axis=1), axis=1).real


def field_gradient(state: VlasovState, kernel: RegularizedKernel | None) -> np.ndarray:
    """``grad (V * rho)`` on the position axis, zero without a kernel."""
    if kernel is None:
        return np.zeros(state.phase.position.n)
    return convolve_force(kernel, state.density())[0]


def check_cfl(state: VlasovState, grad: np.ndarray, dt: float):
    ph = state.phase
    if abs(dt) * ph.P > ph.position.spacing * (1 + 1e-12):
        raise CFLError(f"dt*max|p| = {abs(dt) * ph.P:.3e} exceeds the position spacing "
                       f"{ph.position.spacing:.3e}")
    if abs(dt) * np.abs(grad).max() > ph.momentum_spacing * (1 + 1e-12):
        raise CFLError(f"dt*max|force| = {abs(dt) * np.abs(grad).max():.3e} exceeds the "
                       f"momentum spacing {ph.momentum_spacing:.3e}")


def vlasov_step(state: VlasovState, kernel: RegularizedKernel | None, dt: float) -> VlasovState:
    ph = state.phase
    if ph.dim != 1:
        raise CapabilityError("the kinetic solver is implemented for d = 1")
    if kernel is not None and kernel.grid != ph.position:
        raise ConfigurationError("kernel grid must match the phase-grid positions")
    check_cfl(state, field_gradient(state, kernel), dt)
    m = _transport(state.m, ph, dt / 2)
    mid = VlasovState(m, ph, state.t)
    grad = field_gradient(mid, kernel)
    check_cfl(mid, grad, dt)
    m = _kick(m, ph, grad, dt)
    m = _transport(m, ph, dt / 2)
    return VlasovState(m, ph, state.t + dt)


def evolve_vlasov(state: VlasovState, kernel, dt: float, steps: int,
                  snapshot_every: int | None = None):
    snaps = [state]
    for step in range(1, steps + 1):
        state = vlasov_step(state, kernel, dt)
        if snapshot_every and step % snapshot_every == 0:
            snaps.append(state)
    return snaps if snapshot_every else state


class Moments(NamedTuple):
    mass: float
    abs_position: float
    momentum_sq: float
    energy: float


def moments(state: VlasovState, kernel: RegularizedKernel | None = None) -> Moments:
    """Mass, ``iint |q - c| m``, ``iint p^2 m`` and the total energy.

    ``|q - c|`` is measured from the box center.  The energy is
    ``iint p^2/2 m + 1/2 int rho (V * rho)`` in the mean-zero gauge.
    """
    ph = state.phase
    w = ph.cell_weight
    q = np.abs(ph.positions - ph.position.center)
    p2 = ph.momenta ** 2
    mass = float(np.sum(state.m) * w)
    absq = float(np.sum(q[:, None] * state.m) * w)
    mom2 = float(np.sum(p2[None, :] * state.m) * w)
    energy = 0.5 * mom2
    if kernel is not None:
        rho = state.density()
        energy += 0.5 * float(np.sum(rho * kernel.convolve(rho)) * ph.position.spacing)
    return Moments(mass, absq, mom2, energy)


def disc_datum(phase: PhaseGrid, radius: float, height: float,
               center: float | None = None, subsamples: int = 8) -> np.ndarray:
    """Cell-averaged indicator of the disc ``(q - c)^2 + p^2 <= radius^2``."""
    c = phase.position.center if center is None else center
    hq, hp = phase.position.spacing, phase.momentum_spacing
    off = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    q = (phase.positions[:, None] + hq * off[None, :]).reshape(-1)
    p = (phase.momenta[:, None] + hp * off[None, :]).reshape(-1)
    inside = ((q[:, None] - c) ** 2 + p[None, :] ** 2 <= radius ** 2).astype(float)
    inside = inside.reshape(phase.position.n, subsamples, phase.m, subsamples)
    return height * inside.mean(axis=(1, 3))


def gaussian_datum(phase: PhaseGrid, q0: float, p0: float, sq: float, sp: float) -> np.ndarray:
    """Unit-mass Gaussian blob on the phase grid."""
    dq = phase.position.min_image(phase.positions - q0)
    g = np.exp(-dq[:, None] ** 2 / (2 * sq * sq) - (phase.momenta[None, :] - p0) ** 2 / (2 * sp * sp))
    return g / (np.sum(g) * phase.cell_weight)

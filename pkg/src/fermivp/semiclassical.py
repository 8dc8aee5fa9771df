"""Coherent states, Husimi and Wigner transforms.

A coherent state built from a real envelope ``f`` is

    f_{q,p}(y) = hbar^{-d/4} f((y - q)/sqrt(hbar)) exp(i p.y / hbar).

Phase-space functions are evaluated on a ``PhaseGrid`` whose position
axis is a strided subset of the state grid.  Each evaluation only touches
the window of grid points inside the envelope support around ``q``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .grid_core import ConfigurationError, PhaseGrid, SpatialGrid
from .quantum_state import (CapabilityError, OneBodyDensity, SlaterState,
                            TwoBodyView)


# ---------------------------------------------------------------- envelopes

@dataclass(frozen=True)
class Envelope:
    """Real radial profile with its first two derivatives (1D)."""

    name: str
    radius: float
    profile: Callable[[np.ndarray], np.ndarray]
    first: Callable[[np.ndarray], np.ndarray]
    second: Callable[[np.ndarray], np.ndarray]


def _bump_raw(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    xi = x[inside]
    out[inside] = np.exp(1 - 1 / (1 - xi * xi))
    return out


def _bump_norm(dim: int) -> float:
    if dim == 1:
        val = integrate.quad(lambda t: _bump_raw(np.array(t)) ** 2, -1, 1,
                             epsabs=0, epsrel=1e-13)[0]
    else:
        surface = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
        val = surface * integrate.quad(lambda r: _bump_raw(np.array(r)) ** 2 * r ** (dim - 1),
                                       0, 1, epsabs=0, epsrel=1e-13)[0]
    return 1 / math.sqrt(val)


def bump_envelope(dim: int = 1) -> Envelope:
    c = _bump_norm(dim)

    def f(x):
        return c * _bump_raw(x)

    def df(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = np.abs(x) < 1
        xi = x[inside]
        out[inside] = -2 * xi / (1 - xi * xi) ** 2
        return out * f(x)

    def d2f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = np.abs(x) < 1
        xi = x[inside]
        u = 1 - xi * xi
        out[inside] = 4 * xi * xi / u ** 4 - (2 + 6 * xi * xi) / u ** 3
        return out * f(x)

    return Envelope("bump", 1.0, f, df, d2f)


def gaussian_envelope(dim: int = 1) -> Envelope:
    """``pi^{-d/4} exp(-|x|^2/2)``: the frame for which Husimi = Wigner * Gaussian."""
    c = math.pi ** (-dim / 4)

    def f(x):
        x = np.asarray(x, dtype=float)
        return c * np.exp(-x * x / 2)

    return Envelope("gauss", 8.5, f, lambda x: -np.asarray(x) * f(x),
                    lambda x: (np.asarray(x) ** 2 - 1) * f(x))


ENVELOPES = {"bump": bump_envelope, "gauss": gaussian_envelope}


@dataclass(frozen=True)
class CoherentFrame:
    envelope: Envelope
    hbar: float
    dim: int = 1

    @classmethod
    def named(cls, name: str, hbar: float, dim: int = 1) -> "CoherentFrame":
        if name not in ENVELOPES:
            raise ConfigurationError(f"unknown envelope {name!r}")
        return cls(ENVELOPES[name](dim), float(hbar), dim)

    @property
    def support_radius(self) -> float:
        return self.envelope.radius * math.sqrt(self.hbar)


def envelope_norm(envelope: Envelope, dim: int = 1) -> float:
    if dim != 1:
        raise CapabilityError("norm check implemented for d = 1")
    r = envelope.radius
    return math.sqrt(integrate.quad(lambda t: float(envelope.profile(np.array(t)) ** 2),
                                    -r, r, epsabs=0, epsrel=1e-13, limit=200)[0])


def coherent_vector(frame: CoherentFrame, grid: SpatialGrid, q, p) -> np.ndarray:
    """Coherent state sampled on ``grid``, renormalized to unit discrete norm."""
    q = np.broadcast_to(np.asarray(q, dtype=float), (grid.dim,))
    p = np.broadcast_to(np.asarray(p, dtype=float), (grid.dim,))
    if frame.support_radius >= 0.5 * grid.L:
        warnings.warn("coherent-state support wraps around the periodic box", RuntimeWarning)
    coords = grid.coordinates()
    deltas = [grid.min_image(c - qi) for c, qi in zip(coords, q)]
    s = math.sqrt(frame.hbar)
    r = np.sqrt(sum(d * d for d in deltas))
    amp = frame.envelope.profile(r / s) * frame.hbar ** (-grid.dim / 4)
    phase = sum(pi * (qi + d) for pi, qi, d in zip(p, q, deltas)) / frame.hbar
    vec = amp * np.exp(1j * phase)
    norm = math.sqrt(np.sum(np.abs(vec) ** 2) * grid.cell_volume)
    return vec / norm


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class Window:
    """Grid offsets covering the envelope support, with sampled derivatives.

    ``value``, ``dq`` and ``dqq`` are the coherent state and its first two
    ``q``-derivatives at the window points, as vectors in the orthonormal
    grid basis (the plane-wave factor is applied separately).
    """

    offsets: np.ndarray
    delta: np.ndarray
    value: np.ndarray
    dq: np.ndarray
    dqq: np.ndarray


def frame_window(frame: CoherentFrame, grid: SpatialGrid) -> Window:
    if grid.dim != 1:
        raise CapabilityError("phase-space transforms are implemented for d = 1")
    h = grid.spacing
    s = math.sqrt(frame.hbar)
    half = int(math.ceil(frame.support_radius / h))
    if 2 * half + 1 > grid.n:
        half = (grid.n - 1) // 2
    offsets = np.arange(-half, half + 1)
    delta = offsets * h
    t = delta / s
    env = frame.envelope
    base = frame.hbar ** -0.25 * math.sqrt(h)
    value = base * env.profile(t)
    scale = 1 / np.linalg.norm(value)
    return Window(offsets, delta, scale * value,
                  -scale * base / s * env.first(t),
                  scale * base / frame.hbar * env.second(t))


def _phase_table(window: Window, momenta: np.ndarray, hbar: float) -> np.ndarray:
    return np.exp(1j * np.outer(window.delta, momenta) / hbar)


def _q_indices(phase: PhaseGrid, grid: SpatialGrid) -> np.ndarray:
    if phase.position.dim != 1 or grid.dim != 1:
        raise CapabilityError("phase-space transforms are implemented for d = 1")
    if not math.isclose(phase.position.L, grid.L) or grid.n % phase.position.n:
        raise ConfigurationError("phase-grid positions must be a strided subset of the state grid")
    stride = grid.n // phase.position.n
    return np.arange(phase.position.n) * stride


def window_blocks(matrix: np.ndarray, centers: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Blocks ``matrix[c + offsets][:, c + offsets]`` for every center, shape (nc, W, W)."""
    n = matrix.shape[0]
    idx = (centers[:, None] + offsets[None, :]) % n
    return matrix[idx[:, :, None], idx[:, None, :]]


def block_forms(blocks: np.ndarray, left: np.ndarray, right: np.ndarray,
                phases: np.ndarray) -> np.ndarray:
    """``sum_{j,l} conj(left_j E_jp) B[i,j,l] right_l E_lp`` for every block and momentum."""
    lhs = (left[:, None] * phases).conj()
    rhs = right[:, None] * phases
    return np.einsum("jp,ijl,lp->ip", lhs, blocks, rhs, optimize=True)


def matrix_forms(matrix: np.ndarray, centers: np.ndarray, window: Window,
                 left: np.ndarray, right: np.ndarray, momenta: np.ndarray,
                 hbar: float, chunk: int = 64) -> np.ndarray:
    """Windowed quadratic forms of ``matrix`` over a set of phase points."""
    phases = _phase_table(window, momenta, hbar)
    out = np.empty((centers.size, momenta.size), dtype=complex)
    for start in range(0, centers.size, chunk):
        sl = slice(start, start + chunk)
        blocks = window_blocks(matrix, centers[sl], window.offsets)
        out[sl] = block_forms(blocks, left, right, phases)
    return out


# ---------------------------------------------------------------- Husimi fields

@dataclass(frozen=True)
class HusimiField:
    values: np.ndarray
    phase: PhaseGrid
    order: int
    hbar: float
    particle_count: int

    def mass(self) -> float:
        w = self.phase.cell_weight ** self.order
        return float(np.sum(self.values) * w)

    def position_density(self) -> np.ndarray:
        """``int m dp`` for an order-1 field."""
        return np.sum(self.values, axis=1) * self.phase.momentum_spacing


def husimi_k1(gamma: OneBodyDensity, frame: CoherentFrame, phase: PhaseGrid) -> HusimiField:
    if not math.isclose(frame.hbar, gamma.hbar):
        raise ConfigurationError("frame and state use different hbar")
    centers = _q_indices(phase, gamma.grid)
    win = frame_window(frame, gamma.grid)
    vals = matrix_forms(gamma.matrix, centers, win, win.value, win.value,
                        phase.momenta, frame.hbar)
    return HusimiField(vals.real, phase, 1, frame.hbar, gamma.particle_count)


def husimi_orbital_sum(state: SlaterState, frame: CoherentFrame, phase: PhaseGrid) -> np.ndarray:
    """``sum_j |<f_{q,p}, e_j>|^2`` evaluated orbital by orbital."""
    grid = state.grid
    centers = _q_indices(phase, grid)
    win = frame_window(frame, grid)
    phases = _phase_table(win, phase.momenta, frame.hbar)
    vecs = state.vectors()
    idx = (centers[:, None] + win.offsets[None, :]) % grid.n
    out = np.zeros((centers.size, phase.m))
    for j in range(vecs.shape[1]):
        local = vecs[idx, j]  # (nq, W)
        amp = np.einsum("iw,w,wp->ip", local, win.value, phases.conj())
        out += np.abs(amp) ** 2
    return out


def coherent_matrix(frame: CoherentFrame, grid: SpatialGrid, phase: PhaseGrid) -> np.ndarray:
    """All coherent states of a phase grid as columns, shape (S, nq*m)."""
    centers = _q_indices(phase, grid)
    win = frame_window(frame, grid)
    phases = _phase_table(win, phase.momenta, frame.hbar)
    cols = np.zeros((grid.n, centers.size, phase.m), dtype=complex)
    for i, c in enumerate(centers):
        idx = (c + win.offsets) % grid.n
        cols[idx, i, :] = win.value[:, None] * phases
    return cols.reshape(grid.n, -1)


def husimi_k2(two_body: TwoBodyView, frame: CoherentFrame, phase: PhaseGrid,
              second: PhaseGrid | None = None) -> HusimiField:
    """Two-particle Husimi field ``m2[q1, p1, q2, p2]``.

    ``second`` optionally samples the second particle on a different grid
    (the first particle always uses ``phase``).
    """
    grid = two_body.grid
    second = phase if second is None else second
    g1 = coherent_matrix(frame, grid, phase)
    g2 = g1 if second is phase else coherent_matrix(frame, grid, second)
    vals = two_body.pair_form(g1, g2)
    shape = (phase.position.n, phase.m, second.position.n, second.m)
    return HusimiField(np.real(vals).reshape(shape), phase, 2, frame.hbar,
                       two_body.particle_count)


def husimi_marginal(m2: HusimiField, second: PhaseGrid | None = None) -> np.ndarray:
    """``(2 pi hbar)^{-d} iint dq2 dp2 m2``, which equals ``(N-1) m1``."""
    second = m2.phase if second is None else second
    return m2.values.sum(axis=(2, 3)) * second.cell_weight / (2 * math.pi * m2.hbar)


# ---------------------------------------------------------------- Wigner

@dataclass(frozen=True)
class WignerField:
    values: np.ndarray
    phase: PhaseGrid
    order: int
    hbar: float
    particle_count: int

    def mass(self) -> float:
        return float(np.sum(self.values) * self.phase.cell_weight)


def wigner_phase_grid(grid: SpatialGrid, hbar: float) -> PhaseGrid:
    """Momentum axis conjugate to the doubled relative coordinate."""
    return PhaseGrid(grid, P=math.pi * hbar * grid.n / (2 * grid.L), m=grid.n)


def wigner_k1(gamma: OneBodyDensity, hbar: float | None = None) -> WignerField:
    """``(1/N) int gamma(x + hbar y/2; x - hbar y/2) exp(-i p y) dy``.

    The relative coordinate is sampled at even grid separations, so the
    momentum axis is the one returned by ``wigner_phase_grid``.
    """
    grid = gamma.grid
    if grid.dim != 1:
        raise CapabilityError("Wigner transform implemented for d = 1")
    hbar = gamma.hbar if hbar is None else hbar
    n, h = grid.n, grid.spacing
    ker = gamma.kernel
    i = np.arange(n)[:, None]
    j = np.fft.fftfreq(n, 1 / n).astype(int)[None, :]  # 0..n/2-1, -n/2..-1
    corr = ker[(i + j) % n, (i - j) % n]  # corr[i, j] = gamma(x_i + j h; x_i - j h)
    # separations of L/2 or more would wrap onto the opposite side of the box
    corr[:, np.abs(j[0]) >= n // 4] = 0.0
    spectrum = np.fft.fftshift(np.fft.fft(corr, axis=1), axes=1)
    # p_l = pi hbar l / L and y_j = 2 j h / hbar, so exp(-i p_l y_j) = exp(-2 pi i l j / n)
    vals = spectrum * (2 * h / hbar) / gamma.particle_count
    phase = wigner_phase_grid(grid, hbar)
    # momenta run from -P upward; fftshift puts l = -n/2 first, matching the grid
    return WignerField(vals.real, phase, 1, hbar, gamma.particle_count)


def husimi_from_wigner(W: WignerField) -> HusimiField:
    """Gaussian smoothing ``(pi hbar)^{-d} exp(-(q^2 + p^2)/hbar)`` of a Wigner field.

    The prefactor ``hbar^d N`` converts the per-particle Wigner
    normalization back to the coherent-state normalization of ``husimi_k1``.
    """
    ph, hbar = W.phase, W.hbar
    if W.order != 1:
        raise CapabilityError("only order-1 Wigner fields are smoothed")
    nq, m = ph.position.n, ph.m
    dq = ph.position.spacing * np.fft.fftfreq(nq, 1 / nq)
    dp = ph.momentum_spacing * np.fft.fftfreq(m, 1 / m)
    gauss = np.exp(-(dq[:, None] ** 2 + dp[None, :] ** 2) / hbar) / (math.pi * hbar)
    conv = np.fft.ifft2(np.fft.fft2(W.values) * np.fft.fft2(gauss)).real * ph.cell_weight
    prefactor = hbar * W.particle_count
    return HusimiField(prefactor * conv, ph, 1, hbar, W.particle_count)


# ---------------------------------------------------------------- oscillation probe

@dataclass(frozen=True)
class OscillationReport:
    hbars: np.ndarray
    alpha: float
    values: np.ndarray  # |I| at |x| = hbar^alpha * (1, 2, 4)
    sup: np.ndarray  # sup of |I| over hbar^alpha <= |x| <= 4 hbar^alpha
    exponent: float  # fitted power of hbar in sup
    effective_order: float  # exponent / (1 - alpha)

    def target(self, s: int) -> float:
        return (1 - self.alpha) * s


def smooth_bump(p):
    return _bump_raw(p)


def step_function(p):
    return (np.abs(np.asarray(p, dtype=float)) <= 1).astype(float)


def fourier_integral(g: Callable, x: float, hbar: float, support: float = 1.0) -> complex:
    """``int exp(i p x / hbar) g(p) dp`` over ``[-support, support]``."""
    w = x / hbar
    if w == 0:
        return complex(integrate.quad(g, -support, support, epsabs=1e-15, limit=400)[0])
    re = integrate.quad(g, -support, support, weight="cos", wvar=w, limit=400)[0]
    im = integrate.quad(g, -support, support, weight="sin", wvar=w, limit=400)[0]
    return complex(re, im)


def oscillation_probe(g: Callable = smooth_bump, hbars=None, alpha: float = 0.5,
                      support: float = 1.0, samples: int = 48) -> OscillationReport:
    """Decay of the oscillatory integral outside the ``hbar^alpha`` ball."""
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    hbars = np.geomspace(0.01, 0.1, 6) if hbars is None else np.asarray(hbars, dtype=float)
    vals, sups = [], []
    for hb in hbars:
        r = hb ** alpha
        vals.append([abs(fourier_integral(g, c * r, hb, support)) for c in (1, 2, 4)])
        xs = np.linspace(r, 4 * r, samples)
        sups.append(max(abs(fourier_integral(g, x, hb, support)) for x in xs))
    sups = np.array(sups)
    slope = float(np.polyfit(np.log(hbars), np.log(sups), 1)[0])
    return OscillationReport(hbars, alpha, np.array(vals), sups, slope, slope / (1 - alpha))

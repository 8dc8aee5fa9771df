"""Remainder fields of the Husimi transport equation and their scaling.

The one-particle Husimi function ``m(q, p) = <g, G g>`` of a fermionic
state (``g`` the coherent vector at ``(q, p)``) obeys

    d_t m + p d_q m = c (grad V * rho)(q) d_p m + d_q Rt + d_p (R1 + R2)

with ``rho = int m dp`` and ``c = 1 / (N 2 pi hbar)``.  ``Rt`` collects the
kinetic remainder; ``R1`` compares the chord average of the force with
its value at the coherent-state center; ``R2`` measures the deviation of
the two-body density from the product of one-body densities.

Everything here is one-dimensional.  The interaction terms are assembled
from the Fourier modes ``grad V(x) = sum_k c_k exp(i k x)``: each mode
only needs the contraction of the two-body density against ``exp(-i k z)``,
and only its band within one window width of the diagonal.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics_quantum import HFConfig, evolve_hartree_fock
from .dynamics_vlasov import VlasovState, disc_datum, evolve_vlasov
from .grid_core import ConfigurationError, PhaseGrid, SpatialGrid, spectral_derivative_1d
from .potential import RegularizedKernel, build_kernel, regularization_width
from .quantum_state import (CapabilityError, OneBodyDensity, ProductTwoBody,
                            QuasiFreeTwoBody, SlaterState, TwoBodyView, harmonic_orbitals,
                            slater_density)
from .semiclassical import (CoherentFrame, Window, _phase_table, _q_indices, block_forms,
                            frame_window, husimi_k1, matrix_forms)


@dataclass(frozen=True)
class ResidualField:
    r_tilde: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    phase: PhaseGrid
    hbar: float
    N: int
    beta: float
    t: float = 0.0

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.r_tilde, self.r1, self.r2))


def chord_nodes(points: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (x + 1), 0.5 * w


def _check_inputs(gamma: OneBodyDensity, frame: CoherentFrame, phase: PhaseGrid):
    if gamma.grid.dim != 1:
        raise CapabilityError("residual fields are implemented for d = 1")
    if not math.isclose(frame.hbar, gamma.hbar):
        raise ConfigurationError("frame and state use different hbar")
    return _q_indices(phase, gamma.grid)


# ---------------------------------------------------------------- kinetic remainder

def residual_tilde(gamma: OneBodyDensity, frame: CoherentFrame, phase: PhaseGrid) -> np.ndarray:
    """``hbar Im <g, G d_q g>`` on the phase grid."""
    centers = _check_inputs(gamma, frame, phase)
    win = frame_window(frame, gamma.grid)
    forms = matrix_forms(gamma.matrix, centers, win, win.value, win.dq, phase.momenta, frame.hbar)
    return frame.hbar * forms.imag


# ---------------------------------------------------------------- interaction remainders

class _ModeAssembly:
    """Windowed blocks of the chord operator ``T_q`` and frozen operator ``C_q``.

    For a window center ``q`` and offsets ``j, l``:

        T_q[j, l] = sum_k c_k e^{ikq} S_k[j, l] M_k[q+j, q+l]
        C_q[j, l] = sum_k c_k F_k e^{ikq} M_k[q+j, q+l]

    where ``M_k`` contracts the two-body density against ``exp(-ikz)``,
    ``S_k`` is the chord average of ``exp(ik x)`` between the two window
    points and ``F_k`` the Fourier weight of the envelope density.
    """

    def __init__(self, two_body: TwoBodyView, kernel: RegularizedKernel, win: Window,
                 centers: np.ndarray, chord_points: int = 8, mode_tol: float = 1e-17):
        grid = two_body.grid
        if kernel.grid != grid:
            raise ConfigurationError("kernel grid must match the state grid")
        self.k, self.c = kernel.gradient_modes(mode_tol)
        x = grid.axis
        half = win.offsets[-1]
        self.half = half
        weights = np.exp(-1j * np.outer(self.k, x))
        band = two_body.contract_band(weights, 2 * half)  # (K, S, 4 half + 1)
        rows = (centers[:, None] + win.offsets[None, :]) % grid.n
        cols = win.offsets[None, :] - win.offsets[:, None] + 2 * half
        s, ws = chord_nodes(chord_points)
        d = win.delta
        env = np.abs(win.value) ** 2
        self.F = np.exp(1j * np.outer(self.k, d)) @ env
        qc = x[centers]
        W = d.size
        self.T = np.zeros((centers.size, W, W), dtype=complex)
        self.C = np.zeros_like(self.T)
        for i, k in enumerate(self.k):
            blocks = band[i][rows[:, :, None], cols[None, :, :]]
            shift = self.c[i] * np.exp(1j * k * qc)[:, None, None]
            chord = np.einsum("s,sj,sl->jl", ws, np.exp(1j * k * np.outer(s, d)),
                              np.exp(1j * k * np.outer(1 - s, d)))
            self.T += shift * chord[None] * blocks
            self.C += shift * self.F[i] * blocks
        gamma_diag = self._one_body_diag(two_body)
        rho_modes = weights @ gamma_diag
        self.k_rho = np.real(np.exp(1j * np.outer(qc, self.k)) @ (self.c * self.F * rho_modes))

    @staticmethod
    def _one_body_diag(two_body: TwoBodyView) -> np.ndarray:
        if isinstance(two_body, QuasiFreeTwoBody):
            return np.real(np.diag(two_body.gamma.matrix))
        N = two_body.particle_count
        return np.real(np.diag(two_body.partial_trace())) / (N - 1)


def _forms(blocks, win: Window, phases, left=None, right=None):
    left = win.value if left is None else left
    right = win.value if right is None else right
    return block_forms(blocks, left, right, phases)


def _p_derivative_forms(blocks, win: Window, phases, hbar: float):
    """``d_p <g, B g>`` for windowed blocks, from the plane-wave factor."""
    dv = win.delta * win.value
    return 1j / hbar * (_forms(blocks, win, phases, right=dv) - _forms(blocks, win, phases, left=dv))


def residual_fields(gamma: OneBodyDensity, frame: CoherentFrame, kernel: RegularizedKernel,
                    phase: PhaseGrid, two_body: TwoBodyView | None = None, t: float = 0.0,
                    chord_points: int = 8) -> ResidualField:
    """All three remainder fields; ``two_body`` defaults to the quasi-free closure."""
    centers = _check_inputs(gamma, frame, phase)
    two_body = QuasiFreeTwoBody(gamma) if two_body is None else two_body
    win = frame_window(frame, gamma.grid)
    N = gamma.particle_count
    asm = _ModeAssembly(two_body, kernel, win, centers, chord_points)
    phases = _phase_table(win, phase.momenta, frame.hbar)
    m = matrix_forms(gamma.matrix, centers, win, win.value, win.value,
                     phase.momenta, frame.hbar).real
    r1 = _forms(asm.T - asm.C, win, phases).real / N
    r2 = (_forms(asm.C, win, phases).real - asm.k_rho[:, None] * m) / N
    r_tilde = residual_tilde(gamma, frame, phase)
    return ResidualField(r_tilde, r1, r2, phase, frame.hbar, N, kernel.beta, t)


def residual_r1(two_body: TwoBodyView, gamma: OneBodyDensity, frame: CoherentFrame,
                kernel: RegularizedKernel, phase: PhaseGrid, chord_points: int = 8) -> np.ndarray:
    return residual_fields(gamma, frame, kernel, phase, two_body, chord_points=chord_points).r1


def residual_r2(two_body: TwoBodyView, gamma: OneBodyDensity, frame: CoherentFrame,
                kernel: RegularizedKernel, phase: PhaseGrid) -> np.ndarray:
    return residual_fields(gamma, frame, kernel, phase, two_body).r2


# ---------------------------------------------------------------- transport identity

@dataclass(frozen=True)
class IdentityReport:
    mismatch: float
    scale: float
    terms: dict = field(default_factory=dict)

    @property
    def relative(self) -> float:
        return self.mismatch / self.scale if self.scale > 0 else math.inf


def transport_identity_check(snapshots: Sequence[OneBodyDensity], times: Sequence[float],
                             frame: CoherentFrame, kernel: RegularizedKernel | None,
                             phase: PhaseGrid, chord_points: int = 8) -> IdentityReport:
    """Closure mismatch of the transport equation at the middle of three snapshots.

    The time derivative is a centered difference.  The density ``rho`` in
    the force term is the exact momentum integral of ``m``.
    """
    if len(snapshots) != 3 or len(times) != 3:
        raise ConfigurationError("need exactly three consecutive snapshots")
    tau = times[1] - times[0]
    if not math.isclose(times[2] - times[1], tau, rel_tol=1e-9, abs_tol=1e-14):
        raise ConfigurationError("snapshot spacing is not uniform")
    prev, mid, nxt = snapshots
    hbar = frame.hbar
    centers = _check_inputs(mid, frame, phase)
    win = frame_window(frame, mid.grid)
    phases = _phase_table(win, phase.momenta, hbar)
    p = phase.momenta[None, :]

    def forms(G, left, right):
        return matrix_forms(G, centers, win, left, right, phase.momenta, hbar)

    G = mid.matrix
    dt_m = (forms(nxt.matrix, win.value, win.value).real
            - forms(prev.matrix, win.value, win.value).real) / (2 * tau)
    dq_m = 2 * forms(G, win.value, win.dq).real
    dv = win.delta * win.value
    dp_m = np.real(1j / hbar * (forms(G, win.value, dv) - forms(G, dv, win.value)))
    dq_rt = hbar * forms(G, win.value, win.dqq).imag
    terms = {"time": dt_m, "transport": p * dq_m, "kinetic_remainder": dq_rt}
    if kernel is not None:
        N = mid.particle_count
        asm = _ModeAssembly(QuasiFreeTwoBody(mid), kernel, win, centers, chord_points)
        # exact p-marginal: int m dp = 2 pi hbar sum_j |a_j|^2 G[q+j, q+j] / h
        idx = (mid.grid.n + np.arange(mid.grid.n)[:, None] + win.offsets[None, :]) % mid.grid.n
        diag = np.real(np.diag(G))
        rho_full = 2 * math.pi * hbar * (diag[idx] @ np.abs(win.value) ** 2) / mid.grid.spacing
        force_full = np.fft.ifft(1j * _nyquist_free_k(mid.grid) * kernel.multiplier
                                 * np.fft.fft(rho_full)).real
        force = force_full[centers] / (N * 2 * math.pi * hbar)
        dp_r12 = (_p_derivative_forms(asm.T, win, phases, hbar).real
                  - asm.k_rho[:, None] * dp_m) / N
        terms["force"] = force[:, None] * dp_m
        terms["remainder_12"] = dp_r12
        delta = dt_m + p * dq_m - terms["force"] - dq_rt - dp_r12
    else:
        delta = dt_m + p * dq_m - dq_rt
    scale = max(float(np.abs(v).max()) for v in terms.values())
    return IdentityReport(float(np.abs(delta).max()), scale,
                          {k: float(np.abs(v).max()) for k, v in terms.items()})


def _nyquist_free_k(grid: SpatialGrid) -> np.ndarray:
    k = grid.wavenumbers.copy()
    k[grid.n // 2] = 0.0
    return k


# ---------------------------------------------------------------- pairings

@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - t^2))``, ``t = (x - center)/radius``."""

    __test__ = False  # not a pytest class

    center: float
    radius: float

    def _t(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.radius

    def value(self, x):
        t = self._t(x)
        out = np.zeros_like(t)
        inside = np.abs(t) < 1
        out[inside] = np.exp(1 - 1 / (1 - t[inside] ** 2))
        return out

    def derivative(self, x):
        t = self._t(x)
        out = np.zeros_like(t)
        inside = np.abs(t) < 1
        ti = t[inside]
        out[inside] = -2 * ti / (1 - ti ** 2) ** 2 * np.exp(1 - 1 / (1 - ti ** 2)) / self.radius
        return out


def _support_warning(phase: PhaseGrid, phi_q: TestFunction, phi_p: TestFunction):
    L = phase.position.L
    lo, hi = phase.positions[0], phase.positions[0] + L
    if phi_q.center - phi_q.radius < lo or phi_q.center + phi_q.radius > hi:
        warnings.warn("position test function touches the box boundary", RuntimeWarning)
    if abs(phi_p.center) + phi_p.radius > phase.P:
        warnings.warn("momentum test function touches the momentum cutoff", RuntimeWarning)


def pairing(values: np.ndarray, phase: PhaseGrid, phi_q: TestFunction, phi_p: TestFunction,
            slot: str) -> float:
    """``iint phi(q) phi(p) div F`` with the derivative moved onto the test function.

    The test function is differentiated spectrally from its samples, so the
    summation by parts is exact on the grid and constant fields pair to zero.
    """
    _support_warning(phase, phi_q, phi_p)
    q, p = phase.positions, phase.momenta
    if slot == "grad_q":
        dphi = spectral_derivative_1d(phi_q.value(q), phase.position.spacing)
        weight = np.outer(dphi, phi_p.value(p))
    elif slot == "grad_p":
        dphi = spectral_derivative_1d(phi_p.value(p), phase.momentum_spacing)
        weight = np.outer(phi_q.value(q), dphi)
    else:
        raise ConfigurationError(f"unknown slot {slot!r}")
    return float(-np.sum(weight * values) * phase.cell_weight)


def pairing_direct(values: np.ndarray, phase: PhaseGrid, phi_q: TestFunction,
                   phi_p: TestFunction, slot: str) -> float:
    """Same pairing with the field differentiated spectrally instead."""
    _support_warning(phase, phi_q, phi_p)
    if slot == "grad_q":
        div = spectral_derivative_1d(values, phase.position.spacing, axis=0)
    elif slot == "grad_p":
        div = spectral_derivative_1d(values, phase.momentum_spacing, axis=1)
    else:
        raise ConfigurationError(f"unknown slot {slot!r}")
    weight = np.outer(phi_q.value(phase.positions), phi_p.value(phase.momenta))
    return float(np.sum(weight * div.real) * phase.cell_weight)


# ---------------------------------------------------------------- scaling sweep

@dataclass(frozen=True)
class SweepConfig:
    N_list: tuple[int, ...] = (4, 8, 16)
    n: int = 256
    L: float = 8.0
    m: int = 128
    P: float = 6.0
    epsilon: float = 0.04
    t_final: float = 0.5
    dt: float = 0.005
    envelope: str = "bump"
    exchange: bool = True
    vlasov_beta: float = 0.0
    vlasov_dt: float = 0.005
    test_q: tuple[float, float] = (0.4, 2.5)  # offset from the box center, radius
    test_p: tuple[float, float] = (0.3, 2.5)

    def phase(self) -> PhaseGrid:
        return PhaseGrid(SpatialGrid(1, self.n, self.L), self.P, self.m)


@dataclass
class SweepRow:
    N: int
    hbar: float
    beta: float
    r_tilde: float = math.nan
    r1: float = math.nan
    r2: float = math.nan
    vlasov_distance: float = math.nan
    error: str = ""
    seconds: float = 0.0


CSV_COLUMNS = ("N", "hbar", "beta", "pairing_r_tilde", "pairing_r1", "pairing_r2",
               "vlasov_distance")


def _vlasov_reference(cfg: SweepConfig, phase: PhaseGrid) -> np.ndarray:
    datum = disc_datum(phase, math.sqrt(2.0), 1 / (2 * math.pi))
    kernel = build_kernel(cfg.vlasov_beta, phase.position, allow_bare=True)
    steps = int(round(cfg.t_final / cfg.vlasov_dt))
    return evolve_vlasov(VlasovState(datum, phase), kernel, cfg.vlasov_dt, steps).m


def sweep_row(cfg: SweepConfig, N: int, vlasov_m: np.ndarray | None = None) -> SweepRow:
    start = time.perf_counter()
    hbar = 1.0 / N
    beta = regularization_width(N, cfg.epsilon)
    row = SweepRow(N, hbar, beta)
    phase = cfg.phase()
    grid = phase.position
    kernel = build_kernel(beta, grid)
    gamma = slater_density(SlaterState(grid, harmonic_orbitals(grid, N, hbar)), hbar)
    steps = int(round(cfg.t_final / cfg.dt))
    hf = HFConfig.build(gamma, kernel, cfg.dt, steps, exchange=cfg.exchange)
    final = evolve_hartree_fock(gamma, hf, snapshot_every=steps)[-1]
    frame = CoherentFrame.named(cfg.envelope, hbar)
    fields = residual_fields(final, frame, kernel, phase, t=cfg.t_final)
    c = grid.center
    phi_q = TestFunction(c + cfg.test_q[0], cfg.test_q[1])
    phi_p = TestFunction(cfg.test_p[0], cfg.test_p[1])
    # remainders enter the normalized equation for m / (2 pi hbar N)
    norm = 1 / (2 * math.pi * hbar * N)
    row.r_tilde = abs(pairing(fields.r_tilde * norm, phase, phi_q, phi_p, "grad_q"))
    row.r1 = abs(pairing(fields.r1 * norm, phase, phi_q, phi_p, "grad_p"))
    row.r2 = abs(pairing(fields.r2 * norm, phase, phi_q, phi_p, "grad_p"))
    if vlasov_m is not None:
        husimi = husimi_k1(final, frame, phase).values
        weight = np.outer(phi_q.value(phase.positions), phi_p.value(phase.momenta))
        diff = husimi / (2 * math.pi) - vlasov_m
        row.vlasov_distance = abs(float(np.sum(weight * diff) * phase.cell_weight))
    row.seconds = time.perf_counter() - start
    return row


def scaling_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """One row per ``N``; a failing row records its error and the sweep moves on."""
    phase = cfg.phase()
    try:
        vlasov_m = _vlasov_reference(cfg, phase)
    except Exception as exc:  # noqa: BLE001 - reported per row
        vlasov_m = None
        warnings.warn(f"Vlasov reference failed: {exc}", RuntimeWarning)
    rows = []
    for N in cfg.N_list:
        try:
            rows.append(sweep_row(cfg, N, vlasov_m))
        except Exception as exc:  # noqa: BLE001
            hbar = 1.0 / N if N > 0 else math.nan
            beta = float(N) ** -cfg.epsilon if N > 0 else math.nan
            rows.append(SweepRow(N, hbar, beta, error=f"{type(exc).__name__}: {exc}"))
    return rows


def fitted_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def write_sweep_csv(rows: Sequence[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.N] + [f"{v:.17g}" for v in
                                (r.hbar, r.beta, r.r_tilde, r.r1, r.r2, r.vlasov_distance)])
    return path


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return [{k: (int(v) if k == "N" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def sweep_slopes(rows: Sequence[SweepRow]) -> dict:
    good = [r for r in rows if not r.error]
    hbars = [r.hbar for r in good]
    return {name: fitted_slope(hbars, [getattr(r, name) for r in good])
            for name in ("r_tilde", "r1", "r2", "vlasov_distance")}


def factorized(gamma: OneBodyDensity) -> ProductTwoBody:
    """The product ``G x G`` as a two-body input (no exchange)."""
    return ProductTwoBody(gamma)

import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erf

from fermivp.dynamics_quantum import HFConfig, evolve_hartree_fock
from fermivp.grid_core import ConfigurationError, PhaseGrid, SpatialGrid, spectral_derivative_1d
from fermivp.potential import build_kernel
from fermivp.quantum_state import (QuasiFreeTwoBody, SlaterState, gaussian_orbitals,
                                   harmonic_orbitals, slater_density, slater_wavefunction,
                                   two_body_from_wavefunction)
from fermivp.residuals import (CSV_COLUMNS, SweepConfig, SweepRow, TestFunction, chord_nodes,
                               factorized, fitted_slope, pairing, pairing_direct,
                               read_sweep_csv, residual_fields, residual_tilde, scaling_sweep,
                               transport_identity_check, write_sweep_csv)
from fermivp.semiclassical import CoherentFrame, coherent_vector

BETA = 0.9


def random_state(N, n=32, L=8.0, seed=1):
    grid = SpatialGrid(1, n, L)
    hbar = 1 / N
    orbitals = gaussian_orbitals(grid, N, hbar, np.random.default_rng(seed))
    return slater_density(SlaterState(grid, orbitals), hbar)


def periodic_gradient(x, L, beta, images=3):
    """Closed-form 1D kernel gradient with its periodic images."""
    x = (x + L / 2) % L - L / 2
    out = 2 * x / L - erf(x / beta)
    for j in range(1, images + 1):
        for y in (x - j * L, x + j * L):
            out += np.sign(y) - erf(y / beta)
    return out


def brute_force_remainders(gamma, frame, q, p, chord_points=8):
    """Nested quadrature of the chord and frozen-force terms at one phase point."""
    grid = gamma.grid
    N, L, h = gamma.particle_count, grid.L, grid.spacing
    x = grid.axis
    g = coherent_vector(frame, grid, q, p) * math.sqrt(h)
    d = grid.min_image(x - q)
    xu = q + d
    weight = np.abs(g) ** 2
    dV = lambda y: periodic_gradient(y, L, BETA)
    # force at the coherent-state center, averaged over the envelope density
    frozen = sum(weight[j] * dV(q - x + d[j]) for j in range(grid.n) if weight[j] > 0)
    two_body = QuasiFreeTwoBody(gamma)
    C = two_body.contract(frozen)
    s, ws = chord_nodes(chord_points)
    chord = np.zeros((grid.n, grid.n, grid.n))
    for sk, wk in zip(s, ws):
        chord += wk * dV(sk * xu[:, None, None] + (1 - sk) * xu[None, :, None] - x[None, None, :])
    T = np.zeros((grid.n, grid.n), complex)
    for z in range(grid.n):
        e = np.zeros(grid.n)
        e[z] = 1
        T += two_body.contract(e) * chord[:, :, z]
    m = np.real(g.conj() @ gamma.matrix @ g)
    r1 = np.real(g.conj() @ (T - C) @ g) / N
    r2 = (np.real(g.conj() @ C @ g) - frozen @ np.real(np.diag(gamma.matrix)) * m) / N
    return r1, r2


def test_interaction_remainders_match_nested_quadrature():
    gamma = random_state(3)
    grid = gamma.grid
    frame = CoherentFrame.named("bump", gamma.hbar)
    phase = PhaseGrid(grid, 4.0, 16)
    fields = residual_fields(gamma, frame, build_kernel(BETA, grid), phase)
    rng = np.random.default_rng(7)
    for _ in range(5):
        i, j = rng.integers(grid.n), rng.integers(phase.m)
        r1, r2 = brute_force_remainders(gamma, frame, phase.positions[i], phase.momenta[j])
        assert abs(fields.r1[i, j] - r1) <= 1e-8
        assert abs(fields.r2[i, j] - r2) <= 1e-8


def test_kinetic_remainder_matches_finite_difference_quadrature():
    gamma = random_state(3, n=64)
    grid = gamma.grid
    frame = CoherentFrame.named("bump", gamma.hbar)
    phase = PhaseGrid(grid, 4.0, 16)
    rt = residual_tilde(gamma, frame, phase)
    rng = np.random.default_rng(11)
    h, step = grid.spacing, 1e-5
    for _ in range(5):
        i, j = rng.integers(grid.n), rng.integers(phase.m)
        q, p = phase.positions[i], phase.momenta[j]
        g = coherent_vector(frame, grid, q, p) * math.sqrt(h)
        dg = (coherent_vector(frame, grid, q + step, p)
              - coherent_vector(frame, grid, q - step, p)) * math.sqrt(h) / (2 * step)
        oracle = gamma.hbar * np.imag(g.conj() @ gamma.matrix @ dg)
        assert abs(rt[i, j] - oracle) <= 1e-8


def test_kinetic_remainder_vanishes_at_zero_momentum_for_real_states():
    grid = SpatialGrid(1, 64, 8.0)
    gamma = slater_density(SlaterState(grid, harmonic_orbitals(grid, 3, 0.25)), 0.25)
    phase = PhaseGrid(grid, 4.0, 16)
    rt = residual_tilde(gamma, CoherentFrame.named("bump", 0.25), phase)
    zero = int(np.argmin(np.abs(phase.momenta)))
    assert phase.momenta[zero] == 0
    assert np.abs(rt[:, zero]).max() <= 1e-10


def test_flat_potential_gives_no_chord_remainder():
    gamma = random_state(3)
    kernel = build_kernel(BETA, gamma.grid)
    flat = dataclasses.replace(kernel, multiplier=np.zeros_like(kernel.multiplier))
    fields = residual_fields(gamma, CoherentFrame.named("bump", gamma.hbar), flat,
                             PhaseGrid(gamma.grid, 4.0, 16))
    assert np.all(fields.r1 == 0) and np.all(fields.r2 == 0)


def test_factorized_two_body_has_no_mean_field_remainder():
    gamma = random_state(3)
    fields = residual_fields(gamma, CoherentFrame.named("bump", gamma.hbar),
                             build_kernel(BETA, gamma.grid), PhaseGrid(gamma.grid, 4.0, 16),
                             factorized(gamma))
    assert np.abs(fields.r2).max() <= 1e-12


@pytest.mark.parametrize("N", [2, 3])
def test_quasi_free_closure_matches_dense_two_body(N):
    grid = SpatialGrid(1, 32, 8.0)
    hbar = 1 / N
    state = SlaterState(grid, gaussian_orbitals(grid, N, hbar, np.random.default_rng(N)))
    gamma = slater_density(state, hbar)
    frame = CoherentFrame.named("bump", hbar)
    kernel = build_kernel(BETA, grid)
    phase = PhaseGrid(grid, 4.0, 16)
    qf = residual_fields(gamma, frame, kernel, phase)
    dense = residual_fields(gamma, frame, kernel, phase,
                            two_body_from_wavefunction(slater_wavefunction(state)))
    assert np.abs(qf.r1 - dense.r1).max() <= 1e-6
    assert np.abs(qf.r2 - dense.r2).max() <= 1e-6


def test_chord_quadrature_is_converged():
    gamma = random_state(3)
    args = (gamma, CoherentFrame.named("bump", gamma.hbar), build_kernel(BETA, gamma.grid),
            PhaseGrid(gamma.grid, 4.0, 16))
    coarse = residual_fields(*args, chord_points=8).r1
    fine = residual_fields(*args, chord_points=16).r1
    assert np.abs(coarse - fine).max() <= 1e-8


def test_chord_nodes_integrate_polynomials_exactly():
    s, w = chord_nodes(4)
    for power in range(8):
        assert np.dot(w, s ** power) == pytest.approx(1 / (power + 1), rel=1e-13)


def test_free_transport_identity_closes_at_discretization_order():
    grid = SpatialGrid(1, 128, 8.0)
    hbar, dt = 0.25, 0.01
    gamma = slater_density(SlaterState(grid, harmonic_orbitals(grid, 3, hbar)), hbar)
    traj = evolve_hartree_fock(gamma, HFConfig.build(gamma, None, dt, 12))
    report = transport_identity_check(traj[-3:], [10 * dt, 11 * dt, 12 * dt],
                                      CoherentFrame.named("gauss", hbar), None,
                                      PhaseGrid(grid, 4.0, 32))
    assert report.relative <= 10 * max(dt ** 2, grid.spacing ** 2)
    assert "force" not in report.terms


def test_bump_frame_identity_floor_shrinks_under_grid_refinement():
    hbar, dt = 0.25, 0.005
    floors = []
    for n in (128, 256):
        grid = SpatialGrid(1, n, 8.0)
        gamma = slater_density(SlaterState(grid, harmonic_orbitals(grid, 3, hbar)), hbar)
        traj = evolve_hartree_fock(gamma, HFConfig.build(gamma, None, dt, 12))
        floors.append(transport_identity_check(
            traj[-3:], [10 * dt, 11 * dt, 12 * dt], CoherentFrame.named("bump", hbar), None,
            PhaseGrid(grid, 4.0, 32)).relative)
    # the envelope is resolved by few grid points, so the floor is set by the grid
    assert floors[1] < floors[0] / 10


def test_identity_check_needs_uniform_snapshots():
    gamma = random_state(2)
    frame = CoherentFrame.named("bump", gamma.hbar)
    phase = PhaseGrid(gamma.grid, 4.0, 16)
    with pytest.raises(ConfigurationError):
        transport_identity_check([gamma] * 3, [0.0, 0.1, 0.3], frame, None, phase)
    with pytest.raises(ConfigurationError):
        transport_identity_check([gamma] * 2, [0.0, 0.1], frame, None, phase)


@pytest.fixture(scope="module")
def phase():
    return PhaseGrid(SpatialGrid(1, 64, 8.0), 4.0, 64)


@pytest.fixture(scope="module")
def tests_fns():
    return TestFunction(4.2, 2.0), TestFunction(0.3, 2.0)


def smooth_field(phase, a, b):
    q, p = phase.positions[:, None], phase.momenta[None, :]
    return np.exp(-(q - 4 - a) ** 2 - 2 * (p - b) ** 2) * np.cos(q + b)


@pytest.mark.parametrize("slot", ["grad_q", "grad_p"])
def test_constant_field_pairs_to_zero(phase, tests_fns, slot):
    assert abs(pairing(np.full(phase.shape, 3.7), phase, *tests_fns, slot)) <= 1e-12


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-3, 3), st.sampled_from(["grad_q", "grad_p"]))
def test_pairing_is_linear(a, b, c, slot):
    phase = PhaseGrid(SpatialGrid(1, 64, 8.0), 4.0, 64)
    fns = TestFunction(4.2, 2.0), TestFunction(0.3, 2.0)
    f, g = smooth_field(phase, a, b), smooth_field(phase, b, a)
    lhs = pairing(f + c * g, phase, *fns, slot)
    rhs = pairing(f, phase, *fns, slot) + c * pairing(g, phase, *fns, slot)
    assert lhs == pytest.approx(rhs, abs=1e-12)


@pytest.mark.parametrize("slot", ["grad_q", "grad_p"])
def test_by_parts_pairing_matches_spectral_divergence(phase, tests_fns, slot):
    f = smooth_field(phase, 0.2, -0.1)
    assert pairing(f, phase, *tests_fns, slot) == pytest.approx(
        pairing_direct(f, phase, *tests_fns, slot), abs=1e-8)


def test_position_pairing_ignores_momentum_only_fields(phase, tests_fns):
    f = smooth_field(phase, 0.1, 0.2)
    shifted = f + np.exp(-phase.momenta ** 2)[None, :]
    assert pairing(shifted, phase, *tests_fns, "grad_q") == pytest.approx(
        pairing(f, phase, *tests_fns, "grad_q"), abs=1e-12)


def test_spectral_test_derivative_converges_to_analytic_one():
    phi = TestFunction(4.2, 2.0)
    errors = []
    for n in (128, 256, 512):
        grid = SpatialGrid(1, n, 8.0)
        numeric = spectral_derivative_1d(phi.value(grid.axis), grid.spacing)
        errors.append(np.abs(numeric - phi.derivative(grid.axis)).max())
    assert errors[0] > 10 * errors[1] > 100 * errors[2] and errors[2] <= 1e-6


def test_pairing_warns_when_test_function_leaves_the_grid(phase):
    with pytest.warns(RuntimeWarning):
        pairing(np.zeros(phase.shape), phase, TestFunction(4.0, 2.0), TestFunction(3.0, 2.0), "grad_p")
    with pytest.raises(ConfigurationError):
        pairing(np.zeros(phase.shape), phase, TestFunction(4.0, 2.0), TestFunction(0.0, 2.0), "div")


def test_sweep_csv_round_trip(tmp_path):
    rows = [SweepRow(4, 0.25, 0.946, 1 / 3, 2e-5, math.pi * 1e-7, 0.1),
            SweepRow(8, 0.125, 0.92, 0.02, 1e-5, 7e-8, 0.05)]
    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    back = read_sweep_csv(path)
    assert tuple(back[0]) == CSV_COLUMNS
    assert back[0]["pairing_r_tilde"] == 1 / 3
    assert back[1]["pairing_r2"] == 7e-8 and back[1]["N"] == 8


def test_fitted_slope_recovers_power_law():
    x = np.geomspace(0.01, 1, 5)
    assert fitted_slope(x, 3 * x ** 0.75) == pytest.approx(0.75)
    assert math.isnan(fitted_slope([1.0], [1.0]))


def test_failing_sweep_row_does_not_stop_the_sweep():
    cfg = SweepConfig(N_list=(2, 200, 4), n=64, m=32, t_final=0.02, dt=0.01, vlasov_dt=0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = scaling_sweep(cfg)
    assert [r.N for r in rows] == [2, 200, 4]
    assert rows[1].error and math.isnan(rows[1].r1)
    for r in (rows[0], rows[2]):
        assert not r.error
        assert all(math.isfinite(v) for v in (r.r_tilde, r.r1, r.r2, r.vlasov_distance))

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fermivp.dynamics_quantum import (HFConfig, evolve_exact, evolve_hartree_fock,
                                      few_body_energy, interaction_energy, total_energy,
                                      trace_distance)
from fermivp.grid_core import ConfigurationError, SpatialGrid
from fermivp.potential import build_kernel
from fermivp.quantum_state import (CapabilityError, FewBodyWavefunction, SlaterState,
                                   gaussian_orbitals, harmonic_orbitals, kinetic_expectation,
                                   one_body_from_wavefunction, slater_density,
                                   slater_wavefunction)

HBAR = 0.5


@pytest.fixture(scope="module")
def setup():
    grid = SpatialGrid(1, 32, 10.0)
    kernel = build_kernel(0.8, grid)
    state = SlaterState(grid, harmonic_orbitals(grid, 2, HBAR))
    return grid, kernel, state


def free_evolution(psi, grid, hbar, t):
    k2 = grid.wavenumbers ** 2
    total = sum(np.expand_dims(k2, tuple(a for a in range(psi.ndim) if a != i))
                for i in range(psi.ndim))
    return np.fft.ifftn(np.exp(-0.5j * hbar * total * t) * np.fft.fftn(psi))


def test_free_exact_evolution_is_diagonal_in_momentum(setup):
    grid, _, state = setup
    wf = slater_wavefunction(state)
    out = evolve_exact(wf, None, HBAR, 0.01, 50)
    assert np.abs(out.psi - free_evolution(wf.psi, grid, HBAR, 0.5)).max() <= 1e-12


def test_exact_evolution_keeps_norm_and_antisymmetry(setup):
    _, kernel, state = setup
    traj = evolve_exact(slater_wavefunction(state), kernel, HBAR, 0.01, 40, snapshot_every=1)
    assert max(abs(b.norm() - a.norm()) for a, b in zip(traj, traj[1:])) <= 1e-10
    assert traj[-1].antisymmetry_error() <= 1e-12


def test_exact_energy_is_conserved(setup):
    _, kernel, state = setup
    wf = slater_wavefunction(state)
    e0 = few_body_energy(wf, kernel, HBAR)
    e1 = few_body_energy(evolve_exact(wf, kernel, HBAR, 0.005, 100), kernel, HBAR)
    assert abs(e1 - e0) <= 1e-6 * abs(e0)


def test_exact_propagator_refuses_four_particles():
    grid = SpatialGrid(1, 4, 1.0)
    wf = FewBodyWavefunction(grid, np.zeros((4,) * 4, complex))
    with pytest.raises(CapabilityError):
        evolve_exact(wf, None, 1.0, 0.1, 1)


def test_single_particle_mean_field_vanishes(setup):
    grid, kernel, _ = setup
    state = SlaterState(grid, harmonic_orbitals(grid, 1, HBAR, center=4.0))
    gamma = slater_density(state, HBAR)
    hf = evolve_hartree_fock(gamma, HFConfig.build(gamma, kernel, 0.01, 30, exchange=True),
                             snapshot_every=30)[-1]
    exact = evolve_exact(slater_wavefunction(state), None, HBAR, 0.01, 30)
    ref = one_body_from_wavefunction(exact, HBAR)
    assert np.abs(hf.matrix - ref.matrix).max() <= 1e-8


@given(st.integers(1, 4), st.integers(0, 10 ** 6), st.booleans())
def test_hartree_fock_preserves_trace_and_spectrum(count, seed, exchange):
    grid = SpatialGrid(1, 32, 8.0)
    kernel = build_kernel(0.8, grid)
    orbitals = gaussian_orbitals(grid, count, HBAR, np.random.default_rng(seed))
    gamma = slater_density(SlaterState(grid, orbitals), HBAR)
    traj = evolve_hartree_fock(gamma, HFConfig.build(gamma, kernel, 0.005, 10, exchange=exchange))
    assert max(abs(b.trace() - a.trace()) for a, b in zip(traj, traj[1:])) <= 1e-8
    assert np.abs(traj[-1].occupations() - gamma.occupations()).max() <= 1e-8


@pytest.mark.parametrize("exchange", [True, False])
def test_hartree_fock_energy_is_conserved(setup, exchange):
    _, kernel, state = setup
    gamma = slater_density(state, HBAR)
    traj = evolve_hartree_fock(gamma, HFConfig.build(gamma, kernel, 0.0025, 100, exchange=exchange),
                               snapshot_every=100)
    e0 = total_energy(gamma, kernel, exchange=exchange)
    assert abs(total_energy(traj[-1], kernel, exchange=exchange) - e0) <= 1e-6 * abs(e0)


def test_energy_without_interaction_is_kinetic(setup):
    _, _, state = setup
    gamma = slater_density(state, HBAR)
    assert total_energy(gamma, None) == kinetic_expectation(gamma)


def test_direct_term_dominates_for_slater_projectors(setup):
    _, kernel, state = setup
    gamma = slater_density(state, HBAR)
    direct, exchange = interaction_energy(gamma, kernel)
    assert direct >= 0 and direct - exchange >= -1e-10
    assert kinetic_expectation(gamma) <= total_energy(gamma, kernel)


def test_exact_energy_matches_quasi_free_energy_for_slater_state(setup):
    _, kernel, state = setup
    wf = slater_wavefunction(state)
    gamma = slater_density(state, HBAR)
    assert few_body_energy(wf, kernel, HBAR) == pytest.approx(total_energy(gamma, kernel), rel=1e-10)


def test_time_step_above_phase_bound_rejected(setup):
    _, kernel, state = setup
    gamma = slater_density(state, HBAR)
    bound = HFConfig.build(gamma, kernel, 1e-3, 1).dt_bound
    assert math.isfinite(bound)
    with pytest.raises(ConfigurationError):
        HFConfig.build(gamma, kernel, 1.01 * bound, 1)


def test_trace_distance_of_orthogonal_pure_states_is_two():
    a = np.diag([1.0, 0.0, 0.0])
    b = np.diag([0.0, 1.0, 0.0])
    assert trace_distance(a, b) == pytest.approx(2.0)
    assert trace_distance(a, a) == 0.0

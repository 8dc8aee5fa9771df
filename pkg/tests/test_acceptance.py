"""Acceptance criteria 1-9; each test prints one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from fermivp.dynamics_quantum import (HFConfig, evolve_exact, evolve_hartree_fock,
                                      few_body_energy, total_energy, trace_distance)
from fermivp.dynamics_vlasov import VlasovState, evolve_vlasov, gaussian_datum, moments, vlasov_step
from fermivp.grid_core import PhaseGrid, SpatialGrid
from fermivp.potential import build_kernel, free_space_origin_value, grad_sup_norm
from fermivp.quantum_state import (SlaterState, harmonic_orbitals, one_body_from_wavefunction,
                                   quasi_free_two_body, slater_density, slater_wavefunction,
                                   two_body_from_wavefunction)
from fermivp.residuals import (SweepConfig, factorized, residual_fields, scaling_sweep,
                               sweep_slopes, transport_identity_check)
from fermivp.semiclassical import (CoherentFrame, husimi_from_wigner, husimi_k1, husimi_k2,
                                   husimi_marginal, oscillation_probe, smooth_bump, wigner_k1)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, seconds):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}")
    return emit


def _slater(N, n, L, hbar):
    grid = SpatialGrid(1, n, L)
    return slater_density(SlaterState(grid, harmonic_orbitals(grid, N, hbar)), hbar)


def test_criterion_1_husimi_properties(report):
    start = time.perf_counter()
    worst = {"bound": 0.0, "mass": 0.0, "swap": 0.0, "marginal": 0.0}
    for N in (4, 8, 16):
        hbar = 1 / N
        gamma = _slater(N, 256, 8.0, hbar)
        frame = CoherentFrame.named("bump", hbar)
        m1 = husimi_k1(gamma, frame, PhaseGrid(gamma.grid, 6.0, 128))
        worst["bound"] = max(worst["bound"], m1.values.max() - 1, -m1.values.min())
        target = 2 * math.pi * hbar * N
        worst["mass"] = max(worst["mass"], abs(m1.mass() - target) / target)
        coarse = PhaseGrid(SpatialGrid(1, 64, 8.0), 6.0, 64)
        m2 = husimi_k2(quasi_free_two_body(gamma), frame, coarse)
        worst["swap"] = max(worst["swap"], np.abs(m2.values - m2.values.transpose(2, 3, 0, 1)).max())
        expected = (N - 1) * husimi_k1(gamma, frame, coarse).values
        marg = husimi_marginal(m2)
        worst["marginal"] = max(worst["marginal"], np.abs(marg - expected).max() / np.abs(expected).max())
    seconds = time.perf_counter() - start
    ok = (worst["bound"] <= 1e-8 and worst["mass"] <= 5e-3 and worst["swap"] <= 1e-8
          and worst["marginal"] <= 1e-2 and seconds < 60)
    report(1, ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items()), seconds)
    assert ok


def test_criterion_2_husimi_is_smoothed_wigner(report):
    start = time.perf_counter()
    gauss_err, bump_dev = 0.0, math.inf
    for N in (1, 2, 3, 4):
        gamma = _slater(N, 64, 10.0, 0.5)
        W = wigner_k1(gamma)
        smoothed = husimi_from_wigner(W).values
        direct = husimi_k1(gamma, CoherentFrame.named("gauss", 0.5), W.phase).values
        bump = husimi_k1(gamma, CoherentFrame.named("bump", 0.5), W.phase).values
        gauss_err = max(gauss_err, np.abs(direct - smoothed).max())
        bump_dev = min(bump_dev, np.abs(bump - smoothed).max())
    seconds = time.perf_counter() - start
    ok = gauss_err <= 1e-6 and bump_dev > 1e-3 and seconds < 30
    report(2, ok, f"gauss max error={gauss_err:.2e} bump min deviation={bump_dev:.2e}", seconds)
    assert ok


def test_criterion_3_kernel_scaling(report):
    start = time.perf_counter()
    grid = SpatialGrid(3, 128, 1.0)
    betas = np.geomspace(3 * grid.spacing, 30 * grid.spacing, 4)
    norms = [grad_sup_norm(build_kernel(b, grid)) for b in betas]
    slope = np.polyfit(np.log(betas), np.log(norms), 1)[0]
    beta = 0.1
    radial = 2 / (math.sqrt(math.pi) * beta)
    rel = abs(free_space_origin_value(build_kernel(beta, grid)) - radial) / radial
    seconds = time.perf_counter() - start
    ok = abs(slope + 2) <= 0.1 and rel <= 1e-6 and seconds < 60
    report(3, ok, f"slope={slope:.4f} fourier-vs-quadrature={rel:.2e}", seconds)
    assert ok


def _strang_ratio(step_fn, dt):
    a, b, c = step_fn(dt), step_fn(dt / 2), step_fn(dt / 4)
    return np.abs(a - b).max() / np.abs(b - c).max()


def test_criterion_4_quantum_propagators(report):
    start = time.perf_counter()
    hbar = 0.5
    grid = SpatialGrid(1, 64, 10.0)
    kernel = build_kernel(0.8, grid)
    state = SlaterState(grid, harmonic_orbitals(grid, 2, hbar))
    wf = slater_wavefunction(state)
    gamma = slater_density(state, hbar)

    traj = evolve_exact(wf, kernel, hbar, 0.005, 100, snapshot_every=1)
    norm_step = max(abs(b.norm() - a.norm()) for a, b in zip(traj, traj[1:]))
    e0 = few_body_energy(wf, kernel, hbar)
    exact_drift = abs(few_body_energy(traj[-1], kernel, hbar) - e0) / abs(e0)

    hf = evolve_hartree_fock(gamma, HFConfig.build(gamma, kernel, 0.0025, 100))
    trace_step = max(abs(b.trace() - a.trace()) for a, b in zip(hf, hf[1:]))
    e0 = total_energy(gamma, kernel)
    hf_drift = abs(total_energy(hf[-1], kernel) - e0) / abs(e0)

    t_end = 0.2
    exact_ratio = _strang_ratio(lambda dt: evolve_exact(
        wf, kernel, hbar, dt, int(round(t_end / dt))).psi, 0.02)
    hf_ratio = _strang_ratio(lambda dt: evolve_hartree_fock(
        gamma, HFConfig.build(gamma, kernel, dt, int(round(t_end / dt))),
        snapshot_every=10 ** 6)[-1].matrix, 0.02)

    t_cmp = 1.0
    dists = []
    for dt in (0.01, 0.005):
        steps = int(round(t_cmp / dt))
        ex = evolve_exact(wf, kernel, hbar, dt, steps)
        mf = evolve_hartree_fock(gamma, HFConfig.build(gamma, kernel, dt, steps),
                                 snapshot_every=steps)[-1]
        dists.append(trace_distance(one_body_from_wavefunction(ex, hbar).matrix, mf.matrix))
    converged = abs(dists[0] - dists[1]) <= 0.1 * dists[1]
    seconds = time.perf_counter() - start
    ok = (norm_step <= 1e-8 and trace_step <= 1e-8 and exact_drift <= 1e-6 and hf_drift <= 1e-6
          and 3.5 <= exact_ratio <= 4.5 and 3.5 <= hf_ratio <= 4.5
          and converged and dists[1] < 0.05 * 2 and seconds < 300)
    report(4, ok, f"norm/step={norm_step:.1e} trace/step={trace_step:.1e} "
                  f"energy drift exact={exact_drift:.1e} hf={hf_drift:.1e} "
                  f"strang exact={exact_ratio:.3f} hf={hf_ratio:.3f} "
                  f"hf-vs-exact={dists[0]:.5f},{dists[1]:.5f}", seconds)
    assert ok


def test_criterion_5_vlasov_solver(report):
    start = time.perf_counter()
    phase = PhaseGrid(SpatialGrid(1, 256, 8.0), 6.0, 256)
    c = phase.position.center
    m0 = gaussian_datum(phase, c, 0.0, 0.5, 0.5)
    free = evolve_vlasov(VlasovState(m0, phase), None, 0.005, 100)
    q = phase.position.min_image(phase.positions[:, None] - c - free.t * phase.momenta[None, :])
    g = np.exp(-q ** 2 / 0.5 - phase.momenta[None, :] ** 2 / 0.5)
    exact = g / (np.sum(np.exp(-phase.position.min_image(phase.positions - c) ** 2 / 0.5)[:, None]
                        * np.exp(-phase.momenta[None, :] ** 2 / 0.5)) * phase.cell_weight)
    free_err = np.abs(free.m - exact).max()

    kernel = build_kernel(0.0, phase.position, allow_bare=True)
    datum = 0.5 * (gaussian_datum(phase, c, 1.0, 0.8, 0.3) + gaussian_datum(phase, c, -1.0, 0.8, 0.3))
    state = VlasovState(datum, phase)
    mass_step, growth = 0.0, []
    mom0 = moments(state, kernel)
    for _ in range(200):
        nxt = vlasov_step(state, kernel, 0.005)
        mass_step = max(mass_step, abs(nxt.mass() - state.mass()))
        state = nxt
        mom = moments(state, kernel)
        growth.append((state.t, mom.abs_position + mom.momentum_sq))
    C = mom0.abs_position + mom0.momentum_sq
    affine = max(v / (C * (1 + t)) for t, v in growth)
    back = state
    for _ in range(200):
        back = vlasov_step(back, kernel, -0.005)
    rev = np.abs(back.m - datum).max()
    seconds = time.perf_counter() - start
    ok = free_err <= 1e-10 and mass_step <= 1e-12 and rev <= 1e-8 and affine <= 1 and seconds < 120
    report(5, ok, f"free={free_err:.1e} mass/step={mass_step:.1e} reversibility={rev:.1e} "
                  f"moment ratio={affine:.4f}", seconds)
    assert ok


def test_criterion_6_transport_identity(report):
    start = time.perf_counter()
    N, hbar = 8, 1 / 8
    gamma = _slater(N, 256, 8.0, hbar)
    kernel = build_kernel(N ** -0.04, gamma.grid)
    frame = CoherentFrame.named("gauss", hbar)
    phase = PhaseGrid(SpatialGrid(1, 64, 8.0), 4.0, 64)
    t_mid = 0.2
    rel = []
    for dt in (0.02, 0.01):
        k = int(round(t_mid / dt))
        traj = evolve_hartree_fock(gamma, HFConfig.build(gamma, kernel, dt, k + 1))
        times = [(k - 1) * dt, k * dt, (k + 1) * dt]
        rel.append(transport_identity_check(traj[-3:], times, frame, kernel, phase).relative)
    ratio = rel[0] / rel[1]
    seconds = time.perf_counter() - start
    ok = max(rel) <= 0.05 and 3.5 <= ratio <= 4.5 and seconds < 600
    report(6, ok, f"relative mismatch dt={rel[0]:.2e} dt/2={rel[1]:.2e} ratio={ratio:.3f}", seconds)
    assert ok


@pytest.fixture(scope="module")
def sweep():
    start = time.perf_counter()
    rows = scaling_sweep(SweepConfig())
    return rows, time.perf_counter() - start


def _decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def test_criterion_7_residual_smallness(report, sweep):
    rows, sweep_seconds = sweep
    start = time.perf_counter()
    slopes = sweep_slopes(rows)
    mono = {name: _decreasing([getattr(r, name) for r in rows]) for name in ("r_tilde", "r1", "r2")}

    grid = SpatialGrid(1, 32, 8.0)
    hbar = 0.5
    kernel = build_kernel(0.9, grid)
    state = SlaterState(grid, harmonic_orbitals(grid, 2, hbar))
    gamma = slater_density(state, hbar)
    frame = CoherentFrame.named("bump", hbar)
    phase = PhaseGrid(grid, 4.0, 32)
    r2_product = np.abs(residual_fields(gamma, frame, kernel, phase, factorized(gamma)).r2).max()
    qf = residual_fields(gamma, frame, kernel, phase)
    dense = residual_fields(gamma, frame, kernel, phase,
                            two_body_from_wavefunction(slater_wavefunction(state)))
    agree = max(np.abs(qf.r1 - dense.r1).max(), np.abs(qf.r2 - dense.r2).max())
    seconds = time.perf_counter() - start + sweep_seconds
    ok = (all(not r.error for r in rows) and all(mono.values()) and slopes["r_tilde"] >= 0.4
          and r2_product <= 1e-12 and agree <= 1e-6 and seconds < 1200)
    table = " ".join(f"N={r.N}:[{r.r_tilde:.3e},{r.r1:.3e},{r.r2:.3e}]" for r in rows)
    report(7, ok, f"{table} monotone={mono} r_tilde slope={slopes['r_tilde']:.3f} "
                  f"factorized r2={r2_product:.1e} dense-vs-quasi-free={agree:.1e}", seconds)
    assert ok


def test_criterion_8_vlasov_distance(report, sweep):
    rows, seconds = sweep
    dist = [r.vlasov_distance for r in rows]
    ok = all(np.isfinite(dist)) and _decreasing(dist) and seconds < 1200
    report(8, ok, "distance " + " ".join(f"N={r.N}:{r.vlasov_distance:.4e}" for r in rows), seconds)
    assert ok


def test_criterion_9_oscillation_probe(report):
    start = time.perf_counter()
    alpha, s = 0.5, 2
    probe = oscillation_probe(smooth_bump, alpha=alpha)
    seconds = time.perf_counter() - start
    target = (1 - alpha) * s - 0.3
    ok = probe.exponent >= target and seconds < 30
    report(9, ok, f"fitted exponent={probe.exponent:.3f} threshold={target:.2f}", seconds)
    assert ok

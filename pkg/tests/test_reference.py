import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosongf.coeff import CoeffTensor, reconstruct_matrix
from bosongf.evolve import default_dt, scaled_time_to_seconds
from bosongf.generators import TWO_PI_MHZ, NetworkSpec, network_rhs_f
from bosongf.reference import (
    HBAR,
    K_B,
    BathSpec,
    GaussianDiagonalState,
    adjoint_rhs_number_basis,
    consistent_window,
    conventional_closed_form,
    conventional_solve,
    entropy_production,
    export_matrix,
    gibbs_state,
    import_matrix,
    initial_entropy_production,
    negativity_window,
    oscillator_hamiltonian,
    reference_solve,
    schrodinger_rhs_conventional,
    schrodinger_rhs_first_principles,
    solve_adjoint,
)
from conftest import dense_ladder

OMEGA = 3500 * TWO_PI_MHZ
T_E = HBAR * OMEGA / (12 * K_B)


def single(eta_mhz=250.0):
    return NetworkSpec.table1(1, eta=eta_mhz * TWO_PI_MHZ, drive=0.0)


def random_density(levels, seed, support=None):
    rng = np.random.default_rng(seed)
    support = support or levels
    x = np.zeros((levels, levels), complex)
    x[:support, :support] = rng.normal(size=(support, support)) + 1j * rng.normal(size=(support, support))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


# adjoint generator -----------------------------------------------------------

def test_identity_is_stationary():
    spec = NetworkSpec.table1(2)
    assert np.abs(adjoint_rhs_number_basis(np.eye(25, dtype=complex), spec, 1e-10, 5)).max() == 0


def test_damped_mode_generator():
    spec = NetworkSpec.table1(1, eta=0.0, drive=0.0)
    levels = 8
    a = dense_ladder(levels)
    w, kap = spec.omega_q[0], spec.kappa[0]
    got = adjoint_rhs_number_basis(a, spec)
    want = (-1j * w - kap / 2) * a - kap * reconstruct_matrix(CoeffTensor.monomial((1, 2)), levels)
    assert np.abs(got - want).max() <= 1e-14 * np.abs(want).max()
    n = a.conj().T @ a
    assert np.allclose(adjoint_rhs_number_basis(n, spec), -kap * n, atol=1e-9, rtol=0)


def test_matches_coefficient_generator_two_modes():
    spec = NetworkSpec.table1(2)
    f = CoeffTensor(2, {(0, 1, 0, 1): 1.0, (1, 0, 0, 0): 0.5j, (1, 1, 2, 0): -0.2})
    levels = 8
    t = 7e-11
    dense = adjoint_rhs_number_basis(reconstruct_matrix(f, levels), spec, t)
    coeff = reconstruct_matrix(network_rhs_f(spec, f, t), levels)
    keep = np.ix_(*[[i * levels + j for i in range(5) for j in range(5)]] * 2)
    assert np.abs(dense[keep] - coeff[keep]).max() <= 1e-12 * np.abs(coeff).max()


def test_identity_invariant_over_horizon():
    spec = NetworkSpec.table1(1)
    run = solve_adjoint(np.eye(10, dtype=complex), spec, 10, default_dt(spec), 200, 50)
    for blk in run.block_series:
        assert np.abs(blk - np.eye(3)).max() < 1e-12


def test_damped_decay_reference_precision():
    spec = NetworkSpec.table1(1, eta=0.0, drive=0.0)
    total = scaled_time_to_seconds(10, spec)
    run = reference_solve(CoeffTensor.monomial((0, 1)), spec, total, default_dt(spec) / 4, 4)
    w, kap = spec.omega_q[0], spec.kappa[0]
    blk = run.block_series[-1]
    assert abs(blk[0, 1] - np.exp((-1j * w - kap / 2) * total)) < 1e-10


def test_reference_truncation_self_consistent(table1):
    total = scaled_time_to_seconds(10, table1)
    a0 = CoeffTensor.monomial((0, 1))
    r1 = reference_solve(a0, table1, total, default_dt(table1), 8)
    r2 = reference_solve(a0, table1, total, default_dt(table1), 16)
    b1, b2 = r1.block_series[-1], r2.block_series[-1]
    assert np.linalg.norm(b1 - b2) / np.linalg.norm(b2) < 1e-6


def test_leakage_warning(table1):
    with pytest.warns(RuntimeWarning, match="leakage"):
        reference_solve(CoeffTensor.monomial((0, 1)), table1, scaled_time_to_seconds(1, table1),
                        default_dt(table1), 2, extra_levels=1)
    with pytest.raises(ValueError):
        reference_solve(CoeffTensor.monomial((0, 1)), table1, 1e-12, 1e-13, 4, extra_levels=0)


@pytest.mark.parametrize("levels", [3, 5, 7])
def test_conventional_storage_is_dense(table1, levels):
    run = conventional_solve(CoeffTensor.monomial((0, 1)), table1, 1e-12, default_dt(table1), levels)
    assert run.peak_stored == levels**2


# Schrodinger picture ---------------------------------------------------------

RHS = [schrodinger_rhs_conventional, schrodinger_rhs_first_principles]


@pytest.mark.parametrize("rhs", RHS)
def test_vacuum_at_zero_temperature(rhs):
    rho = np.zeros((8, 8), complex)
    rho[0, 0] = 1
    assert np.abs(rhs(rho, single(), BathSpec(0.0))).max() == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([-50.0, 0.0, 50.0, 250.0]), st.sampled_from([0.0, 0.5, 1.0, 3.0]))
def test_trace_and_hermiticity(seed, eta, te_ratio):
    rho = random_density(10, seed)
    bath = BathSpec(te_ratio * T_E)
    for rhs in RHS:
        d = rhs(rho, single(eta), bath)
        scale = single(eta).omega_q[0]
        assert abs(np.trace(d)) <= 1e-12 * scale
        assert np.abs(d - d.conj().T).max() <= 1e-12 * scale


def test_harmonic_thermal_state_is_stationary():
    spec, bath = single(0.0), BathSpec(T_E)
    rho = gibbs_state(spec, bath, 16)
    d = schrodinger_rhs_conventional(rho, spec, bath)
    assert np.abs(d).max() < 1e-12 * spec.kappa[0]


@pytest.mark.parametrize("eta", [-50.0, 50.0, 250.0])
@pytest.mark.parametrize("ratio", [0.3, 1.0, 4.0])
def test_gibbs_stationary_first_principles(eta, ratio):
    spec, bath = single(eta), BathSpec(ratio * T_E)
    rho = gibbs_state(spec, bath, 16)
    d = schrodinger_rhs_first_principles(rho, spec, bath)
    # only the channel cut by the truncation survives, at the level of the top population
    assert np.abs(d).max() <= 20 * spec.kappa[0] * rho[-1, -1].real + 1e-12 * spec.kappa[0]


def test_zero_temperature_models_agree_on_diagonal_states():
    spec, bath = single(), BathSpec(0.0)
    rho = GaussianDiagonalState(1.5).matrix(12)
    a = schrodinger_rhs_conventional(rho, spec, bath)
    b = schrodinger_rhs_first_principles(rho, spec, bath)
    assert np.abs(a - b).max() < 1e-12 * spec.kappa[0]
    coh = random_density(12, 3, support=4)
    assert np.abs(schrodinger_rhs_conventional(coh, spec, bath) - schrodinger_rhs_first_principles(coh, spec, bath)).max() > 0


def test_cross_picture_consistency():
    spec = single()
    levels, dt, n_steps = 10, default_dt(spec), 100
    rho0 = random_density(levels, 11, support=4)
    rng = np.random.default_rng(5)
    a0 = rng.normal(size=(levels, levels)) + 1j * rng.normal(size=(levels, levels))
    heis = solve_adjoint(a0, spec, levels, dt, n_steps, n_steps, keep=levels).block_series[-1]
    rho, bath = rho0, BathSpec(0.0)
    f = lambda r: schrodinger_rhs_first_principles(r, spec, bath)  # noqa: E731
    for _ in range(n_steps):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert abs(np.trace(rho0 @ heis) - np.trace(rho @ a0)) < 1e-8


def test_positivity_over_short_evolution():
    spec, bath = single(), BathSpec(T_E)
    rho = GaussianDiagonalState.from_temperature(0.8 * T_E, OMEGA).matrix(16)
    rho[0, 1] = rho[1, 0] = 0.1 * math.sqrt(rho[0, 0].real * rho[1, 1].real)
    dt = default_dt(spec)
    for _ in range(200):
        k1 = schrodinger_rhs_first_principles(rho, spec, bath)
        k2 = schrodinger_rhs_first_principles(rho + 0.5 * dt * k1, spec, bath)
        k3 = schrodinger_rhs_first_principles(rho + 0.5 * dt * k2, spec, bath)
        k4 = schrodinger_rhs_first_principles(rho + dt * k3, spec, bath)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.linalg.eigvalsh(rho).min() >= -1e-10


# entropy ---------------------------------------------------------------------

def test_entropy_zero_for_stationary_rate():
    rho = GaussianDiagonalState(2.0).matrix(8)
    assert entropy_production(rho, np.zeros_like(rho), oscillator_hamiltonian(OMEGA, 0.0, 8), T_E) == 0


def test_entropy_input_validation():
    rho = GaussianDiagonalState(2.0).matrix(4)
    h = oscillator_hamiltonian(OMEGA, 0.0, 4)
    bad = rho.copy()
    bad[0, 1] = 1.0
    with pytest.raises(ValueError):
        entropy_production(bad, rho, h, T_E)
    with pytest.raises(ValueError):
        entropy_production(rho, rho, h, 0.0)


def test_window_shapes():
    assert negativity_window(OMEGA, 0.0, 1e-5, T_E) is None
    eta = 250 * TWO_PI_MHZ
    n0 = 1e-5
    lo, hi = negativity_window(OMEGA, eta, n0, T_E)
    assert hi == T_E and lo == pytest.approx(T_E / (4 * n0 * eta / OMEGA + 1))
    lo, hi = negativity_window(OMEGA, -eta, n0, T_E)
    assert lo == T_E and hi > T_E
    assert consistent_window(OMEGA, 0.0, T_E) is None


@pytest.mark.parametrize("eta_mhz", [-50.0, 50.0, 250.0])
def test_conventional_negative_inside_window(eta_mhz):
    spec = single(eta_mhz)
    eta = spec.eta[0]
    lo, hi = consistent_window(OMEGA, eta, T_E)
    for frac in np.linspace(0.05, 0.95, 10):
        t0 = lo + frac * (hi - lo)
        st_ = GaussianDiagonalState.from_temperature(t0, OMEGA)
        pc = initial_entropy_production(spec, BathSpec(T_E), st_, 16, "conventional")
        assert pc < 0
        closed = conventional_closed_form(OMEGA, eta, spec.kappa[0], st_.n0, t0, T_E)
        assert pc == pytest.approx(closed, rel=1e-6)


def test_matrix_text_round_trip(tmp_path):
    m = np.array([[1 + 2j, -0.5], [1e-300j, 3.25]])
    export_matrix(tmp_path / "m.txt", m)
    assert np.array_equal(import_matrix(tmp_path / "m.txt"), m)

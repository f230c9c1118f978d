import math

import numpy as np
import pytest
from scipy.sparse import linalg as splinalg

from utils import fock, model
from utils.errors import ArgumentError, CapacityError, SolverError, solver_guard


@pytest.fixture(scope="module")
def single_mode_state(single_mode):
    return fock.solve(single_mode, 0.1, 0.0, n_max=8, N_max=8)


def test_basis_dimensions(single_mode, two_mode):
    assert fock.build_basis(single_mode, 3, 3).dimension == 8
    basis = fock.build_basis(two_mode, 2, 2)
    assert basis.dimension == 12
    assert {tuple(o) for o in basis.occupations} == {(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)}
    assert fock.build_basis(two_mode, 4, 0).dimension == 2
    assert fock.count_occupations(5, 3, 4) == fock.build_basis(5, 3, 4).n_occupations


def test_basis_ordinals(two_mode):
    basis = fock.build_basis(two_mode, 2, 2)
    assert basis.ordinal(0, (0, 0)) == basis.vacuum_down == 0
    for ordinal in range(basis.dimension):
        spin, occ = basis.state(ordinal)
        assert basis.ordinal(spin, occ) == ordinal
    with pytest.raises(ArgumentError):
        basis.ordinal(0, (3, 0))


def test_capacity_guard():
    with pytest.raises(CapacityError):
        fock.build_basis(40, 10, 10, budget_mb=1)


def test_number_weighted_op(single_mode):
    basis = fock.build_basis(model.DiscreteModes.manual(0.7, 1.0), 3, 3)
    d_gamma = fock.number_weighted_op(basis, [0.7])
    assert d_gamma.matrix[basis.ordinal(0, (2,)), basis.ordinal(0, (2,))] == pytest.approx(1.4)
    number = fock.number_op(basis)
    assert number.matrix[0, 0] == 0.0
    assert d_gamma.commutator_norm(number) == 0.0


def test_field_op(single_mode):
    basis = fock.build_basis(single_mode, 2, 2)
    phi = fock.field_op(basis, [1.0])
    m = phi.toarray()
    assert m[basis.ordinal(0, (1,)), basis.ordinal(0, (0,))] == 1.0
    assert m[basis.ordinal(0, (2,)), basis.ordinal(0, (1,))] == pytest.approx(math.sqrt(2))
    assert fock.is_exactly_symmetric(phi.matrix)


def test_field_vacuum_fluctuation(two_mode):
    basis = fock.build_basis(two_mode, 2, 2)
    phi = fock.field_op(basis, two_mode.v)
    vacuum = np.zeros(basis.dimension)
    vacuum[0] = 1.0
    assert vacuum @ (phi @ (phi @ vacuum)) == pytest.approx(two_mode.norm_squared(), rel=1e-14)


def test_free_hamiltonian(two_mode):
    basis = fock.build_basis(two_mode, 2, 2)
    H = fock.hamiltonian(basis, two_mode, 0.0, 0.0)
    m = H.toarray()
    assert np.count_nonzero(m - np.diag(np.diag(m))) == 0
    assert np.argmin(np.diag(m)) == 0
    assert m[0, 0] == -1.0
    gs = fock.ground_state(H)
    assert gs.energy == pytest.approx(-1.0, abs=1e-12)
    assert gs.gap == pytest.approx(min(2.0, two_mode.m_omega), abs=1e-12)
    assert gs.vector[0] == pytest.approx(1.0)


def test_spin_only_sector(single_mode):
    basis, H, gs = fock.solve(single_mode, 0.3, 0.75, n_max=4, N_max=0)
    assert basis.dimension == 2
    np.testing.assert_allclose(np.linalg.eigvalsh(H.toarray()), [-1.25, 1.25], atol=1e-14)
    assert gs.energy == pytest.approx(-1.25, abs=1e-12)
    assert fock.sigma_x_expectation(gs.vector) == pytest.approx(-0.6, abs=1e-12)


@pytest.mark.parametrize("mu", [0.5, 0.75, 1.0])
def test_free_energy_closed_form(single_mode, mu):
    _, _, gs = fock.solve(single_mode, 0.0, mu, n_max=0, N_max=0)
    assert gs.energy == pytest.approx(-math.sqrt(1 + mu**2), abs=1e-10)


def test_second_order_energy(single_mode_state):
    _, _, gs = single_mode_state
    x = 0.1**2
    assert gs.energy == pytest.approx(-1 - x / 3, abs=1e-5)
    # next order of the continued fraction along the single-mode chain
    assert gs.energy == pytest.approx(-1 - x / 3 - 2 * x**2 / 27, abs=1e-6)
    assert gs.residual < 1e-10
    assert not gs.degenerate


def test_sparse_solver_agrees_with_dense(two_mode, monkeypatch):
    basis = fock.build_basis(two_mode, 6, 6)
    H = fock.hamiltonian(basis, two_mode, 0.2, 0.1)
    dense = fock.ground_state(H)
    monkeypatch.setattr(fock, "DENSE_LIMIT", 10)
    sparse = fock.ground_state(H)
    assert sparse.method == "arpack"
    assert sparse.energy == pytest.approx(dense.energy, abs=1e-10)
    assert abs(sparse.vector @ dense.vector) == pytest.approx(1.0, abs=1e-8)
    assert sparse.vector[0] >= 0.0


def test_parity_symmetry(single_mode, two_mode):
    basis = fock.build_basis(single_mode, 6, 6)
    P = fock.parity_op(basis)
    assert P.matrix[0, 0] == -1.0
    assert fock.hamiltonian(basis, single_mode, 0.1, 0.0).commutator_norm(P) < 1e-14
    assert fock.hamiltonian(basis, single_mode, 0.1, 0.3).commutator_norm(P) == pytest.approx(0.6)
    basis2 = fock.build_basis(two_mode, 4, 4)
    assert fock.hamiltonian(basis2, two_mode, 0.3, 0.0).commutator_norm(fock.parity_op(basis2)) < 1e-13


def test_zero_field_magnetization(single_mode_state):
    _, _, gs = single_mode_state
    assert abs(fock.sigma_x_expectation(gs.vector)) < 1e-10
    vacuum = np.zeros(gs.vector.size)
    vacuum[0] = 1.0
    assert fock.sigma_x_expectation(vacuum) == 0.0


def test_coupling_sign_symmetry(two_mode):
    basis = fock.build_basis(two_mode, 4, 4)
    up = fock.ground_state(fock.hamiltonian(basis, two_mode, 0.25, 0.0)).energy
    down = fock.ground_state(fock.hamiltonian(basis, two_mode, -0.25, 0.0)).energy
    assert up == pytest.approx(down, abs=1e-10)


def test_semigroup_amplitude_free(single_mode):
    basis = fock.build_basis(single_mode, 3, 3)
    H = fock.hamiltonian(basis, single_mode, 0.0, 0.0)
    assert fock.semigroup_amplitude(H, basis, 2.5) == pytest.approx(math.exp(2.5), rel=1e-12)


def test_semigroup_amplitude_spin_only(single_mode):
    basis = fock.build_basis(single_mode, 0, 0)
    mu, T = 0.75, 3.0
    nu = math.sqrt(1 + mu**2)
    H = fock.hamiltonian(basis, single_mode, 0.0, mu)
    expected = math.cosh(T * nu) + math.sinh(T * nu) / nu
    assert fock.semigroup_amplitude(H, basis, T) == pytest.approx(expected, rel=1e-12)


def test_krylov_amplitude_matches_dense(two_mode, monkeypatch):
    basis = fock.build_basis(two_mode, 6, 6)
    H = fock.hamiltonian(basis, two_mode, 0.3, 0.2)
    dense = fock.log_semigroup_amplitude(H, 5.0)
    monkeypatch.setattr(fock, "DENSE_LIMIT", 10)
    assert fock.log_semigroup_amplitude(H, 5.0) == pytest.approx(dense, abs=1e-10)


def test_bloch_energy_approaches_ground_energy(single_mode_state):
    basis, H, gs = single_mode_state
    gaps = [fock.bloch_energy(H, basis, T) - gs.energy for T in (5.0, 10.0, 20.0)]
    assert all(g >= -1e-12 for g in gaps)
    assert gaps[0] > gaps[1] > gaps[2]


def test_bloch_derivatives_free_model(single_mode):
    basis = fock.build_basis(single_mode, 0, 0)
    slope = fock.bloch_mu_derivative(basis, single_mode, 0.0, 0.0, 10.0, order=1)
    assert slope == pytest.approx(0.0, abs=1e-12)
    curvature = fock.bloch_mu_derivative(basis, single_mode, 0.0, 0.0, 10.0, order=2)
    assert -curvature == pytest.approx(1 - (1 - math.exp(-20)) / 20, abs=1e-6)
    with pytest.raises(ArgumentError):
        fock.bloch_mu_derivative(basis, single_mode, 0.0, 0.0, 10.0, order=3)


def test_pull_through_at_zero_coupling(single_mode):
    basis, H, gs = fock.solve(single_mode, 0.0, 0.0, 4, 4)
    report = fock.pull_through_residual(H, gs.energy, gs.vector, single_mode, basis, 0.0)
    assert report.max_residual == 0.0
    assert np.linalg.norm(fock.annihilation_op(basis, 0) @ gs.vector) == 0.0


def test_pull_through_improves_with_caps(single_mode):
    residuals = []
    for cap in (2, 4, 12):
        basis, H, gs = fock.solve(single_mode, 0.05, 0.0, cap, cap)
        residuals.append(fock.pull_through_residual(H, gs.energy, gs.vector, single_mode, basis, 0.05).max_residual)
    assert residuals[0] > residuals[1]
    assert residuals[2] < 1e-4


def test_resolvent_check_free_model(single_mode):
    _, H, gs = fock.solve(single_mode, 0.0, 0.0, 4, 4)
    check = fock.resolvent_norm_check(H, gs.energy, gs.vector, single_mode, chi=1.0)
    assert check.lhs[0] == pytest.approx(1 / 3, rel=1e-8)
    assert check.rhs[0] == pytest.approx(1.0)
    assert check.all_passed


def test_resolvent_check_interacting(single_mode):
    fd = fock.susceptibility_fd(single_mode, 0.1, n_max=10, N_max=10)
    _, H, gs = fock.solve(single_mode, 0.1, 0.0, 10, 10)
    check = fock.resolvent_norm_check(H, gs.energy, gs.vector, single_mode, fd.susceptibility)
    assert np.all(check.passed)
    assert np.all(check.standard_bound)
    assert fock.resolvent_constant(H, gs.energy, gs.vector, single_mode) > 0.0


def test_susceptibility_free_model(two_mode):
    fd = fock.susceptibility_fd(two_mode, 0.0, n_max=2, N_max=2)
    assert fd.value == pytest.approx(-1.0, abs=1e-5)
    assert not fd.low_confidence


def test_susceptibility_grows_with_coupling(single_mode):
    fd = fock.susceptibility_fd(single_mode, 0.1, n_max=8, N_max=8, threads=2)
    assert fd.value < -1.0
    assert fd.error < 1e-4
    with pytest.raises(ArgumentError):
        fock.susceptibility_fd(single_mode, 0.1, h=0.0)


def test_second_quantization_identities(two_mode):
    basis, _, gs = fock.solve(two_mode, 0.3, 0.1, 5, 5)
    assert fock.number_sector_identity(basis, gs.vector) < 1e-12
    assert fock.operator_decomposition_residual(basis, gs.vector, [0.3, 2.0]) < 1e-12
    with pytest.raises(ArgumentError):
        fock.operator_decomposition_residual(basis, gs.vector, [-1.0, 1.0])


def test_mass_ladder(critical_spec):
    spec = critical_spec.with_coupling(0.1)
    rungs, monotone = fock.mass_ladder(spec, [0.8, 0.4, 0.2], n_modes=3, n_max=4, N_max=4)
    assert monotone
    assert [r.mass for r in rungs] == [0.8, 0.4, 0.2]
    assert all(r.field_energy <= r.field_bound * (1 + 1e-6) for r in rungs)
    with pytest.raises(ArgumentError):
        fock.mass_ladder(spec, [0.2, 0.4], n_modes=3)


def test_enlarging_truncation_never_raises_energy():
    omega, v = [1.0, 1.5, 2.0], [0.8, 0.6, 0.5]

    def energy(n_modes, n_max, N_max):
        modes = model.DiscreteModes.manual(omega[:n_modes], v[:n_modes])
        return fock.solve(modes, 0.4, 0.2, n_max=n_max, N_max=N_max)[2].energy

    for grow in (
        [(2, n, 6) for n in range(1, 7)],
        [(2, 6, N) for N in range(0, 7)],
        [(k, 4, 4) for k in (1, 2, 3)],
    ):
        energies = [energy(*caps) for caps in grow]
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:])), (grow, energies)


def test_solver_guard_maps_library_failures():
    with pytest.raises(SolverError) as info:
        with solver_guard("dense ground state"):
            raise np.linalg.LinAlgError("eigenvalues did not converge")
    assert info.value.reason == "numerics.linalg"
    assert info.value.exit_code == 2
    with pytest.raises(SolverError) as info:
        with solver_guard("lowest eigenvalue"):
            raise splinalg.ArpackNoConvergence("no convergence", np.zeros(0), np.zeros((3, 0)))
    assert info.value.reason == "fock.arpack_no_convergence"

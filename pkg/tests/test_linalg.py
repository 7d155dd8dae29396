import numpy as np
import pytest

from mixedwave.linalg import (
    CsrMatrix,
    NonConvergence,
    SolverConfig,
    cg_solve,
    csr_from_coo,
    csr_transpose,
    dense_solve,
    max_asymmetry,
    schur_matrix,
    spmv,
)
from mixedwave.mesh import BoundaryPartition, build_rect_mesh
from mixedwave.spaces import assemble_operators, material_field
from mixedwave.scheme import ThetaConfig, step_matrix


def identity_csr(n):
    return CsrMatrix(np.arange(n + 1), np.arange(n), np.ones(n), (n, n))


def random_sparse(rng, n, density=0.2):
    mask = rng.uniform(size=(n, n)) < density
    dense = np.where(mask, rng.standard_normal((n, n)), 0.0)
    rows, cols = np.nonzero(dense)
    return csr_from_coo(rows, cols, dense[rows, cols], (n, n)), dense


def operators_on(nx, bc=None, rho=1.0, lam=1.0):
    mesh = build_rect_mesh(nx, nx)
    bc = bc or BoundaryPartition.all_dirichlet()
    return assemble_operators(mesh, bc, material_field(mesh, rho, lam))


class TestCsrMatrix:
    def test_validates_offsets(self):
        with pytest.raises(ValueError):
            CsrMatrix([0, 2, 1], [0, 1], [1.0, 2.0], (2, 2))

    def test_validates_strictly_increasing_columns(self):
        with pytest.raises(ValueError):
            CsrMatrix([0, 2], [1, 1], [1.0, 2.0], (1, 2))

    def test_coo_coalesces_duplicates(self):
        M = csr_from_coo([0, 0, 1], [1, 1, 0], [2.0, 3.0, 4.0], (2, 2))
        assert M.nnz == 2
        assert M.todense()[0, 1] == 5.0

    def test_transpose_round_trip(self):
        rng = np.random.default_rng(3)
        M, dense = random_sparse(rng, 15)
        assert np.array_equal(csr_transpose(M).todense(), dense.T)


class TestSpmv:
    def test_identity(self):
        x = np.arange(7.0)
        assert np.array_equal(spmv(identity_csr(7), x), x)

    def test_zero_matrix(self):
        M = csr_from_coo([], [], [], (5, 5))
        assert np.array_equal(spmv(M, np.ones(5)), np.zeros(5))

    def test_matches_dense_product(self):
        rng = np.random.default_rng(42)
        M, dense = random_sparse(rng, 20)
        x = rng.standard_normal(20)
        assert np.abs(spmv(M, x) - dense @ x).max() < 1e-13

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            spmv(identity_csr(3), np.ones(4))


class TestCg:
    def test_identity_converges_in_one_iteration(self):
        b = np.random.default_rng(0).standard_normal(9)
        x, iters, _ = cg_solve(identity_csr(9), b)
        assert iters == 1
        assert np.abs(x - b).max() < 1e-14

    def test_zero_rhs(self):
        x, iters, res = cg_solve(identity_csr(4), np.zeros(4))
        assert iters == 0 and res == 0.0
        assert np.array_equal(x, np.zeros(4))

    def test_step_matrix_solve_matches_dense(self):
        ops = operators_on(4)
        cfg = ThetaConfig.from_dt(0.25, 1.0, 0.01)
        S = step_matrix(ops, cfg)
        rng = np.random.default_rng(7)
        b = rng.standard_normal(S.shape[0])
        x, _, res = cg_solve(S, b, SolverConfig(rel_tolerance=1e-12))
        assert res <= 1e-12 * np.linalg.norm(b)
        assert np.abs(x - dense_solve(S, b)).max() < 1e-9

    def test_indefinite_matrix_raises(self):
        M = csr_from_coo([0, 1], [0, 1], [1.0, -1.0], (2, 2))
        with pytest.raises(NonConvergence):
            cg_solve(M, np.ones(2))

    def test_iteration_cap_raises(self):
        ops = operators_on(4)
        with pytest.raises(NonConvergence):
            cg_solve(ops.A, np.ones(ops.A.shape[0]), SolverConfig(1e-12, max_iterations=1))

    @pytest.mark.parametrize("nx,dt", [(16, 0.01), (64, 0.005), (64, None)])
    def test_converges_well_under_3n(self, nx, dt):
        # dt=None exercises the badly conditioned large-step operator
        ops = operators_on(nx)
        dt = dt if dt is not None else 10.0 * ops.mesh.h
        S = step_matrix(ops, ThetaConfig.from_dt(0.25, 100 * dt, dt))
        rng = np.random.default_rng(11)
        b = rng.standard_normal(S.shape[0])
        x, iters, _ = cg_solve(S, b, SolverConfig(rel_tolerance=1e-12))
        assert iters <= 3 * S.shape[0]


class TestSchurMatrix:
    def test_zero_coeff_returns_a_exactly(self):
        ops = operators_on(3)
        S = schur_matrix(ops.A, ops.D, ops.Cdiag, 0.0)
        assert np.array_equal(S.todense(), ops.A.todense())

    def test_pure_divergence_term(self):
        ops = operators_on(2)
        n = ops.n_velocity
        zero_A = csr_from_coo([], [], [], (n, n))
        S = schur_matrix(zero_A, ops.D, np.ones(ops.n_pressure), 1.0)
        D = ops.D.todense()
        assert np.abs(S.todense() - D.T @ D).max() < 1e-14

    def test_matches_dense_triple_product(self):
        ops = operators_on(2)
        coeff = 2.5e-5
        S = schur_matrix(ops.A, ops.D, ops.Cdiag, coeff)
        D = ops.D.todense()
        dense = ops.A.todense() + coeff * D.T @ np.diag(1.0 / ops.Cdiag) @ D
        assert np.abs(S.todense() - dense).max() < 1e-14

    def test_symmetry(self):
        ops = operators_on(5, bc=BoundaryPartition.all_neumann())
        S = schur_matrix(ops.A, ops.D, ops.Cdiag, 0.37)
        assert max_asymmetry(S) <= 1e-14

    def test_rejects_nonpositive_mass(self):
        ops = operators_on(2)
        bad = np.ones(ops.n_pressure)
        bad[0] = 0.0
        with pytest.raises(ValueError):
            schur_matrix(ops.A, ops.D, bad, 1.0)


def test_solver_config_rejects_nonpositive_tolerance():
    with pytest.raises(ValueError):
        SolverConfig(rel_tolerance=0.0)

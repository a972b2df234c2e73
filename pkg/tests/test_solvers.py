import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import lsq_linear

from cvxnn.arrangements import enumerate_exact
from cvxnn.core import ActivationSpec, PooledLoss, SquaredLoss, logistic_loss
from cvxnn.program import (build_interpolation_program, build_program,
                           constraint_violation, interpolation_residual,
                           objective)
from cvxnn.solvers import (SolverConfig, _bounded_lsq, conjugate_symmetry_error, dft_matrix,
                           fourier_features, nuclear_apply, nuclear_certificate,
                           prox_complex_l1, prox_group, prox_nuclear,
                           solve_admm, solve_circular_fourier, solve_nuclear,
                           solve_penalized, solve_penalized_continuation)

from oracles import socp_optimum

EX1 = np.array([[2.0, 2.0], [3.0, 3.0], [1.0, 0.0]])


def instance(seed, n=8, d=2, beta=0.1, kappa=0.0, **kw):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    return build_program(X, y, enumerate_exact(X), beta, ActivationSpec(kappa), **kw)


def zero_threshold(prog):
    """Smallest beta at which w = 0 is optimal: max over gates of ||(D X)^T y||."""
    G = prog.gates
    return max(np.linalg.norm((G[i][:, None] * prog.X.values).T @ prog.y) for i in range(prog.P))


class TestProx:
    def test_group_example(self):
        np.testing.assert_allclose(prox_group([3.0, 4.0], 1.0), [2.4, 3.2])

    def test_group_inside_ball(self):
        np.testing.assert_array_equal(prox_group([0.3, 0.4], 1.0), [0, 0])

    def test_l1(self):
        np.testing.assert_allclose(prox_group([3.0, -0.5], 1.0, p=1), [2.0, 0.0])

    def test_rows_are_groups(self):
        out = prox_group(np.array([[3.0, 4.0], [0.0, 0.1]]), 1.0)
        np.testing.assert_allclose(out, [[2.4, 3.2], [0, 0]])

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            prox_group([1.0], -1.0)

    def test_nuclear_shrinks_spectrum(self):
        Z = np.diag([3.0, 1.0, 0.5])
        np.testing.assert_allclose(prox_nuclear(Z, 1.0), np.diag([2.0, 0.0, 0.0]), atol=1e-15)

    def test_complex_soft_threshold(self):
        out = prox_complex_l1(np.array([3 + 4j, 0.1j]), 1.0)
        np.testing.assert_allclose(out, [2.4 + 3.2j, 0])

    def test_prox_optimality(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(5)
        p = prox_group(v, 0.7)
        f = lambda x: 0.5 * np.sum((x - v) ** 2) + 0.7 * np.linalg.norm(x)
        for _ in range(200):
            assert f(p) <= f(p + 1e-3 * rng.standard_normal(5)) + 1e-15


class TestBoundedLeastSquares:
    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 5), cols=st.integers(1, 20),
           dup=st.booleans(), ub=st.sampled_from([np.inf, 0.3]))
    def test_matches_bvls(self, seed, rows, cols, dup, ub):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((rows, cols))
        if dup:  # parallel columns make the tight sets degenerate
            M[:, : cols // 2] = M[:, :1] * rng.uniform(0.5, 2, cols // 2)
        b = rng.standard_normal(rows)
        x = _bounded_lsq(M, b, ub)
        ref = lsq_linear(M, b, bounds=(0, ub), method="bvls", tol=1e-14).x
        assert np.all(x >= 0) and np.all(x <= ub)
        assert np.linalg.norm(M @ x - b) <= np.linalg.norm(M @ ref - b) + 1e-10


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
        with pytest.raises(ValueError):
            SolverConfig(abs_tol=0)
        with pytest.raises(ValueError):
            SolverConfig(step_rule="armijo")


class TestAdmm:
    def test_example_one(self):
        prog = build_program(EX1, np.array([1.0, -1.0, 0.0]), enumerate_exact(EX1), 0.1)
        w, rep = solve_admm(prog)
        assert rep.converged
        assert rep.objective == pytest.approx(socp_optimum(prog), abs=1e-6)
        assert rep.final_violation <= 1e-8

    @pytest.mark.parametrize("seed,kappa", [(0, 0.0), (1, 0.1), (2, -1.0), (3, 0.0)])
    def test_matches_oracle(self, seed, kappa):
        prog = instance(seed, kappa=kappa)
        w, rep = solve_admm(prog)
        assert rep.converged
        assert objective(prog, w) == pytest.approx(socp_optimum(prog), abs=1e-6)
        assert constraint_violation(prog, w)[1] <= 1e-8

    def test_l1_regularizer(self):
        prog = instance(4, reg_p=1)
        w, rep = solve_admm(prog)
        assert objective(prog, w) == pytest.approx(socp_optimum(prog), abs=1e-6)

    def test_bias(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((7, 1))
        y = rng.standard_normal(7)
        Xa = np.column_stack([X, np.ones(7)])
        prog = build_program(X, y, enumerate_exact(Xa), 0.05, bias=True)
        w, rep = solve_admm(prog)
        assert objective(prog, w) == pytest.approx(socp_optimum(prog), abs=1e-6)

    def test_zero_above_threshold(self):
        prog = instance(6)
        big = build_program(prog.X.values, prog.y, prog.patterns, 1.01 * zero_threshold(prog))
        w, _ = solve_admm(big)
        assert np.abs(w.blocks).max() == 0.0

    def test_nonzero_below_threshold(self):
        prog = instance(6)
        small = build_program(prog.X.values, prog.y, prog.patterns, 0.9 * zero_threshold(prog))
        w, _ = solve_admm(small)
        assert np.abs(w.blocks).max() > 0.0

    def test_zero_labels(self):
        prog = build_program(EX1, np.zeros(3), enumerate_exact(EX1), 0.1)
        w, rep = solve_admm(prog)
        assert rep.objective == 0.0 and np.all(w.blocks == 0)

    def test_deterministic(self):
        prog = instance(7)
        w1, r1 = solve_admm(prog)
        w2, r2 = solve_admm(prog)
        np.testing.assert_array_equal(w1.blocks, w2.blocks)
        np.testing.assert_array_equal(r1.objective_history, r2.objective_history)

    def test_pooled_loss(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((12, 2))
        y = rng.standard_normal(4)
        prog = build_program(X, y, enumerate_exact(X), 0.1, loss=PooledLoss(SquaredLoss(), 3))
        w, rep = solve_admm(prog)
        assert objective(prog, w) == pytest.approx(socp_optimum(prog), abs=1e-6)

    def test_rejects_logistic(self):
        prog = instance(0, loss=logistic_loss())
        with pytest.raises(ValueError):
            solve_admm(prog)

    def test_iteration_cap(self):
        prog = instance(9, n=12)
        _, rep = solve_admm(prog, SolverConfig(max_iters=2, polish=False))
        assert rep.status == "max_iters" and rep.iterations == 2


class TestInterpolation:
    def test_exact_fit_and_oracle(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((5, 3))
        y = rng.standard_normal(5)
        prog = build_interpolation_program(X, y, enumerate_exact(X))
        w, rep = solve_admm(prog)
        assert interpolation_residual(prog, w) <= 1e-6 * max(1.0, np.linalg.norm(y))
        assert rep.objective == pytest.approx(socp_optimum(prog), rel=1e-6)


class TestPenalized:
    @pytest.mark.parametrize("seed,kappa", [(0, 0.0), (1, 0.1), (2, -1.0)])
    def test_continuation_matches_admm(self, seed, kappa):
        prog = instance(seed, kappa=kappa)
        _, ra = solve_admm(prog)
        w, rp = solve_penalized_continuation(prog)
        assert objective(prog, w) == pytest.approx(ra.objective, abs=1e-3)
        assert rp.final_violation <= 1e-6

    def test_single_rho(self):
        prog = instance(11)
        w, rep = solve_penalized(prog, rho=10.0)
        assert objective(prog, w) == pytest.approx(socp_optimum(prog), abs=1e-3)

    def test_history_finite_and_decreasing(self):
        prog = instance(12)
        _, rep = solve_penalized(prog, rho=1.0)
        assert np.isfinite(rep.objective_history).all()
        assert rep.objective_history[-1] <= rep.objective_history[0]

    def test_logistic(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((10, 2))
        y = np.sign(rng.standard_normal(10))
        prog = build_program(X, y, enumerate_exact(X), 0.05, loss=logistic_loss())
        w, rep = solve_penalized(prog, SolverConfig(max_iters=1000), rho=10.0)
        assert objective(prog, w) < objective(prog, prog.zeros())

    def test_rejects_interpolation(self):
        prog = build_interpolation_program(EX1, np.ones(3), enumerate_exact(EX1))
        with pytest.raises(ValueError):
            solve_penalized(prog)


class TestNuclear:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.patches = rng.standard_normal((3, 20, 4))
        self.y = rng.standard_normal(20)

    def test_certificate_at_optimum(self):
        beta = 1.0
        Z, rep = solve_nuclear(self.patches, self.y, beta)
        assert rep.converged
        assert nuclear_certificate(self.patches, self.y, Z) <= beta * (1 + 1e-4)
        assert rep.records[-1]["certificate"] <= beta * (1 + 1e-4)

    def test_zero_above_certificate(self):
        beta = 1.01 * nuclear_certificate(self.patches, self.y, np.zeros((4, 3)))
        Z, _ = solve_nuclear(self.patches, self.y, beta)
        assert np.all(Z == 0)

    def test_single_patch_is_group_lasso(self):
        X = self.patches[0]
        beta = 0.5
        Z, _ = solve_nuclear([X], self.y, beta)
        z = Z[:, 0]
        g = X.T @ (X @ z - self.y)
        # stationarity of 0.5||Xz - y||^2 + beta ||z||
        np.testing.assert_allclose(g, -beta * z / np.linalg.norm(z), atol=1e-6)

    def test_apply(self):
        Z = np.arange(12.0).reshape(4, 3)
        expected = sum(self.patches[k] @ Z[:, k] for k in range(3))
        np.testing.assert_allclose(nuclear_apply(self.patches, Z), expected)

    def test_rejects_shapes(self):
        with pytest.raises(ValueError):
            solve_nuclear(self.patches, self.y[:5], 1.0)
        with pytest.raises(ValueError):
            solve_nuclear(self.patches, self.y, 0.0)


class TestCircular:
    def test_dft_unitary(self):
        F = dft_matrix(8)
        np.testing.assert_allclose(F.conj().T @ F, np.eye(8), atol=1e-14)

    def test_features(self):
        X = np.random.default_rng(0).standard_normal((5, 8))
        np.testing.assert_allclose(fourier_features(X), X @ dft_matrix(8), atol=1e-13)

    def test_circulant_identity(self):
        rng = np.random.default_rng(1)
        d = 8
        X = rng.standard_normal((4, d))
        z = np.fft.fft(rng.standard_normal(d), norm="ortho")
        F = dft_matrix(d)
        W = F @ np.diag(z) @ F.conj().T
        np.testing.assert_allclose(np.sqrt(d) * X @ W[:, 0], X @ F @ z, atol=1e-12)

    def test_dc_only_data(self):
        rng = np.random.default_rng(2)
        X = np.repeat(rng.standard_normal((30, 1)), 8, axis=1)
        y = X[:, 0] * 2.0
        z, rep = solve_circular_fourier(X, y, 0.1)
        assert np.all(np.abs(z[1:]) <= 1e-10)
        assert abs(z[0]) > 0

    def test_symmetry_and_real_output(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((20, 8))
        y = rng.standard_normal(20)
        z, _ = solve_circular_fourier(X, y, 0.5)
        assert conjugate_symmetry_error(z) <= 1e-12
        assert np.abs((fourier_features(X) @ z).imag).max() <= 1e-10

    def test_zero_for_large_beta(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((10, 8))
        y = rng.standard_normal(10)
        beta = 1.01 * np.sqrt(8) * np.abs(fourier_features(X).conj().T @ y).max()
        z, _ = solve_circular_fourier(X, y, beta)
        assert np.all(z == 0)

    def test_beta_positive(self):
        with pytest.raises(ValueError):
            solve_circular_fourier(np.eye(4), np.ones(4), 0.0)

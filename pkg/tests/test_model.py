import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_suite
from multitask_ggm import (NormOrder, PrecisionSet, ProblemSpec, TaskSuite,
                           eigenvalue_bounds, gaussian_log_likelihood,
                           l1p_norm, multitask_objective, optimality_residual,
                           solve)
from multitask_ggm.model import (DefinitenessError, penalty, spectral_norm,
                                 symmetrize)

I2 = np.eye(2)


def random_pd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + 0.1 * np.eye(n)


class TestLogLikelihood:
    def test_identity(self):
        value = gaussian_log_likelihood(I2, I2)
        assert value == pytest.approx(-2.0, abs=1e-15)

    def test_scaled_identity(self):
        value = gaussian_log_likelihood(I2, 2 * I2)
        assert value == pytest.approx(2 * math.log(2) - 4, abs=1e-14)
        assert value == pytest.approx(-2.6137, abs=1e-4)

    def test_trace_term(self):
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert gaussian_log_likelihood(cov, I2) == pytest.approx(-4.0)

    def test_non_pd_raises(self):
        with pytest.raises(DefinitenessError):
            gaussian_log_likelihood(I2, np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_log_likelihood(I2, np.eye(3))

    def test_concave(self, rng):
        for _ in range(50):
            n = rng.integers(2, 7)
            cov = random_pd(rng, n)
            a, b = random_pd(rng, n), random_pd(rng, n)
            t = rng.uniform(0.01, 0.99)
            lhs = gaussian_log_likelihood(cov, t * a + (1 - t) * b)
            rhs = (t * gaussian_log_likelihood(cov, a)
                   + (1 - t) * gaussian_log_likelihood(cov, b))
            assert lhs >= rhs - 1e-10


class TestMixedNorm:
    def test_zero(self):
        assert l1p_norm(np.zeros((2, 3, 3)), "inf") == 0.0

    def test_elementwise_max(self):
        stack = np.array([[[1, 2], [2, 1]], [[1, -2], [-2, 1]]], float)
        assert l1p_norm(stack, NormOrder.PINF) == pytest.approx(6.0)

    @pytest.mark.parametrize("norm", ["2", "inf"])
    def test_single_task_is_l1(self, rng, norm):
        m = rng.standard_normal((4, 4))
        assert l1p_norm(m[None], norm) == pytest.approx(np.abs(m).sum(),
                                                        rel=1e-14)

    @pytest.mark.parametrize("norm", ["2", "inf"])
    def test_norm_axioms(self, rng, norm):
        for _ in range(30):
            a = rng.standard_normal((3, 4, 4))
            b = rng.standard_normal((3, 4, 4))
            s = rng.uniform(-5, 5)
            assert (l1p_norm(a + b, norm)
                    <= l1p_norm(a, norm) + l1p_norm(b, norm) + 1e-12)
            assert l1p_norm(s * a, norm) == pytest.approx(
                abs(s) * l1p_norm(a, norm), abs=1e-12)

    def test_per_position_norm_ordering(self, rng):
        for k in range(1, 6):
            a = rng.standard_normal((k, 5, 5))
            inf = np.max(np.abs(a), axis=0)
            two = np.linalg.norm(a, axis=0)
            assert np.all(inf <= two + 1e-15)
            assert np.all(two <= math.sqrt(k) * inf + 1e-12)

    def test_penalty_drops_diagonal(self, rng):
        a = rng.standard_normal((2, 3, 3))
        full = l1p_norm(a, "2")
        diag = sum(np.linalg.norm(a[:, i, i]) for i in range(3))
        assert penalty(a, "2", False) == pytest.approx(full - diag)
        assert penalty(a, "2", True) == pytest.approx(full)


class TestObjective:
    def test_unpenalized_diagonal(self):
        suite = TaskSuite(I2[None], [1.0])
        spec = ProblemSpec(rho=1.0)
        assert multitask_objective(suite, I2[None], spec) == pytest.approx(-2)

    def test_penalized_diagonal(self):
        suite = TaskSuite(I2[None], [1.0])
        spec = ProblemSpec(rho=1.0, penalize_diagonal=True)
        assert multitask_objective(suite, I2[None], spec) == pytest.approx(-4)

    def test_weighted_sum(self):
        suite = TaskSuite(np.stack([I2, I2]), [3.0, 5.0])
        spec = ProblemSpec(rho=0.5)
        assert multitask_objective(
            suite, np.stack([I2, I2]), spec) == pytest.approx(-16.0)

    def test_permutation_equivariant(self, rng):
        suite = random_suite(rng, 5, 3)
        precs = np.stack([random_pd(rng, 5) for _ in range(3)])
        spec = ProblemSpec(rho=0.7, norm="2")
        perm = rng.permutation(5)
        p_suite = TaskSuite(suite.covariances[:, perm][:, :, perm],
                            suite.sample_counts)
        p_precs = precs[:, perm][:, :, perm]
        assert (multitask_objective(suite, precs, spec)
                == pytest.approx(multitask_objective(p_suite, p_precs, spec),
                                 rel=1e-13))

    def test_shape_mismatch(self, rng):
        suite = random_suite(rng, 4, 2)
        with pytest.raises(ValueError):
            multitask_objective(suite, np.stack([np.eye(4)] * 3),
                                ProblemSpec(rho=1.0))


class TestTypes:
    def test_symmetrize_upper_authoritative(self):
        a = np.array([[1.0, 2.0], [5.0, 1.0]])
        assert np.array_equal(symmetrize(a), [[1.0, 2.0], [2.0, 1.0]])

    def test_suite_rejects_indefinite(self):
        with pytest.raises(DefinitenessError):
            TaskSuite(np.array([[[1.0, 2.0], [2.0, 1.0]]]), [1.0])

    def test_suite_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            TaskSuite(I2[None], [0.0])
        with pytest.raises(ValueError):
            TaskSuite(np.stack([I2, I2]), [1.0])

    def test_suite_rejects_order_one(self):
        with pytest.raises(ValueError):
            TaskSuite(np.ones((1, 1, 1)), [1.0])

    def test_suite_is_read_only(self):
        suite = TaskSuite(I2[None], [1.0])
        with pytest.raises(ValueError):
            suite.covariances[0, 0, 0] = 3.0

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ProblemSpec(rho=0.0)
        with pytest.raises(ValueError):
            ProblemSpec(rho=1.0, max_sweeps=0)
        with pytest.raises(ValueError):
            ProblemSpec(rho=1.0, norm="1")
        assert ProblemSpec(rho=1.0, norm="2").norm is NormOrder.P2

    def test_dual_exponents(self):
        for norm in NormOrder:
            p, dual = norm.order, norm.dual
            assert (0.0 if p == np.inf else 1 / p) + 1 / dual == 1.0

    def test_precision_set_min_eig(self):
        ps = PrecisionSet(np.stack([I2, 3 * I2]))
        assert np.allclose(ps.min_eigenvalues(), [1.0, 3.0])


class TestBounds:
    def test_spectral_norm(self, rng):
        for _ in range(20):
            a = random_pd(rng, 6)
            assert spectral_norm(a) == pytest.approx(
                np.linalg.eigvalsh(a)[-1], rel=1e-8)

    def test_lower_bound_substitution(self):
        suite = TaskSuite(I2[None], [10.0])
        b = eigenvalue_bounds(suite, ProblemSpec(rho=1.0,
                                                 penalize_diagonal=True))
        assert b.lower[0] == pytest.approx(1 / 1.2)
        # N * sum(T) / rho: the sample count enters the budget.
        assert b.upper == pytest.approx(20.0)

    def test_upper_unit_counts(self, rng):
        suite = random_suite(rng, 4, 3, counts=[1.0, 1.0, 1.0])
        b = eigenvalue_bounds(suite, ProblemSpec(rho=2.0,
                                                 penalize_diagonal=True))
        assert b.upper == pytest.approx(6.0)

    def test_limits_stay_positive(self, rng):
        suite = random_suite(rng, 3, 2)
        b = eigenvalue_bounds(suite, ProblemSpec(rho=1e12,
                                                 penalize_diagonal=True))
        assert 0 < b.upper < 1e-9 and np.all(b.lower > 0)
        assert np.all(b.lower < 1e-9)

    def test_unpenalized_upper_covers_diagonal(self):
        # Identity data: the optimum is I regardless of rho, above NK/rho.
        suite = TaskSuite(np.stack([np.eye(3)] * 2), [1.0, 1.0])
        spec = ProblemSpec(rho=100.0)
        b = eigenvalue_bounds(suite, spec)
        assert b.upper >= 1.0


class TestResidual:
    def test_identity_fixed_point(self):
        suite = TaskSuite(I2[None], [1.0])
        assert optimality_residual(suite, I2[None],
                                   ProblemSpec(rho=1.0)) == 0.0

    def test_doubling_is_positive(self):
        suite = TaskSuite(I2[None], [1.0])
        assert optimality_residual(suite, 2 * I2[None],
                                   ProblemSpec(rho=1.0)) > 0

    @pytest.mark.parametrize("norm", ["2", "inf"])
    @pytest.mark.parametrize("pen", [False, True])
    def test_small_at_optimum(self, rng, norm, pen):
        suite = random_suite(rng, 5, 2)
        spec = ProblemSpec(rho=2.0, norm=norm, penalize_diagonal=pen,
                           max_sweeps=200, objective_tol=1e-14)
        precs, _ = solve(suite, spec)
        scale = suite.n_features * suite.sample_counts.sum()
        assert optimality_residual(suite, precs, spec) < 1e-4 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(1, 4),
       st.floats(0.01, 10.0), st.integers(0, 2**31 - 1))
def test_bounds_ordered(n, k, rho, seed):
    suite = random_suite(np.random.default_rng(seed), n, k)
    for pen in (False, True):
        b = eigenvalue_bounds(suite, ProblemSpec(rho=rho,
                                                 penalize_diagonal=pen))
        assert np.all(b.lower > 0) and np.all(b.lower <= b.upper)

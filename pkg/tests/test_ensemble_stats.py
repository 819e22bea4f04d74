import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otbayes.ensemble_stats import (Ensemble, JointSamples, MomentSet, empirical_cov, empirical_mean,
                                    moments_of)
from otbayes.models import reference_gaussian_model

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(min_rows=2, max_rows=30, cols=st.integers(1, 4)):
    return st.tuples(st.integers(min_rows, max_rows), cols).flatmap(
        lambda s: arrays(np.float64, s, elements=finite))


class TestEmpiricalMean:
    def test_symmetric_pair(self):
        npt.assert_allclose(empirical_mean([[1.0], [-1.0]]), [0.0])

    def test_single_particle(self):
        npt.assert_allclose(empirical_mean([[2.0]]), [2.0])

    def test_standard_normal_draws(self):
        x = np.random.default_rng(0).standard_normal((100_000, 1))
        assert abs(empirical_mean(x)[0]) < 3e-2

    def test_empty(self):
        with pytest.raises(ValueError, match="empty ensemble"):
            empirical_mean(np.zeros((0, 2)))


class TestEmpiricalCov:
    def test_pm_one_variance(self):
        npt.assert_allclose(empirical_cov([[1.0], [-1.0]], [[1.0], [-1.0]]), [[1.0]])

    def test_cross_cov(self):
        a = np.array([[1.0], [-1.0]])
        npt.assert_allclose(empirical_cov(a, a.copy()), [[1.0]])

    def test_diagonal_gaussian(self):
        x = np.random.default_rng(1).standard_normal((100_000, 2)) * [2.0, 3.0]
        c = empirical_cov(x, x)
        npt.assert_allclose(np.diag(c), [4.0, 9.0], rtol=0.05)

    def test_uses_one_over_n(self):
        a = np.array([[0.0], [1.0], [2.0]])
        npt.assert_allclose(empirical_cov(a, a), [[2.0 / 3.0]])

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            empirical_cov(np.zeros((3, 1)), np.zeros((4, 1)))

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            empirical_cov([[1.0]], [[1.0]])

    @given(matrices())
    def test_self_cov_symmetric_psd(self, a):
        c = empirical_cov(a, a)
        npt.assert_array_equal(c, c.T)
        scale = max(1.0, np.abs(c).max())
        assert np.linalg.eigvalsh(c).min() >= -1e-10 * scale

    @given(matrices(), st.floats(-5, 5), st.floats(-5, 5))
    def test_bilinear_in_scalars(self, a, s, t):
        b = a[:, ::-1] + 1.0
        npt.assert_allclose(empirical_cov(s * a, t * b), s * t * empirical_cov(a, b), rtol=1e-9, atol=1e-6)

    @given(matrices(), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, a, rnd):
        idx = list(range(a.shape[0]))
        rnd.shuffle(idx)
        npt.assert_allclose(empirical_cov(a[idx], a[idx]), empirical_cov(a, a), rtol=1e-9, atol=1e-6)
        npt.assert_allclose(empirical_mean(a[idx]), empirical_mean(a), rtol=1e-9, atol=1e-9)


class TestMomentsOf:
    def test_correlated_pairs(self):
        mom = moments_of(JointSamples([[1.0], [-1.0]], [[1.0], [-1.0]]))
        for v in (mom.m_x, mom.m_y):
            npt.assert_allclose(v, [0.0])
        for v in (mom.sigma_x, mom.sigma_y, mom.sigma_xy):
            npt.assert_allclose(v, [[1.0]])

    def test_anticorrelated_pairs(self):
        mom = moments_of(JointSamples([[1.0], [-1.0]], [[-1.0], [1.0]]))
        npt.assert_allclose(mom.sigma_xy, [[-1.0]])

    def test_reference_model_moments(self):
        joint = reference_gaussian_model().sample_joint(100_000, np.random.default_rng(2))
        mom = moments_of(joint)
        npt.assert_allclose(mom.sigma_y, [[2.0]], rtol=0.05)
        npt.assert_allclose(mom.sigma_xy, [[1.0]], rtol=0.05)

    def test_joint_cov_round_trip(self):
        cov = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])
        mom = MomentSet.from_joint_cov(np.array([1.0, 2.0, 3.0]), cov, 2)
        assert (mom.n, mom.m) == (2, 1)
        npt.assert_array_equal(mom.joint_cov(), cov)


class TestContainers:
    def test_vector_becomes_column(self):
        e = Ensemble([1.0, 2.0, 3.0])
        assert (e.size, e.dim) == (3, 1)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            Ensemble([[np.nan]])

    def test_joint_row_mismatch(self):
        with pytest.raises(ValueError):
            JointSamples(np.zeros((3, 1)), np.zeros((2, 1)))

    def test_product_view_keeps_marginals(self, rng):
        j = JointSamples(rng.standard_normal((50, 2)), rng.standard_normal((50, 1)))
        p = j.product_view(rng)
        npt.assert_array_equal(p.x, j.x)
        npt.assert_array_equal(np.sort(p.y, axis=0), np.sort(j.y, axis=0))

    def test_asymmetric_moment_set_rejected(self):
        with pytest.raises(ValueError):
            MomentSet(np.zeros(2), np.zeros(1), np.array([[1.0, 0.5], [0.4, 1.0]]), np.eye(1), np.zeros((2, 1)))

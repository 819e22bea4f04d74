import time
import warnings

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otbayes.ensemble_stats import Ensemble, JointSamples, MomentSet, moments_of
from otbayes.models import kalman_oracle, linear_gaussian_observation, reference_gaussian_model
from otbayes.ot_enkf import (DegenerateMomentsWarning, minimize_quadratic_objective, ot_enkf_update,
                             perturbed_enkf_update, random_moment_set, sequential_filter, solve_prop1, sqrt_spd)

SCALAR_MOM = MomentSet(np.zeros(1), np.zeros(1), np.eye(1), 2 * np.eye(1), np.eye(1))


class TestSqrtSpd:
    def test_identity(self):
        npt.assert_allclose(sqrt_spd(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        npt.assert_allclose(sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    def test_multiply_back(self):
        q = np.random.default_rng(7).standard_normal((5, 5))
        M = q @ q.T + 0.1 * np.eye(5)
        R = sqrt_spd(M)
        npt.assert_allclose(R, R.T)
        assert np.abs(R @ R - M).max() <= 1e-10 * np.abs(M).max()

    def test_not_symmetric(self):
        with pytest.raises(ValueError, match="not symmetric"):
            sqrt_spd(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_not_psd(self):
        with pytest.raises(ValueError, match="not PSD"):
            sqrt_spd(np.diag([1.0, -1e-3]))

    def test_tiny_negative_clamped(self):
        npt.assert_allclose(sqrt_spd(np.diag([1.0, -1e-13])), np.diag([1.0, 0.0]))


class TestSolveProp1:
    def test_independent(self, rng):
        mom = random_moment_set(3, 2, rng)
        mom = MomentSet(mom.m_x, mom.m_y, mom.sigma_x, mom.sigma_y, np.zeros((3, 2)))
        sol = solve_prop1(mom)
        npt.assert_allclose(sol.k, 0.0, atol=1e-14)
        npt.assert_allclose(sol.a, np.eye(3), atol=1e-10)
        x = rng.standard_normal((5, 3))
        npt.assert_allclose(sol.transport(x, rng.standard_normal(2)), x, atol=1e-10)

    def test_scalar(self):
        sol = solve_prop1(SCALAR_MOM)
        npt.assert_allclose(sol.k, [[0.5]])
        npt.assert_allclose(sol.a, [[np.sqrt(0.5)]])

    def test_scalar_transport(self):
        npt.assert_allclose(solve_prop1(SCALAR_MOM).transport([1.0], [0.5]), [[0.95710678]], atol=1e-8)

    def test_reference_posterior_variance(self):
        sol = solve_prop1(SCALAR_MOM)
        _, post_cov = kalman_oracle([0.0], [[1.0]], [[1.0]], [[1.0]], [1.0])
        npt.assert_allclose(sol.a @ SCALAR_MOM.sigma_x @ sol.a, post_cov)
        npt.assert_allclose(post_cov, [[0.5]])

    def test_singular_sigma_x(self):
        mom = MomentSet(np.zeros(2), np.zeros(1), np.diag([1.0, 0.0]), np.eye(1), np.zeros((2, 1)))
        with pytest.raises(ValueError, match="degenerate moments"):
            solve_prop1(mom)

    def test_zero_sigma_y(self):
        mom = MomentSet(np.zeros(1), np.zeros(1), np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(ValueError, match="degenerate moments"):
            solve_prop1(mom)

    def test_near_singular_sigma_y_warns(self):
        sy = np.array([[1.0, 1.0], [1.0, 1.0]])
        mom = MomentSet(np.zeros(1), np.zeros(2), np.eye(1), sy, np.full((1, 2), 0.1))
        with pytest.warns(DegenerateMomentsWarning):
            solve_prop1(mom)

    def test_inconsistent(self):
        mom = MomentSet(np.zeros(1), np.zeros(1), np.eye(1), np.eye(1), 2 * np.eye(1))
        with pytest.raises(ValueError, match="inconsistent moments"):
            solve_prop1(mom)

    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
    def test_riccati_identity(self, seed, n, m):
        mom = random_moment_set(n, m, np.random.default_rng(seed))
        sol = solve_prop1(mom)
        lhs = sol.a @ mom.sigma_x @ sol.a
        rhs = mom.sigma_x - sol.k @ mom.sigma_y @ sol.k.T
        assert np.abs(lhs - rhs).max() <= 1e-8 * np.abs(mom.sigma_x).max()
        assert np.linalg.eigvalsh(sol.a).min() > 0
        npt.assert_allclose(sol.a, sol.a.T)

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
    def test_transport_is_gaussian_form(self, seed, n, m):
        r = np.random.default_rng(seed)
        mom = random_moment_set(n, m, r)
        sol = solve_prop1(mom)
        x, y = r.standard_normal((4, n)), r.standard_normal(m)
        expected = mom.m_x + (x - mom.m_x) @ sol.a + (y - mom.m_y) @ sol.k.T
        npt.assert_allclose(sol.transport(x, y), expected, atol=1e-10)

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
    def test_a_invariant_under_cross_cov_sign(self, seed, n, m):
        mom = random_moment_set(n, m, np.random.default_rng(seed))
        flipped = MomentSet(mom.m_x, mom.m_y, mom.sigma_x, mom.sigma_y, -mom.sigma_xy)
        npt.assert_allclose(solve_prop1(flipped).a, solve_prop1(mom).a, atol=1e-10)
        npt.assert_allclose(solve_prop1(flipped).k, -solve_prop1(mom).k, atol=1e-10)

    def test_numerical_minimizer_agrees(self):
        r = np.random.default_rng(11)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(20):
            mom = random_moment_set(int(r.integers(1, 5)), int(r.integers(1, 4)), r)
            exact = solve_prop1(mom).potential
            num = minimize_quadratic_objective(mom)
            worst = max(worst, np.abs(num.a - exact.a).max(), np.abs(num.k - exact.k).max(),
                        np.abs(num.b - exact.b).max())
        assert worst < 1e-4
        assert time.perf_counter() - t0 < 10


class TestUpdates:
    def test_ot_scalar_example(self):
        # moments chosen to equal SCALAR_MOM exactly
        x = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        y = np.array([[2.0], [0.0], [0.0], [-2.0]])
        mom = moments_of(JointSamples(x, y))
        npt.assert_allclose(mom.sigma_x, [[1.0]])
        npt.assert_allclose(mom.sigma_y, [[2.0]])
        npt.assert_allclose(mom.sigma_xy, [[1.0]])
        out = ot_enkf_update(Ensemble(x), JointSamples(x, y), [0.5])
        assert out.particles[0, 0] == pytest.approx(0.95710678, abs=1e-8)

    def test_perturbed_scalar_example(self):
        # K = 0.5 for this joint; particle 0 has X=1, Y=1.5
        x = np.array([[1.0], [-1.0]])
        y = np.array([[1.5], [-2.5]])
        mom = moments_of(JointSamples(x, y))
        npt.assert_allclose(mom.sigma_xy @ np.linalg.inv(mom.sigma_y), [[0.5]])
        out = perturbed_enkf_update(Ensemble(x), JointSamples(x, y), [0.5])
        assert out.particles[0, 0] == pytest.approx(0.5)

    def test_unchanged_when_uninformative(self):
        x = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        y = np.array([[1.0], [1.0], [-1.0], [-1.0]])
        j = JointSamples(x, y)
        npt.assert_allclose(ot_enkf_update(Ensemble(x), j, [0.0]).particles, x, atol=1e-12)
        npt.assert_allclose(perturbed_enkf_update(Ensemble(x), j, [3.0]).particles, x, atol=1e-12)

    @pytest.mark.parametrize("update", [ot_enkf_update, perturbed_enkf_update])
    def test_reference_posterior(self, update):
        N = 10_000
        j = reference_gaussian_model().sample_joint(N, np.random.default_rng(4))
        out = update(Ensemble(j.x), j, [1.0])
        assert abs(out.mean()[0] - 0.5) <= 3 * np.sqrt(0.5 / N) * 3
        assert out.cov()[0, 0] == pytest.approx(0.5, rel=0.1)

    def test_shape_mismatch(self, rng):
        j = JointSamples(rng.standard_normal((5, 1)), rng.standard_normal((5, 1)))
        with pytest.raises(ValueError):
            ot_enkf_update(Ensemble(rng.standard_normal((4, 1))), j, [0.0])

    @given(st.integers(0, 10_000), st.integers(3, 60), st.integers(1, 3), st.integers(1, 3))
    def test_finite_n_moment_identity(self, seed, N, n, m):
        r = np.random.default_rng(seed)
        x = r.standard_normal((N, n))
        y = x @ r.standard_normal((n, m)) + r.standard_normal((N, m))
        mom = moments_of(JointSamples(x, y))
        if np.linalg.cond(mom.joint_cov()) > 1e8:
            return
        j = JointSamples(x, y)
        yobs = r.standard_normal(m)
        a = ot_enkf_update(Ensemble(x), j, yobs)
        b = perturbed_enkf_update(Ensemble(x), j, yobs)
        scale = np.linalg.norm(mom.sigma_x)
        assert np.linalg.norm(a.mean() - b.mean()) <= 1e-8 * (np.linalg.norm(b.mean()) + np.sqrt(np.trace(mom.sigma_x)))
        assert np.linalg.norm(a.cov() - b.cov()) <= 1e-8 * scale

    def test_ot_displacement_smaller(self):
        r = np.random.default_rng(5)
        model = reference_gaussian_model()
        ot_d, pert_d = [], []
        for y in np.linspace(-2, 2, 9):
            j = model.sample_joint(5000, r)
            e = Ensemble(j.x)
            ot_d.append(np.mean((ot_enkf_update(e, j, [y]).particles - j.x) ** 2))
            pert_d.append(np.mean((perturbed_enkf_update(e, j, [y]).particles - j.x) ** 2))
        assert np.mean(ot_d) <= np.mean(pert_d)


class TestSequentialFilter:
    def test_identity_dynamics_single_step(self):
        obs, _ = linear_gaussian_observation([[1.0]], [[1.0]])
        x0 = np.random.default_rng(0).standard_normal((200, 1))
        out = sequential_filter(lambda x, r: x, obs, [[0.7]], "ot", x0, np.random.default_rng(1))
        j = obs.joint(x0, np.random.default_rng(1))
        npt.assert_allclose(out[0].particles, ot_enkf_update(Ensemble(x0), j, [0.7]).particles)

    @pytest.mark.parametrize("method", ["ot", "perturbed"])
    def test_tracks_kalman_filter(self, method):
        r = np.random.default_rng(6)
        N, steps = 10_000, 20
        obs, _ = linear_gaussian_observation([[1.0]], [[1.0]])
        truth, ys = r.standard_normal(), []
        for _ in range(steps):
            truth = 0.9 * truth + np.sqrt(0.1) * r.standard_normal()
            ys.append([truth + r.standard_normal()])

        def dynamics(x, rr):
            return 0.9 * x + np.sqrt(0.1) * rr.standard_normal(x.shape)

        out = sequential_filter(dynamics, obs, ys, method, r.standard_normal((N, 1)), r)
        m, P = np.zeros(1), np.eye(1)
        for ens, y in zip(out, ys):
            m, P = 0.9 * m, 0.81 * P + 0.1
            m, P = kalman_oracle(m, P, [[1.0]], [[1.0]], y)
            assert abs(ens.mean()[0] - m[0]) <= 5 * np.sqrt(P[0, 0] / N)

    def test_uninformative_constant(self):
        # with H = 0 the empirical gain is O(N^-1/2), so the statistics drift only at that scale
        N = 20_000
        obs, _ = linear_gaussian_observation([[0.0]], [[1.0]])
        x0 = np.random.default_rng(0).standard_normal((N, 1))
        out = sequential_filter(lambda x, r: x, obs, [[1.0]] * 5, "ot", x0, np.random.default_rng(2))
        for e in out:
            npt.assert_allclose(e.mean(), x0.mean(0), atol=5 * np.sqrt(5 / N))
            npt.assert_allclose(e.cov(), np.cov(x0.T, bias=True).reshape(1, 1), rtol=5 * 5 / N)

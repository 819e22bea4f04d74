"""Closed-form quadratic transport and the two ensemble Kalman updates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .ensemble_stats import Ensemble, JointSamples, MomentSet, moments_of
from .models import ObservationModel
from .variational import QuadraticPotential, population_objective_grad, population_objective_quadratic


class DegenerateMomentsWarning(UserWarning):
    pass


def sqrt_spd(M, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition, eigenvalues clamped at 0."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = max(np.abs(M).max(), 1.0)
    if M.shape[0] != M.shape[1] or np.abs(M - M.T).max() > 1e-8 * scale:
        raise ValueError("matrix is not symmetric")
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    if w.min() < -tol * scale:
        raise ValueError(f"not PSD: smallest eigenvalue {w.min():.3e}")
    R = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
    return 0.5 * (R + R.T)


def _chol(M: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"degenerate moments: {what} is not positive definite") from exc


def _regularized_sigma_y(sigma_y: np.ndarray) -> np.ndarray:
    m = sigma_y.shape[0]
    w = np.linalg.eigvalsh(sigma_y)
    if w.min() > 1e-10 * max(w.max(), 1e-300):
        return sigma_y
    eps = 1e-8 * np.trace(sigma_y) / m
    if eps <= 0:
        raise ValueError("degenerate moments: observation covariance is zero")
    warnings.warn(f"near-singular observation covariance; adding {eps:.3e} * I",
                  DegenerateMomentsWarning, stacklevel=3)
    return sigma_y + eps * np.eye(m)


@dataclass(frozen=True)
class EnkfSolution:
    potential: QuadraticPotential
    moments: MomentSet

    @property
    def a(self) -> np.ndarray:
        return self.potential.a

    @property
    def k(self) -> np.ndarray:
        return self.potential.k

    def transport(self, x, y) -> np.ndarray:
        """m_x + A (x - m_x) + K (y - m_y), batched over rows of x."""
        x = np.asarray(x, dtype=float).reshape(-1, self.moments.n)
        y = np.broadcast_to(np.asarray(y, dtype=float).reshape(-1, self.moments.m), (x.shape[0], self.moments.m))
        return self.potential.grad_x(x, y)


def solve_prop1(mom: MomentSet) -> EnkfSolution:
    """Unique minimizer of the quadratic dual problem for the given moments.

    K = Sigma_xy Sigma_y^{-1} and
    A = Sx^{-1/2} (Sx^{1/2} (Sx - K Sigma_y K^T) Sx^{1/2})^{1/2} Sx^{-1/2}.
    """
    sx = mom.sigma_x
    _chol(sx, "Sigma_x")
    sy = _regularized_sigma_y(mom.sigma_y)
    cy = _chol(sy, "Sigma_y")
    k = np.linalg.solve(cy.T, np.linalg.solve(cy, mom.sigma_xy.T)).T
    s = sx - k @ sy @ k.T
    s = 0.5 * (s + s.T)
    if np.linalg.eigvalsh(s).min() < -1e-10 * max(np.abs(sx).max(), 1.0):
        raise ValueError("inconsistent moments: Sigma_x - K Sigma_y K^T is not PSD")
    sx_half = sqrt_spd(sx)
    sx_half_inv = np.linalg.inv(sx_half)
    inner = sqrt_spd(0.5 * (sx_half @ s @ sx_half + (sx_half @ s @ sx_half).T))
    a = sx_half_inv @ inner @ sx_half_inv
    a = 0.5 * (a + a.T)
    if np.linalg.eigvalsh(a).min() <= 0:
        raise ValueError("inconsistent moments: posterior covariance is singular")
    pot = QuadraticPotential.from_shifted_intercept(a, k, mom.m_x, mom)
    return EnkfSolution(pot, mom)


def _check_pair(ens: Ensemble, joint: JointSamples) -> None:
    if ens.size != joint.size or ens.dim != joint.x.shape[1]:
        raise ValueError(f"ensemble shape {ens.particles.shape} does not match joint x {joint.x.shape}")


def ot_enkf_update(ens: Ensemble, joint: JointSamples, y) -> Ensemble:
    _check_pair(ens, joint)
    sol = solve_prop1(moments_of(joint))
    return Ensemble(sol.transport(ens.particles, y))


def perturbed_enkf_update(ens: Ensemble, joint: JointSamples, y) -> Ensemble:
    """Classical update X^i + K (y - Y^i) with simulated observations Y^i."""
    _check_pair(ens, joint)
    mom = moments_of(joint)
    sy = _regularized_sigma_y(mom.sigma_y)
    cy = _chol(sy, "Sigma_y")
    k = np.linalg.solve(cy.T, np.linalg.solve(cy, mom.sigma_xy.T)).T
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return Ensemble(ens.particles + (y - joint.y) @ k.T)


UPDATES = {"ot": ot_enkf_update, "perturbed": perturbed_enkf_update}


def sequential_filter(dynamics: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                      obs: ObservationModel, observations: Sequence, method: str,
                      initial: np.ndarray, rng: np.random.Generator) -> list[Ensemble]:
    """Alternate propagation and analysis; returns the posterior ensemble after each step.

    ``dynamics`` maps an (N, n) array of particles to their successors.
    """
    update = UPDATES[method]
    x = np.asarray(initial, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    out = []
    for y in observations:
        x = np.asarray(dynamics(x, rng), dtype=float).reshape(x.shape)
        joint = obs.joint(x, rng)
        x = update(Ensemble(x), joint, y).particles
        out.append(Ensemble(x))
    return out


def minimize_quadratic_objective(mom: MomentSet, gtol: float = 1e-12,
                                 maxiter: int = 20000) -> QuadraticPotential:
    """Numerically minimize the closed-form quadratic objective.

    Independent check of :func:`solve_prop1`.  A is parameterized by its
    lower Cholesky factor to stay positive definite; the search runs in
    (L, K, b_shift) with L-BFGS and analytic gradients.
    """
    n, m = mom.n, mom.m
    tril = np.tril_indices(n)

    def unpack(theta):
        L = np.zeros((n, n))
        L[tril] = theta[:tril[0].size]
        off = tril[0].size
        k = theta[off:off + n * m].reshape(n, m)
        b = theta[off + n * m:]
        return L, k, b

    def fun(theta):
        L, k, b = unpack(theta)
        a = L @ L.T
        try:
            val = population_objective_quadratic(QuadraticPotential.from_shifted_intercept(a, k, b, mom), mom)
        except ValueError:
            return np.inf, np.zeros_like(theta)
        ga, gk, gb = population_objective_grad(a, k, b, mom)
        gL = 2 * ga @ L
        return val, np.concatenate([gL[tril], gk.ravel(), gb])

    theta0 = np.concatenate([np.eye(n)[tril], np.zeros(n * m), np.zeros(n)])
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "ftol": 1e-15, "maxiter": maxiter, "maxcor": 30})
    L, k, b = unpack(res.x)
    return QuadraticPotential.from_shifted_intercept(L @ L.T, k, b, mom)


def random_moment_set(n: int, m: int, rng: np.random.Generator,
                      eig_range: tuple[float, float] = (0.5, 2.0)) -> MomentSet:
    """Random moment set with a well-conditioned joint covariance."""
    d = n + m
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    cov = (q * rng.uniform(*eig_range, size=d)) @ q.T
    return MomentSet.from_joint_cov(rng.standard_normal(d), cov, n)

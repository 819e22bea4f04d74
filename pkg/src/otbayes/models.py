"""Test problems and analytic oracles.

Algorithms only ever see a prior sampler and an :class:`ObservationModel`
sampler.  Analytic likelihoods live on :class:`OracleLikelihood` objects that
are kept off the sampler interface and are read by tests and the CLI's
reporting code only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import gaussian_kde, norm

from .ensemble_stats import Ensemble, JointSamples

PriorSampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class OracleLikelihood:
    """Analytic observation density y | x, for oracle use only."""

    density: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ObservationModel:
    """Simulator of Y ~ P(Y | X = x).

    ``sampler(x, rng)`` maps an N x n array of states to an N x m array of
    observations.
    """

    sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    dim: int

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.sampler(x, rng), dtype=float)
        return y.reshape(x.shape[0], self.dim)

    def joint(self, x, rng: np.random.Generator) -> JointSamples:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return JointSamples(x, self.sample(x, rng))


def linear_gaussian_observation(H, R) -> tuple[ObservationModel, OracleLikelihood]:
    """Y = H X + V with V ~ N(0, R)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    L = np.linalg.cholesky(R)
    m = H.shape[0]

    def sampler(x, rng):
        return x @ H.T + rng.standard_normal((x.shape[0], m)) @ L.T

    Rinv = np.linalg.inv(R)
    logdet = np.linalg.slogdet(R)[1]

    def density(y, x):
        y = np.atleast_2d(y)
        x = np.atleast_2d(x)
        r = y - x @ H.T
        q = np.einsum("ij,jk,ik->i", r, Rinv, r)
        return np.exp(-0.5 * q - 0.5 * logdet - 0.5 * m * np.log(2 * np.pi))

    return ObservationModel(sampler, m), OracleLikelihood(density)


@dataclass(frozen=True)
class GaussianMixture1D:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_1d(np.asarray(self.means, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.shape == mu.shape == var.shape):
            raise ValueError("weights, means and variances must have equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(var <= 0):
            raise ValueError("mixture variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        k = rng.choice(self.weights.size, size=size, p=self.weights)
        return self.means[k] + np.sqrt(self.variances[k]) * rng.standard_normal(size)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(self.weights * norm.pdf(x, self.means, np.sqrt(self.variances)), axis=-1)

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.variances + self.means**2) - m**2)


def mixture_posterior(prior: GaussianMixture1D, y: float, sigma_w2: float) -> GaussianMixture1D:
    """Exact posterior of a 1-D Gaussian mixture prior under Y = X + N(0, sigma_w2)."""
    if sigma_w2 <= 0:
        raise ValueError("sigma_w2 must be positive")
    s2 = prior.variances + sigma_w2
    logw = np.log(np.where(prior.weights > 0, prior.weights, 1e-300)) + norm.logpdf(y, prior.means, np.sqrt(s2))
    logw = np.where(prior.weights > 0, logw, -np.inf)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    means = (sigma_w2 * prior.means + prior.variances * y) / s2
    variances = prior.variances * sigma_w2 / s2
    return GaussianMixture1D(w / w.sum(), means, variances)


def kalman_oracle(prior_mean, prior_cov, H, R, y) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian conditioning of N(prior_mean, prior_cov) on y = H x + N(0, R)."""
    m = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    P = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    S = H @ P @ H.T + R
    try:
        cS = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular innovation covariance") from exc
    PHt = P @ H.T
    gain = np.linalg.solve(cS.T, np.linalg.solve(cS, PHt.T)).T
    mean = m + gain @ (y - H @ m)
    cov = P - gain @ H @ P
    return mean, 0.5 * (cov + cov.T)


def kalman_bucy_oracle(prior_mean: float, prior_var: float, h_coef: float, sigma_w: float,
                       dt: float, dz) -> tuple[np.ndarray, np.ndarray]:
    """Euler discretization of the Kalman-Bucy filter for a static scalar state.

    Observation model dZ = h_coef * X dt + sigma_w dW.  Returns mean and
    variance at times 0, dt, ..., len(dz) * dt.
    """
    dz = np.asarray(dz, dtype=float)
    means = np.empty(dz.size + 1)
    variances = np.empty(dz.size + 1)
    m, v = float(prior_mean), float(prior_var)
    means[0], variances[0] = m, v
    r = sigma_w**2
    for k, inc in enumerate(dz):
        gain = v * h_coef / r
        m = m + gain * (inc - h_coef * m * dt)
        v = v - v * v * h_coef**2 / r * dt
        means[k + 1], variances[k + 1] = m, v
    return means, variances


def energy_distance(a, b) -> float:
    """V-statistic energy distance 2E|A-B| - E|A-A'| - E|B-B'|."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] == 1:
        sa, sb = _pair_sum_1d(a[:, 0]), _pair_sum_1d(b[:, 0])
        sab = _pair_sum_1d(np.concatenate([a[:, 0], b[:, 0]])) - sa - sb
    else:
        sa, sb, sab = _pair_sum(a, a) / 2, _pair_sum(b, b) / 2, _pair_sum(a, b)
    na, nb = a.shape[0], b.shape[0]
    # ordered-pair sums: within-sample sums count each unordered pair twice
    return float(2 * sab / (na * nb) - 2 * sa / na**2 - 2 * sb / nb**2)


def _pair_sum_1d(x: np.ndarray) -> float:
    """sum_{i<j} |x_i - x_j| in O(N log N)."""
    x = np.sort(x)
    k = np.arange(x.size)
    return float(np.sum(x * (2 * k - x.size + 1)))


def _pair_sum(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    total = 0.0
    for i in range(0, a.shape[0], chunk):
        d = a[i:i + chunk, None, :] - b[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", d, d)).sum()
    return float(total)


def kde_modes(samples, grid, rel_height: float = 0.1) -> np.ndarray:
    """Local maxima of a Gaussian KDE (Scott bandwidth) on ``grid``.

    Maxima lower than ``rel_height`` times the global maximum are ignored.
    """
    grid = np.asarray(grid, dtype=float)
    d = gaussian_kde(np.asarray(samples, dtype=float).reshape(-1))(grid)
    inner = (d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:]) & (d[1:-1] >= rel_height * d.max())
    return grid[1:-1][inner]


def sampling_metrics(a, b) -> dict:
    a = Ensemble(a).particles if not isinstance(a, Ensemble) else a.particles
    b = Ensemble(b).particles if not isinstance(b, Ensemble) else b.particles
    return {
        "energy_distance": energy_distance(a, b),
        "mean_gap": float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0))),
        "variance_gap": float(np.linalg.norm(a.var(axis=0) - b.var(axis=0))),
    }


@dataclass(frozen=True)
class Model:
    """A named test problem: prior sampler plus observation simulator."""

    name: str
    prior: PriorSampler
    observation: ObservationModel
    likelihood: Optional[OracleLikelihood] = None
    # oracle-side descriptions of the prior, never read by the algorithms
    prior_mixture: Optional[GaussianMixture1D] = None
    prior_mean: Optional[np.ndarray] = None
    prior_cov: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return 1 if self.prior_mean is None else int(np.size(self.prior_mean))

    def sample_joint(self, size: int, rng: np.random.Generator) -> JointSamples:
        x = self.prior(size, rng)
        return self.observation.joint(x, rng)

    def posterior_oracle(self, y):
        """Exact posterior: a mixture for 1-D mixture priors, else (mean, cov)."""
        if self.prior_mixture is not None:
            return mixture_posterior(self.prior_mixture, float(np.squeeze(y)), float(self.R[0, 0]))
        return kalman_oracle(self.prior_mean, self.prior_cov, self.H, self.R, y)


BIMODAL_COMPONENT_VAR = 0.2
BIMODAL_NOISE_VAR = 0.2


def bimodal_model() -> Model:
    """Equal mixture of N(-1, 0.2) and N(+1, 0.2); Y = X + N(0, 0.2)."""
    prior = GaussianMixture1D([0.5, 0.5], [-1.0, 1.0], [BIMODAL_COMPONENT_VAR] * 2)
    obs, lik = linear_gaussian_observation([[1.0]], [[BIMODAL_NOISE_VAR]])

    def sampler(size, rng):
        return prior.sample(size, rng)[:, None]

    return Model("bimodal", sampler, obs, lik, prior_mixture=prior,
                 H=np.eye(1), R=np.array([[BIMODAL_NOISE_VAR]]))


def gaussian_model(mean, cov, H, R, name: str = "gauss") -> Model:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    L = np.linalg.cholesky(cov)
    obs, lik = linear_gaussian_observation(H, R)

    def sampler(size, rng):
        return mean + rng.standard_normal((size, mean.size)) @ L.T

    return Model(name, sampler, obs, lik, prior_mean=mean, prior_cov=cov,
                 H=np.atleast_2d(np.asarray(H, dtype=float)), R=np.atleast_2d(np.asarray(R, dtype=float)))


def reference_gaussian_model() -> Model:
    """X ~ N(0, 1), Y = X + W, W ~ N(0, 1)."""
    return gaussian_model([0.0], [[1.0]], [[1.0]], [[1.0]], name="gauss-1d")


def gauss_nd_model() -> Model:
    """Two-dimensional state, scalar observation of a linear combination."""
    return gaussian_model([0.0, 0.0], np.eye(2), [[1.0, 0.5]], [[0.5]], name="gauss-nd")


MODELS = {
    "bimodal": bimodal_model,
    "gauss-1d": reference_gaussian_model,
    "gauss-nd": gauss_nd_model,
}


def get_model(name: str) -> Model:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None

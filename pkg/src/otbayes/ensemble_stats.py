"""Particle containers and empirical moments.

All covariances use the 1/N normalization so that moment identities between
the two ensemble updates hold exactly at finite N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a vector or an N x d matrix, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class Ensemble:
    """N particles in R^n, one per row."""

    particles: np.ndarray

    def __post_init__(self):
        p = _as_matrix(self.particles, "particles")
        if p.shape[0] < 1:
            raise ValueError("empty ensemble")
        if not np.all(np.isfinite(p)):
            raise ValueError("ensemble contains non-finite entries")
        object.__setattr__(self, "particles", p)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return empirical_mean(self.particles)

    def cov(self) -> np.ndarray:
        return empirical_cov(self.particles, self.particles)


@dataclass(frozen=True)
class JointSamples:
    """Paired draws (X^i, Y^i) from the joint law of state and observation."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _as_matrix(self.x, "x")
        y = _as_matrix(self.y, "y")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if x.shape[0] < 1:
            raise ValueError("empty ensemble")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("joint samples contain non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def product_view(self, rng: np.random.Generator) -> "JointSamples":
        """Break the pairing by permuting the y column.

        Rows of the result are (approximately) draws from the product of the
        marginals.
        """
        return JointSamples(self.x, self.y[rng.permutation(self.size)])

    def subset(self, idx) -> "JointSamples":
        return JointSamples(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class MomentSet:
    m_x: np.ndarray
    m_y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    sigma_xy: np.ndarray

    def __post_init__(self):
        for name in ("m_x", "m_y"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("sigma_x", "sigma_y", "sigma_xy"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n, m = self.m_x.size, self.m_y.size
        if self.sigma_x.shape != (n, n) or self.sigma_y.shape != (m, m) or self.sigma_xy.shape != (n, m):
            raise ValueError("moment shapes are inconsistent")
        for name in ("sigma_x", "sigma_y"):
            s = getattr(self, name)
            scale = max(np.abs(s).max(), 1.0)
            if np.abs(s - s.T).max() > 1e-12 * scale:
                raise ValueError(f"{name} is not symmetric")

    @property
    def n(self) -> int:
        return self.m_x.size

    @property
    def m(self) -> int:
        return self.m_y.size

    def joint_cov(self) -> np.ndarray:
        return np.block([[self.sigma_x, self.sigma_xy], [self.sigma_xy.T, self.sigma_y]])

    @classmethod
    def from_joint_cov(cls, mean: np.ndarray, cov: np.ndarray, n: int) -> "MomentSet":
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        return cls(mean[:n], mean[n:], cov[:n, :n], cov[n:, n:], cov[:n, n:])


def empirical_mean(samples) -> np.ndarray:
    """Row mean of an N x d array (a 1-D input is read as N scalars)."""
    s = _as_matrix(samples, "samples")
    if s.shape[0] == 0:
        raise ValueError("empty ensemble")
    return s.mean(axis=0)


def empirical_cov(a, b) -> np.ndarray:
    """Cross-covariance (1/N) sum_i (a_i - mean a)(b_i - mean b)^T."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row count mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ValueError("empirical covariance needs at least 2 samples")
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    c = da.T @ db / a.shape[0]
    if a is b or (a.shape == b.shape and np.array_equal(a, b)):
        c = 0.5 * (c + c.T)
    return c


def moments_of(joint: JointSamples) -> MomentSet:
    return MomentSet(
        m_x=empirical_mean(joint.x),
        m_y=empirical_mean(joint.y),
        sigma_x=empirical_cov(joint.x, joint.x),
        sigma_y=empirical_cov(joint.y, joint.y),
        sigma_xy=empirical_cov(joint.x, joint.y),
    )

"""Dual transport objective and its sample estimator.

The objective of a potential f(x; y), convex in x for every y, is

    J(f) = E_{X ~ P_X, Y ~ P_Y independent}[f(X, Y)] + E_{(X, Y) ~ P_XY}[f*(X, Y)]

where f*(.; y) is the convex conjugate in the first argument.  Its minimizer's
x-gradient transports the prior to the posterior for every observation value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ensemble_stats import JointSamples, MomentSet

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadraticPotential:
    """f(x; y) = 1/2 x^T A x + x^T (K y + b) with A symmetric positive definite."""

    a: np.ndarray
    k: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n) or k.shape[0] != n or b.shape != (n,):
            raise ValueError(f"inconsistent shapes A{a.shape} K{k.shape} b{b.shape}")
        scale = max(np.abs(a).max(), 1e-300)
        if np.abs(a - a.T).max() > 1e-10 * scale:
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "a", 0.5 * (a + a.T))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.k.shape[1]

    @classmethod
    def identity(cls, n: int, m: int) -> "QuadraticPotential":
        return cls(np.eye(n), np.zeros((n, m)), np.zeros(n))

    @classmethod
    def from_shifted_intercept(cls, a, k, b_shift, mom: MomentSet) -> "QuadraticPotential":
        """Build from the centred intercept b_shift = b + A m_x + K m_y."""
        a = np.atleast_2d(a)
        k = np.atleast_2d(k)
        return cls(a, k, np.asarray(b_shift) - a @ mom.m_x - k @ mom.m_y)

    def shifted_intercept(self, mom: MomentSet) -> np.ndarray:
        return self.b + self.a @ mom.m_x + self.k @ mom.m_y

    # batched forms: x is (N, n), y is (N, m), output (N,) or (N, n)
    def __call__(self, x, y) -> np.ndarray:
        x, y = _batch(x, self.n), _batch(y, self.m)
        return 0.5 * np.einsum("ij,jk,ik->i", x, self.a, x) + np.einsum("ij,ij->i", x, y @ self.k.T + self.b)

    def grad_x(self, x, y) -> np.ndarray:
        x, y = _batch(x, self.n), _batch(y, self.m)
        return x @ self.a + y @ self.k.T + self.b

    def conjugate(self, x, y) -> np.ndarray:
        x, y = _batch(x, self.n), _batch(y, self.m)
        r = x - y @ self.k.T - self.b
        return 0.5 * np.einsum("ij,ij->i", r, _spd_solve(self.a, r.T).T)

    def conjugate_argmax(self, x, y) -> np.ndarray:
        """The maximizing z of z^T x - f(z; y), i.e. A^{-1}(x - K y - b)."""
        x, y = _batch(x, self.n), _batch(y, self.m)
        return _spd_solve(self.a, (x - y @ self.k.T - self.b).T).T


def _batch(v, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim <= 1:
        v = v.reshape(-1, d)
    if v.shape[1] != d:
        raise ValueError(f"dimension mismatch: expected {d} columns, got {v.shape[1]}")
    return v


def _spd_solve(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate potential: A is not positive definite") from exc
    return np.linalg.solve(c.T, np.linalg.solve(c, rhs))


def quad_eval(f: QuadraticPotential, x, y) -> float:
    return float(f(x, y)[0])


def quad_conjugate(f: QuadraticPotential, x, y) -> float:
    return float(f.conjugate(x, y)[0])


def quad_gradient_map(f: QuadraticPotential, x, y) -> np.ndarray:
    return f.grad_x(x, y)[0]


def empirical_objective(f: Evaluator, f_conj: Evaluator, joint: JointSamples,
                        pairing: str = "full", rng: Optional[np.random.Generator] = None,
                        chunk: int = 512) -> float:
    """Sample estimate J^(N) of the dual objective.

    ``pairing="full"`` averages f over all N^2 pairs (X^i, Y^j).  The
    ``"derangement"`` variant pairs each X^i with a single Y^{pi(i)} for a
    random derangement pi; it is O(N) and only approximates the double sum.
    Evaluators take batched (N, n), (N, m) arrays and return (N,) values.
    """
    x, y = joint.x, joint.y
    N = joint.size
    if pairing == "full":
        prod = 0.0
        idx = np.arange(N)
        for i0 in range(0, N, chunk):
            rows = idx[i0:i0 + chunk]
            xi = np.repeat(x[rows], N, axis=0)
            yj = np.tile(y, (rows.size, 1))
            vals = np.asarray(f(xi, yj), dtype=float)
            _check_finite(vals, lambda k: (rows[k // N], k % N), "f")
            prod += vals.sum()
        prod /= N * N
    elif pairing == "derangement":
        if rng is None:
            raise ValueError("derangement pairing needs an rng")
        perm = _derangement(N, rng)
        vals = np.asarray(f(x, y[perm]), dtype=float)
        _check_finite(vals, lambda k: (k, perm[k]), "f")
        prod = vals.mean()
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    conj = np.asarray(f_conj(x, y), dtype=float)
    _check_finite(conj, lambda k: (k, k), "f*")
    return float(prod + conj.mean())


def _check_finite(vals: np.ndarray, pair_of, name: str) -> None:
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i, j = pair_of(int(bad[0]))
        raise FloatingPointError(f"{name} is not finite at sample pair (i={i}, j={j})")


def _derangement(N: int, rng: np.random.Generator) -> np.ndarray:
    if N < 2:
        return np.arange(N)
    # random cyclic shift of a random ordering has no fixed points
    order = rng.permutation(N)
    shift = int(rng.integers(1, N))
    perm = np.empty(N, dtype=int)
    perm[order] = order[(np.arange(N) + shift) % N]
    return perm


def quad_empirical_objective(f: QuadraticPotential, joint: JointSamples) -> float:
    """Exact J^(N) for a quadratic potential in O(N).

    The double sum over pairs factorizes because f is affine in y.
    """
    x, y = joint.x, joint.y
    prod = (0.5 * np.einsum("ij,jk,ik->i", x, f.a, x).mean()
            + x.mean(axis=0) @ f.k @ y.mean(axis=0) + x.mean(axis=0) @ f.b)
    return float(prod + f.conjugate(x, y).mean())


def population_objective_quadratic(f: QuadraticPotential, mom: MomentSet) -> float:
    """Closed-form J(f) for a quadratic potential under the given moments.

    The intercept enters through b_shift = b + A m_x + K m_y, which equals m_x
    at the optimum.  The additive constant |m_x|^2 is included so the value is
    the actual objective (it vanishes for centred priors).
    """
    a, k = f.a, f.k
    ainv = _spd_solve(a, np.eye(f.n))
    d = f.shifted_intercept(mom) - mom.m_x
    val = (0.5 * np.trace(a @ mom.sigma_x)
           + 0.5 * np.trace(ainv @ mom.sigma_x)
           + 0.5 * np.trace(ainv @ k @ mom.sigma_y @ k.T)
           - np.trace(ainv @ mom.sigma_xy @ k.T)
           + 0.5 * d @ ainv @ d)
    return float(val + mom.m_x @ mom.m_x)


def population_objective_grad(a, k, b_shift, mom: MomentSet):
    """Gradient of the closed-form objective in (A, K, b_shift).

    The A-gradient is the symmetric-matrix gradient.
    """
    ainv = np.linalg.inv(a)
    d = b_shift - mom.m_x
    C = (mom.sigma_x + k @ mom.sigma_y @ k.T - mom.sigma_xy @ k.T - k @ mom.sigma_xy.T
         + np.outer(d, d))
    ga = 0.5 * mom.sigma_x - 0.5 * ainv @ C @ ainv
    gk = ainv @ (k @ mom.sigma_y - mom.sigma_xy)
    gb = ainv @ d
    return 0.5 * (ga + ga.T), gk, gb

"""Scalar feedback particle filter as the small-step limit of the transport update.

For a static scalar state observed through dZ = h(X) dt + sigma_w dW, the
transport potential f(x; y) = x^2/2 + phi(x) y + psi(x) dt has its first-order
part phi given by the weighted Poisson equation

    -(1/p) (p phi')' = (h - hhat) / sigma_w^2,

whose gain phi' drives the particle SDE

    dX = phi'(X) (dZ - (h(X) + hhat)/2 dt) + (sigma_w^2 / 2) phi''(X) phi'(X) dt.

In one dimension the divergence-free correction vanishes, so it is omitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .models import kalman_bucy_oracle

ScalarFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        d = np.diff(x)
        if np.any(d <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if np.abs(d - d.mean()).max() > 1e-12 * max(1.0, np.abs(x).max()):
            raise ValueError("grid must be uniform")
        object.__setattr__(self, "nodes", x)

    @classmethod
    def uniform(cls, lo: float, hi: float, intervals: int) -> "Grid1D":
        """Nodes x_0 = lo, ..., x_M = hi with M = ``intervals``."""
        return cls(np.linspace(lo, hi, intervals + 1))

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])


@dataclass(frozen=True)
class PoissonSolution1D:
    grid: Grid1D
    p: np.ndarray
    phi: np.ndarray
    gain: np.ndarray
    hhat: float
    sigma_w: float

    def dgain(self) -> np.ndarray:
        """phi'' on the nodes by finite differences of the gain."""
        return np.gradient(self.gain, self.grid.spacing)

    def flux_residual(self, h_values) -> float:
        """Sup-norm of p * gain + (1/sigma_w^2) * int_{x_0}^x (h - hhat) p."""
        x = self.grid.nodes
        flux = -cumulative_trapezoid((np.asarray(h_values) - self.hhat) * self.p, x, initial=0.0) / self.sigma_w**2
        return float(np.abs(self.p * self.gain - flux).max())


def solve_poisson_1d(grid: Grid1D, p, h_values, sigma_w: float) -> PoissonSolution1D:
    """Gain of the weighted Poisson equation by direct flux integration.

    p phi'(x) = -(1/sigma_w^2) int_{-inf}^x (h - hhat) p ds.  The integral is
    accumulated from whichever end of the grid is nearer in probability mass,
    so the tails are not computed by cancellation.  phi is the cumulative
    integral of the gain, shifted to have mean zero under p.
    """
    if sigma_w <= 0:
        raise ValueError("sigma_w must be positive")
    x = grid.nodes
    p = np.asarray(p, dtype=float)
    h_values = np.asarray(h_values, dtype=float)
    if p.shape != x.shape or h_values.shape != x.shape:
        raise ValueError("p and h must be given on the grid nodes")
    if np.any(p[1:-1] <= 0) or not np.all(np.isfinite(p)):
        raise ValueError("density underflow on grid")
    p = p / trapezoid(p, x)
    hhat = float(trapezoid(h_values * p, x))
    q = (h_values - hhat) * p
    left = -cumulative_trapezoid(q, x, initial=0.0)
    right = -cumulative_trapezoid(q[::-1], x[::-1], initial=0.0)[::-1]
    mass = cumulative_trapezoid(p, x, initial=0.0)
    flux = np.where(mass <= 0.5, left, right) / sigma_w**2
    gain = np.empty_like(p)
    gain[1:-1] = flux[1:-1] / p[1:-1]
    # the flux vanishes identically at the truncated ends; copy the neighbours instead
    gain[0], gain[-1] = gain[1], gain[-2]
    phi = cumulative_trapezoid(gain, x, initial=0.0)
    phi -= trapezoid(phi * p, x)
    return PoissonSolution1D(grid, p, phi, gain, hhat, float(sigma_w))


def j1_objective(grid: Grid1D, gain, p, h_values, sigma_w: float, phi=None) -> float:
    """E_p[(sigma_w^2/2) phi'^2 - phi (h - hhat)] by trapezoid quadrature.

    ``phi`` defaults to the cumulative integral of ``gain``; the value does
    not depend on the additive constant.
    """
    x = grid.nodes
    gain = np.asarray(gain, dtype=float)
    p = np.asarray(p, dtype=float)
    h_values = np.asarray(h_values, dtype=float)
    if not (gain.shape == p.shape == h_values.shape == x.shape):
        raise ValueError("grid quantities have mismatched shapes")
    p = p / trapezoid(p, x)
    if phi is None:
        phi = cumulative_trapezoid(gain, x, initial=0.0)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != x.shape:
        raise ValueError("grid quantities have mismatched shapes")
    hhat = trapezoid(h_values * p, x)
    return float(trapezoid(p * (0.5 * sigma_w**2 * gain**2 - phi * (h_values - hhat)), x))


def _derivs(fn: ScalarFn, z: np.ndarray, eps: float = 1e-4):
    zp, zm = z + eps, z - eps
    f0, fp, fm = fn(z), fn(zp), fn(zm)
    return (fp - fm) / (2 * eps), (fp - 2 * f0 + fm) / eps**2


class ConjugateFailure(ArithmeticError):
    pass


def _conjugate_1d(x, y, dt, phi: ScalarFn, psi: ScalarFn, iters: int = 50):
    """max_z z x - (z^2/2 + phi(z) y + psi(z) dt), per sample, by Newton's method."""
    z = x.copy()
    for _ in range(iters):
        d1phi, d2phi = _derivs(phi, z)
        d1psi, d2psi = _derivs(psi, z)
        grad = x - z - d1phi * y - d1psi * dt
        curv = 1.0 + d2phi * y + d2psi * dt
        if np.any(curv <= 0) or not np.all(np.isfinite(curv)):
            raise ConjugateFailure("objective is not strictly convex at this step size")
        step = grad / curv
        z = z + step
        if np.abs(step).max() < 1e-13 * (1 + np.abs(z).max()):
            break
    else:
        raise ConjugateFailure("Newton iteration did not converge")
    return z * x - (0.5 * z**2 + phi(z) * y + psi(z) * dt)


@dataclass
class ExpansionCheck:
    dts: np.ndarray
    values: np.ndarray
    coefficients: np.ndarray  # c0, c1, ... of the polynomial fit in dt
    dropped: list = field(default_factory=list)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slope(self) -> float:
        return float(self.coefficients[1])

    @property
    def curvature(self) -> float:
        return float(self.coefficients[2]) if self.coefficients.size > 2 else float("nan")

    def table(self) -> list[tuple[float, float]]:
        return list(zip(self.dts.tolist(), self.values.tolist()))


def prop2_expansion_check(prior_sampler: Callable[[int, np.random.Generator], np.ndarray],
                          h: ScalarFn, sigma_w: float, phi: ScalarFn, psi: Optional[ScalarFn],
                          dts: Sequence[float], n: int, rng: np.random.Generator,
                          degree: int = 2) -> ExpansionCheck:
    """Monte-Carlo value of the dual objective as a function of the step size.

    Uses f(x; y) = x^2/2 + phi(x) y + psi(x) dt with Y = h(X) dt + sigma_w W_dt.
    The same prior draws and noise (taken in antithetic pairs) are reused for
    every dt, so the values vary smoothly in dt and a polynomial fit recovers
    the expansion coefficients.  The product-coupling term is the exact double
    sum, which factorizes because f is affine in y.
    """
    if psi is None:
        psi = np.zeros_like
    half = (n + 1) // 2
    x = np.asarray(prior_sampler(half, rng), dtype=float).reshape(-1)
    xi = rng.standard_normal(half)
    x = np.concatenate([x, x])
    xi = np.concatenate([xi, -xi])
    hx = h(x)
    base = 0.5 * np.mean(x**2)
    mphi = np.mean(phi(x))
    mpsi = np.mean(psi(x))
    used, values, dropped = [], [], []
    for dt in sorted(float(d) for d in dts):
        y = hx * dt + sigma_w * np.sqrt(dt) * xi
        try:
            conj = _conjugate_1d(x, y, dt, phi, psi)
        except ConjugateFailure:
            dropped.append(dt)
            continue
        values.append(base + mphi * y.mean() + mpsi * dt + conj.mean())
        used.append(dt)
    if len(used) <= degree:
        raise ConjugateFailure(f"conjugate evaluation failed for step sizes {dropped}")
    used = np.array(used)
    values = np.array(values)
    coef = np.polynomial.polynomial.polyfit(used, values, degree)
    return ExpansionCheck(used, values, coef, dropped)


@dataclass(frozen=True)
class FpfConfig:
    sigma_w: float = 1.0
    dt: float = 1e-3
    horizon: float = 1.0
    n_particles: int = 5000
    seed: int = 0
    grid_nodes: int = 1024
    kde_support: float = 4.0  # grid extends this many bandwidths past the particles

    def __post_init__(self):
        if self.sigma_w <= 0 or self.dt <= 0 or self.horizon <= 0:
            raise ValueError("sigma_w, dt and horizon must be positive")
        if self.n_particles < 2:
            raise ValueError("need at least 2 particles")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


def silverman_bandwidth(x: np.ndarray) -> float:
    sd = x.std()
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde_on_grid(x: np.ndarray, nodes: int = 1024, support: float = 4.0):
    """Gaussian KDE on a uniform grid spanning the particles +- ``support`` bandwidths.

    Particles are linearly binned onto the grid and the counts convolved with
    the sampled kernel.  Returns (grid, density).
    """
    bw = silverman_bandwidth(x)
    if not bw > 0:
        raise ValueError("particles have collapsed to a point")
    lo, hi = x.min() - support * bw, x.max() + support * bw
    grid = Grid1D.uniform(lo, hi, nodes - 1)
    dx = grid.spacing
    u = (x - lo) / dx
    i = np.clip(np.floor(u).astype(int), 0, nodes - 2)
    frac = u - i
    counts = np.bincount(i, 1 - frac, minlength=nodes) + np.bincount(i + 1, frac, minlength=nodes)
    # untruncated kernel so that gaps between outlying particles keep positive density
    offs = np.arange(-(nodes - 1), nodes) * dx
    kern = np.exp(-0.5 * (offs / bw) ** 2) / (np.sqrt(2 * np.pi) * bw)
    dens = np.convolve(counts, kern)[nodes - 1:2 * nodes - 1] / x.size
    return grid, dens


@dataclass
class FpfResult:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    dz: np.ndarray
    true_state: float
    particles: np.ndarray
    snapshots: dict
    last_solution: Optional[PoissonSolution1D] = None

    def oracle(self, prior_mean: float, prior_var: float, h_coef: float, sigma_w: float):
        """Kalman-Bucy mean and variance on the same observation path."""
        dt = float(self.times[1] - self.times[0])
        return kalman_bucy_oracle(prior_mean, prior_var, h_coef, sigma_w, dt, self.dz)


def fpf_step(x: np.ndarray, dz: float, dt: float, gain, dgain, h_x, hhat: float, sigma_w: float) -> np.ndarray:
    """One Euler-Maruyama step of the particle SDE."""
    return x + gain * (dz - 0.5 * (h_x + hhat) * dt) + 0.5 * sigma_w**2 * dgain * gain * dt


def fpf_simulate(cfg: FpfConfig, prior_sampler, h: ScalarFn,
                 true_state_sampler: Callable[[np.random.Generator], float],
                 snapshot_times: Sequence[float] = ()) -> FpfResult:
    """Simulate the particle SDE on a synthetic observation path.

    The grid is rebuilt around the current particles at every step, so no
    particle can leave it.
    """
    ss = np.random.SeedSequence(cfg.seed)
    r_prior, r_truth, r_noise = (np.random.default_rng(s) for s in ss.spawn(3))
    x = np.asarray(prior_sampler(cfg.n_particles, r_prior), dtype=float).reshape(-1)
    x_true = float(true_state_sampler(r_truth))
    K = cfg.steps
    dz = h(np.array([x_true]))[0] * cfg.dt + cfg.sigma_w * np.sqrt(cfg.dt) * r_noise.standard_normal(K)
    times = np.arange(K + 1) * cfg.dt
    mean = np.empty(K + 1)
    var = np.empty(K + 1)
    mean[0], var[0] = x.mean(), x.var()
    snap_steps = {int(round(t / cfg.dt)): t for t in snapshot_times}
    snapshots = {t: x.copy() for s, t in snap_steps.items() if s == 0}
    sol = None
    for k in range(K):
        grid, dens = kde_on_grid(x, cfg.grid_nodes, cfg.kde_support)
        sol = solve_poisson_1d(grid, dens, h(grid.nodes), cfg.sigma_w)
        gain = np.interp(x, grid.nodes, sol.gain)
        dgain = np.interp(x, grid.nodes, sol.dgain())
        x = fpf_step(x, dz[k], cfg.dt, gain, dgain, h(x), sol.hhat, cfg.sigma_w)
        mean[k + 1], var[k + 1] = x.mean(), x.var()
        if k + 1 in snap_steps:
            snapshots[snap_steps[k + 1]] = x.copy()
    return FpfResult(times, mean, var, dz, x_true, x, snapshots, sol)

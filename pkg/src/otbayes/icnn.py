"""Input convex networks f(x, y), convex in x, and min-max training of the dual transport problem.

Two architectures share one interface:

* :class:`SingleLayerIcnn`, f(x, y) = sum_k w_k (wx_k . x + wy_k . y + b_k)_+^2 with w_k >= 0.
* :class:`Icnn`, the general two-track recursion

      z_{l+1} = act_l(Wz_l z_l + Wu_l u_l + Wx_l x + b_l),   z_0 = 0
      u_{l+1} = uact_l(Wt_l u_l + bt_l),                     u_0 = y

  with Wz_l >= 0 entrywise (Wz_0 absent) and convex, non-decreasing
  activations on the z-track.

Each network is callable on batches (B, n), (B, m) and provides ``grad_x``,
``param_grad`` (gradient of a weighted sum of outputs) and
``grad_x_param_vjp`` (parameter gradient of sum_b v_b . grad_x f(x_b, y_b)).
The last one is what the inner maximization over g needs, since the
objective depends on g only through its x-gradient.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ensemble_stats import Ensemble, JointSamples


# name -> (act, d act, d^2 act); derivative at a ReLU kink is taken as 0
def _relu(t):
    return np.maximum(t, 0.0)


def _step(t):
    return (t > 0).astype(float)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


ACTIVATIONS = {
    "relu": (_relu, _step, np.zeros_like),
    "relu2": (lambda t: _relu(t) ** 2, lambda t: 2 * _relu(t), lambda t: 2 * _step(t)),
    "linear": (lambda t: t, np.ones_like, np.zeros_like),
    "softplus": (lambda t: np.logaddexp(0.0, t), _sigmoid, lambda t: _sigmoid(t) * (1 - _sigmoid(t))),
    "tanh": (np.tanh, lambda t: 1 - np.tanh(t) ** 2, lambda t: -2 * np.tanh(t) * (1 - np.tanh(t) ** 2)),
}
CONVEX_NONDECREASING = {"relu", "relu2", "linear", "softplus"}


class ConvexityError(ValueError):
    pass


def _batch(v, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim <= 1:
        v = v.reshape(-1, d)
    if v.shape[1] != d:
        raise ValueError(f"dimension mismatch: expected {d} columns, got {v.shape[1]}")
    return v


class _Network:
    n: int
    m: int
    params: dict
    constrained: tuple = ()

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def check(self) -> None:
        for name in self.constrained:
            if np.any(self.params[name] < 0):
                raise ConvexityError(f"convexity violated: negative entries in {name}")

    def project(self, mode: str = "clamp") -> None:
        for name in self.constrained:
            p = self.params[name]
            if mode == "clamp":
                np.maximum(p, 0.0, out=p)
            elif mode == "abs":
                np.abs(p, out=p)
            else:
                raise ValueError(f"unknown projection mode {mode!r}")


class SingleLayerIcnn(_Network):
    """f(x, y) = sum_k w_k (wx_k . x + wy_k . y + b_k)_+^2."""

    constrained = ("w",)

    def __init__(self, w, wx, wy, bias):
        w = np.atleast_1d(np.asarray(w, dtype=float)).copy()
        K = w.size
        self.params = {
            "w": w,
            "wx": np.asarray(wx, dtype=float).reshape(K, -1).copy(),
            "wy": np.asarray(wy, dtype=float).reshape(K, -1).copy(),
            "bias": np.asarray(bias, dtype=float).reshape(K).copy(),
        }
        self.n = self.params["wx"].shape[1]
        self.m = self.params["wy"].shape[1]
        self.check()

    @classmethod
    def init(cls, n: int, m: int, units: int, rng: np.random.Generator) -> "SingleLayerIcnn":
        s = 1.0 / np.sqrt(units)
        return cls(np.abs(rng.standard_normal(units)) / units,
                   rng.standard_normal((units, n)) * s,
                   rng.standard_normal((units, m)) * s,
                   rng.standard_normal(units) * s)

    @property
    def units(self) -> int:
        return self.params["w"].size

    def _pre(self, x, y):
        p = self.params
        return x @ p["wx"].T + y @ p["wy"].T + p["bias"]

    def __call__(self, x, y) -> np.ndarray:
        self.check()
        x, y = _batch(x, self.n), _batch(y, self.m)
        s = _relu(self._pre(x, y))
        return (s * s) @ self.params["w"]

    def grad_x(self, x, y) -> np.ndarray:
        self.check()
        x, y = _batch(x, self.n), _batch(y, self.m)
        s = _relu(self._pre(x, y))
        return 2.0 * (s * self.params["w"]) @ self.params["wx"]

    def param_grad(self, x, y, weight) -> dict:
        x, y = _batch(x, self.n), _batch(y, self.m)
        c = np.broadcast_to(np.asarray(weight, dtype=float), (x.shape[0],))
        w = self.params["w"]
        s = _relu(self._pre(x, y))
        dpre = 2.0 * c[:, None] * s * w
        return {"w": c @ (s * s), "wx": dpre.T @ x, "wy": dpre.T @ y, "bias": dpre.sum(axis=0)}

    def grad_x_param_vjp(self, x, y, v) -> dict:
        x, y = _batch(x, self.n), _batch(y, self.m)
        v = _batch(v, self.n)
        p = self.params
        w = p["w"]
        pre = self._pre(x, y)
        s = _relu(pre)
        av = v @ p["wx"].T
        dpre = 2.0 * w * av * _step(pre)
        return {
            "w": np.sum(2.0 * s * av, axis=0),
            "wx": dpre.T @ x + (2.0 * w * s).T @ v,
            "wy": dpre.T @ y,
            "bias": dpre.sum(axis=0),
        }


class Icnn(_Network):
    """General input convex network; output width is 1."""

    def __init__(self, params: dict, activations: Sequence[str], u_activations: Sequence[str]):
        self.activations = tuple(activations)
        self.u_activations = tuple(u_activations)
        self.params = {k: np.asarray(v, dtype=float).copy() for k, v in params.items()}
        self.L = len(self.activations)
        if len(self.u_activations) != max(self.L - 1, 0):
            raise ValueError("need one u-track activation per hidden layer")
        self.n = self.params["Wx0"].shape[1]
        self.m = self.params["Wu0"].shape[1]
        self.constrained = tuple(f"Wz{l}" for l in range(1, self.L))
        for l, a in enumerate(self.activations):
            if a not in CONVEX_NONDECREASING:
                raise ConvexityError(f"convexity violated: activation {a!r} at layer {l}")
        if self.params[f"b{self.L - 1}"].size != 1:
            raise ValueError("output layer must have width 1")
        self.check()

    @classmethod
    def init(cls, n: int, m: int, widths: Sequence[int], u_widths: Sequence[int],
             rng: np.random.Generator, activations: Optional[Sequence[str]] = None,
             u_activation: str = "relu") -> "Icnn":
        """``widths`` are the hidden z-widths; ``u_widths`` the hidden u-widths (same count)."""
        widths = list(widths) + [1]
        L = len(widths)
        u_widths = [m] + list(u_widths)
        if len(u_widths) != L:
            raise ValueError("u_widths must have one entry per hidden layer")
        if activations is None:
            activations = ["relu2"] + ["relu"] * (L - 2) + (["linear"] if L > 1 else [])
        params = {}
        for l in range(L):
            d_out = widths[l]
            if l > 0:
                params[f"Wz{l}"] = np.abs(rng.standard_normal((d_out, widths[l - 1]))) / widths[l - 1]
            params[f"Wu{l}"] = rng.standard_normal((d_out, u_widths[l])) / np.sqrt(u_widths[l])
            params[f"Wx{l}"] = rng.standard_normal((d_out, n)) / np.sqrt(n)
            params[f"b{l}"] = rng.standard_normal(d_out) / np.sqrt(d_out)
            if l < L - 1:
                params[f"Wt{l}"] = rng.standard_normal((u_widths[l + 1], u_widths[l])) / np.sqrt(u_widths[l])
                params[f"bt{l}"] = rng.standard_normal(u_widths[l + 1]) / np.sqrt(u_widths[l + 1])
        return cls(params, activations, [u_activation] * (L - 1))

    def _forward(self, x, y, v=None):
        p = self.params
        us, uas = [y], []
        for l in range(self.L - 1):
            ua = us[-1] @ p[f"Wt{l}"].T + p[f"bt{l}"]
            uas.append(ua)
            us.append(ACTIVATIONS[self.u_activations[l]][0](ua))
        zs, zdots, pres, predots = [None], [None], [], []
        for l in range(self.L):
            a = us[l] @ p[f"Wu{l}"].T + x @ p[f"Wx{l}"].T + p[f"b{l}"]
            adot = None if v is None else v @ p[f"Wx{l}"].T
            if l > 0:
                a = a + zs[l] @ p[f"Wz{l}"].T
                if v is not None:
                    adot = adot + zdots[l] @ p[f"Wz{l}"].T
            act, dact, _ = ACTIVATIONS[self.activations[l]]
            pres.append(a)
            predots.append(adot)
            zs.append(act(a))
            zdots.append(None if v is None else dact(a) * adot)
        return {"us": us, "uas": uas, "zs": zs, "zdots": zdots, "pres": pres, "predots": predots}

    def __call__(self, x, y) -> np.ndarray:
        self.check()
        x, y = _batch(x, self.n), _batch(y, self.m)
        return self._forward(x, y)["zs"][-1][:, 0]

    def grad_x(self, x, y) -> np.ndarray:
        self.check()
        x, y = _batch(x, self.n), _batch(y, self.m)
        p = self.params
        cache = self._forward(x, y)
        delta = np.ones((x.shape[0], 1))
        gx = np.zeros_like(x)
        for l in reversed(range(self.L)):
            g = delta * ACTIVATIONS[self.activations[l]][1](cache["pres"][l])
            gx += g @ p[f"Wx{l}"]
            if l > 0:
                delta = g @ p[f"Wz{l}"]
        return gx

    def _backward(self, x, y, value_seed, v=None) -> dict:
        p = self.params
        cache = self._forward(x, y, v)
        grads = {k: np.zeros_like(val) for k, val in p.items()}
        B = x.shape[0]
        adj_z = value_seed[:, None] * np.ones((B, 1))
        adj_zdot = None if v is None else np.ones((B, 1))
        adj_u = [np.zeros_like(u) for u in cache["us"]]
        for l in reversed(range(self.L)):
            _, dact, ddact = ACTIVATIONS[self.activations[l]]
            a = cache["pres"][l]
            adj_a = adj_z * dact(a)
            if v is not None:
                adj_adot = adj_zdot * dact(a)
                adj_a = adj_a + adj_zdot * ddact(a) * cache["predots"][l]
                grads[f"Wx{l}"] += adj_adot.T @ v
            grads[f"Wx{l}"] += adj_a.T @ x
            grads[f"Wu{l}"] += adj_a.T @ cache["us"][l]
            grads[f"b{l}"] += adj_a.sum(axis=0)
            adj_u[l] += adj_a @ p[f"Wu{l}"]
            if l > 0:
                W = p[f"Wz{l}"]
                grads[f"Wz{l}"] += adj_a.T @ cache["zs"][l]
                new_adj_z = adj_a @ W
                if v is not None:
                    grads[f"Wz{l}"] += adj_adot.T @ cache["zdots"][l]
                    adj_zdot = adj_adot @ W
                adj_z = new_adj_z
        for l in reversed(range(self.L - 1)):
            adj_ua = adj_u[l + 1] * ACTIVATIONS[self.u_activations[l]][1](cache["uas"][l])
            grads[f"Wt{l}"] += adj_ua.T @ cache["us"][l]
            grads[f"bt{l}"] += adj_ua.sum(axis=0)
            adj_u[l] += adj_ua @ p[f"Wt{l}"]
        return grads

    def param_grad(self, x, y, weight) -> dict:
        x, y = _batch(x, self.n), _batch(y, self.m)
        c = np.broadcast_to(np.asarray(weight, dtype=float), (x.shape[0],))
        return self._backward(x, y, c)

    def grad_x_param_vjp(self, x, y, v) -> dict:
        x, y = _batch(x, self.n), _batch(y, self.m)
        return self._backward(x, y, np.zeros(x.shape[0]), _batch(v, self.n))


def icnn_forward(params, x, y) -> float:
    return float(params(x, y)[0])


def icnn_grad_x(params, x, y) -> np.ndarray:
    return params.grad_x(x, y)[0]


def transport(f, ens: Ensemble, y) -> Ensemble:
    """Push each particle through x -> grad_x f(x, y) for one observation value y."""
    x = ens.particles
    y = np.broadcast_to(np.asarray(y, dtype=float).reshape(1, -1), (x.shape[0], np.size(y)))
    return Ensemble(f.grad_x(x, y))


def _finite(vals, name):
    bad = np.flatnonzero(~np.isfinite(vals.reshape(vals.shape[0], -1)).all(axis=1))
    if bad.size:
        raise FloatingPointError(f"non-finite {name} at batch index {int(bad[0])}")


def minmax_objective(f, g, joint_batch: JointSamples, product_batch: JointSamples) -> float:
    """mean_product f(X, Y) + mean_joint [grad_x g(X, Y) . X - f(grad_x g(X, Y), Y)]."""
    fp = np.asarray(f(product_batch.x, product_batch.y), dtype=float)
    _finite(fp, "f on product batch")
    t = np.asarray(g.grad_x(joint_batch.x, joint_batch.y), dtype=float)
    _finite(t, "grad_x g on joint batch")
    ft = np.asarray(f(t, joint_batch.y), dtype=float)
    _finite(ft, "f at transported points")
    return float(fp.mean() + np.mean(np.einsum("ij,ij->i", t, joint_batch.x) - ft))


def _minmax_grads(f, g, jb: JointSamples, pb: JointSamples, need_f: bool, need_g: bool):
    B = jb.size
    t = g.grad_x(jb.x, jb.y)
    fp = f(pb.x, pb.y)
    ft = f(t, jb.y)
    obj = float(fp.mean() + np.mean(np.einsum("ij,ij->i", t, jb.x) - ft))
    gf = gg = None
    if need_f:
        a = f.param_grad(pb.x, pb.y, 1.0 / pb.size)
        b = f.param_grad(t, jb.y, 1.0 / B)
        gf = {k: a[k] - b[k] for k in a}
    if need_g:
        v = (jb.x - f.grad_x(t, jb.y)) / B
        gg = g.grad_x_param_vjp(jb.x, jb.y, v)
    return obj, gf, gg


class Adam:
    """Adam with bias correction over a dict of numpy parameters, updated in place."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, maximize: bool = False) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        sign = 1.0 if maximize else -1.0
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p += sign * self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr_f: float = 1e-3
    lr_g: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    inner_steps: int = 5
    outer_steps: int = 10_000
    seed: int = 0
    projection: str = "clamp"
    units: int = 64
    lr_schedule: str = "constant"
    lr_floor: float = 0.0

    def __post_init__(self):
        for name in ("batch_size", "inner_steps", "units"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.outer_steps < 0:
            raise ValueError("outer_steps must be nonnegative")
        for name in ("lr_f", "lr_g", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.projection not in ("clamp", "abs"):
            raise ValueError(f"unknown projection mode {self.projection!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate schedule {self.lr_schedule!r}")
        if not 0 <= self.lr_floor <= 1:
            raise ValueError("lr_floor must lie in [0, 1]")

    def lr_scale(self, step: int) -> float:
        """Multiplier on both learning rates at a given outer step."""
        if self.lr_schedule == "constant" or self.outer_steps <= 1:
            return 1.0
        c = 0.5 * (1 + np.cos(np.pi * step / (self.outer_steps - 1)))
        return self.lr_floor + (1 - self.lr_floor) * c


@dataclass
class TrainResult:
    f: _Network
    g: _Network
    trace: list = field(default_factory=list)  # rows (step, objective, f_lr, g_lr)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "objective", "f_lr", "g_lr"])
        for row in self.trace:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _check_finite(obj, grads, step, trace):
    if not np.isfinite(obj) or not all(np.all(np.isfinite(v)) for v in grads.values()):
        raise TrainingDiverged(f"objective diverged at step {step}", trace)


def train(joint: JointSamples, cfg: TrainConfig, f: Optional[_Network] = None,
          g: Optional[_Network] = None, callback=None) -> TrainResult:
    """Alternating Adam on the min-max objective.

    Each outer step draws a batch of joint pairs, builds a product batch by
    shuffling its y column, takes ``inner_steps`` ascent steps on g and one
    descent step on f.  Constrained weights are projected after every update.
    Networks default to single-layer ICNNs with ``cfg.units`` units.
    """
    if joint.size < 1:
        raise ValueError("empty training data")
    rng = np.random.default_rng(cfg.seed)
    n, m = joint.x.shape[1], joint.y.shape[1]
    f = SingleLayerIcnn.init(n, m, cfg.units, rng) if f is None else f.copy()
    g = SingleLayerIcnn.init(n, m, cfg.units, rng) if g is None else g.copy()
    opt_f = Adam(f.params, cfg.lr_f, cfg.beta1, cfg.beta2, cfg.eps)
    opt_g = Adam(g.params, cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps)
    B = min(cfg.batch_size, joint.size)
    trace = []
    for step in range(cfg.outer_steps):
        scale = cfg.lr_scale(step)
        opt_f.lr, opt_g.lr = cfg.lr_f * scale, cfg.lr_g * scale
        idx = rng.choice(joint.size, size=B, replace=False)
        jb = joint.subset(idx)
        pb = JointSamples(jb.x, jb.y[rng.permutation(B)])
        for _ in range(cfg.inner_steps):
            obj, _, gg = _minmax_grads(f, g, jb, pb, need_f=False, need_g=True)
            _check_finite(obj, gg, step, trace)
            opt_g.step(gg, maximize=True)
            g.project(cfg.projection)
        obj, gf, _ = _minmax_grads(f, g, jb, pb, need_f=True, need_g=False)
        _check_finite(obj, gf, step, trace)
        opt_f.step(gf)
        f.project(cfg.projection)
        trace.append((step, float(obj), float(opt_f.lr), float(opt_g.lr)))
        if callback is not None:
            callback(step, obj, f, g)
    return TrainResult(f, g, trace)


# checkpoint format, one record per line:
#   arch <single_layer|icnn>
#   activations <a0,a1,...>          (icnn only)
#   u_activations <a0,...>           (icnn only, may be empty)
#   param <name> <d1,d2,...> <v1> <v2> ...
# values are written with repr() so they round-trip exactly.

def save_checkpoint(net: _Network, path) -> None:
    lines = ["# otbayes icnn checkpoint v1"]
    if isinstance(net, SingleLayerIcnn):
        lines.append("arch single_layer")
    else:
        lines.append("arch icnn")
        lines.append("activations " + ",".join(net.activations))
        lines.append("u_activations " + ",".join(net.u_activations))
    for name, val in net.params.items():
        shape = ",".join(str(s) for s in val.shape)
        lines.append(f"param {name} {shape} " + " ".join(repr(float(v)) for v in val.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> _Network:
    arch, acts, uacts, params = None, None, (), {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "arch":
            arch = rest.strip()
        elif key == "activations":
            acts = tuple(a for a in rest.strip().split(",") if a)
        elif key == "u_activations":
            uacts = tuple(a for a in rest.strip().split(",") if a)
        elif key == "param":
            parts = rest.split()
            name, shape = parts[0], tuple(int(s) for s in parts[1].split(",") if s)
            params[name] = np.array([float(v) for v in parts[2:]]).reshape(shape)
        else:
            raise ValueError(f"unrecognized checkpoint record {key!r}")
    if arch == "single_layer":
        return SingleLayerIcnn(params["w"], params["wx"], params["wy"], params["bias"])
    if arch == "icnn":
        return Icnn(params, acts, uacts)
    raise ValueError(f"unknown architecture {arch!r}")


def with_params(net: _Network, params: dict) -> _Network:
    new = net.copy()
    new.params = {k: np.asarray(v, dtype=float).copy() for k, v in params.items()}
    return new

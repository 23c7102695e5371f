"""Small feed-forward networks with hand-written reverse-mode gradients.

Each hidden block is ``affine -> [batchnorm] -> activation -> [dropout]``.
All math is float64. Parameters live in a flat ``dict[str, ndarray]`` so that
optimizers, gradient checks and checkpoints share one naming scheme
(``"0.W"``, ``"0.b"``, ``"0.bn_scale"``, ...).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ACTIVATIONS = ("relu", "linear")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"
    dropout: float = 0.0
    bn_scale: np.ndarray | None = None
    bn_shift: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    @property
    def batch_norm(self) -> bool:
        return self.bn_scale is not None


@dataclass
class ForwardCache:
    net_id: int
    x: np.ndarray
    steps: list = field(default_factory=list)


class DenseNet:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if not 0.0 <= layer.dropout < 1.0:
                raise ValueError(f"layer {i}: dropout must be in [0, 1), got {layer.dropout}")
            if i and self.layers[i - 1].W.shape[1] != layer.W.shape[0]:
                raise ValueError(f"layer {i}: input dim {layer.W.shape[0]} does not chain "
                                 f"with previous output dim {self.layers[i - 1].W.shape[1]}")

    @classmethod
    def mlp(cls, sizes: Sequence[int], rng: np.random.Generator, *, batch_norm: bool = False,
            dropout: float = 0.0, out_activation: str = "linear") -> "DenseNet":
        """``sizes = [in, h1, ..., out]``; hidden layers get relu (+BN, +dropout)."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            bound = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layer = Layer(W, np.zeros(fan_out), out_activation if last else "relu",
                          0.0 if last else dropout)
            if batch_norm and not last:
                layer.bn_scale = np.ones(fan_out)
                layer.bn_shift = np.zeros(fan_out)
                layer.running_mean = np.zeros(fan_out)
                layer.running_var = np.ones(fan_out)
            layers.append(layer)
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name. The arrays are the live ones, not copies."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.W"] = layer.W
            out[f"{i}.b"] = layer.b
            if layer.batch_norm:
                out[f"{i}.bn_scale"] = layer.bn_scale
                out[f"{i}.bn_shift"] = layer.bn_shift
        return out

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus batch-norm running statistics."""
        out = self.params()
        for i, layer in enumerate(self.layers):
            if layer.batch_norm:
                out[f"{i}.running_mean"] = layer.running_mean
                out[f"{i}.running_var"] = layer.running_var
        return out

    def load_state(self, tensors: dict[str, np.ndarray]):
        for name, arr in self.state().items():
            if name not in tensors:
                raise KeyError(f"missing tensor {name!r}")
            if tensors[name].shape != arr.shape:
                raise ValueError(f"tensor {name!r} has shape {tensors[name].shape}, expected {arr.shape}")
            arr[...] = tensors[name]

    def copy(self) -> "DenseNet":
        return DenseNet([
            Layer(l.W.copy(), l.b.copy(), l.activation, l.dropout,
                  *(None if a is None else a.copy()
                    for a in (l.bn_scale, l.bn_shift, l.running_mean, l.running_var)))
            for l in self.layers
        ])

    def forward(self, x, mode: str = "infer", rng: np.random.Generator | None = None):
        """Returns ``(output, cache)``. ``mode`` is "train" or "infer".

        Train mode uses batch statistics (and updates the running ones) and
        draws dropout masks from ``rng``; infer mode is deterministic.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input shape {x.shape} does not match net input dim {self.in_dim}")
        train = mode == "train"
        cache = ForwardCache(id(self), x)
        h = x
        for layer in self.layers:
            step = {"x": h}
            a = h @ layer.W + layer.b
            if layer.batch_norm:
                if train:
                    mu, var = a.mean(axis=0), a.var(axis=0)
                    layer.running_mean *= BN_MOMENTUM
                    layer.running_mean += (1 - BN_MOMENTUM) * mu
                    layer.running_var *= BN_MOMENTUM
                    layer.running_var += (1 - BN_MOMENTUM) * var
                else:
                    mu, var = layer.running_mean, layer.running_var
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                a_hat = (a - mu) * inv_std
                step["a_hat"], step["inv_std"], step["bn_train"] = a_hat, inv_std, train
                a = a_hat * layer.bn_scale + layer.bn_shift
            if layer.activation == "relu":
                step["active"] = a > 0
                a = np.where(step["active"], a, 0.0)
            if train and layer.dropout > 0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                mask = (rng.random(a.shape) >= layer.dropout) / (1.0 - layer.dropout)
                step["mask"] = mask
                a = a * mask
            cache.steps.append(step)
            h = a
        return h, cache

    def __call__(self, x):
        return self.forward(x, "infer")[0]

    def backward(self, cache: ForwardCache, grad_out):
        """Returns ``(param_grads, input_grad)`` for the forward pass in ``cache``."""
        if cache.net_id != id(self) or len(cache.steps) != len(self.layers):
            raise ValueError("forward cache does not belong to this network")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != (cache.x.shape[0], self.out_dim):
            raise ValueError(f"output gradient shape {g.shape} does not match forward output")
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer, step = self.layers[i], cache.steps[i]
            if "mask" in step:
                g = g * step["mask"]
            if "active" in step:
                g = np.where(step["active"], g, 0.0)
            if layer.batch_norm:
                a_hat = step["a_hat"]
                grads[f"{i}.bn_scale"] = (g * a_hat).sum(axis=0)
                grads[f"{i}.bn_shift"] = g.sum(axis=0)
                g_hat = g * layer.bn_scale
                if step["bn_train"]:
                    n = g.shape[0]
                    g = step["inv_std"] / n * (n * g_hat - g_hat.sum(axis=0)
                                               - a_hat * (g_hat * a_hat).sum(axis=0))
                else:
                    g = g_hat * step["inv_std"]
            grads[f"{i}.W"] = step["x"].T @ g
            grads[f"{i}.b"] = g.sum(axis=0)
            g = g @ layer.W.T
        return grads, g


@dataclass
class AdamState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """In-place Adam update with decoupled weight decay; returns ``params``."""
    for name, p in params.items():
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {grads[name].shape}, expected {p.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(loss_fn: Callable[[], tuple[float, dict]], params: dict[str, np.ndarray],
               tolerance: float = 1e-4, h: float = 1e-5, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    ``loss_fn()`` must evaluate the loss at the current (live) ``params`` and
    return ``(loss, grads)``; any randomness inside it has to be re-seeded per
    call. Relative error is ``|a - n| / max(|a|, |n|, floor * max(1, |loss|))``;
    the floor grows with the loss because central-difference roundoff does,
    which matters for parameters whose true gradient is zero (biases feeding
    batch norm).
    """
    loss0, analytic = loss_fn()
    floor = floor * max(1.0, abs(float(loss0)))
    worst = (0.0, "", ())
    count = 0
    for name, p in params.items():
        g = analytic[name]
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()[0]
            p[idx] = orig - h
            down = loss_fn()[0]
            p[idx] = orig
            num = (up - down) / (2 * h)
            err = abs(g[idx] - num) / max(abs(g[idx]), abs(num), floor)
            count += 1
            if err > worst[0]:
                worst = (err, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], count, tolerance)


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write named tensors as JSON lines: a header line, then one tensor per line."""
    path = Path(path)
    with open(path, "w") as f:
        f.write(json.dumps({"format": "corerl-tensors", "version": 1, "meta": meta or {}},
                           sort_keys=True))
        f.write("\n")
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            f.write(json.dumps({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                                "data": arr.ravel().tolist()}, allow_nan=False))
            f.write("\n")


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != "corerl-tensors":
            raise ValueError(f"{path}: not a tensor container")
        tensors = {}
        for line in f:
            if line.strip():
                rec = json.loads(line)
                tensors[rec["name"]] = np.array(rec["data"], dtype=rec["dtype"]).reshape(rec["shape"])
    return tensors, header["meta"]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1)
    return m + np.log(np.exp(x - m[..., None]).sum(axis=-1))

"""Feedforward conv/fc networks with hand-written backpropagation.

A network is a :class:`NetworkConfig` (input shape plus an ordered list of
layers) and a :class:`NetworkParameters` holding weights, gradients and
momentum buffers. Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS = 1e-7


class StaleCacheError(RuntimeError):
    """A forward cache was used with parameters or a config it did not come from."""


# --------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class Conv:
    kernel: int
    in_ch: int
    out_ch: int
    same: bool = False

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        if self.same:
            return (self.out_ch, h, w)
        if h < self.kernel or w < self.kernel:
            raise ValueError(f"conv kernel {self.kernel} larger than input {h}x{w}")
        return (self.out_ch, h - self.kernel + 1, w - self.kernel + 1)

    def param_shapes(self):
        return {"W": (self.out_ch, self.in_ch, self.kernel, self.kernel), "b": (self.out_ch,)}

    @property
    def fan_in(self):
        return self.in_ch * self.kernel * self.kernel

    def _pad(self, x):
        if not self.same:
            return x
        lo = (self.kernel - 1) // 2
        hi = self.kernel - 1 - lo
        return np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi)))

    def forward(self, p, x):
        xp = self._pad(x)
        win = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))
        y = np.tensordot(win, p["W"], axes=([1, 4, 5], [1, 2, 3]))
        y = y.transpose(0, 3, 1, 2) + p["b"][None, :, None, None]
        return np.ascontiguousarray(y), xp

    def backward(self, p, xp, dy, g):
        k = self.kernel
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        g["W"] += np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
        g["b"] += dy.sum(axis=(0, 2, 3))
        ho, wo = dy.shape[2], dy.shape[3]
        dxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                contrib = np.tensordot(dy, p["W"][:, :, di, dj], axes=([1], [0]))
                dxp[:, :, di:di + ho, dj:dj + wo] += contrib.transpose(0, 3, 1, 2)
        if self.same:
            lo = (k - 1) // 2
            h, w = ho, wo
            return dxp[:, :, lo:lo + h, lo:lo + w]
        return dxp


@dataclass(frozen=True)
class MaxPool:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def out_shape(self, shape):
        c, h, w = shape
        if h < 2 or w < 2:
            raise ValueError("maxpool needs spatial size >= 2")
        return (c, h // 2, w // 2)

    def param_shapes(self):
        return {}

    def forward(self, p, x):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        blocks = x[:, :, :2 * h2, :2 * w2].reshape(b, c, h2, 2, w2, 2)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, p, cache, dy, g):
        shape, arg = cache
        b, c, h, w = shape
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((b, c, h2, w2, 4))
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        blocks = blocks.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(shape)
        dx[:, :, :2 * h2, :2 * w2] = blocks.reshape(b, c, 2 * h2, 2 * w2)
        return dx


@dataclass(frozen=True)
class ReLU:
    def out_shape(self, shape):
        return shape

    def param_shapes(self):
        return {}

    def forward(self, p, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, p, mask, dy, g):
        return dy * mask


@dataclass(frozen=True)
class Flatten:
    def out_shape(self, shape):
        return (math.prod(shape),)

    def param_shapes(self):
        return {}

    def forward(self, p, x):
        return x.reshape(len(x), -1), x.shape

    def backward(self, p, shape, dy, g):
        return dy.reshape(shape)


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int

    def out_shape(self, shape):
        if shape != (self.in_dim,):
            raise ValueError(f"fc expects input ({self.in_dim},), got {shape}")
        return (self.out_dim,)

    def param_shapes(self):
        return {"W": (self.out_dim, self.in_dim), "b": (self.out_dim,)}

    @property
    def fan_in(self):
        return self.in_dim

    def forward(self, p, x):
        return x @ p["W"].T + p["b"], x

    def backward(self, p, x, dy, g):
        g["W"] += dy.T @ x
        g["b"] += dy.sum(axis=0)
        return dy @ p["W"]


Layer = Union[Conv, MaxPool, ReLU, Flatten, Dense]

_KINDS = {"conv": Conv, "maxpool": MaxPool, "relu": ReLU, "flatten": Flatten, "fc": Dense}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("type")
    try:
        return _KINDS[kind](**d)
    except KeyError:
        raise ValueError(f"unknown layer type {kind!r}") from None


def layer_to_dict(layer: Layer) -> dict:
    out = {"type": _NAMES[type(layer)]}
    out.update(layer.__dict__)
    return out


# --------------------------------------------------------------------------
# config and parameters


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()  # validates composition

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shape (without batch axis) before each layer and after the last."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.out_shape(shapes[-1])))
        return shapes

    @property
    def output_dim(self) -> int:
        out = self.shapes()[-1]
        if len(out) != 1:
            raise ValueError(f"network output is not a vector: {out}")
        return out[0]

    def num_params(self) -> int:
        return sum(math.prod(s) for layer in self.layers for s in layer.param_shapes().values())

    def with_seed(self, seed: int) -> "NetworkConfig":
        return NetworkConfig(self.input_shape, self.layers, seed)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer_to_dict(layer) for layer in self.layers],
                "init_seed": self.init_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(tuple(d["input_shape"]), tuple(layer_from_dict(x) for x in d["layers"]),
                   int(d.get("init_seed", 0)))


def mlp(input_shape: Sequence[int], hidden: Sequence[int], out_dim: int, seed: int = 0) -> NetworkConfig:
    """flatten -> (fc -> relu)* -> fc."""
    dims = [math.prod(input_shape), *hidden]
    layers: list[Layer] = [Flatten()]
    for a, b in zip(dims[:-1], dims[1:]):
        layers += [Dense(a, b), ReLU()]
    layers.append(Dense(dims[-1], out_dim))
    return NetworkConfig(tuple(input_shape), tuple(layers), seed)


def convnet(input_shape: Sequence[int], out_dim: int, channels=(16, 32), kernel: int = 5,
            hidden: int = 128, seed: int = 0) -> NetworkConfig:
    """Two conv/relu/maxpool stages followed by two fully connected layers."""
    c = input_shape[0]
    layers: list[Layer] = []
    for ch in channels:
        layers += [Conv(kernel, c, ch), ReLU(), MaxPool()]
        c = ch
    layers.append(Flatten())
    probe = NetworkConfig(tuple(input_shape), tuple(layers), seed)
    flat = probe.shapes()[-1][0]
    layers += [Dense(flat, hidden), ReLU(), Dense(hidden, out_dim)]
    return NetworkConfig(tuple(input_shape), tuple(layers), seed)


@dataclass
class NetworkParameters:
    weights: list[dict[str, np.ndarray]]
    grads: list[dict[str, np.ndarray]] = field(default_factory=list)
    velocity: list[dict[str, np.ndarray]] = field(default_factory=list)
    version: int = 0

    def __post_init__(self):
        if not self.grads:
            self.grads = [{k: np.zeros_like(v) for k, v in w.items()} for w in self.weights]
        if not self.velocity:
            self.velocity = [{k: np.zeros_like(v) for k, v in w.items()} for w in self.weights]

    def named_arrays(self):
        """Yield ``(name, weight, grad)`` in a fixed order."""
        for i, (w, g) in enumerate(zip(self.weights, self.grads)):
            for key in sorted(w):
                yield f"{i}/{key}", w[key], g[key]

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([w.ravel() for _, w, _ in self.named_arrays()] or [np.zeros(0)])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([g.ravel() for _, _, g in self.named_arrays()] or [np.zeros(0)])

    def zero_grad(self):
        for g in self.grads:
            for a in g.values():
                a.fill(0.0)

    def copy(self) -> "NetworkParameters":
        dup = lambda ds: [{k: v.copy() for k, v in d.items()} for d in ds]
        return NetworkParameters(dup(self.weights), dup(self.grads), dup(self.velocity), self.version)

    def equals(self, other: "NetworkParameters") -> bool:
        """Bit-identical weights."""
        a, b = self.flat_weights(), other.flat_weights()
        return a.shape == b.shape and a.tobytes() == b.tobytes()


def init_params(cfg: NetworkConfig) -> NetworkParameters:
    """Uniform weights in [-s, s] with s = sqrt(1 / fan_in); zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    weights = []
    for layer in cfg.layers:
        shapes = layer.param_shapes()
        p = {}
        if shapes:
            s = math.sqrt(1.0 / layer.fan_in)
            p["W"] = rng.uniform(-s, s, size=shapes["W"])
            p["b"] = np.zeros(shapes["b"])
        weights.append(p)
    return NetworkParameters(weights)


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    layer_caches: list
    version: int
    params_id: int
    config: NetworkConfig
    batch_size: int


def forward(params: NetworkParameters, cfg: NetworkConfig, images: np.ndarray):
    """Return ``(logits, cache)`` for a batch of shape B x input_shape."""
    x = np.asarray(images, dtype=np.float64)
    if tuple(x.shape[1:]) != cfg.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match network {cfg.input_shape}")
    if len(params.weights) != len(cfg.layers):
        raise ValueError("parameters do not belong to this config")
    caches = []
    for layer, p in zip(cfg.layers, params.weights):
        x, c = layer.forward(p, x)
        caches.append(c)
    return x, ForwardCache(caches, params.version, id(params), cfg, len(images))


def predict(params: NetworkParameters, cfg: NetworkConfig, images: np.ndarray,
            chunk: int = 1024) -> np.ndarray:
    """Logits without keeping a cache, evaluated in chunks."""
    out = [forward(params, cfg, images[s:s + chunk])[0] for s in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros((0, cfg.output_dim))


def backward(params: NetworkParameters, cfg: NetworkConfig, cache: ForwardCache,
             grad_logits: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients into ``params.grads``; return grad w.r.t. the input."""
    if cache.params_id != id(params) or cache.version != params.version or cache.config != cfg:
        raise StaleCacheError("forward cache does not match these parameters")
    dy = np.asarray(grad_logits, dtype=np.float64)
    if dy.shape[0] != cache.batch_size:
        raise StaleCacheError("upstream gradient batch size differs from the cached batch")
    for layer, p, g, c in zip(reversed(cfg.layers), reversed(params.weights),
                              reversed(params.grads), reversed(cache.layer_caches)):
        dy = layer.backward(p, c, dy, g)
    return dy


def sgd_step(params: NetworkParameters, lr: float, momentum: float) -> None:
    """Heavy-ball update ``v = momentum * v + g; w -= lr * v``, then zero the gradients."""
    for w, g, v in zip(params.weights, params.grads, params.velocity):
        for key in w:
            v[key] *= momentum
            v[key] += g[key]
            w[key] -= lr * v[key]
            g[key].fill(0.0)
    params.version += 1


# --------------------------------------------------------------------------
# softmax with clamping


@dataclass
class Softmax:
    """Clamped softmax output plus what its backward pass needs."""

    probs: np.ndarray
    raw: np.ndarray
    unclamped: np.ndarray
    total: np.ndarray

    def backprop(self, grad_probs: np.ndarray) -> np.ndarray:
        g = np.asarray(grad_probs, dtype=np.float64)
        # renormalisation p = c / sum(c)
        dc = (g - (g * self.probs).sum(axis=1, keepdims=True)) / self.total
        ds = dc * self.unclamped
        return self.raw * (ds - (ds * self.raw).sum(axis=1, keepdims=True))


def softmax_forward(logits: np.ndarray, eps: float = EPS) -> Softmax:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    raw = e / e.sum(axis=1, keepdims=True)
    unclamped = raw > eps
    clamped = np.where(unclamped, raw, eps)
    total = clamped.sum(axis=1, keepdims=True)
    return Softmax(clamped / total, raw, unclamped, total)


def softmax(logits: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Row-wise softmax with max subtraction, clamped to [eps, 1] and renormalised."""
    return softmax_forward(logits, eps).probs


# --------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    num_coords: int
    worst: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def gradient_check(cfg: NetworkConfig, loss_fn: Callable, inputs: np.ndarray,
                   tolerance: float = 1e-4, num_coords: int = 200, h: float = 1e-5,
                   seed: int = 0, params: Optional[NetworkParameters] = None) -> GradCheckReport:
    """Compare backprop against central differences on a random coordinate sample.

    ``loss_fn(logits)`` returns ``(loss, grad_wrt_logits)``. Every coordinate is
    checked when the network has fewer than ``num_coords`` parameters.
    """
    total = cfg.num_params()
    if total == 0:
        raise ValueError("network has no trainable parameters")
    if params is None:
        params = init_params(cfg)
    params.zero_grad()
    logits, cache = forward(params, cfg, inputs)
    _, dlogits = loss_fn(logits)
    backward(params, cfg, cache, dlogits)

    arrays = list(params.named_arrays())
    sizes = np.array([w.size for _, w, _ in arrays])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(num_coords, total), replace=False))

    worst_err, worst_name = 0.0, ""
    for flat in picks:
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, w, g = arrays[slot]
        idx = np.unravel_index(flat - offsets[slot], w.shape)
        old = w[idx]
        w[idx] = old + h
        up = loss_fn(forward(params, cfg, inputs)[0])[0]
        w[idx] = old - h
        down = loss_fn(forward(params, cfg, inputs)[0])[0]
        w[idx] = old
        numeric = (up - down) / (2 * h)
        err = float(relative_error(g[idx], numeric))
        if err > worst_err:
            worst_err, worst_name = err, f"{name}{list(map(int, idx))}"
    params.zero_grad()
    return GradCheckReport(worst_err, len(picks), worst_name, tolerance)

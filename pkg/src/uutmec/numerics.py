"""Dense-network numerics shared by every actor and critic.

Everything runs in float64. Networks are plain multilayer perceptrons with a
tanh (or relu) trunk; the last layer may be split into several output groups
("tails"), each initialized as its own linear layer.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, TrainingDivergence

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("linear", "softmax")


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def stream_key(seed: int, label: str) -> int:
    """128-bit Philox key for a (seed, label) pair: first 16 bytes of SHA-256."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


class RngStream:
    """Named, reproducible random stream.

    The generator is Philox4x64-10 (numpy's ``Philox``) keyed by
    ``stream_key(seed, label)`` with a zero counter. Uniform doubles are
    ``(x >> 11) * 2**-53`` of successive 64-bit outputs, so the sequence is
    reproducible from the key alone.
    """

    def __init__(self, seed: int, label: str):
        self.seed = int(seed)
        self.label = label
        self._gen = np.random.Generator(np.random.Philox(key=stream_key(self.seed, label)))

    def child(self, sublabel: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{sublabel}")

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def exponential(self, scale, size=None):
        return self._gen.exponential(scale, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, options, size=None):
        return self._gen.choice(options, size)

    def uint64(self) -> int:
        return int(self._gen.integers(0, 2**64, dtype=np.uint64))


# ---------------------------------------------------------------------------
# Softmax and sampling
# ---------------------------------------------------------------------------

def softmax(v) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input contains non-finite entries")
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    z = v - v.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_categorical(probs, rng: RngStream) -> tuple[int, float]:
    """Draw one index from ``probs``; returns (index, log-probability)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probs must be a non-empty vector")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid categorical distribution: {p}")
    return _pick(p, rng.random())


def _pick(p: np.ndarray, u: float) -> tuple[int, float]:
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    i = min(i, p.size - 1)
    while p[i] == 0.0:  # only reachable through rounding at the top of the cdf
        i -= 1
    return i, math.log(p[i])


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(int(s) < 1 for s in self.layer_sizes):
            raise ShapeError(f"bad layer sizes {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        n = len(self.layer_sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError("weights/biases count does not match layer_sizes")
        for l in range(n):
            if self.weights[l].shape != (self.layer_sizes[l + 1], self.layer_sizes[l]):
                raise ShapeError(f"weights[{l}] has shape {self.weights[l].shape}")
            if self.biases[l].shape != (self.layer_sizes[l + 1],):
                raise ShapeError(f"biases[{l}] has shape {self.biases[l].shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_sizes), [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.hidden_activation,
                         self.output_activation)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def zeros_like(self) -> "GradBuffer":
        return GradBuffer([np.zeros_like(w) for w in self.weights],
                          [np.zeros_like(b) for b in self.biases])


@dataclass
class GradBuffer:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zero(self) -> None:
        for a in self.arrays():
            a.fill(0.0)

    def add_(self, other: "GradBuffer") -> None:
        for a, b in zip(self.arrays(), other.arrays()):
            a += b

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(a * a)) for a in self.arrays()))


def init_mlp(layer_sizes: Sequence[int], rng: RngStream, out_groups: Sequence[int] | None = None,
             hidden_activation: str = "tanh", output_activation: str = "linear") -> MlpParams:
    """Glorot-uniform weights and zero biases.

    With ``out_groups`` the last layer is treated as independent linear tails
    of the given widths, each drawn with its own fan-out, in order.
    """
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        last = l == len(sizes) - 2
        if last and out_groups is not None:
            if sum(out_groups) != fan_out:
                raise ShapeError(f"output groups {list(out_groups)} do not sum to {fan_out}")
            blocks = []
            for g in out_groups:
                bound = math.sqrt(6.0 / (fan_in + g))
                blocks.append(rng.uniform(-bound, bound, size=(g, fan_in)))
            w = np.concatenate(blocks, axis=0)
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases, hidden_activation, output_activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass for a vector or a (batch, in) matrix.

    Returns the output and a cache holding the input and every layer's
    post-activation output (the last entry is the network output).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.layer_sizes[0] or x.ndim > 2:
        raise ShapeError(f"input shape {x.shape} does not match input size {params.layer_sizes[0]}")
    cache = [x]
    h = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if l < last:
            h = _act(z, params.hidden_activation)
        elif params.output_activation == "softmax":
            h = softmax(z)
        else:
            h = z
        cache.append(h)
    return h, cache


def mlp_backward(params: MlpParams, cache: list[np.ndarray], upstream_grad) -> GradBuffer:
    """Gradient of ``sum(output * upstream_grad)`` w.r.t. every parameter.

    Batched caches sum the per-row gradients.
    """
    g = np.asarray(upstream_grad, dtype=np.float64)
    out = cache[-1]
    if g.shape != out.shape:
        raise ShapeError(f"upstream grad shape {g.shape} != output shape {out.shape}")
    if len(cache) != params.n_layers + 1:
        raise ShapeError("cache does not belong to this network")
    if params.output_activation == "softmax":
        g = out * (g - np.sum(g * out, axis=-1, keepdims=True))
    grads = params.zeros_like()
    batched = g.ndim == 2
    for l in range(params.n_layers - 1, -1, -1):
        h_in = cache[l]
        if batched:
            grads.weights[l][...] = g.T @ h_in
            grads.biases[l][...] = g.sum(axis=0)
        else:
            grads.weights[l][...] = np.outer(g, h_in)
            grads.biases[l][...] = g
        if l > 0:
            g = g @ params.weights[l]
            if params.hidden_activation == "tanh":
                g = g * (1.0 - h_in * h_in)
            else:
                g = g * (h_in > 0.0)
    return grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, lr, beta1, beta2, epsilon)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step_count,
                         self.lr, self.beta1, self.beta2, self.epsilon)


def clip_grad_norm(grads: GradBuffer, max_norm: float) -> float:
    """Scale ``grads`` in place so the global L2 norm is at most ``max_norm``."""
    norm = grads.global_norm()
    if math.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        for a in grads.arrays():
            a *= scale
    return norm


def adam_step(params: MlpParams, grads: GradBuffer, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam update, in place. Returns (params, state) for chaining."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(state.m) != len(p_arrays):
        raise ShapeError("optimizer state, gradients and parameters are not congruent")
    for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"parameter array {i} shape mismatch")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in layer {i // 2}", layer=i // 2)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(loss_and_grad: Callable, params, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``params`` is an MlpParams or a sequence of them; ``loss_and_grad(params)``
    returns ``(loss, grads)`` with ``grads`` shaped like ``params``. Parameters
    are perturbed in place and restored.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    nets = [params] if isinstance(params, MlpParams) else list(params)
    loss0, grads = loss_and_grad(params)
    if not math.isfinite(loss0):
        raise ValueError("loss is not finite")
    grad_list = [grads] if isinstance(grads, GradBuffer) else list(grads)
    worst = 0.0
    for net, gbuf in zip(nets, grad_list):
        for arr, garr in zip(net.arrays(), gbuf.arrays()):
            flat, gflat = arr.reshape(-1), garr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp = loss_and_grad(params)[0]
                flat[j] = orig - h
                lm = loss_and_grad(params)[0]
                flat[j] = orig
                if not (math.isfinite(lp) and math.isfinite(lm)):
                    raise ValueError("loss is not finite")
                fd = (lp - lm) / (2.0 * h)
                ga = float(gflat[j])
                err = abs(ga - fd) / max(1e-8, abs(ga) + abs(fd))
                worst = max(worst, err)
    return worst

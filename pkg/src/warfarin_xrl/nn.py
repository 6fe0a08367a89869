"""Dense networks with exact reverse-mode gradients, Adam, and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

ACTIVATIONS = ("relu", "linear")
CHECKPOINT_VERSION = 1
HIDDEN_SIZES = (256, 256, 128, 64)


class DenseNet:
    """Chain of affine layers; ``weights[k]`` has shape ``(in, out)``."""

    def __init__(self, weights: list, biases: list, activations: list):
        if not (len(weights) == len(biases) == len(activations)) or not weights:
            raise DomainError("weights, biases and activations must have equal nonzero length")
        for k, (w, b, a) in enumerate(zip(weights, biases, activations)):
            if a not in ACTIVATIONS:
                raise DomainError(f"unknown activation {a!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DomainError(f"layer {k}: bias shape {b.shape} does not match weights {w.shape}")
            if k and weights[k - 1].shape[1] != w.shape[0]:
                raise DomainError(f"layer {k}: input dim {w.shape[0]} != previous output {weights[k - 1].shape[1]}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)

    @classmethod
    def build(cls, input_dim: int, output_dim: int, hidden=HIDDEN_SIZES,
              rng: np.random.Generator | None = None, output_scale: float = 0.01) -> "DenseNet":
        """He-normal relu layers, small-uniform linear output, zero biases."""
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [input_dim, *hidden, output_dim]
        weights, biases, acts = [], [], []
        for k in range(len(dims) - 1):
            fan_in, fan_out = dims[k], dims[k + 1]
            last = k == len(dims) - 2
            if last:
                w = rng.uniform(-output_scale, output_scale, size=(fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            weights.append(w)
            biases.append(np.zeros(fan_out))
            acts.append("linear" if last else "relu")
        return cls(weights, biases, acts)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    # -- passes ---------------------------------------------------------------

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.input_dim:
            raise DomainError(f"input has {h.shape[-1]} features, network expects {self.input_dim}")
        inputs, pre = [], []
        for w, b, a in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if a == "relu" else z
        out = h[0] if single else h
        if cache:
            return out, (inputs, pre, single)
        return out

    __call__ = forward

    def backward(self, cache, upstream) -> list:
        """Gradients ``[dW0, db0, dW1, ...]`` of ``sum(upstream * output)``."""
        inputs, pre, single = cache
        g = np.asarray(upstream, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != pre[-1].shape:
            raise DomainError(f"upstream gradient shape {g.shape} != output shape {pre[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            if self.activations[k] == "relu":
                g = g * (pre[k] > 0)
            grads[2 * k] = inputs[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k:
                g = g @ self.weights[k].T
        return grads


# ---- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, params: list, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: list, grads: list, lr: float) -> None:
        """In-place update of ``params``."""
        if len(params) != len(self.m):
            raise DomainError("parameter list does not match optimizer state")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DomainError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr:
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class LrSchedule:
    initial: float
    decay: float = 1.0
    step_size: int = 1000
    staircase: bool = True

    def __post_init__(self):
        if not 0 < self.decay <= 1:
            raise DomainError("decay must be in (0, 1]")
        if self.step_size < 1 or self.initial < 0:
            raise DomainError("step_size must be positive and initial lr non-negative")

    def lr_at(self, step: int) -> float:
        exponent = step // self.step_size if self.staircase else step / self.step_size
        return self.initial * self.decay ** exponent


# ---- checkpoints -------------------------------------------------------------

def save_networks(path: str | Path, nets: dict, metadata: dict | None = None) -> None:
    """One JSON header line then the float64 little-endian parameter blob."""
    header = {"version": CHECKPOINT_VERSION, "metadata": metadata or {}, "networks": []}
    blobs = []
    for name, net in nets.items():
        header["networks"].append({
            "name": name,
            "dims": [net.input_dim] + [w.shape[1] for w in net.weights],
            "activations": net.activations,
        })
        blobs += [p.astype("<f8").tobytes() for p in net.parameters()]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_networks(path: str | Path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {header.get('version')}")
    flat = np.frombuffer(blob, dtype="<f8")
    pos = 0
    nets = {}
    for spec in header["networks"]:
        dims = spec["dims"]
        weights, biases = [], []
        for k in range(len(dims) - 1):
            n = dims[k] * dims[k + 1]
            weights.append(flat[pos:pos + n].reshape(dims[k], dims[k + 1]).astype(np.float64))
            pos += n
            biases.append(flat[pos:pos + dims[k + 1]].astype(np.float64))
            pos += dims[k + 1]
        nets[spec["name"]] = DenseNet(weights, biases, spec["activations"])
    if pos != flat.size:
        raise DomainError("checkpoint blob size does not match header")
    return nets, header["metadata"]

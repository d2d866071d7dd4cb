"""Rectifier MLP with hand-written backprop, plus SGD/Adam updates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "advhighway.qnet"
CHECKPOINT_VERSION = 1


@dataclass
class QNetwork:
    """``weights[i]`` has shape (out, in); hidden layers use ReLU, the head is linear."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator) -> "QNetwork":
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = np.sqrt(6.0 / fan_in)  # He-uniform
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        # small head keeps early Q estimates near zero
        weights[-1] *= 0.1
        return cls(weights, biases)

    @classmethod
    def zeros(cls, layer_dims) -> "QNetwork":
        return cls([np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
                   [np.zeros(o) for o in layer_dims[1:]])

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: "QNetwork") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


def forward(net: QNetwork, s: np.ndarray) -> np.ndarray:
    """Q-values for one observation (shape ``(d,)``) or a batch (``(n, d)``)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != net.weights[0].shape[1]:
        raise ValueError(f"observation dim {s.shape[-1]} != network input {net.weights[0].shape[1]}")
    h = s
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(net: QNetwork, s: np.ndarray):
    acts = [s]
    pre = []
    h = s
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts, pre


def batch_grad(net: QNetwork, s: np.ndarray, a: np.ndarray, y: np.ndarray):
    """Loss ``mean(0.5 * (Q(s, a) - y)**2)`` and its gradient, ordered like ``net.params()``."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    a = np.atleast_1d(np.asarray(a, dtype=np.int64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    n = s.shape[0]
    acts, pre = _forward_cache(net, s)
    q = acts[-1]
    rows = np.arange(n)
    resid = q[rows, a] - y
    loss = 0.5 * float(np.mean(resid * resid))
    delta = np.zeros_like(q)
    delta[rows, a] = resid / n
    grads_w, grads_b = [None] * len(net.weights), [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * (pre[i - 1] > 0.0)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return loss, grads


def backward(net: QNetwork, s: np.ndarray, a: int, td_target: float) -> list[np.ndarray]:
    """Gradient of ``0.5 * (Q(s, a) - td_target)**2`` for a single observation."""
    if np.asarray(s).ndim != 1:
        raise ValueError("backward takes a single observation")
    _, grads = batch_grad(net, np.asarray(s)[None, :], np.array([a]), np.array([td_target]))
    return grads


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= step * m / (np.sqrt(v) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


# --------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    net: QNetwork
    obs_offset: np.ndarray
    obs_scale: np.ndarray
    train_config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


class CheckpointError(ValueError):
    pass


def checkpoint_to_json(ck: Checkpoint) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": ck.net.layer_dims,
        "weights": [w.tolist() for w in ck.net.weights],
        "biases": [b.tolist() for b in ck.net.biases],
        "obs_offset": np.asarray(ck.obs_offset, dtype=np.float64).tolist(),
        "obs_scale": np.asarray(ck.obs_scale, dtype=np.float64).tolist(),
        "train_config": ck.train_config,
        "meta": ck.meta,
    }
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def checkpoint_from_json(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"not a q-network checkpoint (format={doc.get('format')!r})")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        weights = [np.array(w, dtype=np.float64) for w in doc["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
        net = QNetwork(weights, biases)
        if net.layer_dims != doc["layer_dims"]:
            raise CheckpointError("layer_dims do not match the stored parameters")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise CheckpointError("malformed layer shapes")
        for w_prev, w in zip(weights[:-1], weights[1:]):
            if w.shape[1] != w_prev.shape[0]:
                raise CheckpointError("consecutive layers do not chain")
        return Checkpoint(net, np.array(doc["obs_offset"], dtype=np.float64),
                          np.array(doc["obs_scale"], dtype=np.float64),
                          doc.get("train_config", {}), doc.get("meta", {}))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def save_checkpoint(ck: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint_to_json(ck))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return checkpoint_from_json(path.read_text())

"""Minimal double-precision neural-network kit.

Dense layers, embedding tables, temporal max-pooling, softmax,
cross-entropy, SGD with optional L2, central-difference gradient checking,
and an exact-round-trip checkpoint format.  Parameters are plain numpy
float64 arrays and every backward pass is written out per layer (no autodiff
graph), which keeps the arithmetic small enough to audit by hand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ConfigError, ParseError, ShapeError, VocabError

# Probability floor applied before the log in cross_entropy.
PROB_FLOOR = 1e-12

ACTIVATIONS = ("relu", "tanh", "identity")

CHECKPOINT_MAGIC = "ENDGATE-CKPT v1"


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform init with bound sqrt(6 / (fan_in + fan_out)).

    For a 2-D (out, in) weight, fan_in is the second axis.  For an
    embedding-style (rows, dim) table the same rule is applied.
    """
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_out = fan_in = shape[0]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class TrainConfig:
    """Hyperparameters for plain SGD training."""

    learning_rate: float = 0.05
    epochs: int = 2
    batch_size: int = 64
    seed: int = 0
    l2: float = 0.0

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")


def _act_forward(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _act_backward(dy: np.ndarray, z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return dy * (z > 0.0)
    if activation == "tanh":
        t = np.tanh(z)
        return dy * (1.0 - t * t)
    return dy


@dataclass
class DenseLayer:
    """Affine layer y = act(W x + b) with explicit gradient buffers.

    weights has shape (out, in); inputs may be a single vector (in,) or a
    batch (B, in).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    grad_weights: np.ndarray = field(init=False, repr=False)
    grad_bias: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("DenseLayer expects 2-D weights and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("DenseLayer parameters must be finite")
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
             activation: str = "identity") -> "DenseLayer":
        return cls(xavier_uniform(rng, (out_dim, in_dim)), np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"input dim {x.shape[-1]} does not match layer input {self.in_dim}"
            )
        z = x @ self.weights.T + self.bias
        return _act_forward(z, self.activation), (x, z)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        """Accumulate parameter gradients and return dL/dx."""
        x, z = cache
        dz = _act_backward(dy, z, self.activation)
        if x.ndim == 1:
            self.grad_weights += np.outer(dz, x)
            self.grad_bias += dz
        else:
            self.grad_weights += dz.T @ x
            self.grad_bias += dz.sum(axis=0)
        return dz @ self.weights

    def zero_grads(self) -> None:
        self.grad_weights[...] = 0.0
        self.grad_bias[...] = 0.0


@dataclass
class EmbeddingTable:
    """Token-id to vector lookup with a dense gradient buffer."""

    table: np.ndarray
    grad_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2:
            raise ShapeError("embedding table must be 2-D")
        self.grad_table = np.zeros_like(self.table)

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, dim: int) -> "EmbeddingTable":
        return cls(xavier_uniform(rng, (vocab_size, dim)))

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def lookup(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabError(
                f"token id out of range [0, {self.vocab_size}): {ids.tolist()}"
            )
        return self.table[ids]

    def accumulate(self, ids, grads: np.ndarray) -> None:
        np.add.at(self.grad_table, np.asarray(ids, dtype=np.int64), grads)

    def zero_grads(self) -> None:
        self.grad_table[...] = 0.0


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply one dense layer: act(W x + b)."""
    return layer.forward(x)


def maxpool_time(frames) -> np.ndarray:
    """Elementwise max over a non-empty sequence of equal-length vectors."""
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        frames = list(frames)
        if len(frames) == 0:
            raise ShapeError("maxpool_time: empty frame sequence")
        lengths = {np.asarray(f).shape for f in frames}
        if len(lengths) != 1:
            raise ShapeError(f"maxpool_time: ragged frame dimensions {lengths}")
        arr = np.asarray(frames, dtype=np.float64)
    if arr.size == 0:
        raise ShapeError("maxpool_time: empty frame sequence")
    if arr.ndim != 2:
        raise ShapeError(f"maxpool_time expects (frames, dim), got shape {arr.shape}")
    return arr.max(axis=0)


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis (max subtraction)."""
    arr = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("softmax: non-finite logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probabilities, label: int) -> float:
    """-ln p[label], with p floored at PROB_FLOOR before the log."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeError("cross_entropy expects a 1-D distribution")
    if not 0 <= label < p.shape[0]:
        raise IndexError(f"label {label} out of range [0, {p.shape[0]})")
    return -math.log(max(float(p[label]), PROB_FLOOR))


def sgd_step(params: list, grads: list, config: TrainConfig) -> list:
    """In-place p <- p - lr * (g + l2 * p) over matching parameter/grad lists."""
    if len(params) != len(grads):
        raise ShapeError(
            f"parameter/gradient count mismatch: {len(params)} vs {len(grads)}"
        )
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p -= config.learning_rate * (g + config.l2 * p)
    return params


def grad_check(model, inputs, label, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The model must expose parameters() -> list of arrays (views that can be
    perturbed in place) and loss_and_grads(inputs, label) -> (loss, grads)
    with grads aligned to parameters().  The relative error per scalar is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|); a model with no
    parameters scores 0.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ConfigError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    loss, grads = model.loss_and_grads(inputs, label)
    if not np.isfinite(loss):
        raise ValueError("grad_check: non-finite loss")
    params = model.parameters()
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            saved = flat_p[i]
            flat_p[i] = saved + epsilon
            lo_plus = model.loss_and_grads(inputs, label)[0]
            flat_p[i] = saved - epsilon
            lo_minus = model.loss_and_grads(inputs, label)[0]
            flat_p[i] = saved
            numeric = (lo_plus - lo_minus) / (2.0 * epsilon)
            analytic = flat_g[i]
            denom = max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# -- checkpoint format -------------------------------------------------------
#
# Text header followed by a raw little-endian float64 payload:
#
#   ENDGATE-CKPT v1
#   kind <model-kind>
#   meta <one-line JSON>
#   params <count>
#   <name> <ndim> <d0> <d1> ...
#   ...
#   END
#   <payload: all parameters concatenated row-major>


def save_checkpoint(path, kind: str, meta: dict, named_params: list) -> None:
    lines = [CHECKPOINT_MAGIC, f"kind {kind}",
             "meta " + json.dumps(meta, sort_keys=True, separators=(",", ":")),
             f"params {len(named_params)}"]
    for name, arr in named_params:
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"{name} {arr.ndim} {dims}".rstrip())
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in named_params
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (kind, meta, ordered dict name -> array)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = b"\nEND\n"
    idx = blob.find(sep)
    if idx < 0:
        raise ParseError(f"{path}: missing END header terminator")
    header_lines = blob[:idx].decode("utf-8").split("\n")
    payload = blob[idx + len(sep):]
    if not header_lines or header_lines[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic line")
    try:
        kind = header_lines[1].split(" ", 1)[1]
        meta = json.loads(header_lines[2].split(" ", 1)[1])
        n_params = int(header_lines[3].split(" ", 1)[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: malformed header: {exc}") from exc
    specs = []
    for line in header_lines[4:4 + n_params]:
        parts = line.split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(d) for d in parts[2:2 + ndim])
        if len(shape) != ndim:
            raise ParseError(f"{path}: bad shape line {line!r}")
        specs.append((name, shape))
    params = {}
    offset = 0
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ParseError(f"{path}: truncated payload at parameter {name!r}")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise ParseError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return kind, meta, params

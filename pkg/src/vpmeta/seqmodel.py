"""Sequence regressors with exact gradients.

Two cells are supported:

``lstm``
    One LSTM layer (gate order input, forget, cell, output), zero initial
    state, linear readout of the final hidden state.  Flat parameter layout:
    gate matrix ``(I + H + 1, 4H)`` followed by readout ``(H + 1, O)``, where
    the trailing row of each block is the bias.
``linear``
    Direct linear map from the flattened window ``S * I`` to the output;
    layout ``(S * I + 1, O)``.

Parameters are float64 throughout.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .errors import ShapeMismatch
from .iofmt import atomic_write_bytes, atomic_write_text


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    hidden_dim: int
    output_dim: int
    sequence_length: int
    cell: str = "lstm"

    def __post_init__(self):
        if self.cell not in ("lstm", "linear"):
            raise ValueError(f"unknown cell {self.cell!r}")
        dims = (self.input_dim, self.hidden_dim, self.output_dim, self.sequence_length)
        if min(dims) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {dims}")

    @property
    def n_params(self):
        I, H, O, S = self.input_dim, self.hidden_dim, self.output_dim, self.sequence_length
        if self.cell == "lstm":
            return 4 * (I + H + 1) * H + (H + 1) * O
        return (S * I + 1) * O

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "output_dim": self.output_dim,
            "sequence_length": self.sequence_length,
            "cell": self.cell,
        }


@dataclass(frozen=True, eq=False)
class SequenceModelParams:
    arch: ArchSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size != self.arch.n_params:
            raise ShapeMismatch(
                f"expected {self.arch.n_params} parameters for {self.arch}, got shape {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values):
        return SequenceModelParams(self.arch, values)

    def blocks(self):
        """Views of the parameter matrices (see module docstring for layout)."""
        a = self.arch
        if a.cell == "lstm":
            n_w = (a.input_dim + a.hidden_dim + 1) * 4 * a.hidden_dim
            W = self.values[:n_w].reshape(a.input_dim + a.hidden_dim + 1, 4 * a.hidden_dim)
            V = self.values[n_w:].reshape(a.hidden_dim + 1, a.output_dim)
            return W, V
        return (self.values.reshape(a.sequence_length * a.input_dim + 1, a.output_dim),)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.values)))

    def __eq__(self, other):
        if not isinstance(other, SequenceModelParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.values, other.values)


class TrainingExample(NamedTuple):
    inputs: np.ndarray  # (sequence_length, input_dim)
    label: np.ndarray  # (output_dim,)


class Batch(NamedTuple):
    inputs: np.ndarray  # (B, sequence_length, input_dim)
    labels: np.ndarray  # (B, output_dim)

    @classmethod
    def of(cls, examples):
        examples = list(examples)
        if not examples:
            raise ShapeMismatch("empty batch")
        return cls(
            np.stack([np.asarray(e.inputs, dtype=float) for e in examples]),
            np.stack([np.atleast_1d(np.asarray(e.label, dtype=float)) for e in examples]),
        )

    def __len__(self):
        return self.inputs.shape[0]


def init_params(arch, seed):
    """Uniform(-s, s) weights with s = 1/sqrt(hidden_dim); forget-gate bias 1.

    For the linear cell the bound uses the fan-in ``S * I`` instead.
    """
    rng = np.random.default_rng(seed)
    if arch.cell == "lstm":
        I, H, O = arch.input_dim, arch.hidden_dim, arch.output_dim
        s = 1.0 / math.sqrt(H)
        W = rng.uniform(-s, s, size=(I + H + 1, 4 * H))
        W[-1, :] = 0.0
        W[-1, H:2 * H] = 1.0
        V = rng.uniform(-s, s, size=(H + 1, O))
        V[-1, :] = 0.0
        values = np.concatenate([W.ravel(), V.ravel()])
    else:
        n_in = arch.sequence_length * arch.input_dim
        s = 1.0 / math.sqrt(n_in)
        W = rng.uniform(-s, s, size=(n_in + 1, arch.output_dim))
        W[-1, :] = 0.0
        values = W.ravel()
    return SequenceModelParams(arch, values)


def _as_batch_inputs(arch, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (arch.sequence_length, arch.input_dim):
        raise ShapeMismatch(
            f"inputs of shape {np.shape(inputs)} do not match "
            f"(sequence_length={arch.sequence_length}, input_dim={arch.input_dim})"
        )
    return np.ascontiguousarray(x), single


def forward(params, inputs):
    """Model output for one window ``(S, I)`` or a batch ``(B, S, I)``."""
    arch = params.arch
    x, single = _as_batch_inputs(arch, inputs)
    if arch.cell == "lstm":
        W, V = params.blocks()
        y = kernels.lstm_forward(W, V, x)
    else:
        (W,) = params.blocks()
        y = x.reshape(x.shape[0], -1) @ W[:-1] + W[-1]
    return y[0] if single else y


def loss_and_grad(params, batch):
    """Mean squared error over the batch and its gradient w.r.t. ``params.values``.

    ``batch`` is a :class:`Batch` or an iterable of :class:`TrainingExample`.
    """
    if not isinstance(batch, Batch):
        batch = Batch.of(batch)
    arch = params.arch
    x, _ = _as_batch_inputs(arch, batch.inputs)
    y = np.ascontiguousarray(np.asarray(batch.labels, dtype=np.float64).reshape(len(x), -1))
    if y.shape[1] != arch.output_dim:
        raise ShapeMismatch(f"labels have {y.shape[1]} columns, expected {arch.output_dim}")
    if arch.cell == "lstm":
        W, V = params.blocks()
        loss, dW, dV = kernels.lstm_loss_grad(W, V, x, y)
        return loss, np.concatenate([np.asarray(dW).ravel(), np.asarray(dV).ravel()])
    (W,) = params.blocks()
    xf = x.reshape(len(x), -1)
    r = xf @ W[:-1] + W[-1] - y
    dy = (2.0 / r.size) * r
    grad = np.vstack([xf.T @ dy, dy.sum(axis=0, keepdims=True)])
    return float(np.mean(r * r)), grad.ravel()


def _values(p):
    return p.values if isinstance(p, SequenceModelParams) else np.asarray(p, dtype=np.float64)


def _rebuild(template, values):
    if isinstance(template, SequenceModelParams):
        return template.with_values(values)
    return values


def sgd_step(params, grad, lr):
    """``values - lr * grad``.  Accepts model params or a bare vector."""
    v = _values(params)
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != v.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {v.shape}")
    return _rebuild(params, v - lr * g)


GradFn = Callable[[object, object], tuple]


def sgd_k_steps(params, task_sampler, k, lr, grad_fn: GradFn = loss_and_grad):
    """Apply ``k`` SGD steps, drawing a fresh batch from ``task_sampler()`` each step."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for _ in range(k):
        _, g = grad_fn(params, task_sampler())
        params = sgd_step(params, g, lr)
    return params


def save_params(path, params, seed=None, extra=None):
    """Write ``<path>.bin`` (little-endian float64) and ``<path>.json``."""
    path = Path(path)
    atomic_write_bytes(path.with_suffix(".bin"), params.values.astype("<f8").tobytes())
    meta = {
        "arch": params.arch.to_dict(),
        "seed": seed,
        "n_params": params.arch.n_params,
        "dtype": "<f8",
    }
    if extra:
        meta.update(extra)
    atomic_write_text(path.with_suffix(".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_params(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    arch = ArchSpec(**meta["arch"])
    values = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8").astype(np.float64)
    return SequenceModelParams(arch, values)

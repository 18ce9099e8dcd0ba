"""Reptile meta-training and per-user online adaptation."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import EmptyPool, TraceTooShort
from .seqmodel import (
    Batch,
    SequenceModelParams,
    TrainingExample,
    init_params,
    loss_and_grad,
    sgd_step,
)

log = logging.getLogger(__name__)

VIEWING_DIRECTION = "viewing-direction"
PREFETCH_ANGLE = "prefetch-angle"


@dataclass(frozen=True)
class MetaConfig:
    local_lr: float = 0.1
    meta_lr: float = 0.1
    adapt_lr: float = 0.001
    local_steps: int = 1
    task_batch: int = 10
    meta_iterations: int = 200
    batch_size: int = 16

    def __post_init__(self):
        if min(self.local_lr, self.meta_lr, self.adapt_lr) < 0:
            raise ValueError("learning rates must be non-negative")
        if self.local_steps < 1 or self.task_batch < 1 or self.batch_size < 1:
            raise ValueError("local_steps, task_batch and batch_size must be >= 1")
        if self.meta_iterations < 0:
            raise ValueError("meta_iterations must be >= 0")


@dataclass(eq=False)
class Task:
    """One (user, video) series cut into ``sequence_length`` windows.

    ``series`` is ``(T, d)``: directions for viewing-direction tasks, or the
    angular-error sequence as a column for prefetch-angle tasks.  Example
    ``i`` uses ``series[i:i+S]`` as input and ``series[i+S]`` as label.
    """

    kind: str
    key: tuple
    series: np.ndarray
    sequence_length: int

    def __post_init__(self):
        self.series = np.ascontiguousarray(np.asarray(self.series, dtype=float).reshape(len(self.series), -1))
        if len(self.series) <= self.sequence_length:
            raise TraceTooShort(
                f"{self.kind} series for {self.key} has {len(self.series)} samples, "
                f"needs more than {self.sequence_length}"
            )

    @property
    def n_examples(self):
        return len(self.series) - self.sequence_length

    def example(self, i):
        S = self.sequence_length
        return TrainingExample(self.series[i:i + S], self.series[i + S])

    def batch(self, indices):
        idx = np.asarray(indices)
        S = self.sequence_length
        inputs = self.series[idx[:, None] + np.arange(S)]
        return Batch(inputs, self.series[idx + S])

    def sample_batch(self, rng, size):
        return self.batch(rng.integers(0, self.n_examples, size=size))

    def all_examples(self):
        return self.batch(np.arange(self.n_examples))


@dataclass
class TaskPool:
    tasks: list
    exclusion: tuple | None = None

    def __len__(self):
        return len(self.tasks)

    def keys(self):
        return [t.key for t in self.tasks]


def _excluded(trace, exclusion):
    return exclusion is not None and (str(exclusion[0]), str(exclusion[1])) == trace.key


def build_vd_tasks(traces, exclusion=None, sequence_length=100):
    """One viewing-direction task per trace, skipping the excluded (user, video)."""
    tasks = [
        Task(VIEWING_DIRECTION, tr.key, tr.directions, sequence_length)
        for tr in traces
        if not _excluded(tr, exclusion)
    ]
    return TaskPool(tasks, exclusion)


def normalize_predictions(raw, fallback=None):
    """Normalise raw direction outputs row by row.

    A row with (near) zero norm takes the previous normalised row, or
    ``fallback`` for the first row (default: forward axis).
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    out = np.empty_like(raw)
    prev = geo.DEFAULT_FORWARD if fallback is None else np.asarray(fallback, dtype=float)
    norms = np.linalg.norm(raw, axis=1)
    for k in range(len(raw)):
        if norms[k] > geo.ZERO_TOL and np.isfinite(norms[k]):
            prev = raw[k] / norms[k]
        out[k] = prev
    return out


def replay_predictions(vd_model, directions, chunk=512):
    """Frozen-model predictions ``v(t)`` for ``t = S .. T-1`` from windows ending at ``t-1``."""
    from .seqmodel import forward

    S = vd_model.arch.sequence_length
    directions = np.asarray(directions, dtype=float)
    n = len(directions) - S
    if n <= 0:
        raise TraceTooShort(f"trace of length {len(directions)} needs more than {S} ticks")
    raw = np.empty((n, vd_model.arch.output_dim))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        idx = np.arange(lo, hi)
        raw[lo:hi] = forward(vd_model, directions[idx[:, None] + np.arange(S)])
    return normalize_predictions(raw)


def replay_gammas(vd_model, trace):
    """Angular errors of the frozen model over a trace, ``T - S`` values."""
    preds = replay_predictions(vd_model, trace.directions)
    S = vd_model.arch.sequence_length
    return geo.angular_distance(trace.directions[S:], preds)


def build_pa_tasks(vd_model, traces, exclusion=None, sequence_length=100):
    """Prefetch-angle tasks: windows over the angular error of the frozen VD model."""
    tasks = []
    for tr in traces:
        if _excluded(tr, exclusion):
            continue
        gam = replay_gammas(vd_model, tr)
        tasks.append(Task(PREFETCH_ANGLE, tr.key, gam[:, None], sequence_length))
    return TaskPool(tasks, exclusion)


def meta_gradient(params, tasks, cfg, rng, grad_fn=loss_and_grad, losses=None):
    """Mean over tasks of the summed inner-loop gradients.

    Each inner run takes ``cfg.local_steps`` SGD steps at ``cfg.local_lr``
    from ``params``, so ``theta - theta'_i`` is ``local_lr`` times the sum of
    that run's gradients.  Returning the gradient sums lets the caller apply
    the whole Reptile move as one step at rate ``meta_lr * local_lr``.
    """
    theta = params.values if isinstance(params, SequenceModelParams) else np.asarray(params, dtype=float)
    total = np.zeros_like(theta)
    for task in tasks:
        p = params
        for _ in range(cfg.local_steps):
            loss, g = grad_fn(p, task.sample_batch(rng, cfg.batch_size))
            if losses is not None:
                losses.append(loss)
            total += g
            p = sgd_step(p, g, cfg.local_lr)
    return total / len(tasks)


def meta_delta(params, tasks, cfg, rng, grad_fn=loss_and_grad, losses=None):
    """Reptile direction ``mean_i(theta - theta'_i)`` over the given tasks."""
    return cfg.local_lr * meta_gradient(params, tasks, cfg, rng, grad_fn, losses)


def reptile_train(pool, arch, cfg, seed, init=None, grad_fn=loss_and_grad, loss_log=None):
    """Meta-train with Reptile.

    Each iteration draws ``cfg.task_batch`` tasks uniformly with replacement,
    adapts a copy of the shared parameters to each, and moves the shared
    parameters by ``-meta_lr * mean(theta - theta'_i)``.  ``loss_log``, if a
    list, receives the mean inner loss of every iteration.
    """
    if len(pool) == 0:
        raise EmptyPool("task pool is empty")
    params = init if init is not None else init_params(arch, seed)
    rng = np.random.default_rng([seed, 1])
    rate = cfg.meta_lr * cfg.local_lr
    for it in range(cfg.meta_iterations):
        chosen = rng.integers(0, len(pool), size=cfg.task_batch)
        losses = []
        g = meta_gradient(params, [pool.tasks[i] for i in chosen], cfg, rng, grad_fn, losses)
        params = sgd_step(params, g, rate)
        if loss_log is not None:
            loss_log.append(float(np.mean(losses)))
        if it % 50 == 0:
            log.debug("reptile iteration %d mean inner loss %.6g", it, np.mean(losses))
    return params


def adapt_online(model, window, mu, grad_fn=loss_and_grad):
    """One SGD step at rate ``mu`` on the single freshest example."""
    if mu == 0.0:
        return model
    if isinstance(window, TrainingExample):
        window = Batch.of([window])
    _, g = grad_fn(model, window)
    return sgd_step(model, g, mu)


@dataclass
class MetaPair:
    vd: SequenceModelParams
    pa: SequenceModelParams
    vd_losses: list = field(default_factory=list)
    pa_losses: list = field(default_factory=list)


def train_meta_pair(traces, vd_arch, pa_arch, cfg, seed, exclusion=None):
    """Train the direction model, then the prefetch-angle model on its replayed errors.

    The prefetch-angle model is seeded with ``seed + 1``.
    """
    vd_losses, pa_losses = [], []
    vd_pool = build_vd_tasks(traces, exclusion, vd_arch.sequence_length)
    vd = reptile_train(vd_pool, vd_arch, cfg, seed, loss_log=vd_losses)
    pa_pool = build_pa_tasks(vd, traces, exclusion, pa_arch.sequence_length)
    pa = reptile_train(pa_pool, pa_arch, cfg, seed + 1, loss_log=pa_losses)
    return MetaPair(vd, pa, vd_losses, pa_losses)

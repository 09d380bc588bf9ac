"""Online training loop: prototype losses, subtype compactness, dynamic queue.

One iteration samples a source and a target batch, encodes them, pushes the
features into the queue, computes the losses over the queue window (only the
current batch is differentiated), takes one Adam step, re-encodes the batch
and blends the fresh features into the queue.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .clustering import ClusterConfig
from .evaluation import evaluate
from .exceptions import NonFiniteLossError, ValidationError
from .memory import BatchSlot, FeatureQueue, rebuild_centroids, window_structure
from .numeric import (
    OptimizerState,
    backward,
    clone_rng,
    forward,
    init_encoder,
    make_rng,
    opt_step,
)
from .prototypes import class_ce_loss, class_match_loss_features
from .clustering import subtype_compactness_loss

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "iteration",
    "loss_ce",
    "loss_class",
    "loss_sub",
    "loss_total",
    "target_acc",
    "source_acc",
)


@dataclass
class TrainConfig:
    """Every knob of a training run.

    Defaults follow the reference setting (alpha=1, beta=1, momentum 0.5,
    five queued batches of 64) with a desk-scale learning rate.
    """

    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 0.5
    window: int = 5
    batch_size: int = 64
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    learning_rate: float = 1e-3
    total_iterations: int = 2000
    seed: int = 0
    eval_every: int = 100
    hidden: tuple = (64, 32)
    head: tuple = None
    dropout: float = 0.5
    final_activation: str = "identity"
    eval_variant: str = "st"
    source_warmup: int = 0

    def __post_init__(self):
        if isinstance(self.cluster, dict):
            self.cluster = ClusterConfig.from_dict(self.cluster)
        self.hidden = tuple(self.hidden)
        self.head = None if self.head is None else tuple(self.head)
        self.validate()

    def validate(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError("lam must lie in [0, 1]")
        if self.window < 1 or self.batch_size < 1:
            raise ValidationError("window and batch_size must be at least 1")
        if self.total_iterations < 0 or self.eval_every < 1:
            raise ValidationError("total_iterations must be >= 0 and eval_every >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.source_warmup < 0:
            raise ValidationError("source_warmup must be non-negative")
        if self.eval_variant not in ("st", "s", "t"):
            raise ValidationError("eval_variant must be one of 'st', 's', 't'")
        self.cluster.validate()

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "lam": self.lam,
            "window": self.window,
            "batch_size": self.batch_size,
            "cluster": self.cluster.to_dict(),
            "learning_rate": self.learning_rate,
            "total_iterations": self.total_iterations,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "hidden": list(self.hidden),
            "head": None if self.head is None else list(self.head),
            "dropout": self.dropout,
            "final_activation": self.final_activation,
            "eval_variant": self.eval_variant,
            "source_warmup": self.source_warmup,
        }

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class LossReport(NamedTuple):
    ce: float
    cls: float
    sub: float
    total: float


def total_loss(ce, cls, sub, config):
    """Cross-entropy plus weighted class matching and subtype compactness."""
    return ce + config.alpha * cls + config.beta * sub


def compute_losses(window, structure, config, num_classes, features=None):
    """All loss terms over a window, with the gradient w.r.t. every window row.

    ``features`` overrides ``window.features`` (used by gradient checks).
    """
    feats = window.features if features is None else features
    grad = np.zeros_like(feats)
    src = window.source_rows
    tgt = window.target_rows
    live_local = window.live_source_rows - src[0] if len(src) else src

    ce, g_ce = class_ce_loss(feats[src], window.source_labels, num_classes, query=live_local)
    grad[src] += g_ce

    cls = 0.0
    if config.alpha > 0 and len(tgt):
        cls, g_s, g_t = class_match_loss_features(
            feats[src], window.source_labels, feats[tgt], structure.pseudo_labels, num_classes
        )
        grad[src] += config.alpha * g_s
        grad[tgt] += config.alpha * g_t

    sub = 0.0
    if config.beta > 0 and structure.clusters:
        sub, g_sub = subtype_compactness_loss(structure.clusters, feats, config.cluster.centroid)
        grad += config.beta * g_sub

    return LossReport(ce, cls, sub, total_loss(ce, cls, sub, config)), grad


@dataclass
class TrainState:
    params: object
    opt: object
    queue: FeatureQueue
    memory: object
    rng: np.random.Generator
    num_classes: int
    iteration: int = 0
    history: list = field(default_factory=list)


def _head_stats(params, X):
    """Head pre-activation sufficient statistics for rows ``X``."""
    if params.head_dims is None or len(X) == 0:
        return None
    h = X
    for w, b in zip(params.weights[: params.n_trunk], params.biases[: params.n_trunk]):
        h = np.maximum(h @ w + b, 0.0)
    z = h @ params.weights[params.n_trunk] + params.biases[params.n_trunk]
    return len(z), z.sum(axis=0), np.square(z).sum(axis=0)


def init_state(config, input_dim, num_classes, source_view=None):
    """Fresh encoder, optimizer and empty queue."""
    rng = make_rng(config.seed)
    layer_dims = (input_dim,) + tuple(config.hidden)
    params = init_encoder(
        layer_dims,
        rng,
        head_dims=config.head,
        final_activation=config.final_activation,
        dropout=config.dropout,
    )
    if params.head_dims is not None and source_view is not None and len(source_view.X):
        n, s, sq = _head_stats(params, source_view.X)
        mean = s / n
        params.norm_mean = mean
        params.norm_scale = np.sqrt(np.maximum(sq / n - mean * mean, 0.0) + 1e-5)
    opt = OptimizerState.for_params(params, learning_rate=config.learning_rate)
    queue = FeatureQueue(config.window, batch_size=2 * config.batch_size)
    return TrainState(params, opt, queue, None, rng, num_classes)


def train_iteration(state, source_view, target_view, config):
    """Run one iteration in place and return its :class:`LossReport`."""
    if len(source_view.ids) == 0 or len(target_view.ids) == 0:
        raise ValidationError("source and target pools must be non-empty")
    rng = state.rng
    params = state.params
    B = config.batch_size
    t = state.iteration + 1

    sidx = rng.integers(len(source_view.ids), size=B)
    tidx = rng.integers(len(target_view.ids), size=B)
    X = np.vstack([source_view.X[sidx], target_view.X[tidx]])
    ys = np.asarray(source_view.y)[sidx]

    mask_rng = clone_rng(rng)
    feats, cache = forward(params, X, train_mode=True, rng=rng)
    slot = BatchSlot(
        stamp=t,
        source_ids=np.asarray(source_view.ids)[sidx],
        source_features=feats[:B].copy(),
        source_labels=ys,
        target_ids=np.asarray(target_view.ids)[tidx],
        target_features=feats[B:].copy(),
    )
    state.queue.enqueue(slot)
    window = state.queue.window()

    active = config
    if t <= config.source_warmup:
        active = replace(config, alpha=0.0, beta=0.0)
    use_sub = active.beta > 0 and len(state.queue) >= state.queue.capacity
    cluster_cfg = config.cluster if use_sub else None
    structure = window_structure(window, state.num_classes, cluster_cfg, rng)
    report, grad_w = compute_losses(window, structure, active, state.num_classes)
    if not all(np.isfinite(v) for v in report):
        raise NonFiniteLossError(f"non-finite loss at iteration {t}: {report}", report)

    grad_f = np.vstack([grad_w[window.live_source_rows], grad_w[window.live_target_rows]])
    grads, _ = backward(params, cache, grad_f)
    opt_step(state.opt, params, grads)

    # re-encode with the updated weights and the same dropout masks
    fresh, _ = forward(params, X, train_mode=True, rng=mask_rng)
    state.queue.refresh_latest(fresh[:B], fresh[B:], config.lam)
    slot.head_stats = _head_stats(params, source_view.X[sidx])
    stats = state.queue.head_statistics()
    if stats is not None:
        params.norm_mean, params.norm_scale = stats
        params.touch()

    state.memory = rebuild_centroids(state.queue, state.num_classes, None, None, state.memory)
    state.iteration = t
    state.history.append(report)
    return report


def run(config, source, target, callback=None):
    """Train from scratch on ``source``/``target`` :class:`DomainData`.

    Only the training views (no target labels, no subtypes) reach the
    optimization loop; ground truth is used for the metric rows alone.

    Returns ``(state, metrics)`` where ``metrics`` is a list of dicts with
    keys :data:`METRIC_COLUMNS`.
    """
    config.validate()
    num_classes = int(max(source.y.max(), target.y.max() if len(target) else 0) + 1)
    sv, tv = source.source_view(), target.target_view()
    state = init_state(config, source.X.shape[1], num_classes, sv)
    metrics = []
    for _ in range(config.total_iterations):
        report = train_iteration(state, sv, tv, config)
        if state.iteration % config.eval_every == 0:
            ev = evaluate(state.params, source, target, num_classes)
            row = {
                "iteration": state.iteration,
                "loss_ce": report.ce,
                "loss_class": report.cls,
                "loss_sub": report.sub,
                "loss_total": report.total,
                "target_acc": ev.accuracy[config.eval_variant],
                "source_acc": ev.source_accuracy,
            }
            metrics.append(row)
            logger.debug("iter %d %s", state.iteration, row)
            if callback is not None:
                callback(state, row)
    return state, metrics

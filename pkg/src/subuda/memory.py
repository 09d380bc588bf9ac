"""FIFO feature queue over the last few batches and the centroid memory."""

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .clustering import discover_subtypes
from .exceptions import StateError, UsageError, ValidationError
from .prototypes import class_centroids, pseudo_label


class FeatureRecord(NamedTuple):
    sample_id: int
    domain: str
    feature: np.ndarray
    source_class_label: int  # -1 for target records
    pseudo_class: int  # -1 for source records
    iteration_stamp: int


@dataclass
class BatchSlot:
    """Features of one training iteration, both domains."""

    stamp: int
    source_ids: np.ndarray
    source_features: np.ndarray
    source_labels: np.ndarray
    target_ids: np.ndarray
    target_features: np.ndarray
    head_stats: tuple = None  # (count, sum, sum of squares) of head pre-activations

    @classmethod
    def from_records(cls, records):
        stamps = {r.iteration_stamp for r in records}
        if len(stamps) != 1:
            raise UsageError(f"records of one batch must share a stamp, got {sorted(stamps)}")
        src = [r for r in records if r.domain == "source"]
        tgt = [r for r in records if r.domain == "target"]
        dim = len(records[0].feature)
        return cls(
            stamp=stamps.pop(),
            source_ids=np.array([r.sample_id for r in src], dtype=int),
            source_features=np.array([r.feature for r in src], dtype=float).reshape(len(src), dim),
            source_labels=np.array([r.source_class_label for r in src], dtype=int),
            target_ids=np.array([r.sample_id for r in tgt], dtype=int),
            target_features=np.array([r.feature for r in tgt], dtype=float).reshape(len(tgt), dim),
        )

    @property
    def size(self):
        return len(self.source_ids) + len(self.target_ids)

    def records(self, pseudo=None):
        for i, sid in enumerate(self.source_ids):
            yield FeatureRecord(int(sid), "source", self.source_features[i], int(self.source_labels[i]), -1, self.stamp)
        for i, tid in enumerate(self.target_ids):
            p = -1 if pseudo is None else int(pseudo[i])
            yield FeatureRecord(int(tid), "target", self.target_features[i], -1, p, self.stamp)


class Window(NamedTuple):
    """Queue contents stacked as one matrix: source rows first, then target rows."""

    features: np.ndarray
    source_rows: np.ndarray
    target_rows: np.ndarray
    source_labels: np.ndarray
    ids: np.ndarray
    live_source_rows: np.ndarray
    live_target_rows: np.ndarray


def momentum_refresh(old, new, lam):
    """``lam * new + (1 - lam) * old``."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"momentum weight must lie in [0, 1], got {lam}")
    old = np.asarray(old, dtype=float)
    new = np.asarray(new, dtype=float)
    if old.shape != new.shape:
        raise ValidationError(f"feature shapes differ: {old.shape} vs {new.shape}")
    if lam == 1.0:
        return new.copy()
    if lam == 0.0:
        return old.copy()
    return lam * new + (1.0 - lam) * old


class FeatureQueue:
    """Keeps the feature slots of the most recent ``capacity`` iterations.

    Parameters
    ----------
    capacity : int
        Number of batches kept.
    batch_size : int, optional
        When given, every slot must hold exactly this many records.
    """

    def __init__(self, capacity, batch_size=None):
        if capacity < 1:
            raise ValidationError("queue capacity must be at least 1")
        self.capacity = int(capacity)
        self.batch_size = batch_size
        self._slots = deque()

    def __len__(self):
        return len(self._slots)

    def __iter__(self):
        return iter(self._slots)

    @property
    def slots(self):
        return list(self._slots)

    @property
    def stamps(self):
        return [s.stamp for s in self._slots]

    @property
    def latest(self):
        if not self._slots:
            raise StateError("queue is empty")
        return self._slots[-1]

    def enqueue(self, slot):
        """Append ``slot``; returns the evicted oldest slot or ``None``."""
        if isinstance(slot, (list, tuple)):
            slot = BatchSlot.from_records(slot)
        if self.batch_size is not None and slot.size != self.batch_size:
            raise UsageError(f"slot holds {slot.size} records, queue expects {self.batch_size}")
        if self._slots and slot.stamp <= self._slots[-1].stamp:
            raise UsageError("slot stamps must increase")
        evicted = None
        if len(self._slots) == self.capacity:
            evicted = self._slots.popleft()
        self._slots.append(slot)
        return evicted

    def refresh_latest(self, source_features, target_features, lam):
        """Momentum-blend fresh features into the newest slot only."""
        slot = self.latest
        slot.source_features = momentum_refresh(slot.source_features, source_features, lam)
        slot.target_features = momentum_refresh(slot.target_features, target_features, lam)
        return slot

    def stored_scalars(self):
        return sum(s.source_features.size + s.target_features.size for s in self._slots)

    def window(self):
        if not self._slots:
            raise StateError("queue is empty")
        slots = list(self._slots)
        src = [s.source_features for s in slots]
        tgt = [s.target_features for s in slots]
        n_s = sum(len(a) for a in src)
        n_t = sum(len(a) for a in tgt)
        feats = np.vstack(src + tgt)
        last = slots[-1]
        return Window(
            features=feats,
            source_rows=np.arange(n_s),
            target_rows=np.arange(n_s, n_s + n_t),
            source_labels=np.concatenate([s.source_labels for s in slots]),
            ids=np.concatenate([s.source_ids for s in slots] + [s.target_ids for s in slots]),
            live_source_rows=np.arange(n_s - len(last.source_ids), n_s),
            live_target_rows=np.arange(n_s + n_t - len(last.target_ids), n_s + n_t),
        )

    def head_statistics(self):
        """Pooled mean and std of head pre-activations over the window."""
        stats = [s.head_stats for s in self._slots if s.head_stats is not None]
        if not stats:
            return None
        count = sum(s[0] for s in stats)
        total = sum(s[1] for s in stats)
        sq = sum(s[2] for s in stats)
        mean = total / count
        var = np.maximum(sq / count - mean * mean, 0.0)
        return mean, np.sqrt(var + 1e-5)


@dataclass
class Structure:
    """Discrete window structure: pseudo-labels and subtype clusters."""

    source_centroids: object
    target_centroids: object
    pseudo_labels: np.ndarray
    clusters: list = field(default_factory=list)


def window_structure(window, num_classes, cluster_config=None, rng=None):
    """Class centroids, target pseudo-labels and (optionally) subtypes of ``window``."""
    feats = window.features
    if len(window.source_rows) == 0:
        raise StateError("window holds no source features")
    cs = class_centroids(feats[window.source_rows], window.source_labels, num_classes)
    if len(window.target_rows):
        pseudo = pseudo_label(feats[window.target_rows], cs)
    else:
        pseudo = np.zeros(0, dtype=int)
    ct = class_centroids(feats[window.target_rows], pseudo, num_classes)
    clusters = []
    if cluster_config is not None:
        src_by_class = {n: window.source_rows[window.source_labels == n] for n in range(num_classes)}
        tgt_by_class = {n: window.target_rows[pseudo == n] for n in range(num_classes)}
        clusters = discover_subtypes(feats, src_by_class, tgt_by_class, cluster_config, rng)
    return Structure(cs, ct, pseudo, clusters)


@dataclass
class CentroidMemory:
    """Centroids and subtypes of the current window; a cache of the queue."""

    source_centroids: object
    target_centroids: object
    pseudo_labels: np.ndarray
    clusters: list
    generation: int = 0


def rebuild_centroids(queue, num_classes, cluster_config=None, rng=None, previous=None):
    """Recompute the centroid memory from the queue contents."""
    if len(queue) == 0:
        raise StateError("queue is empty")
    st = window_structure(queue.window(), num_classes, cluster_config, rng)
    gen = 0 if previous is None else previous.generation + 1
    return CentroidMemory(st.source_centroids, st.target_centroids, st.pseudo_labels, st.clusters, gen)

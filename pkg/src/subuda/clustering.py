"""Subtype discovery inside each class and the subtype compactness loss.

Two ways to split the source samples of a class into subtypes:

* ``kmeans``: Lloyd iterations from k-means++ seeding with a known ``K_n``.
* ``subgraph``: connected components of the graph that links two samples
  when their squared distance is at most ``eps``; components with more than
  ``min_size`` nodes are kept.

Target samples pseudo-labeled with the class are then assigned to the
nearest source subtype and optionally filtered by semi-hard mining: keep
those within ``tau`` (squared) of the source subtype centroid, then grow
that set along ``eps`` links among targets assigned to the same subtype.
"""

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import ValidationError
from .numeric import make_rng
from .prototypes import sq_distances


@dataclass
class ClusterConfig:
    """Subtype clustering hyperparameters.

    ``tau=None`` disables semi-hard mining, so every target assigned to a
    subtype is used. ``weighting`` is ``"inverse_sqrt"`` (size-based
    weights normalized to mean 1 per class) or ``"uniform"``. ``centroid``
    is ``"joint"`` (average of the domain centroids) or ``"pooled"`` (mean
    of all source and target members together).
    """

    mode: str = "kmeans"
    n_subtypes: object = 2
    eps: float = 1.0
    tau: object = None
    min_size: int = 3
    kmeans_max_iters: int = 100
    kmeans_restarts: int = 5
    weighting: str = "inverse_sqrt"
    centroid: str = "joint"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("kmeans", "subgraph"):
            raise ValidationError(f"unknown clustering mode {self.mode!r}")
        if self.weighting not in ("inverse_sqrt", "uniform"):
            raise ValidationError(f"unknown weighting {self.weighting!r}")
        if self.centroid not in ("joint", "pooled"):
            raise ValidationError(f"unknown centroid rule {self.centroid!r}")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.tau is not None and self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.min_size < 1:
            raise ValidationError("min_size must be at least 1")
        ks = np.atleast_1d(self.n_subtypes)
        if np.any(ks < 1):
            raise ValidationError("n_subtypes must be at least 1")
        if self.kmeans_restarts < 1 or self.kmeans_max_iters < 1:
            raise ValidationError("kmeans_restarts and kmeans_max_iters must be positive")

    def k_for(self, class_id):
        ks = np.atleast_1d(self.n_subtypes)
        return int(ks[class_id] if len(ks) > 1 else ks[0])

    def to_dict(self):
        ks = self.n_subtypes
        return {
            "mode": self.mode,
            "n_subtypes": [int(k) for k in np.atleast_1d(ks)],
            "eps": self.eps,
            "tau": self.tau,
            "min_size": self.min_size,
            "kmeans_max_iters": self.kmeans_max_iters,
            "kmeans_restarts": self.kmeans_restarts,
            "weighting": self.weighting,
            "centroid": self.centroid,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        ks = doc.get("n_subtypes", 2)
        if isinstance(ks, list):
            doc["n_subtypes"] = ks[0] if len(ks) == 1 else tuple(ks)
        return cls(**doc)

    def replace(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# K-means


def _kmeans_plusplus(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        closest = np.minimum(closest, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(X, centers, max_iters):
    labels = None
    for _ in range(max_iters):
        d = sq_distances(X, centers)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=len(centers))
        while np.any(counts == 0):
            # re-seed an empty cluster with the point farthest from its centroid
            j = int(np.flatnonzero(counts == 0)[0])
            own = d[np.arange(len(X)), new]
            own[counts[new] <= 1] = -1.0
            far = int(np.argmax(own))
            new[far] = j
            d[far, :] = 0.0
            counts = np.bincount(new, minlength=len(centers))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(len(centers)):
            centers[j] = X[labels == j].mean(axis=0)
    d = sq_distances(X, centers)
    inertia = float(d[np.arange(len(X)), labels].sum())
    return labels, centers, inertia


def kmeans(features, k, rng=None, max_iters=100, restarts=5):
    """Best-of-``restarts`` Lloyd k-means.

    Returns ``(labels, centers, inertia)`` where inertia is the summed
    squared distance of every point to its center.
    """
    X = np.asarray(features, dtype=float)
    if k < 1 or k > X.shape[0]:
        raise ValidationError(f"k={k} must lie in [1, {X.shape[0]}]")
    rng = make_rng(0 if rng is None else rng)
    best = None
    for _ in range(restarts):
        centers = _kmeans_plusplus(X, k, rng)
        result = _lloyd(X, centers, max_iters)
        if best is None or result[2] < best[2] - 1e-12:
            best = result
    return best


# ---------------------------------------------------------------------------
# reliability-path sub-graphs


def reliability_components(features, eps):
    """Connected-component id of each row in the ``<= eps`` squared-distance graph."""
    X = np.asarray(features, dtype=float)
    if len(X) == 0:
        return np.zeros(0, dtype=int)
    adj = sq_distances(X, X) <= eps
    _, comp = connected_components(csr_matrix(adj), directed=False)
    return comp


def build_subgraphs(features, eps, min_size):
    """Source sub-graphs with more than ``min_size`` nodes.

    Returns a list of row-index arrays, ordered by their smallest member.
    """
    comp = reliability_components(features, eps)
    groups = []
    for c in np.unique(comp):
        members = np.flatnonzero(comp == c)
        if len(members) > min_size:
            groups.append(members)
    groups.sort(key=lambda g: g[0])
    return groups


# ---------------------------------------------------------------------------
# targets


def assign_target_subtypes(target_features, subtype_centers):
    """Nearest source subtype centroid; ties go to the lowest index."""
    t = np.atleast_2d(np.asarray(target_features, dtype=float))
    if len(subtype_centers) == 0 or len(t) == 0:
        return np.full(len(t), -1, dtype=int)
    return np.argmin(sq_distances(t, np.asarray(subtype_centers)), axis=1)


def semi_hard_filter(target_features, mu_s, tau, eps):
    """Boolean mask of accepted targets.

    Seeds are targets within squared distance ``tau`` of ``mu_s``; the
    accepted set then grows through targets within squared distance ``eps``
    of any accepted one.
    """
    t = np.atleast_2d(np.asarray(target_features, dtype=float))
    n = len(t)
    if n == 0:
        return np.zeros(0, dtype=bool)
    accepted = np.sum((t - mu_s) ** 2, axis=1) <= tau
    if accepted.all() or not accepted.any():
        return accepted
    link = sq_distances(t, t) <= eps
    frontier = deque(np.flatnonzero(accepted))
    while frontier:
        i = frontier.popleft()
        new = np.flatnonzero(link[i] & ~accepted)
        accepted[new] = True
        frontier.extend(new)
    return accepted


# ---------------------------------------------------------------------------
# clusters and loss


@dataclass
class SubtypeCluster:
    """One subtype of one class.

    ``source_rows`` and ``target_rows`` index the feature matrix the
    cluster was discovered on.
    """

    class_id: int
    source_rows: np.ndarray
    target_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    mu_s: np.ndarray = None
    mu_t: np.ndarray = None
    mu_st: np.ndarray = None
    weight: float = 1.0

    @property
    def M_s(self):
        return len(self.source_rows)

    @property
    def M_t(self):
        return len(self.target_rows)


def _joint_centroid(features, cluster, centroid_rule):
    xs = features[cluster.source_rows]
    mu_s = xs.mean(axis=0)
    if cluster.M_t == 0:
        return mu_s, None, mu_s
    xt = features[cluster.target_rows]
    mu_t = xt.mean(axis=0)
    if centroid_rule == "pooled":
        mu_st = np.vstack([xs, xt]).mean(axis=0)
    else:
        mu_st = 0.5 * (mu_s + mu_t)
    return mu_s, mu_t, mu_st


def finalize_clusters(clusters, features, weighting="inverse_sqrt", centroid="joint"):
    """Fill in centroids and per-class normalized weights, in place."""
    features = np.asarray(features, dtype=float)
    for c in clusters:
        c.mu_s, c.mu_t, c.mu_st = _joint_centroid(features, c, centroid)
    by_class = {}
    for c in clusters:
        by_class.setdefault(c.class_id, []).append(c)
    for members in by_class.values():
        if weighting == "uniform":
            for c in members:
                c.weight = 1.0
            continue
        raw = np.array([1.0 / np.sqrt(c.M_s + c.M_t) for c in members])
        raw /= raw.mean()
        for c, w in zip(members, raw):
            c.weight = float(w)
    return clusters


def subtype_compactness_loss(clusters, features, centroid="joint"):
    """Weighted subtype compactness, averaged over subtypes then classes.

    For every cluster the loss is the mean squared distance of its source
    members to the joint centroid plus the same for its target members
    (omitted without targets). The joint centroid is a function of the
    member features and is differentiated through.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``features``.
    """
    features = np.asarray(features, dtype=float)
    grad = np.zeros_like(features)
    if not clusters:
        return 0.0, grad
    by_class = {}
    for c in clusters:
        by_class.setdefault(c.class_id, []).append(c)
    n_cls = len(by_class)
    total = 0.0
    for members in by_class.values():
        scale = 1.0 / (n_cls * len(members))
        for c in members:
            w = c.weight * scale
            xs = features[c.source_rows]
            _, _, mu = _joint_centroid(features, c, centroid)
            rs = xs - mu
            loss_k = np.sum(rs * rs) / c.M_s
            gs = 2.0 * rs / c.M_s
            g_mu = -gs.sum(axis=0)
            gt = None
            if c.M_t:
                xt = features[c.target_rows]
                rt = xt - mu
                loss_k += np.sum(rt * rt) / c.M_t
                gt = 2.0 * rt / c.M_t
                g_mu -= gt.sum(axis=0)
            total += w * loss_k
            # route the centroid gradient back to the members
            if c.M_t == 0:
                gs = gs + g_mu / c.M_s
            elif centroid == "pooled":
                share = g_mu / (c.M_s + c.M_t)
                gs = gs + share
                gt = gt + share
            else:
                gs = gs + 0.5 * g_mu / c.M_s
                gt = gt + 0.5 * g_mu / c.M_t
            np.add.at(grad, c.source_rows, w * gs)
            if gt is not None:
                np.add.at(grad, c.target_rows, w * gt)
    return float(total), grad


def discover_subtypes(features, source_rows_by_class, target_rows_by_class, config, rng=None):
    """Cluster every class of a window and mine its target members.

    Parameters
    ----------
    features : ndarray of shape (n, d)
        Window features, source and target rows together.
    source_rows_by_class, target_rows_by_class : dict of int -> ndarray
        Row indices per (true or pseudo) class.
    config : ClusterConfig
    rng : Generator or int, optional
        Used by k-means seeding.

    Returns
    -------
    list of SubtypeCluster
        Finalized clusters, ordered by class then subtype.
    """
    features = np.asarray(features, dtype=float)
    rng = make_rng(0 if rng is None else rng)
    clusters = []
    for n in sorted(source_rows_by_class):
        src = np.asarray(source_rows_by_class[n], dtype=int)
        if len(src) == 0:
            continue
        xs = features[src]
        if config.mode == "kmeans":
            k = min(config.k_for(n), len(src))
            labels, _, _ = kmeans(xs, k, rng, config.kmeans_max_iters, config.kmeans_restarts)
            groups = [np.flatnonzero(labels == j) for j in range(k)]
        else:
            groups = build_subgraphs(xs, config.eps, config.min_size)
        groups = [g for g in groups if len(g)]
        if not groups:
            continue
        class_clusters = [SubtypeCluster(n, src[g]) for g in groups]
        mus = np.array([xs[g].mean(axis=0) for g in groups])

        tgt = np.asarray(target_rows_by_class.get(n, np.zeros(0, dtype=int)), dtype=int)
        if len(tgt):
            xt = features[tgt]
            assign = assign_target_subtypes(xt, mus)
            for j, c in enumerate(class_clusters):
                mine = np.flatnonzero(assign == j)
                if len(mine) and config.tau is not None:
                    keep = semi_hard_filter(xt[mine], mus[j], config.tau, config.eps)
                    mine = mine[keep]
                c.target_rows = tgt[mine]
        clusters.extend(class_clusters)
    return finalize_clusters(clusters, features, config.weighting, config.centroid)

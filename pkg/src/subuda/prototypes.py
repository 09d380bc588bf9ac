"""Class centroids, the prototype classifier and class-level losses.

All distances are squared Euclidean. Losses return gradients with respect
to every feature row they were given; callers decide which rows are live.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import StateError, ValidationError


@dataclass
class Centroids:
    """Per-class means of one domain. Rows of absent classes are zero."""

    means: np.ndarray
    counts: np.ndarray

    @property
    def present(self):
        return self.counts > 0

    @property
    def num_classes(self):
        return len(self.counts)

    def get(self, n):
        return self.means[n] if self.counts[n] > 0 else None


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    return labels


def class_centroids(features, labels, num_classes):
    """Mean feature per class; classes without members are absent."""
    features = np.asarray(features, dtype=float)
    labels = _check_labels(labels, num_classes)
    if features.shape[0] != labels.shape[0]:
        raise ValidationError("features and labels disagree on sample count")
    counts = np.bincount(labels, minlength=num_classes)
    sums = np.zeros((num_classes, features.shape[1]))
    np.add.at(sums, labels, features)
    means = np.divide(sums, np.maximum(counts, 1)[:, None])
    return Centroids(means, counts)


def sq_distances(features, centers):
    """``(n, k)`` squared distances between rows of the two arrays."""
    diff = features[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _masked_logits(features, centroids):
    if not np.any(centroids.present):
        raise StateError("no class centroid is present")
    logits = -sq_distances(features, centroids.means)
    logits[:, ~centroids.present] = -np.inf
    return logits


def prototype_probs(features, centroids):
    """Softmax over negative squared distances to the present centroids.

    Accepts a single vector or an ``(n, d)`` array. Absent classes get
    probability 0.
    """
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    logits = _masked_logits(x, centroids)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def pseudo_label(target_features, centroids):
    """Nearest present centroid; ties go to the lowest class index."""
    x = np.atleast_2d(np.asarray(target_features, dtype=float))
    d = sq_distances(x, centroids.means)
    if not np.any(centroids.present):
        raise StateError("no class centroid is present")
    d[:, ~centroids.present] = np.inf
    return np.argmin(d, axis=1)


def centroid_grad_to_members(grad_means, labels, counts):
    """Spread a gradient w.r.t. class means onto the member rows."""
    labels = np.asarray(labels, dtype=int)
    scale = 1.0 / np.maximum(counts, 1)
    return grad_means[labels] * scale[labels][:, None]


def class_ce_loss(features, labels, num_classes, query=None):
    """Mean prototype cross-entropy of the ``query`` rows.

    Centroids are the class means over *all* rows of ``features``; the
    gradient flows through both the query features and those means.

    Parameters
    ----------
    features : ndarray of shape (n, d)
    labels : ndarray of shape (n,)
        Source ground truth.
    num_classes : int
    query : array-like of int or bool, default=None
        Rows whose loss is averaged. ``None`` means every row.

    Returns
    -------
    loss : float
    grad : ndarray of shape (n, d)
    """
    features = np.asarray(features, dtype=float)
    labels = _check_labels(labels, num_classes)
    cent = class_centroids(features, labels, num_classes)
    q = np.arange(len(labels)) if query is None else np.asarray(query)
    if q.dtype == bool:
        q = np.flatnonzero(q)
    if len(q) == 0:
        return 0.0, np.zeros_like(features)
    fq = features[q]
    yq = labels[q]
    logits = _masked_logits(fq, cent)
    shift = logits.max(axis=1, keepdims=True)
    p = np.exp(logits - shift)
    z = p.sum(axis=1, keepdims=True)
    p /= z
    logp_true = logits[np.arange(len(q)), yq] - shift[:, 0] - np.log(z[:, 0])
    loss = -logp_true.mean()

    # dL/dlogit = (p - onehot)/B ; logit_n = -||f - c_n||^2
    coef = p.copy()
    coef[np.arange(len(q)), yq] -= 1.0
    coef /= len(q)
    diff = fq[:, None, :] - cent.means[None, :, :]  # (B, N, d)
    grad_fq = -2.0 * np.einsum("bn,bnd->bd", coef, diff)
    grad_c = 2.0 * np.einsum("bn,bnd->nd", coef, diff)

    grad = centroid_grad_to_members(grad_c, labels, cent.counts)
    np.add.at(grad, q, grad_fq)
    return float(loss), grad


def class_match_loss(source, target):
    """Mean ``||c_s - c_t||^2`` over classes present on both sides.

    Returns ``(loss, grad_source_means, grad_target_means)``; the loss is
    0 when no class has both centroids.
    """
    both = source.present & target.present
    gs = np.zeros_like(source.means)
    gt = np.zeros_like(target.means)
    n = int(both.sum())
    if n == 0:
        return 0.0, gs, gt
    diff = source.means[both] - target.means[both]
    loss = float(np.sum(diff * diff) / n)
    gs[both] = 2.0 * diff / n
    gt[both] = -2.0 * diff / n
    return loss, gs, gt


def class_match_loss_features(source_features, source_labels, target_features, target_labels, num_classes):
    """:func:`class_match_loss` with gradients taken to member features."""
    cs = class_centroids(source_features, source_labels, num_classes)
    ct = class_centroids(target_features, target_labels, num_classes)
    loss, gs, gt = class_match_loss(cs, ct)
    return (
        loss,
        centroid_grad_to_members(gs, source_labels, cs.counts),
        centroid_grad_to_members(gt, target_labels, ct.counts),
    )

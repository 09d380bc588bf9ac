"""Test-time prototype classification and domain/cluster diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from .clustering import kmeans
from .exceptions import StateError, ValidationError
from .numeric import adam_update, OptimizerState, forward, make_rng
from .prototypes import Centroids, class_centroids, pseudo_label, sq_distances

VARIANTS = ("st", "s", "t")


def encode(params, X, chunk=4096):
    """Eval-mode features of ``X``."""
    X = np.asarray(X, dtype=float)
    out = [forward(params, X[i : i + chunk])[0] for i in range(0, len(X), chunk)]
    if not out:
        return np.zeros((0, params.feat_dim))
    return np.vstack(out)


def prototype_set(source_features, source_labels, target_features, num_classes):
    """Source, target (pseudo-labeled) and joint class prototypes."""
    cs = class_centroids(source_features, source_labels, num_classes)
    pseudo = pseudo_label(target_features, cs) if len(target_features) else np.zeros(0, dtype=int)
    ct = class_centroids(target_features, pseudo, num_classes)
    both = cs.present & ct.present
    st_means = np.where(both[:, None], 0.5 * (cs.means + ct.means), cs.means)
    st = Centroids(st_means, np.where(both, cs.counts + ct.counts, cs.counts))
    return {"s": cs, "t": ct, "st": st}, pseudo


def classify_test(features, prototypes, variant="st"):
    """Nearest-prototype class for each row.

    ``prototypes`` maps variant name to :class:`Centroids`; every class must
    have a prototype in the requested variant.
    """
    if variant not in prototypes:
        raise ValidationError(f"unknown prototype variant {variant!r}")
    cents = prototypes[variant]
    if not np.all(cents.present):
        missing = np.flatnonzero(~cents.present).tolist()
        raise StateError(f"variant {variant!r} has no prototype for classes {missing}")
    x = np.atleast_2d(np.asarray(features, dtype=float))
    return np.argmin(sq_distances(x, cents.means), axis=1)


def accuracy(predictions, truth):
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValidationError("predictions and truth differ in length")
    if predictions.size == 0:
        return 0.0
    return float(np.mean(predictions == truth))


@dataclass
class EvalReport:
    accuracy: dict
    source_accuracy: float
    per_class_accuracy: list
    proxy_a_distance: float = None
    cluster_counts: list = field(default_factory=list)
    consensus: list = None

    def to_dict(self):
        return {
            "accuracy": {k: float(v) for k, v in self.accuracy.items()},
            "source_accuracy": float(self.source_accuracy),
            "per_class_accuracy": [None if v is None else float(v) for v in self.per_class_accuracy],
            "proxy_a_distance": None if self.proxy_a_distance is None else float(self.proxy_a_distance),
            "cluster_counts": [int(c) for c in self.cluster_counts],
            "consensus": self.consensus,
        }


def evaluate(params, source, target, num_classes, a_distance=False, seed=0):
    """Accuracy of every prototype variant on the target domain.

    Prototypes are built from the eval-mode features of all training
    samples: labeled source and pseudo-labeled target.
    """
    fs = encode(params, source.X)
    ft = encode(params, target.X)
    protos, _ = prototype_set(fs, source.y, ft, num_classes)
    acc = {}
    for v in VARIANTS:
        try:
            acc[v] = accuracy(classify_test(ft, protos, v), target.y)
        except StateError:
            acc[v] = float("nan")
    pred = classify_test(ft, protos, "st") if np.all(protos["st"].present) else None
    per_class = []
    for n in range(num_classes):
        sel = target.y == n
        per_class.append(None if pred is None or not sel.any() else accuracy(pred[sel], target.y[sel]))
    src_acc = accuracy(classify_test(fs, protos, "st"), source.y) if pred is not None else float("nan")
    pad = proxy_a_distance(fs, ft, seed=seed) if a_distance else None
    return EvalReport(acc, src_acc, per_class, pad)


# ---------------------------------------------------------------------------
# proxy A-distance


def _fit_logistic(X, y, rng, epochs=200, lr=0.05, l2=1e-4):
    """Full-batch logistic regression trained with Adam."""
    w = np.zeros(X.shape[1])
    b = np.zeros(1)
    opt = OptimizerState(
        [np.zeros_like(w), np.zeros_like(b)], [np.zeros_like(w), np.zeros_like(b)], learning_rate=lr
    )
    for _ in range(epochs):
        z = X @ w + b[0]
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        r = (p - y) / len(y)
        adam_update(opt, [w, b], [X.T @ r + l2 * w, np.array([r.sum()])])
    return w, b[0]


def proxy_a_distance(source_features, target_features, folds=5, seed=0, clip=True):
    """``2 * (1 - 2 * err)`` of a cross-validated linear domain classifier.

    ``err`` is the mean held-out error over ``folds`` stratified folds.
    With ``clip`` the result is clipped to ``[0, 2]``.
    """
    fs = np.asarray(source_features, dtype=float)
    ft = np.asarray(target_features, dtype=float)
    if len(fs) < 2 or len(ft) < 2:
        raise ValidationError("need at least two samples per domain")
    rng = make_rng(seed)
    X = np.vstack([fs, ft])
    y = np.concatenate([np.zeros(len(fs)), np.ones(len(ft))])
    folds = max(2, min(folds, len(fs), len(ft)))
    # stratified fold ids so no fold is single-domain
    fold = np.empty(len(y), dtype=int)
    for label in (0.0, 1.0):
        idx = np.flatnonzero(y == label)
        fold[rng.permutation(idx)] = np.arange(len(idx)) % folds
    errors = []
    for k in range(folds):
        test = fold == k
        train = ~test
        mu = X[train].mean(axis=0)
        sd = X[train].std(axis=0) + 1e-8
        w, b = _fit_logistic((X[train] - mu) / sd, y[train], rng)
        pred = ((X[test] - mu) / sd) @ w + b > 0
        errors.append(np.mean(pred != y[test]))
    err = float(np.mean(errors))
    d = 2.0 * (1.0 - 2.0 * err)
    return float(np.clip(d, 0.0, 2.0)) if clip else d


# ---------------------------------------------------------------------------
# consensus clustering


def consensus_matrix(features, k, resamples=50, subsample_frac=0.8, rng=None, restarts=1):
    """Fraction of co-sampled resamples in which two rows share a cluster."""
    X = np.asarray(features, dtype=float)
    n = len(X)
    rng = make_rng(0 if rng is None else rng)
    together = np.zeros((n, n))
    sampled = np.zeros((n, n))
    m = max(k, int(round(subsample_frac * n)))
    for _ in range(resamples):
        idx = np.sort(rng.choice(n, size=m, replace=False))
        labels, _, _ = kmeans(X[idx], k, rng, restarts=restarts)
        onehot = np.zeros((m, k))
        onehot[np.arange(m), labels] = 1.0
        together[np.ix_(idx, idx)] += onehot @ onehot.T
        sampled[np.ix_(idx, idx)] += 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        M = np.where(sampled > 0, together / np.maximum(sampled, 1), 0.0)
    np.fill_diagonal(M, 1.0)
    return M


def cdf_area(M):
    """Area under the empirical CDF of the off-diagonal consensus entries.

    Uses the step sum ``sum_i (x_i - x_{i-1}) * CDF(x_i)`` over the sorted
    distinct entries, so a perfectly crisp matrix scores 1 and a constant
    matrix scores 0.
    """
    iu = np.triu_indices(len(M), k=1)
    vals = np.sort(M[iu])
    if vals.size == 0:
        return 0.0
    xs, counts = np.unique(vals, return_counts=True)
    cdf = np.cumsum(counts) / vals.size
    return float(np.sum(np.diff(xs) * cdf[1:]))


def consensus_cdf_auc(features, k_range=range(2, 7), resamples=50, subsample_frac=0.8, rng=None, restarts=5):
    """CDF area and its relative change for each K.

    ``delta[K0]`` is the area itself for the smallest K (when K>1) and the
    relative increase over the previous K afterwards; its argmax is the
    suggested cluster count. Each resample keeps the best of ``restarts``
    k-means runs so that poor local optima do not masquerade as instability.

    Returns a list of dicts with keys ``k``, ``auc``, ``delta``,
    ``mean_consensus``.
    """
    rng = make_rng(0 if rng is None else rng)
    X = np.asarray(features, dtype=float)
    # canonical row order makes the result independent of input order
    X = X[np.lexsort(X.T[::-1])]
    ks = sorted(int(k) for k in k_range)
    if ks and (ks[0] < 1 or ks[-1] > len(X)):
        raise ValidationError("k_range must lie within [1, n_samples]")
    rows = []
    prev = None
    for k in ks:
        M = consensus_matrix(X, k, resamples, subsample_frac, rng, restarts)
        auc = cdf_area(M)
        if prev is None:
            delta = auc if k > 1 else 0.0
        else:
            delta = (auc - prev) / prev if prev > 0 else auc
        iu = np.triu_indices(len(M), k=1)
        rows.append({"k": k, "auc": auc, "delta": delta, "mean_consensus": float(M[iu].mean())})
        prev = auc
    return rows


def best_k(rows):
    """K with the largest ``delta``; ties go to the smaller K."""
    deltas = [r["delta"] for r in rows]
    return rows[int(np.argmax(deltas))]["k"]

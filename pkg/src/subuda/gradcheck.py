"""Central finite-difference checks of the analytic gradients.

Errors are norm-wise per parameter array,
``||analytic - numeric|| / max(||analytic||, ||numeric||)``, and the
reported figure is the maximum over arrays.
"""

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterConfig
from .memory import BatchSlot, FeatureQueue, window_structure
from .numeric import backward, clone_rng, forward, init_encoder, make_rng
from .trainer import TrainConfig, compute_losses


def relative_error(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def _numeric_grads(params, loss_of_params, h):
    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_of_params()
            flat[i] = old - h
            down = loss_of_params()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def encoder_gradcheck(params, x, loss_fn, h=1e-5, train_mode=False, rng=None):
    """Max relative error between backprop and finite differences.

    ``loss_fn(features) -> (loss, grad_features)``.
    """
    mask_rng = make_rng(0 if rng is None else rng)

    def feats():
        return forward(params, x, train_mode=train_mode, rng=clone_rng(mask_rng))

    f, cache = feats()
    _, gf = loss_fn(f)
    analytic, _ = backward(params, cache, gf)
    numeric = _numeric_grads(params, lambda: loss_fn(feats()[0])[0], h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


@dataclass
class GradcheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error < self.tolerance


def loss_gradchecks(
    dims=(8, 16, 16, 8),
    batch=32,
    num_classes=3,
    history=2,
    seed=0,
    h=1e-5,
    tolerance=1e-4,
    cluster=None,
):
    """Check every training loss through a small encoder.

    A queue is filled with ``history`` slots of constant features plus one
    live slot encoded by the network; the discrete structure (pseudo-labels,
    clusters, mined targets) is computed once and held fixed.

    Returns a list of :class:`GradcheckResult` for ``ce``, ``class``,
    ``sub`` and ``total``.
    """
    rng = make_rng(seed)
    params = init_encoder(dims, rng)
    half = batch // 2
    cfg_cluster = cluster or ClusterConfig(mode="kmeans", n_subtypes=2, tau=4.0, eps=1.0)

    centers = 2.0 * rng.standard_normal((num_classes, dims[0]))
    ys_live = np.arange(half) % num_classes
    x_src = centers[ys_live] + 0.5 * rng.standard_normal((half, dims[0]))
    x_tgt = centers[rng.integers(num_classes, size=batch - half)] + 0.5 * rng.standard_normal(
        (batch - half, dims[0])
    )
    X = np.vstack([x_src, x_tgt])

    queue = FeatureQueue(history + 1)
    f0, _ = forward(params, X)
    for s in range(history):
        jitter = 0.05 * rng.standard_normal(f0.shape)
        old = f0 + jitter
        queue.enqueue(
            BatchSlot(s + 1, np.arange(half), old[:half], ys_live.copy(), np.arange(half, batch), old[half:])
        )
    queue.enqueue(BatchSlot(history + 1, np.arange(half), f0[:half], ys_live.copy(), np.arange(half, batch), f0[half:]))
    window = queue.window()
    structure = window_structure(window, num_classes, cfg_cluster, make_rng(seed + 1))
    live = np.concatenate([window.live_source_rows, window.live_target_rows])

    def make_loss(alpha, beta, pick):
        config = TrainConfig(alpha=alpha, beta=beta, cluster=cfg_cluster)

        def loss_fn(f):
            feats = window.features.copy()
            feats[live] = f
            report, grad = compute_losses(window, structure, config, num_classes, features=feats)
            return getattr(report, pick), grad[live]

        return loss_fn

    suites = {
        "ce": (0.0, 0.0, "ce"),
        "class": (1.0, 0.0, "total"),
        "sub": (0.0, 1.0, "total"),
        "total": (1.0, 1.0, "total"),
    }
    results = []
    for name, (alpha, beta, pick) in suites.items():
        fn = make_loss(alpha, beta, pick)
        if name in ("class", "sub"):
            # isolate the term: subtract the cross-entropy part
            base = make_loss(0.0, 0.0, "ce")
            fn = _difference(fn, base)
        err = encoder_gradcheck(params, X, fn, h=h)
        results.append(GradcheckResult(name, err, tolerance))
    return results


def _difference(fa, fb):
    def fn(f):
        la, ga = fa(f)
        lb, gb = fb(f)
        return la - lb, ga - gb

    return fn

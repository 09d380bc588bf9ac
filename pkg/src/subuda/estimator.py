"""scikit-learn style wrapper around the training loop."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clustering import ClusterConfig
from .evaluation import classify_test, encode, prototype_set
from .exceptions import ValidationError
from .prototypes import prototype_probs
from .synth import SourceView, TargetView
from .trainer import TrainConfig, init_state, train_iteration


class SubtypeAwareAdapter(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Nearest-prototype classifier adapted from labeled to unlabeled data.

    Parameters
    ----------
    n_subtypes : int or tuple of int, default=2
        Subtypes per class (one value for all classes or one per class).
    alpha, beta : float, default=1.0
        Weights of the class matching and subtype compactness terms.
    lam : float, default=0.5
        Momentum of the queue refresh.
    window : int, default=5
        Number of batches kept in the feature queue.
    batch_size : int, default=64
    hidden : tuple of int, default=(64, 32)
        Encoder layer widths; the last one is the feature size.
    learning_rate : float, default=1e-3
    n_iter : int, default=2000
    cluster_mode : {"kmeans", "subgraph"}, default="kmeans"
    eps, tau : float
        Reliability-path and mining thresholds (squared distances);
        ``tau=None`` disables mining.
    min_size : int, default=3
    prototype : {"st", "s", "t"}, default="st"
        Prototype set used by :meth:`predict`.
    random_state : int, default=0

    Attributes
    ----------
    encoder_ : EncoderParams
    prototypes_ : dict of str -> Centroids
    classes_ : ndarray
    n_features_in_ : int
    """

    def __init__(
        self,
        n_subtypes=2,
        alpha=1.0,
        beta=1.0,
        lam=0.5,
        window=5,
        batch_size=64,
        hidden=(64, 32),
        learning_rate=1e-3,
        n_iter=2000,
        cluster_mode="kmeans",
        eps=1.0,
        tau=None,
        min_size=3,
        prototype="st",
        random_state=0,
    ):
        self.n_subtypes = n_subtypes
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.window = window
        self.batch_size = batch_size
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.cluster_mode = cluster_mode
        self.eps = eps
        self.tau = tau
        self.min_size = min_size
        self.prototype = prototype
        self.random_state = random_state

    def _config(self):
        cluster = ClusterConfig(
            mode=self.cluster_mode,
            n_subtypes=self.n_subtypes,
            eps=self.eps,
            tau=self.tau,
            min_size=self.min_size,
        )
        return TrainConfig(
            alpha=self.alpha,
            beta=self.beta,
            lam=self.lam,
            window=self.window,
            batch_size=self.batch_size,
            cluster=cluster,
            learning_rate=self.learning_rate,
            total_iterations=self.n_iter,
            seed=int(self.random_state),
            hidden=tuple(self.hidden),
            eval_variant=self.prototype,
        )

    def fit(self, X, y, X_target=None):
        """Train on labeled ``X, y`` and unlabeled ``X_target``.

        Without ``X_target`` the source data is reused as its own target.
        """
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        Xt = X if X_target is None else check_array(X_target, dtype=float)
        if Xt.shape[1] != X.shape[1]:
            raise ValidationError("X and X_target must have the same number of features")
        config = self._config()
        n_classes = len(self.classes_)
        sv = SourceView(np.arange(len(X)), X, y_enc)
        tv = TargetView(np.arange(len(X), len(X) + len(Xt)), Xt)
        state = init_state(config, X.shape[1], n_classes, sv)
        for _ in range(config.total_iterations):
            train_iteration(state, sv, tv, config)
        self.encoder_ = state.params
        self.n_features_in_ = X.shape[1]
        fs = encode(self.encoder_, X)
        ft = encode(self.encoder_, Xt)
        self.prototypes_, _ = prototype_set(fs, y_enc, ft, n_classes)
        self.loss_history_ = [tuple(r) for r in state.history]
        return self

    def transform(self, X):
        """Encoder features of ``X``."""
        check_is_fitted(self, "encoder_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return encode(self.encoder_, X)

    def predict(self, X):
        feats = self.transform(X)
        return self.classes_[classify_test(feats, self.prototypes_, self.prototype)]

    def predict_proba(self, X):
        """Softmax over negative squared distances to the prototypes."""
        return prototype_probs(self.transform(X), self.prototypes_[self.prototype])

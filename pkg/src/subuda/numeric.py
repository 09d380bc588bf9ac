"""Small dense encoder with hand-written backprop, Adam, and seeded RNG.

The encoder is a stack of fully connected ReLU layers optionally followed by
a dimension-reduction head::

    fc -> standardize -> relu -> dropout -> fc -> relu

``standardize`` uses fixed per-unit statistics stored on the parameters
(``norm_mean``/``norm_scale``); the trainer refreshes them from the feature
queue window between iterations, so within one forward/backward pair the
map is affine and the gradient is exact.

Random numbers come from numpy's ``PCG64`` bit generator (O'Neill, 2014),
whose output stream is fixed across platforms for a given seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, UsageError, ValidationError

CHECKPOINT_FORMAT = "subuda-encoder"
CHECKPOINT_VERSION = 1


def make_rng(seed):
    """Return a ``numpy.random.Generator`` backed by PCG64."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def clone_rng(rng):
    """Independent copy of ``rng`` that will replay the same stream."""
    bg = np.random.PCG64()
    bg.state = rng.bit_generator.state
    return np.random.Generator(bg)


@dataclass
class EncoderParams:
    """Weights of the feed-forward encoder.

    ``weights[i]`` has shape ``(fan_in, fan_out)``. Trunk layers come first,
    followed by the two head layers when ``head_dims`` is set.
    """

    layer_dims: tuple
    weights: list
    biases: list
    head_dims: tuple = None
    final_activation: str = "relu"
    dropout: float = 0.5
    norm_mean: np.ndarray = None
    norm_scale: np.ndarray = None
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.head_dims is not None:
            self.head_dims = tuple(int(d) for d in self.head_dims)
            if len(self.head_dims) != 2:
                raise ValidationError("head_dims must be a pair (hidden, out)")
            if self.norm_mean is None:
                self.norm_mean = np.zeros(self.head_dims[0])
            if self.norm_scale is None:
                self.norm_scale = np.ones(self.head_dims[0])
        if self.final_activation not in ("relu", "identity"):
            raise ValidationError(f"unknown activation {self.final_activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        dims = list(self.layer_dims)
        if self.head_dims is not None:
            dims += list(self.head_dims)
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("number of weight matrices does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected W{(dims[i], dims[i + 1])}, b{(dims[i + 1],)}, "
                    f"got W{w.shape}, b{b.shape}"
                )

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def feat_dim(self):
        if self.head_dims is not None:
            return self.head_dims[1]
        return self.layer_dims[-1]

    @property
    def n_trunk(self):
        return len(self.layer_dims) - 1

    def arrays(self):
        """Trainable arrays in optimizer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return EncoderParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head_dims=self.head_dims,
            final_activation=self.final_activation,
            dropout=self.dropout,
            norm_mean=None if self.norm_mean is None else self.norm_mean.copy(),
            norm_scale=None if self.norm_scale is None else self.norm_scale.copy(),
            version=self.version,
        )

    def touch(self):
        self.version += 1


def init_encoder(layer_dims, rng, head_dims=None, final_activation="relu", dropout=0.5):
    """Uniform fan-in scaled initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = make_rng(rng)
    dims = list(layer_dims) + (list(head_dims) if head_dims is not None else [])
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return EncoderParams(
        layer_dims=tuple(layer_dims),
        weights=weights,
        biases=biases,
        head_dims=None if head_dims is None else tuple(head_dims),
        final_activation=final_activation,
        dropout=dropout,
    )


@dataclass
class ForwardCache:
    inputs: list
    preacts: list
    dropout_mask: np.ndarray
    head_hidden: np.ndarray
    version: int
    owner: int


def _relu(z):
    return np.maximum(z, 0.0)


def forward(params, inputs, train_mode=False, rng=None):
    """Encode ``inputs`` of shape ``(batch, in_dim)``.

    Returns ``(features, cache)``. Dropout only runs when ``train_mode`` is
    true and needs ``rng``; it uses the inverted convention, so evaluation
    applies no rescaling.
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"expected inputs (batch, {params.in_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("inputs contain non-finite values")

    layer_inputs, preacts = [], []
    h = x
    last = len(params.weights) - 1
    mask = None
    head_hidden = None
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        if i == last:
            h = _relu(z) if params.final_activation == "relu" else z
        elif params.head_dims is not None and i == params.n_trunk:
            # head hidden layer: standardize -> relu -> dropout
            u = (z - params.norm_mean) / params.norm_scale
            a = _relu(u)
            head_hidden = u
            if train_mode and params.dropout > 0.0:
                if rng is None:
                    raise UsageError("train_mode forward needs an rng for dropout")
                keep = 1.0 - params.dropout
                mask = (rng.random(a.shape) < keep) / keep
                h = a * mask
            else:
                h = a
        else:
            h = _relu(z)
    cache = ForwardCache(layer_inputs, preacts, mask, head_hidden, params.version, id(params))
    return h, cache


def backward(params, cache, grad_features):
    """Backpropagate ``grad_features`` through the encoder.

    Returns ``(grads, grad_inputs)`` where ``grads`` follows
    :meth:`EncoderParams.arrays` ordering.
    """
    if cache.owner != id(params) or cache.version != params.version:
        raise UsageError("forward cache is stale or belongs to different parameters")
    g = np.asarray(grad_features, dtype=float)
    n_layers = len(params.weights)
    expected = cache.preacts[-1].shape
    if g.shape != expected:
        raise ShapeError(f"grad_features shape {g.shape} != features shape {expected}")

    grads = [None] * (2 * n_layers)
    last = n_layers - 1
    for i in range(last, -1, -1):
        z = cache.preacts[i]
        if i == last:
            dz = g * (z > 0) if params.final_activation == "relu" else g
        elif params.head_dims is not None and i == params.n_trunk:
            if cache.dropout_mask is not None:
                g = g * cache.dropout_mask
            dz = g * (cache.head_hidden > 0) / params.norm_scale
        else:
            dz = g * (z > 0)
        grads[2 * i] = cache.inputs[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ params.weights[i].T
    return grads, g


@dataclass
class OptimizerState:
    """Adam moments and hyperparameters."""

    first_moment: list
    second_moment: list
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps_num=1e-8):
        arrays = params.arrays()
        return cls(
            first_moment=[np.zeros_like(a) for a in arrays],
            second_moment=[np.zeros_like(a) for a in arrays],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            eps_num=eps_num,
        )


def adam_update(state, arrays, grads):
    """In-place Adam update of ``arrays``; advances ``state.step_count``."""
    if len(grads) != len(arrays) or len(state.first_moment) != len(arrays):
        raise ShapeError("gradient list does not match parameter list")
    for a, g in zip(arrays, grads):
        if a.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {a.shape}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for a, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        a -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps_num)


def opt_step(state, params, grads):
    """Apply one Adam step to the encoder and bump its version."""
    adam_update(state, params.arrays(), grads)
    params.touch()
    return params, state


def save_checkpoint(path, params, extra=None):
    """Write ``params`` (and optional JSON-able ``extra``) as JSON.

    Floats are written with ``repr`` precision, so a load/save round trip is
    exact and repeated saves of the same state are byte-identical.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(params.layer_dims),
        "head_dims": None if params.head_dims is None else list(params.head_dims),
        "final_activation": params.final_activation,
        "dropout": params.dropout,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "norm_mean": None if params.norm_mean is None else params.norm_mean.tolist(),
        "norm_scale": None if params.norm_scale is None else params.norm_scale.tolist(),
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, extra)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path} is not a subuda encoder checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {doc.get('version')}")
    as_arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
    params = EncoderParams(
        layer_dims=tuple(doc["layer_dims"]),
        weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        head_dims=None if doc["head_dims"] is None else tuple(doc["head_dims"]),
        final_activation=doc["final_activation"],
        dropout=doc["dropout"],
        norm_mean=as_arr(doc["norm_mean"]),
        norm_scale=as_arr(doc["norm_scale"]),
    )
    return params, doc["extra"]

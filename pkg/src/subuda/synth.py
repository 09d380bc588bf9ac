"""Two-domain Gaussian-mixture data with class/subtype conditional and label shift.

Every class is a mixture of isotropic Gaussian subtypes. Source and target
may differ in subtype means (conditional shift), class proportions and
subtype proportions (label shift). Ground-truth subtype ids are kept on
:class:`DomainData` for evaluation only; training code receives
:class:`SourceView` / :class:`TargetView`, which do not carry them.
"""

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import ValidationError
from .numeric import make_rng

DOMAINS = ("source", "target")


@dataclass
class DomainShiftSpec:
    """Generative description of a source/target pair.

    ``means[domain][n]`` is a ``(K_n, input_dim)`` array and
    ``subtype_proportions[domain][n]`` a length ``K_n`` vector.
    """

    num_classes: int
    subtypes_per_class: tuple
    input_dim: int
    means: dict
    noise_std: float
    class_proportions: dict
    subtype_proportions: dict
    samples_per_domain: dict = field(default_factory=lambda: {"source": 1000, "target": 1000})
    name: str = ""

    def __post_init__(self):
        self.subtypes_per_class = tuple(int(k) for k in self.subtypes_per_class)
        self.means = {d: [np.asarray(m, dtype=float) for m in self.means[d]] for d in DOMAINS}
        self.class_proportions = {
            d: np.asarray(self.class_proportions[d], dtype=float) for d in DOMAINS
        }
        self.subtype_proportions = {
            d: [np.asarray(p, dtype=float) for p in self.subtype_proportions[d]] for d in DOMAINS
        }
        self.samples_per_domain = {d: int(self.samples_per_domain[d]) for d in DOMAINS}
        self.validate()

    def validate(self):
        n = self.num_classes
        if n < 1 or len(self.subtypes_per_class) != n:
            raise ValidationError("subtypes_per_class must list one count per class")
        if any(k < 1 for k in self.subtypes_per_class):
            raise ValidationError("every class needs at least one subtype")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        for d in DOMAINS:
            cp = self.class_proportions[d]
            if cp.shape != (n,) or np.any(cp < 0) or abs(cp.sum() - 1.0) > 1e-9:
                raise ValidationError(f"{d} class_proportions must be {n} non-negatives summing to 1")
            if len(self.means[d]) != n or len(self.subtype_proportions[d]) != n:
                raise ValidationError(f"{d} means/subtype_proportions need one entry per class")
            for c, k in enumerate(self.subtypes_per_class):
                if self.means[d][c].shape != (k, self.input_dim):
                    raise ValidationError(
                        f"{d} means for class {c} must have shape {(k, self.input_dim)}"
                    )
                sp = self.subtype_proportions[d][c]
                if sp.shape != (k,) or np.any(sp < 0) or abs(sp.sum() - 1.0) > 1e-9:
                    raise ValidationError(
                        f"{d} subtype_proportions for class {c} must be {k} non-negatives summing to 1"
                    )
            if self.samples_per_domain[d] < 0:
                raise ValidationError("samples_per_domain must be non-negative")

    @property
    def has_conditional_shift(self):
        return any(
            not np.array_equal(a, b) for a, b in zip(self.means["source"], self.means["target"])
        )

    def to_dict(self):
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "subtypes_per_class": list(self.subtypes_per_class),
            "input_dim": self.input_dim,
            "noise_std": self.noise_std,
            "samples_per_domain": dict(self.samples_per_domain),
            "class_proportions": {d: self.class_proportions[d].tolist() for d in DOMAINS},
            "subtype_proportions": {
                d: [p.tolist() for p in self.subtype_proportions[d]] for d in DOMAINS
            },
            "means": {d: [m.tolist() for m in self.means[d]] for d in DOMAINS},
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            num_classes=doc["num_classes"],
            subtypes_per_class=doc["subtypes_per_class"],
            input_dim=doc["input_dim"],
            means=doc["means"],
            noise_std=doc["noise_std"],
            class_proportions=doc["class_proportions"],
            subtype_proportions=doc["subtype_proportions"],
            samples_per_domain=doc["samples_per_domain"],
            name=doc.get("name", ""),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class LabeledSample(NamedTuple):
    x: np.ndarray
    class_label: int
    true_subtype: int
    domain: str
    id: int


class SourceView(NamedTuple):
    """What the trainer may see of the labeled source domain."""

    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray


class TargetView(NamedTuple):
    """What the trainer may see of the unlabeled target domain."""

    ids: np.ndarray
    X: np.ndarray


@dataclass(frozen=True)
class DomainData:
    """All samples of one domain, columnar."""

    domain: str
    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray
    subtype: np.ndarray

    def __len__(self):
        return len(self.ids)

    def samples(self):
        for i in range(len(self)):
            yield LabeledSample(self.X[i], int(self.y[i]), int(self.subtype[i]), self.domain, int(self.ids[i]))

    def source_view(self):
        return SourceView(self.ids, self.X, self.y)

    def target_view(self):
        return TargetView(self.ids, self.X)

    def training_view(self):
        return self.source_view() if self.domain == "source" else self.target_view()


def _draw_domain(spec, domain, rng, id_offset):
    n = spec.samples_per_domain[domain]
    y = rng.choice(spec.num_classes, size=n, p=spec.class_proportions[domain])
    sub = np.zeros(n, dtype=int)
    for c in range(spec.num_classes):
        idx = np.flatnonzero(y == c)
        sub[idx] = rng.choice(spec.subtypes_per_class[c], size=len(idx), p=spec.subtype_proportions[domain][c])
    noise = rng.standard_normal((n, spec.input_dim))
    X = np.empty((n, spec.input_dim))
    for i in range(n):
        X[i] = spec.means[domain][y[i]][sub[i]]
    X += spec.noise_std * noise
    ids = np.arange(id_offset, id_offset + n)
    return DomainData(domain, ids, X, y.astype(int), sub)


def generate_domain_pair(spec, seed):
    """Sample ``(source, target)`` from ``spec``; deterministic in ``seed``."""
    spec.validate()
    rng = make_rng(seed)
    source = _draw_domain(spec, "source", rng, 0)
    target = _draw_domain(spec, "target", rng, spec.samples_per_domain["source"])
    return source, target


CSV_FIXED_COLUMNS = ["id", "domain", "class", "true_subtype"]


def write_dataset_csv(path, *datasets):
    dim = datasets[0].X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIXED_COLUMNS + [f"x{j}" for j in range(dim)])
        for data in datasets:
            for i in range(len(data)):
                w.writerow(
                    [int(data.ids[i]), data.domain, int(data.y[i]), int(data.subtype[i])]
                    + [repr(float(v)) for v in data.X[i]]
                )


def read_dataset_csv(path):
    """Load a CSV written by :func:`write_dataset_csv` as ``(source, target)``."""
    rows = {d: [] for d in DOMAINS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != CSV_FIXED_COLUMNS:
            raise ValidationError(f"{path}: unexpected header {header[:4]}")
        for row in reader:
            if row[1] not in rows:
                raise ValidationError(f"{path}: unknown domain {row[1]!r}")
            rows[row[1]].append(row)
    out = []
    dim = len(header) - 4
    for d in DOMAINS:
        r = rows[d]
        out.append(
            DomainData(
                d,
                np.array([int(v[0]) for v in r], dtype=int),
                np.array([[float(x) for x in v[4:]] for v in r], dtype=float).reshape(len(r), dim),
                np.array([int(v[2]) for v in r], dtype=int),
                np.array([int(v[3]) for v in r], dtype=int),
            )
        )
    return tuple(out)


# ---------------------------------------------------------------------------
# presets

PRESET_NAMES = (
    "baseline-noshift",
    "class-labelshift",
    "subtype-labelshift",
    "subtype-condshift",
    "missing-subtypes-0",
    "missing-subtypes-25",
    "missing-subtypes-50",
    "missing-subtypes-75",
)

_GEOMETRY_SEED = 20210601


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _base_geometry(subtypes, dim, class_sep=6.0, subtype_sep=3.0, rng=None):
    """Subtype means with inter-class gaps larger than intra-class ones.

    The last subtype of class 0 is pulled towards class 1, forming a
    confusable pair across classes.
    """
    rng = make_rng(_GEOMETRY_SEED if rng is None else rng)
    centers = [class_sep * _unit(rng, dim) for _ in subtypes]
    means = []
    for c, k in enumerate(subtypes):
        m = np.array([centers[c] + subtype_sep * _unit(rng, dim) for _ in range(k)])
        means.append(m)
    if len(subtypes) > 1 and subtypes[0] > 1:
        means[0][-1] = 0.55 * centers[0] + 0.45 * centers[1] + 0.5 * subtype_sep * _unit(rng, dim)
    return means


def _skewed(k, heavy=0.7):
    """Proportions with one dominant subtype, the rest sharing the remainder."""
    if k == 1:
        return np.ones(1)
    p = np.full(k, (1.0 - heavy) / (k - 1))
    p[0] = heavy
    return p


def _make_spec(name, subtypes, dim, src_means, tgt_means, cp_s, cp_t, sp_s, sp_t, noise, n):
    return DomainShiftSpec(
        num_classes=len(subtypes),
        subtypes_per_class=subtypes,
        input_dim=dim,
        means={"source": src_means, "target": tgt_means},
        noise_std=noise,
        class_proportions={"source": cp_s, "target": cp_t},
        subtype_proportions={"source": sp_s, "target": sp_t},
        samples_per_domain={"source": n, "target": n},
        name=name,
    )


def _subtype_shift(means, rng, magnitude, toward):
    """Move every subtype mean by its own offset.

    The offset is ``toward`` times the vector to the nearest subtype of
    another class plus a random component of norm ``magnitude``, so target
    subtypes drift towards foreign classes by different amounts.
    """
    out = []
    for c, m in enumerate(means):
        foreign = np.vstack([means[o] for o in range(len(means)) if o != c]) if len(means) > 1 else m
        moved = m.copy()
        for j in range(len(m)):
            d2 = np.sum((foreign - m[j]) ** 2, axis=1)
            near = foreign[int(np.argmin(d2))]
            moved[j] = m[j] + toward * (near - m[j]) + magnitude * _unit(rng, m.shape[1])
        out.append(moved)
    return out


def make_preset(
    name,
    input_dim=64,
    subtypes=(2, 3, 4),
    noise_std=1.0,
    samples=1500,
    shift=1.0,
    toward=0.3,
    class_sep=6.0,
    subtype_sep=3.0,
):
    """Build one named scenario. Geometry is fixed by an internal seed."""
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    rng = make_rng(_GEOMETRY_SEED)
    if name.startswith("missing-subtypes"):
        subtypes = (4,) * len(subtypes)
    subtypes = tuple(subtypes)
    n_cls = len(subtypes)
    means = _base_geometry(subtypes, input_dim, class_sep, subtype_sep, rng=rng)
    uniform_c = np.full(n_cls, 1.0 / n_cls)
    uniform_s = [np.full(k, 1.0 / k) for k in subtypes]

    if name == "baseline-noshift":
        return _make_spec(name, subtypes, input_dim, means, means, uniform_c, uniform_c,
                          uniform_s, uniform_s, noise_std, samples)
    if name == "class-labelshift":
        cp_t = np.linspace(2.0, 1.0, n_cls)
        cp_t /= cp_t.sum()
        return _make_spec(name, subtypes, input_dim, means, means, uniform_c, cp_t,
                          uniform_s, uniform_s, noise_std, samples)

    tgt_means = _subtype_shift(means, rng, shift, toward)
    # source is dominated by the first subtype, target by the last one
    sp_s = [_skewed(k) for k in subtypes]
    sp_t = [_skewed(k)[::-1].copy() for k in subtypes]
    if name == "subtype-labelshift":
        return _make_spec(name, subtypes, input_dim, means, means, uniform_c, uniform_c,
                          sp_s, sp_t, noise_std, samples)
    if name == "subtype-condshift":
        return _make_spec(name, subtypes, input_dim, means, tgt_means, uniform_c, uniform_c,
                          uniform_s, uniform_s, noise_std, samples)

    frac = int(name.rsplit("-", 1)[1]) / 100.0
    sp_t = []
    for k in subtypes:
        drop = int(round(frac * k))
        p = np.ones(k)
        p[k - drop:] = 0.0
        sp_t.append(p / p.sum())
    return _make_spec(name, subtypes, input_dim, means, tgt_means, uniform_c, uniform_c,
                      uniform_s, sp_t, noise_std, samples)


def scenario_presets(**kwargs):
    """Catalog of every named preset, keyed by name."""
    return {name: make_preset(name, **kwargs) for name in PRESET_NAMES}

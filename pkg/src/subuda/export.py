"""CSV/JSON writers and readers for run artifacts.

Floats are written with ``repr`` so files round-trip exactly and repeated
runs produce identical bytes.
"""

import csv
import json

import numpy as np

from .exceptions import ValidationError
from .trainer import METRIC_COLUMNS

FEATURE_FIXED_COLUMNS = ["id", "domain", "class", "pseudo"]
CLUSTER_COLUMNS = ["class", "subtype", "domain", "member_id"]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in metrics:
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValidationError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [
            {k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()} for row in reader
        ]


def write_feature_csv(path, ids, domains, classes, pseudo, features):
    """Rows ``id,domain,class,pseudo,f0..f{d-1}``."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(FEATURE_FIXED_COLUMNS + [f"f{j}" for j in range(features.shape[1])])
        for i in range(len(features)):
            w.writerow(
                [int(ids[i]), domains[i], int(classes[i]), int(pseudo[i])]
                + [repr(float(v)) for v in features[i]]
            )


def read_feature_csv(path, domain=None):
    """Load a feature export; returns ``(ids, domains, classes, pseudo, features)``.

    Any CSV whose numeric columns are named ``f*`` or ``x*`` is accepted;
    missing bookkeeping columns are filled with defaults.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [j for j, h in enumerate(header) if h[:1] in ("f", "x") and h[1:].isdigit()]
        if not cols:
            raise ValidationError(f"{path}: no feature columns (f0.. or x0..)")
        pos = {h: j for j, h in enumerate(header)}
        ids, doms, cls, pseudo, feats = [], [], [], [], []
        for n, row in enumerate(reader):
            d = row[pos["domain"]] if "domain" in pos else ""
            if domain is not None and d != domain:
                continue
            ids.append(int(row[pos["id"]]) if "id" in pos else n)
            doms.append(d)
            cls.append(int(row[pos["class"]]) if "class" in pos else -1)
            pseudo.append(int(row[pos["pseudo"]]) if "pseudo" in pos else -1)
            feats.append([float(row[j]) for j in cols])
    return (
        np.array(ids, dtype=int),
        doms,
        np.array(cls, dtype=int),
        np.array(pseudo, dtype=int),
        np.array(feats, dtype=float).reshape(len(feats), len(cols)),
    )


def write_cluster_dump(path, clusters, window, centroid_path=None):
    """Member table ``class,subtype,domain,member_id`` of a clustered window.

    ``subtype`` numbers clusters within their class. With ``centroid_path``
    a second table ``class,subtype,kind,weight,n_source,n_target,c0..`` holds
    the source, target and joint centroids.
    """
    ids = np.asarray(window.ids)
    per_class = {}
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(CLUSTER_COLUMNS)
        for c in clusters:
            k = per_class.get(c.class_id, 0)
            per_class[c.class_id] = k + 1
            for r in c.source_rows:
                w.writerow([c.class_id, k, "source", int(ids[r])])
            for r in c.target_rows:
                w.writerow([c.class_id, k, "target", int(ids[r])])
    if centroid_path is None:
        return
    dim = window.features.shape[1]
    per_class = {}
    with open(centroid_path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["class", "subtype", "kind", "weight", "n_source", "n_target"] + [f"c{j}" for j in range(dim)])
        for c in clusters:
            k = per_class.get(c.class_id, 0)
            per_class[c.class_id] = k + 1
            for kind, mu in (("source", c.mu_s), ("target", c.mu_t), ("joint", c.mu_st)):
                if mu is None:
                    continue
                w.writerow(
                    [c.class_id, k, kind, repr(float(c.weight)), c.M_s, c.M_t]
                    + [repr(float(v)) for v in mu]
                )


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

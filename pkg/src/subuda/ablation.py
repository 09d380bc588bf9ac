"""Variant grids over seeds: component ablations and the missing-subtype sweep."""

import csv

import numpy as np

from .synth import generate_domain_pair, make_preset
from .trainer import TrainConfig, run

ABLATION_VARIANTS = (
    "full",
    "no-omega",
    "pooled-centroid",
    "no-tau",
    "single-subtype",
    "source-only",
    "class-only",
)

MISSING_FRACTIONS = (0, 25, 50, 75)

TABLE_COLUMNS = ("preset", "variant", "n_seeds", "mean_acc", "sd_acc", "per_seed")

# mining scale used when the base config leaves mining off; matched to the
# squared-distance scale of trained features (targets sit ~0.1 from centroids)
DEFAULT_TAU = 0.4
DEFAULT_MINING_EPS = 0.01


def variant_config(variant, base, n_subtypes):
    """``TrainConfig`` for one named variant derived from ``base``.

    ``base.cluster`` supplies mode, eps, tau and k-means settings; the
    subtype counts are replaced by ``n_subtypes``. When ``base`` leaves
    mining off, :data:`DEFAULT_TAU` is filled in, together with
    :data:`DEFAULT_MINING_EPS` in k-means mode (where eps only drives mining).
    """
    cluster = base.cluster.replace(n_subtypes=n_subtypes)
    if cluster.tau is None:
        cluster = cluster.replace(tau=DEFAULT_TAU)
        if cluster.mode == "kmeans":
            cluster = cluster.replace(eps=DEFAULT_MINING_EPS)
    if variant == "full":
        pass
    elif variant == "no-omega":
        cluster = cluster.replace(weighting="uniform")
    elif variant == "pooled-centroid":
        cluster = cluster.replace(centroid="pooled")
    elif variant == "no-tau":
        cluster = cluster.replace(tau=None)
    elif variant == "single-subtype":
        cluster = cluster.replace(n_subtypes=1)
    elif variant == "source-only":
        return base.replace(alpha=0.0, beta=0.0, cluster=cluster)
    elif variant == "class-only":
        return base.replace(beta=0.0, cluster=cluster)
    else:
        raise KeyError(f"unknown variant {variant!r}; choose from {', '.join(ABLATION_VARIANTS)}")
    return base.replace(cluster=cluster)


def run_variants(spec, variants, seeds, base=None, log=None):
    """Final target accuracy of every variant on every seed.

    Returns a dict ``variant -> list of accuracies`` in seed order. The
    dataset for seed ``s`` is drawn with seed ``s`` and training uses the
    same seed, so variants are compared on identical data.
    """
    base = base or TrainConfig()
    out = {v: [] for v in variants}
    for seed in seeds:
        source, target = generate_domain_pair(spec, seed)
        for v in variants:
            cfg = variant_config(v, base, spec.subtypes_per_class).replace(
                seed=int(seed), eval_every=max(base.total_iterations, 1)
            )
            _, metrics = run(cfg, source, target)
            acc = metrics[-1]["target_acc"] if metrics else float("nan")
            out[v].append(float(acc))
            if log is not None:
                log(spec.name, v, seed, acc)
    return out


def summarize(preset, results):
    """Rows with mean and sample standard deviation per variant."""
    rows = []
    for variant, accs in results.items():
        a = np.asarray(accs, dtype=float)
        sd = float(a.std(ddof=1)) if len(a) > 1 else 0.0
        rows.append(
            {
                "preset": preset,
                "variant": variant,
                "n_seeds": len(a),
                "mean_acc": float(a.mean()) if len(a) else float("nan"),
                "sd_acc": sd,
                "per_seed": list(a),
            }
        )
    return rows


def ablation_suite(preset, seeds, base=None, variants=ABLATION_VARIANTS, preset_kwargs=None, log=None):
    """Run the variant grid on a named preset and summarize it.

    Parameters
    ----------
    preset : str
        Name accepted by :func:`make_preset`.
    seeds : iterable of int
    base : TrainConfig, optional
        Shared settings; defaults to ``TrainConfig()``.
    variants : sequence of str
        Subset of :data:`ABLATION_VARIANTS`.

    Returns
    -------
    list of dict
        One row per variant with keys :data:`TABLE_COLUMNS`.
    """
    spec = make_preset(preset, **(preset_kwargs or {}))
    return summarize(preset, run_variants(spec, variants, list(seeds), base, log))


def missing_subtype_sweep(seeds, base=None, variants=("full", "class-only"), fractions=MISSING_FRACTIONS,
                          preset_kwargs=None, log=None):
    """Run ``variants`` on every ``missing-subtypes-*`` preset."""
    rows = []
    for frac in fractions:
        name = f"missing-subtypes-{frac}"
        spec = make_preset(name, **(preset_kwargs or {}))
        rows.extend(summarize(name, run_variants(spec, variants, list(seeds), base, log)))
    return rows


def write_table(path, rows):
    """Write summary rows as CSV; per-seed accuracies are ``;``-joined."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r["preset"],
                    r["variant"],
                    r["n_seeds"],
                    repr(float(r["mean_acc"])),
                    repr(float(r["sd_acc"])),
                    ";".join(repr(float(a)) for a in r["per_seed"]),
                ]
            )

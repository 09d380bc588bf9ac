"""Command line entry point: ``subuda <command> [options]``.

Every command takes ``--seed``; repeated invocations with the same flags
write byte-identical files.
"""

import argparse
import logging
import sys

import numpy as np

from .ablation import ABLATION_VARIANTS, ablation_suite, missing_subtype_sweep, write_table
from .clustering import ClusterConfig, discover_subtypes
from .evaluation import best_k, consensus_cdf_auc, encode, evaluate, prototype_set
from .exceptions import SubUDAError
from .export import (
    read_feature_csv,
    write_cluster_dump,
    write_feature_csv,
    write_json,
    write_metrics_csv,
)
from .gradcheck import loss_gradchecks
from .memory import window_structure
from .numeric import load_checkpoint, make_rng, save_checkpoint
from .prototypes import pseudo_label
from .synth import (
    PRESET_NAMES,
    DomainShiftSpec,
    generate_domain_pair,
    make_preset,
    read_dataset_csv,
    write_dataset_csv,
)
from .trainer import TrainConfig, run

logger = logging.getLogger("subuda")


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _k_range(text):
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def _load_data(args):
    if args.data:
        return read_dataset_csv(args.data)
    spec = DomainShiftSpec.load(args.spec) if getattr(args, "spec", None) else make_preset(args.preset)
    return generate_domain_pair(spec, args.seed)


def _add_data_args(p, required=False):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--data", help="dataset CSV written by 'generate'")
    g.add_argument("--preset", choices=PRESET_NAMES, help="generate a preset dataset with --seed")
    g.add_argument("--spec", help="JSON DomainShiftSpec file, sampled with --seed")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    if args.spec:
        spec = DomainShiftSpec.load(args.spec)
    else:
        spec = make_preset(
            args.preset or "subtype-condshift",
            input_dim=args.input_dim,
            samples=args.samples,
            noise_std=args.noise,
        )
    source, target = generate_domain_pair(spec, args.seed)
    write_dataset_csv(args.out, source, target)
    if args.spec_out:
        spec.save(args.spec_out)
    logger.info("wrote %d source and %d target rows to %s", len(source), len(target), args.out)
    return 0


def _train_config(args):
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    changes = {"seed": args.seed}
    for name, attr in (
        ("iterations", "total_iterations"),
        ("alpha", "alpha"),
        ("beta", "beta"),
        ("lam", "lam"),
        ("batch_size", "batch_size"),
        ("window", "window"),
        ("lr", "learning_rate"),
        ("eval_every", "eval_every"),
    ):
        v = getattr(args, name)
        if v is not None:
            changes[attr] = v
    cluster = {}
    for name in ("mode", "eps", "tau", "min_size"):
        v = getattr(args, name)
        if v is not None:
            cluster[name] = v
    if args.n_subtypes:
        ks = _int_list(args.n_subtypes)
        cluster["n_subtypes"] = ks[0] if len(ks) == 1 else ks
    if cluster:
        changes["cluster"] = cfg.cluster.replace(**cluster)
    return cfg.replace(**changes)


def cmd_train(args):
    source, target = _load_data(args)
    cfg = _train_config(args)
    if not args.n_subtypes and not args.config and getattr(args, "preset", None):
        cfg = cfg.replace(cluster=cfg.cluster.replace(n_subtypes=make_preset(args.preset).subtypes_per_class))
    cfg.validate()
    if args.save_config:
        cfg.save(args.save_config)
    state, metrics = run(cfg, source, target)
    if args.metrics:
        write_metrics_csv(args.metrics, metrics)
    if args.checkpoint:
        save_checkpoint(args.checkpoint, state.params, {"config": cfg.to_dict(), "num_classes": state.num_classes})
    if args.clusters and len(state.queue):
        window = state.queue.window()
        structure = window_structure(window, state.num_classes, cfg.cluster, make_rng(cfg.seed))
        write_cluster_dump(args.clusters, structure.clusters, window, args.clusters_centroids)
    if metrics:
        last = metrics[-1]
        print(f"iteration {last['iteration']} target_acc {last['target_acc']:.4f} source_acc {last['source_acc']:.4f}")
    return 0


def cmd_eval(args):
    params, extra = load_checkpoint(args.checkpoint)
    source, target = _load_data(args)
    num_classes = int(extra.get("num_classes", max(source.y.max(), target.y.max()) + 1))
    report = evaluate(params, source, target, num_classes, a_distance=args.a_distance, seed=args.seed)
    cfg = ClusterConfig.from_dict(extra["config"]["cluster"]) if "config" in extra else ClusterConfig()
    fs, ft = encode(params, source.X), encode(params, target.X)
    _, pseudo = prototype_set(fs, source.y, ft, num_classes)
    feats = np.vstack([fs, ft])
    n_s = len(fs)
    clusters = discover_subtypes(
        feats,
        {n: np.flatnonzero(source.y == n) for n in range(num_classes)},
        {n: n_s + np.flatnonzero(pseudo == n) for n in range(num_classes)},
        cfg,
        make_rng(args.seed),
    )
    report.cluster_counts = [sum(c.class_id == n for c in clusters) for n in range(num_classes)]
    if args.consensus:
        rows = consensus_cdf_auc(ft, _k_range(args.consensus), args.resamples, args.subsample, make_rng(args.seed))
        report.consensus = rows
    doc = report.to_dict()
    if args.out:
        write_json(args.out, doc)
    else:
        write_json("/dev/stdout", doc)
    return 0


def cmd_ablate(args):
    seeds = range(args.seed, args.seed + args.seeds)
    base = TrainConfig(total_iterations=args.iterations)

    def log(preset, variant, seed, acc):
        logger.info("%s %s seed %d acc %.4f", preset, variant, seed, acc)

    variants = tuple(args.variants.split(",")) if args.variants else ABLATION_VARIANTS
    if args.missing_sweep:
        rows = missing_subtype_sweep(seeds, base, variants=variants if args.variants else ("full", "class-only"), log=log)
    else:
        rows = ablation_suite(args.preset, seeds, base, variants=variants, log=log)
    write_table(args.out, rows)
    for r in rows:
        print(f"{r['preset']:<22} {r['variant']:<16} {r['mean_acc']:.4f} +- {r['sd_acc']:.4f}")
    return 0


def cmd_consensus(args):
    _, _, _, _, feats = read_feature_csv(args.features, domain=args.domain)
    rows = consensus_cdf_auc(feats, _k_range(args.k), args.resamples, args.subsample, make_rng(args.seed))
    with open(args.out, "w") as fh:
        fh.write("k,auc,delta,mean_consensus\n")
        for r in rows:
            fh.write(f"{r['k']},{r['auc']!r},{r['delta']!r},{r['mean_consensus']!r}\n")
    print(f"best k {best_k(rows)}")
    return 0


def cmd_gradcheck(args):
    results = loss_gradchecks(seed=args.seed, tolerance=args.tolerance)
    ok = True
    lines = ["suite,error,tolerance,passed"]
    for r in results:
        ok &= r.passed
        print(f"{r.name:<6} max rel error {r.error:.3e} ({'PASS' if r.passed else 'FAIL'})")
        lines.append(f"{r.name},{r.error!r},{r.tolerance!r},{int(r.passed)}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0 if ok else 1


def cmd_export_features(args):
    params, extra = load_checkpoint(args.checkpoint)
    source, target = _load_data(args)
    num_classes = int(extra.get("num_classes", max(source.y.max(), target.y.max()) + 1))
    fs, ft = encode(params, source.X), encode(params, target.X)
    protos, _ = prototype_set(fs, source.y, ft, num_classes)
    feats = np.vstack([fs, ft])
    pseudo = pseudo_label(feats, protos["s"])
    write_feature_csv(
        args.out,
        np.concatenate([source.ids, target.ids]),
        ["source"] * len(fs) + ["target"] * len(ft),
        np.concatenate([source.y, target.y]),
        pseudo,
        feats,
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="subuda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.set_defaults(func=func)
        return p

    p = command("generate", cmd_generate, "sample a two-domain dataset to CSV")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESET_NAMES, help="named scenario (default subtype-condshift)")
    g.add_argument("--spec", help="JSON DomainShiftSpec file")
    p.add_argument("--samples", type=int, default=1500, help="samples per domain for presets")
    p.add_argument("--input-dim", type=int, default=64, help="input dimension for presets")
    p.add_argument("--noise", type=float, default=1.0, help="isotropic noise std for presets")
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--spec-out", help="also write the generating spec as JSON")

    p = command("train", cmd_train, "train an encoder and write metrics/checkpoint")
    _add_data_args(p, required=True)
    p.add_argument("--config", help="JSON TrainConfig; flags below override it")
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lam", type=float, help="queue momentum")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--window", type=int, help="number of queued batches")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--mode", choices=("kmeans", "subgraph"), help="subtype clustering mode")
    p.add_argument("--n-subtypes", help="subtypes per class, e.g. 2 or 2,3,4")
    p.add_argument("--eps", type=float, help="reliability-path threshold (squared distance)")
    p.add_argument("--tau", type=float, help="mining margin (squared distance)")
    p.add_argument("--min-size", type=int, help="minimum sub-graph size (kept when larger)")
    p.add_argument("--metrics", help="metrics CSV path")
    p.add_argument("--checkpoint", help="encoder checkpoint JSON path")
    p.add_argument("--clusters", help="cluster member CSV of the final window")
    p.add_argument("--clusters-centroids", help="cluster centroid CSV of the final window")
    p.add_argument("--save-config", help="write the resolved TrainConfig as JSON")

    p = command("eval", cmd_eval, "evaluate a checkpoint; report as JSON")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p, required=True)
    p.add_argument("--a-distance", action="store_true", help="also compute the proxy A-distance")
    p.add_argument("--consensus", metavar="KMIN-KMAX", help="consensus AUC over target features")
    p.add_argument("--resamples", type=int, default=50)
    p.add_argument("--subsample", type=float, default=0.8)
    p.add_argument("--out", help="report path (default stdout)")

    p = command("ablate", cmd_ablate, "run the ablation grid over consecutive seeds")
    p.add_argument("--preset", choices=PRESET_NAMES, default="subtype-labelshift")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--variants", help=f"comma list from {','.join(ABLATION_VARIANTS)}")
    p.add_argument("--missing-sweep", action="store_true", help="run the missing-subtypes presets instead")
    p.add_argument("--out", required=True, help="comparison CSV path")

    p = command("consensus", cmd_consensus, "consensus-clustering CDF area per K")
    p.add_argument("--features", required=True, help="feature CSV (f0.. or x0.. columns)")
    p.add_argument("--domain", help="restrict to rows of this domain")
    p.add_argument("--k", default="2-6", metavar="KMIN-KMAX")
    p.add_argument("--resamples", type=int, default=50)
    p.add_argument("--subsample", type=float, default=0.8)
    p.add_argument("--out", required=True, help="AUC table CSV path")

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of every loss; exit 1 on failure")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", help="results CSV path")

    p = command("export-features", cmd_export_features, "write encoder features of a dataset as CSV")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p, required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (SubUDAError, OSError, KeyError) as exc:
        print(f"subuda {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: dataset generation, training, grids, analysis."""

import argparse
import json
import sys

import numpy as np

from .data import Dataset, load_dataset, make_splits, save_dataset
from .errors import Diverged, NlsdError
from .model import ModelConfig, parse_variant
from .synthetic import (MEANS_CLOSE, MEANS_DEFAULT, SyntheticSpec,
                        gen_base_edges, gen_features, gen_sequence)
from .train import (TrainConfig, aggregate, emit_results, load_results,
                    misclassification_analysis, plot_accuracy_curves, run_ablation,
                    run_grid, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _add_model_args(p):
    p.add_argument("--variant", default="MLP-O(d)-NLSD")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _train_config(args, dataset, variant=None):
    fields = parse_variant(variant or args.variant)
    mcfg = ModelConfig(d=args.d, channels=args.channels, layers=args.layers,
                       input_dim=dataset.features.shape[1],
                       num_classes=dataset.num_classes, **fields)
    return TrainConfig(lr=args.lr, weight_decay=args.weight_decay,
                       max_epochs=args.epochs, patience=args.patience,
                       seed=args.seed, model=mcfg)


def cmd_gen(args):
    spec = SyntheticSpec(base=args.base,
                         mutation_mode=args.mode,
                         budget=args.budget,
                         percentages=tuple(args.percent),
                         seed=args.seed,
                         knn_k=args.k,
                         means=MEANS_CLOSE if args.close_means else MEANS_DEFAULT)
    features, labels = gen_features(spec)
    base = gen_base_edges(spec, features, labels)
    graphs = gen_sequence(spec, base)
    for pct, g in zip(spec.percentages, graphs):
        ds = Dataset(features, labels, g, spec.num_classes)
        ds.splits = make_splits(ds, seed=spec.seed, folds=args.folds)
        path = f"{args.out}_p{pct}.json"
        save_dataset(path, ds)
        print(f"wrote {path} ({g.num_edges} edges)")
    return EXIT_OK


def cmd_train(args):
    dataset = load_dataset(args.dataset)
    if dataset.splits is None:
        dataset.splits = make_splits(dataset, seed=args.seed, folds=args.folds)
    cfg = _train_config(args, dataset)
    rows = []
    for fi, masks in enumerate(dataset.splits[:args.folds]):
        res = train(dataset, masks, cfg)
        rows.append({"dataset": args.dataset, "variant": args.variant, "fold": fi,
                     "seed": args.seed, "train_acc": res.train_acc,
                     "val_acc": res.val_acc, "test_acc": res.test_acc,
                     "epoch": res.epoch})
        print(f"fold {fi}: test {res.test_acc:.4f} (val {res.val_acc:.4f}, epoch {res.epoch})")
    accs = [r["test_acc"] for r in rows]
    print(f"mean test accuracy: {np.mean(accs):.4f} +/- {np.std(accs):.4f}")
    if args.out:
        emit_results(rows, args.out)
    return EXIT_OK


def cmd_grid(args):
    datasets, names = [], []
    for path in args.dataset:
        ds = load_dataset(path)
        if ds.splits is None:
            ds.splits = make_splits(ds, seed=args.seed, folds=args.folds)
        ds.splits = ds.splits[:args.folds]
        datasets.append(ds)
        names.append(path)
    cfg = _train_config(args, datasets[0], variant=args.variants[0]) if args.variants else None
    rows = run_grid(datasets, args.variants, cfg, dataset_names=names,
                    seeds=tuple(range(args.seeds)), workers=args.workers)
    for (name, variant), (mean, std) in sorted(aggregate(rows).items()):
        print(f"{name} {variant}: {mean:.4f} +/- {std:.4f}")
    if args.out:
        emit_results(rows, args.out)
    return EXIT_OK


def cmd_ablate(args):
    dataset = load_dataset(args.dataset)
    if dataset.splits is None:
        dataset.splits = make_splits(dataset, seed=args.seed, folds=args.folds)
    cfg = _train_config(args, dataset)
    rows = run_ablation(dataset, cfg, args.variant, dataset.splits[:args.folds],
                        seeds=(args.seed,))
    columns = ["dataset", "variant", "fold", "seed", "shared_sheaf", "use_w2",
               "use_sigma", "train_acc", "val_acc", "test_acc", "epoch"]
    if args.out:
        emit_results(rows, args.out, columns=columns)
    for row in rows:
        print(f"shared={row['shared_sheaf']} w2={row['use_w2']} sigma={row['use_sigma']}"
              f" -> test {row['test_acc']:.4f}")
    return EXIT_OK


def cmd_analyze(args):
    """Wrong-first / wrong-always analysis over a dataset sequence."""
    graphs, predictions, percentages = [], [], []
    labels = None
    for path, pct in zip(args.dataset, args.percent):
        ds = load_dataset(path)
        if ds.splits is None:
            ds.splits = make_splits(ds, seed=args.seed, folds=1)
        cfg = _train_config(args, ds)
        _, pred = train(ds, ds.splits[0], cfg, return_predictions=True)
        graphs.append(ds.graph)
        predictions.append(pred)
        percentages.append(pct)
        labels = ds.labels
    report = misclassification_analysis(graphs, labels, predictions, percentages)
    print(f"wrong-first nodes: {len(report['wrong_first'])}, "
          f"wrong-always nodes: {len(report['wrong_always'])}")
    print("pct  wrong-first-avg-edges  wrong-always-avg-edges")
    for row in report["rows"]:
        print(f"{row['percentage']:>3}  {row['wrong_first_avg_edges']:.2f}  "
              f"{row['wrong_always_avg_edges']:.2f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"wrong_first": report["wrong_first"].tolist(),
                       "wrong_always": report["wrong_always"].tolist(),
                       "rows": report["rows"]}, fh, indent=2)
    return EXIT_OK


def cmd_plot(args):
    rows = load_results(args.results)
    size = plot_accuracy_curves(rows, args.out, x_key=args.x_key)
    print(f"wrote {args.out} ({size} bytes)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="nlsd",
                                     description="Nonlinear sheaf diffusion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic dataset sequences")
    p.add_argument("--base", choices=["knn", "er"], default="knn")
    p.add_argument("--mode", choices=["inter", "intra", "both"], default="inter")
    p.add_argument("--budget", choices=["constant", "increasing"], default="constant")
    p.add_argument("--percent", type=int, nargs="+", default=[0, 10, 20, 40, 80, 100])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--close-means", action="store_true")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one variant on one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out")
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="variants x datasets x folds grid")
    p.add_argument("--dataset", nargs="+", required=True)
    p.add_argument("--variants", nargs="+", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    _add_model_args(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ablate", help="8-way flag ablation for one variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out")
    _add_model_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="wrong-first/wrong-always analysis")
    p.add_argument("--dataset", nargs="+", required=True,
                   help="sequence dataset files, one per percentage")
    p.add_argument("--percent", type=int, nargs="+", required=True)
    p.add_argument("--out")
    _add_model_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="accuracy-vs-percentage curves from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--x-key", default="percentage")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (NlsdError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Training loop, experiment grid, ablations, and result emission."""

import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from .errors import Diverged, EmptyMask, IncompleteSequence, IoError
from .model import ModelConfig, collect_params, forward, init_params, loss
from .rng import make_rng

RESULT_COLUMNS = ["dataset", "variant", "fold", "seed",
                  "train_acc", "val_acc", "test_acc", "epoch"]


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.max_epochs < 1:
            raise ValueError("rates must be nonnegative and max_epochs positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


@dataclass
class RunResult:
    train_acc: float
    val_acc: float
    test_acc: float
    epoch: int
    wall_time: float
    config: TrainConfig


class Adam:
    """Standard Adam with decoupled-from-nothing L2 weight decay."""

    def __init__(self, params, lr=0.01, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def accuracy(logits, labels, mask):
    pred = np.argmax(logits, axis=1)
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMask("accuracy mask selects no nodes")
    return float(np.mean(pred[m] == labels[m]))


def train(dataset, fold_masks, config, return_predictions=False):
    """Train one model on one fold; test accuracy is taken at the epoch of
    best validation accuracy."""
    t0 = time.time()
    rng = make_rng(config.seed, stream=7)
    params = init_params(config.model, rng)
    leaves = collect_params(params)
    opt = Adam(leaves, lr=config.lr, weight_decay=config.weight_decay)
    labels = dataset.labels
    best = {"val": -1.0, "test": 0.0, "train": 0.0, "epoch": 0, "pred": None}
    stale = 0
    for epoch in range(config.max_epochs):
        opt.zero_grad()
        logits = forward(dataset.features, dataset.graph, params, config.model)
        objective = loss(logits, labels, fold_masks["train"])
        if not np.isfinite(objective.value):
            raise Diverged(epoch)
        objective.backward()
        opt.step()
        val_acc = accuracy(logits.value, labels, fold_masks["val"])
        if val_acc > best["val"]:
            best.update(val=val_acc,
                        test=accuracy(logits.value, labels, fold_masks["test"]),
                        train=accuracy(logits.value, labels, fold_masks["train"]),
                        epoch=epoch,
                        pred=np.argmax(logits.value, axis=1) if return_predictions else None)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    result = RunResult(best["train"], best["val"], best["test"], best["epoch"],
                       time.time() - t0, config)
    if return_predictions:
        return result, best["pred"]
    return result


def run_grid(datasets, variants, base_config, folds=None, dataset_names=None,
             seeds=(0,), workers=1):
    """Cartesian product of datasets x variants x folds x seeds.

    ``variants`` are roster names (see model.VARIANT_NAMES); returns a list of
    row dicts in RESULT_COLUMNS order plus the aggregate per (dataset, variant).
    """
    rows = []
    tasks = []
    for di, dataset in enumerate(datasets):
        name = dataset_names[di] if dataset_names else f"dataset{di}"
        fold_list = folds if folds is not None else dataset.splits
        for variant in variants:
            fields = model_mod.parse_variant(variant)
            for fi, masks in enumerate(fold_list):
                for seed in seeds:
                    mcfg = replace(base_config.model,
                                   input_dim=dataset.features.shape[1],
                                   num_classes=dataset.num_classes, **fields)
                    cfg = replace(base_config, seed=seed, model=mcfg)
                    tasks.append((name, variant, fi, seed, dataset, masks, cfg))
    if workers > 1:
        import concurrent.futures
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    rows.extend(results)
    return rows


def _run_one(task):
    name, variant, fold, seed, dataset, masks, cfg = task
    res = train(dataset, masks, cfg)
    return {"dataset": name, "variant": variant, "fold": fold, "seed": seed,
            "train_acc": res.train_acc, "val_acc": res.val_acc,
            "test_acc": res.test_acc, "epoch": res.epoch}


def aggregate(rows):
    """Mean and std of test accuracy per (dataset, variant)."""
    cells = {}
    for row in rows:
        cells.setdefault((row["dataset"], row["variant"]), []).append(row["test_acc"])
    return {key: (float(np.mean(vals)), float(np.std(vals)))
            for key, vals in cells.items()}


def ablation_grid():
    """The 8 combinations of layer-shared sheaf, W2, and activation flags."""
    combos = []
    for shared in (False, True):
        for use_w2 in (False, True):
            for use_sigma in (False, True):
                combos.append({"shared_sheaf": shared, "use_w2": use_w2,
                               "use_sigma": use_sigma})
    return combos


def run_ablation(dataset, base_config, variant, folds, seeds=(0,)):
    """Train the variant under every ablation flag combination."""
    rows = []
    fields = model_mod.parse_variant(variant)
    for combo in ablation_grid():
        for fi, masks in enumerate(folds):
            for seed in seeds:
                mcfg = replace(base_config.model,
                               input_dim=dataset.features.shape[1],
                               num_classes=dataset.num_classes, **fields, **combo)
                cfg = replace(base_config, seed=seed, model=mcfg)
                res = train(dataset, masks, cfg)
                row = {"dataset": "ablation", "variant": variant, "fold": fi,
                       "seed": seed, "train_acc": res.train_acc,
                       "val_acc": res.val_acc, "test_acc": res.test_acc,
                       "epoch": res.epoch}
                row.update(combo)
                rows.append(row)
    return rows


def misclassification_analysis(graphs, labels, predictions, percentages):
    """Wrong-first / wrong-always node sets and their average incident-edge
    counts at each percentage of the mutation sequence.

    ``predictions[k]`` are the predicted labels on graphs[k]; percentage 0
    must be present and first.
    """
    if len(predictions) != len(percentages) or len(graphs) != len(percentages):
        raise IncompleteSequence("need one prediction set per percentage")
    labels = np.asarray(labels)
    wrong = [np.asarray(pred) != labels for pred in predictions]
    wrong_first = wrong[0].copy()
    for w in wrong[1:]:
        wrong_first &= ~w
    wrong_always = wrong[0].copy()
    for w in wrong[1:]:
        wrong_always &= w
    report = {"wrong_first": np.nonzero(wrong_first)[0],
              "wrong_always": np.nonzero(wrong_always)[0],
              "rows": []}
    for pct, g in zip(percentages, graphs):
        deg = g.degrees()
        row = {"percentage": pct,
               "wrong_first_avg_edges": float(np.mean(deg[wrong_first])) if wrong_first.any() else 0.0,
               "wrong_always_avg_edges": float(np.mean(deg[wrong_always])) if wrong_always.any() else 0.0}
        report["rows"].append(row)
    return report


def emit_results(rows, path, columns=None):
    """Write result rows as CSV with a stable column order."""
    columns = columns or RESULT_COLUMNS
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def load_results(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            for key in ("train_acc", "val_acc", "test_acc"):
                if key in row and row[key] != "":
                    row[key] = float(row[key])
            for key in ("fold", "seed", "epoch"):
                if key in row and row[key] != "":
                    row[key] = int(row[key])
            rows.append(row)
    return rows


def plot_accuracy_curves(rows, path, x_key="percentage"):
    """Accuracy-vs-percentage line chart per model variant (PNG)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    series = {}
    for row in rows:
        series.setdefault(row["variant"], []).append((float(row[x_key]), row["test_acc"]))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for variant, pts in sorted(series.items()):
        xs = sorted({x for x, _ in pts})
        means = [np.mean([acc for x, acc in pts if x == xv]) for xv in xs]
        ax.plot(xs, means, marker="o", label=variant)
    ax.set_xlabel("% random edges")
    ax.set_ylabel("test accuracy")
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)
    return os.path.getsize(path)

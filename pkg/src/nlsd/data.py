"""Dataset container, JSON serialization, and the split protocol."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, TooFewNodes
from .graph import Graph, build_graph
from .rng import make_rng


@dataclass
class Dataset:
    features: np.ndarray   # n x p raw features
    labels: np.ndarray     # n class ids
    graph: Graph
    num_classes: int
    splits: list = None    # optional list of {"train"|"val"|"test": bool masks}

    @property
    def n(self):
        return len(self.labels)


def save_dataset(path, dataset):
    doc = {
        "n": int(dataset.n),
        "num_classes": int(dataset.num_classes),
        "features": dataset.features.tolist(),
        "labels": dataset.labels.tolist(),
        "edges": dataset.graph.edges.tolist(),
    }
    if dataset.splits is not None:
        doc["splits"] = [{k: np.nonzero(m)[0].tolist() for k, m in fold.items()}
                         for fold in dataset.splits]
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read dataset {path}: {exc}") from None
    for key in ("n", "num_classes", "features", "labels", "edges"):
        if key not in doc:
            raise ParseError(key)
    n = int(doc["n"])
    features = np.asarray(doc["features"], dtype=np.float64)
    labels = np.asarray(doc["labels"], dtype=np.int64)
    if features.shape[0] != n or labels.shape[0] != n:
        raise ParseError(f"features/labels length does not match n={n}")
    graph = build_graph(n, doc["edges"], labels)
    splits = None
    if "splits" in doc:
        splits = []
        for fold in doc["splits"]:
            masks = {}
            for name in ("train", "val", "test"):
                m = np.zeros(n, dtype=bool)
                m[np.asarray(fold[name], dtype=np.int64)] = True
                masks[name] = m
            splits.append(masks)
    return Dataset(features, labels, graph, int(doc["num_classes"]), splits)


def make_splits(dataset, seed=0, folds=10, fractions=(0.48, 0.32, 0.20)):
    """Per-class stratified train/val/test masks; remainders assigned
    train-first, then val, then test."""
    labels = dataset.labels
    splits = []
    for fold in range(folds):
        rng = make_rng(seed, stream=1000 + fold)
        train = np.zeros(dataset.n, dtype=bool)
        val = np.zeros(dataset.n, dtype=bool)
        test = np.zeros(dataset.n, dtype=bool)
        for c in range(dataset.num_classes):
            members = np.nonzero(labels == c)[0]
            if len(members) < 3:
                raise TooFewNodes(f"class {c} has only {len(members)} nodes")
            perm = rng.permutation(members)
            nc = len(members)
            counts = [int(np.floor(f * nc)) for f in fractions]
            for i in range(nc - sum(counts)):
                counts[i % 3] += 1
            a, b = counts[0], counts[0] + counts[1]
            train[perm[:a]] = True
            val[perm[a:b]] = True
            test[perm[b:]] = True
        splits.append({"train": train, "val": val, "test": test})
    return splits

"""Three-community synthetic benchmark: Gaussian features, intra-community
base edges (k-NN or Erdos-Renyi), and edge-mutation sequences."""

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted
from .graph import Graph, build_graph, erdos_renyi_edges, knn_edges
from .rng import make_rng

MEANS_DEFAULT = ((0.0, 0.0), (1.0, 1.0), (0.0, 1.0))
MEANS_CLOSE = ((0.0, 0.0), (0.1, 0.1), (0.0, 0.1))


@dataclass(frozen=True)
class SyntheticSpec:
    nodes_per_class: int = 500
    num_classes: int = 3
    means: tuple = MEANS_DEFAULT
    covariance_scale: float = 3.0
    base: str = "knn"            # knn | er
    knn_k: int = 5
    er_p: float = 0.005
    mutation_mode: str = "inter"  # inter | intra | both
    budget: str = "constant"      # constant (swap) | increasing (add only)
    percentages: tuple = field(default=(0, 10, 20, 40, 80, 100))
    seed: int = 0

    def __post_init__(self):
        pct = tuple(self.percentages)
        if any(p < 0 or p > 100 for p in pct) and self.budget == "constant":
            raise ValueError("constant-budget percentages must lie in [0, 100]")
        if list(pct) != sorted(pct):
            raise ValueError("percentages must be nondecreasing")
        object.__setattr__(self, "percentages", pct)
        object.__setattr__(self, "means", tuple(tuple(m) for m in self.means))


def gen_features(spec, rng=None):
    """Per-class Gaussian features; returns (n x 2 features, labels)."""
    rng = rng if rng is not None else make_rng(spec.seed, stream=1)
    nc = spec.nodes_per_class
    feats, labels = [], []
    for c, mu in enumerate(spec.means[:spec.num_classes]):
        cov = spec.covariance_scale * np.eye(len(mu))
        feats.append(rng.multivariate_normal(np.asarray(mu), cov, size=nc))
        labels.append(np.full(nc, c))
    return np.concatenate(feats), np.concatenate(labels)


def gen_base_edges(spec, features, labels, rng=None):
    """Intra-community base graph: k-NN or Erdos-Renyi inside each class."""
    rng = rng if rng is not None else make_rng(spec.seed, stream=2)
    edges = []
    for c in range(spec.num_classes):
        members = np.nonzero(labels == c)[0]
        if spec.base == "knn":
            edges.extend(knn_edges(features, spec.knn_k, restrict_to=members))
        elif spec.base == "er":
            edges.extend(erdos_renyi_edges(members, spec.er_p, rng))
        else:
            raise ValueError(f"unknown base edge constructor: {spec.base}")
    return build_graph(len(labels), edges, labels)


def _draw_new_edge(mode, labels, existing, rng, max_tries=10000):
    n = len(labels)
    for _ in range(max_tries):
        v, u = int(rng.integers(n)), int(rng.integers(n))
        if v == u:
            continue
        key = (min(v, u), max(v, u))
        if key in existing:
            continue
        same = labels[v] == labels[u]
        if mode == "inter" and same:
            continue
        if mode == "intra" and not same:
            continue
        if mode == "both":
            pass  # 50/50 emerges from uniform endpoint draws being filtered below
        return key
    raise RuntimeError("could not sample a fresh edge; graph too dense")


def _mutate(base, labels, mode, budget, percentage, rng):
    base_edges = [tuple(e) for e in base.edges]
    existing = set(base_edges)
    n_base = len(base_edges)
    n_add = int(round(n_base * percentage / 100.0))
    if budget == "constant" and n_add > n_base:
        raise BudgetExhausted(f"cannot remove {n_add} of {n_base} base edges")
    surviving = list(base_edges)
    added = []
    for i in range(n_add):
        if mode == "both":
            draw_mode = "inter" if rng.random() < 0.5 else "intra"
        else:
            draw_mode = mode
        new = _draw_new_edge(draw_mode, labels, existing, rng)
        existing.add(new)
        added.append(new)
        if budget == "constant":
            # removals come only from the surviving original edges
            j = int(rng.integers(len(surviving)))
            removed = surviving.pop(j)
            existing.discard(removed)
    return build_graph(base.n, surviving + added, labels)


def gen_sequence(spec, base, rng=None):
    """One mutated graph per percentage. Each percentage is generated
    independently from the base graph and a percentage-specific stream, so a
    sequence is reproducible regardless of which percentages are requested."""
    graphs = []
    for k, pct in enumerate(spec.percentages):
        step_rng = rng if rng is not None else make_rng(spec.seed, stream=100 + k)
        if pct == 0:
            graphs.append(Graph(base.n, base.edges, base.labels))
        else:
            graphs.append(_mutate(base, base.labels, spec.mutation_mode,
                                  spec.budget, pct, step_rng))
    return graphs


def gen_dataset_sequence(spec):
    """Features + labels + graph sequence for the spec (the full benchmark)."""
    features, labels = gen_features(spec)
    base = gen_base_edges(spec, features, labels)
    return features, labels, gen_sequence(spec, base)

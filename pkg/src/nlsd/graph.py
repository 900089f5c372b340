"""Undirected graphs with a fixed edge orientation, plus base edge-set builders."""

import numpy as np

from .errors import EmptyGraph, InvalidEdge, InvalidK, InvalidProbability, MissingLabels


class Graph:
    """Immutable graph: ``n`` nodes, deduplicated undirected edges stored as
    (v, u) with v < u, and a +/-1 orientation flag per edge.

    The canonical orientation points low index -> high index (flag +1).
    The sheaf Laplacian is orientation-independent, so the flag only matters
    for the sign convention of the coboundary rows.
    """

    def __init__(self, n, edges, labels=None, orientation=None):
        self.n = int(n)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if orientation is None:
            orientation = np.ones(len(self.edges), dtype=np.int64)
        self.orientation = np.asarray(orientation, dtype=np.int64)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.edges.setflags(write=False)
        self.orientation.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def tails(self):
        """Origin node of each oriented edge."""
        return np.where(self.orientation > 0, self.edges[:, 0], self.edges[:, 1])

    @property
    def heads(self):
        return np.where(self.orientation > 0, self.edges[:, 1], self.edges[:, 0])

    def with_flipped_orientation(self, flip_mask):
        """Copy with the orientation of the selected edges reversed (test aid)."""
        flip = np.asarray(flip_mask, dtype=bool)
        orient = np.where(flip, -self.orientation, self.orientation)
        return Graph(self.n, self.edges, self.labels, orient)

    def degrees(self):
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def connected_components(self):
        """Number of connected components (union-find)."""
        parent = np.arange(self.n)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for v, u in self.edges:
            rv, ru = find(v), find(u)
            if rv != ru:
                parent[rv] = ru
        return len({find(v) for v in range(self.n)})


def build_graph(n, edge_list, labels=None):
    """Validate, drop self-loops, deduplicate, and canonically orient edges."""
    seen = set()
    edges = []
    for v, u in edge_list:
        v, u = int(v), int(u)
        if not (0 <= v < n and 0 <= u < n):
            raise InvalidEdge(f"edge ({v}, {u}) out of range for n={n}")
        if v == u:
            continue
        key = (min(v, u), max(v, u))
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)
    edges.sort()
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return Graph(n, arr, labels)


def homophily(g):
    """Fraction of edges whose endpoints share a class label."""
    if g.labels is None:
        raise MissingLabels("graph has no labels")
    if g.num_edges == 0:
        raise EmptyGraph("graph has no edges")
    lv = g.labels[g.edges[:, 0]]
    lu = g.labels[g.edges[:, 1]]
    return float(np.mean(lv == lu))


def knn_edges(features, k, restrict_to=None):
    """Undirected union of directed k-nearest-neighbor relations.

    Euclidean metric on feature rows; neighbors are searched only inside
    ``restrict_to`` when given. Distance ties break toward the lower node index.
    """
    features = np.asarray(features, dtype=np.float64)
    if restrict_to is None:
        subset = np.arange(len(features))
    else:
        subset = np.asarray(restrict_to, dtype=np.int64)
    m = len(subset)
    if k >= m:
        raise InvalidK(f"k={k} must be smaller than the subset size {m}")
    if k == 0:
        return []
    pts = features[subset]
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    edges = set()
    for i in range(m):
        # lexsort: secondary key distance, primary tie-break on node index
        order = np.lexsort((subset, d2[i]))
        for j in order[:k]:
            a, b = int(subset[i]), int(subset[j])
            edges.add((min(a, b), max(a, b)))
    return sorted(edges)


def erdos_renyi_edges(node_subset, p, rng):
    """Each unordered pair of the subset appears independently with probability p."""
    if not (0.0 <= p <= 1.0):
        raise InvalidProbability(f"p={p} outside [0, 1]")
    subset = np.asarray(node_subset, dtype=np.int64)
    m = len(subset)
    iu, ju = np.triu_indices(m, k=1)
    keep = rng.random(len(iu)) < p
    return [(int(min(a, b)), int(max(a, b)))
            for a, b in zip(subset[iu[keep]], subset[ju[keep]])]

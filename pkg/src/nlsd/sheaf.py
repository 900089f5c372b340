"""Cellular sheaves on graphs: restriction maps, coboundary, Laplacians,
degree normalization, and harmonic-space oracles.

Two parallel surfaces live here. The numpy/BlockSparse functions materialize
operators for analysis and for the independent test oracles. The tensor
functions build the same maps on the autodiff tape so the sheaf can be
learned end to end.
"""

import numpy as np

from . import tape
from .blocksparse import BlockSparse
from .errors import IncompleteSheaf, ShapeError, TooLarge
from .tape import Tensor

DEGREE_FLOOR = 1e-8


class Sheaf:
    """Stalk dimension d plus one d x d restriction map per (node, edge) incidence.

    ``maps[(v, e)]`` carries node v's stalk into edge e's stalk. ``kind`` is
    "diagonal", "orthogonal", or "general" (the latter only for hand-built
    test sheaves).
    """

    def __init__(self, d, maps, kind="general"):
        self.d = int(d)
        self.maps = {k: np.asarray(m, dtype=np.float64) for k, m in maps.items()}
        self.kind = kind
        for key, m in self.maps.items():
            if m.shape != (self.d, self.d):
                raise ShapeError(f"restriction map {key} has shape {m.shape}")
            if kind == "diagonal" and np.any(m[~np.eye(self.d, dtype=bool)] != 0.0):
                raise ShapeError(f"map {key} is not diagonal")
            if kind == "orthogonal" and np.max(np.abs(m.T @ m - np.eye(self.d))) > 1e-10:
                raise ShapeError(f"map {key} is not orthogonal")


def trivial_sheaf(g, d=1):
    """Identity restriction maps everywhere; recovers the graph Laplacian."""
    maps = {}
    for e, (v, u) in enumerate(g.edges):
        maps[(v, e)] = np.eye(d)
        maps[(u, e)] = np.eye(d)
    return Sheaf(d, maps, kind="orthogonal")


def random_sheaf(g, d, kind, rng):
    """Random diagonal or orthogonal sheaf (test helper)."""
    maps = {}
    for e in range(g.num_edges):
        for v in g.edges[e]:
            if kind == "diagonal":
                maps[(int(v), e)] = np.diag(rng.uniform(-1.0, 1.0, size=d))
            elif kind == "orthogonal":
                q, r = np.linalg.qr(rng.normal(size=(d, d)))
                maps[(int(v), e)] = q * np.sign(np.diag(r))
            else:
                maps[(int(v), e)] = rng.normal(size=(d, d))
    return Sheaf(d, maps, kind=kind)


# -- operator assembly (numpy / BlockSparse) ----------------------------------

def assemble_coboundary(sheaf, g):
    """Coboundary delta as an (|E| x n)-block BlockSparse: row e holds
    +F_{head} at the head column and -F_{tail} at the tail column."""
    delta = BlockSparse(g.num_edges, g.n, sheaf.d)
    tails, heads = g.tails, g.heads
    for e in range(g.num_edges):
        t, h = int(tails[e]), int(heads[e])
        try:
            delta.add_block(e, h, sheaf.maps[(h, e)])
            delta.add_block(e, t, -sheaf.maps[(t, e)])
        except KeyError as exc:
            raise IncompleteSheaf(f"missing restriction map {exc.args[0]}") from None
    return delta


def sheaf_laplacian(delta):
    """L = delta^T delta (positive semidefinite block operator)."""
    return delta.transpose().matmul(delta)


def laplacian_nodewise(sheaf, g, x):
    """Node-wise evaluation of L x via the per-edge disagreement sums.

    Independent of the BlockSparse assembly path; used as its oracle.
    """
    d = sheaf.d
    x = np.asarray(x, dtype=np.float64).reshape(g.n, d, -1)
    out = np.zeros_like(x)
    for e, (v, u) in enumerate(g.edges):
        v, u = int(v), int(u)
        fv, fu = sheaf.maps[(v, e)], sheaf.maps[(u, e)]
        disagree = fv @ x[v] - fu @ x[u]
        out[v] += fv.T @ disagree
        out[u] -= fu.T @ disagree
    return out.reshape(g.n * d, -1)


def block_degree(sheaf, g):
    """Per-node diagonal blocks D_v = sum over incidences of F^T F, (n, d, d)."""
    d = sheaf.d
    deg = np.zeros((g.n, d, d))
    for e, (v, u) in enumerate(g.edges):
        for node in (int(v), int(u)):
            f = sheaf.maps[(node, e)]
            deg[node] += f.T @ f
    return deg


def d_inv_sqrt(degree_blocks, floor=DEGREE_FLOOR):
    """Block-diagonal D^{-1/2}; eigenvalues floored so singular and isolated
    blocks stay finite (an isolated node's zero block becomes floor^{-1/2} I,
    which never multiplies anything because it has no incident edges)."""
    degree_blocks = np.asarray(degree_blocks, dtype=np.float64)
    w, v = np.linalg.eigh(degree_blocks)
    gw = np.maximum(w, floor) ** -0.5
    blocks = (v * gw[..., None, :]) @ np.swapaxes(v, -1, -2)
    return BlockSparse.block_diagonal(blocks)


def normalized_laplacian(laplacian, dinv):
    """Delta_F = D^{-1/2} L D^{-1/2}."""
    return dinv.matmul(laplacian).matmul(dinv)


def normalize_coboundary(delta, dinv):
    """delta~ = delta D^{-1/2}; with identity Phi, delta~^T delta~ = Delta_F."""
    return delta.matmul(dinv)


def harmonic_space(sheaf, g, tol=1e-8):
    """Orthonormal basis of ker(L_F) via dense SVD (small instances only)."""
    if g.n * sheaf.d > 200:
        raise TooLarge(f"nd = {g.n * sheaf.d} exceeds the dense-oracle limit")
    dense = sheaf_laplacian(assemble_coboundary(sheaf, g)).densify()
    _, s, vt = np.linalg.svd(dense)
    null = s < tol
    return vt[len(s) - int(np.sum(null)):].T if np.any(null) else vt[:0].T


def section_space_dim(sheaf, g, tol=1e-8):
    """Dimension of {x : F_{v<e} x_v = F_{u<e} x_u for every edge}, solved as a
    standalone linear system (independent of the coboundary assembly)."""
    d = sheaf.d
    if g.num_edges == 0:
        return g.n * d
    rows = np.zeros((g.num_edges * d, g.n * d))
    for e, (v, u) in enumerate(g.edges):
        v, u = int(v), int(u)
        rows[e * d:(e + 1) * d, v * d:(v + 1) * d] = sheaf.maps[(v, e)]
        rows[e * d:(e + 1) * d, u * d:(u + 1) * d] -= sheaf.maps[(u, e)]
    s = np.linalg.svd(rows, compute_uv=False)
    rank = int(np.sum(s > tol * max(rows.shape) * s[0])) if s[0] > 0 else 0
    return g.n * d - rank


# -- differentiable sheaf learner ---------------------------------------------

def cayley_param_count(d):
    return d * (d - 1) // 2


def learner_output_dim(d, kind):
    return d if kind == "diagonal" else cayley_param_count(d)


def learner_maps(summary, tails, heads, weight, bias, kind):
    """Restriction maps for every edge from per-node stalk summaries.

    ``summary`` is (n, d); ``weight`` maps the concatenated pair (2d,) to the
    map's free parameters. Returns (F_tail, F_head), each (|E|, d, d). The
    pair function is asymmetric: the tail map sees (s_tail || s_head), the
    head map sees (s_head || s_tail).
    """
    d = summary.shape[1]
    st = tape.gather(summary, tails)
    sh = tape.gather(summary, heads)
    zt = tape.concat([st, sh], axis=1) @ weight.swap_last() + bias
    zh = tape.concat([sh, st], axis=1) @ weight.swap_last() + bias
    if kind == "diagonal":
        return tape.diag_embed(tape.tanh(zt)), tape.diag_embed(tape.tanh(zh))
    if kind == "orthogonal":
        if d == 1:
            eye = Tensor.constant(np.ones((len(tails), 1, 1)))
            return eye, eye
        return tape.cayley(tape.skew_embed(zt, d)), tape.cayley(tape.skew_embed(zh, d))
    raise ValueError(f"unknown map kind: {kind}")


def stalk_summary(x):
    """Per-node d-vector: mean of the d x f stalk block over the f channels."""
    return x.mean(axis=2)


def block_degree_t(f_tail, f_head, tails, heads, n):
    """Tape version of block_degree from per-edge map tensors; (n, d, d)."""
    dt = f_tail.swap_last() @ f_tail
    dh = f_head.swap_last() @ f_head
    return tape.scatter_add(dt, tails, n) + tape.scatter_add(dh, heads, n)


def learn_restriction_maps(x, g, weight, bias, kind):
    """Convenience surface: build a Sheaf object from stalk features (numpy in/out).

    ``x`` is the (n*d) x f feature matrix; the learner input for each node is
    the channel-mean summary of its stalk block.
    """
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = weight.shape[1] // 2
    if x.shape[0] != g.n * d:
        raise ShapeError(f"feature matrix has {x.shape[0]} rows, want n*d = {g.n * d}")
    if weight.shape != (learner_output_dim(d, kind), 2 * d):
        raise ShapeError(f"learner weight shape {weight.shape} does not match d={d}, kind={kind}")
    summary = Tensor.constant(x.reshape(g.n, d, -1).mean(axis=2))
    ft, fh = learner_maps(summary, g.tails, g.heads, Tensor.constant(weight),
                          Tensor.constant(bias), kind)
    maps = {}
    for e in range(g.num_edges):
        maps[(int(g.tails[e]), e)] = ft.value[e]
        maps[(int(g.heads[e]), e)] = fh.value[e]
    return Sheaf(d, maps, kind=kind)

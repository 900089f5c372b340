"""Edge nonlinearities Phi composed into delta^T o Phi o delta.

Supports the identity (linear Laplacian), bounded-confidence gating with a
single or per-edge learned threshold, and a free-form per-vector MLP.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .errors import InvalidNorm, NoPotential, ShapeError
from .tape import Tensor


@dataclass(frozen=True)
class NonlinearitySpec:
    """Which Phi is applied between the coboundary and its transpose."""
    variant: str = "identity"  # identity | bounded_confidence | mlp
    psi: str = "psi2"          # psi2 (step) | psi3 (sine ramp); bounded confidence only
    threshold_mode: str = "single"  # single | per_edge
    mlp_hidden: tuple = field(default=())  # hidden widths of the Phi-MLP (0-3 entries)

    def __post_init__(self):
        if self.variant not in ("identity", "bounded_confidence", "mlp"):
            raise ValueError(f"unknown variant {self.variant}")
        if self.psi not in ("psi2", "psi3"):
            raise ValueError(f"unknown psi shape {self.psi}")
        if self.threshold_mode not in ("single", "per_edge"):
            raise ValueError(f"unknown threshold mode {self.threshold_mode}")
        if len(self.mlp_hidden) > 3:
            raise ValueError("Phi-MLP supports 1 to 4 linear layers")


def psi_prime(sq_norm, d_e, psi="psi2"):
    """The gating factor psi'(x): positive below the threshold, 0 at/above it."""
    sq_norm = np.asarray(sq_norm, dtype=np.float64)
    if np.any(sq_norm < 0):
        raise InvalidNorm("squared norm must be nonnegative")
    d_e = np.asarray(d_e, dtype=np.float64)
    below = sq_norm < d_e
    if psi == "psi2":
        return below.astype(np.float64)
    if psi == "psi3":
        return np.where(below, np.sin(np.pi * sq_norm / d_e), 0.0)
    raise ValueError(f"unknown psi shape {psi}")


def psi_value(sq_norm, d_e, psi="psi2"):
    """The potential psi(x) whose derivative is psi_prime.

    psi2 is x below the threshold and 1 at or above it (continuous only when
    D = 1); psi3 integrates the sine ramp: D/pi (1 - cos(pi x / D)), capped
    at 2D/pi.
    """
    sq_norm = np.asarray(sq_norm, dtype=np.float64)
    if np.any(sq_norm < 0):
        raise InvalidNorm("squared norm must be nonnegative")
    d_e = np.asarray(d_e, dtype=np.float64)
    below = sq_norm < d_e
    if psi == "psi2":
        return np.where(below, sq_norm, 1.0)
    if psi == "psi3":
        return np.where(below, d_e / np.pi * (1.0 - np.cos(np.pi * sq_norm / d_e)),
                        2.0 * d_e / np.pi)
    raise ValueError(f"unknown psi shape {psi}")


def edge_thresholds(mode, params, pair_diff=None, num_edges=None):
    """Per-edge positive thresholds D_e as an (|E|, 1, 1) tensor.

    single: softplus of one free scalar, shared by all edges.
    per_edge: one-layer perceptron on the per-edge |s_v - s_u| stalk
    difference, then softplus.
    """
    if mode == "single":
        theta = params["theta"]
        d = tape.softplus(theta).reshape(1, 1, 1)
        ones = Tensor.constant(np.ones((num_edges, 1, 1)))
        return ones * d
    if mode == "per_edge":
        if pair_diff is None:
            raise ShapeError("per-edge thresholds need the |s_v - s_u| inputs")
        z = pair_diff @ params["w"].reshape(-1, 1) + params["b"]
        return tape.softplus(z).reshape(-1, 1, 1)
    raise ValueError(f"unknown threshold mode {mode}")


def apply_phi(y, spec, thresholds=None, mlp_params=None, gate_margin=0.0):
    """Apply Phi to the edge signal Y of shape (|E|, d, f).

    Bounded confidence gates each d-vector y_{e,c} by psi'(||y_{e,c}||^2, D_e),
    independently per edge and channel. The MLP variant applies the same
    d -> d network to every (edge, channel) vector.
    """
    if spec.variant == "identity":
        return y
    if spec.variant == "bounded_confidence":
        sq = tape.row_sqnorm(y, axis=1)  # (E, 1, f)
        gate = tape.bc_gate(sq, thresholds, psi=spec.psi, margin=gate_margin)
        return gate * y
    if spec.variant == "mlp":
        e, d, f = y.shape
        z = y.swap_last().reshape(e * f, d)
        for i, (w, b) in enumerate(mlp_params):
            z = z @ w + b
            if i + 1 < len(mlp_params):
                z = tape.relu(z)
        return z.reshape(e, f, d).swap_last()
    raise ValueError(f"unknown variant {spec.variant}")


def _edge_operator_arrays(sheaf, g, normalized):
    """Per-edge tail/head blocks of delta (optionally D^{-1/2}-normalized)."""
    from .sheaf import block_degree, DEGREE_FLOOR
    tails, heads = g.tails, g.heads
    ft = np.stack([sheaf.maps[(int(tails[e]), e)] for e in range(g.num_edges)])
    fh = np.stack([sheaf.maps[(int(heads[e]), e)] for e in range(g.num_edges)])
    if normalized:
        deg = block_degree(sheaf, g)
        w, v = np.linalg.eigh(deg)
        dinv = (v * (np.maximum(w, DEGREE_FLOOR) ** -0.5)[..., None, :]) @ np.swapaxes(v, -1, -2)
        ft = ft @ dinv[tails]
        fh = fh @ dinv[heads]
    return ft, fh, tails, heads


def apply_nonlinear_laplacian(sheaf, g, spec, x, thresholds=None, mlp_params=None,
                              normalized=False):
    """L^Phi x = delta^T Phi(delta x), touching only incident edges per node.

    ``x`` is the (n*d) x f feature matrix (numpy); returns the same shape.
    ``thresholds`` is a per-edge array (or scalar) for bounded confidence.
    """
    d = sheaf.d
    x = np.asarray(x, dtype=np.float64).reshape(g.n, d, -1)
    ft, fh, tails, heads = _edge_operator_arrays(sheaf, g, normalized)
    y = fh @ x[heads] - ft @ x[tails]
    if spec.variant == "identity":
        phi_y = y
    elif spec.variant == "bounded_confidence":
        sq = np.sum(y * y, axis=1, keepdims=True)
        de = np.broadcast_to(np.asarray(thresholds, dtype=np.float64).reshape(-1, 1, 1),
                             (g.num_edges, 1, 1))
        phi_y = psi_prime(sq, de, spec.psi) * y
    else:
        params = [(w.value if isinstance(w, Tensor) else np.asarray(w),
                   b.value if isinstance(b, Tensor) else np.asarray(b))
                  for w, b in mlp_params]
        e, _, f = y.shape
        z = np.swapaxes(y, 1, 2).reshape(e * f, d)
        for i, (w, b) in enumerate(params):
            z = z @ w + b
            if i + 1 < len(params):
                z = np.maximum(z, 0.0)
        phi_y = np.swapaxes(z.reshape(e, f, d), 1, 2)
    out = np.zeros_like(x)
    np.add.at(out, heads, np.swapaxes(fh, 1, 2) @ phi_y)
    np.subtract.at(out, tails, np.swapaxes(ft, 1, 2) @ phi_y)
    return out.reshape(g.n * d, -1)


def potential_energy(sheaf, g, spec, x, thresholds, normalized=False):
    """Total edge potential Psi = sum over edges and channels of
    psi(||y_{e,c}||^2); the Lyapunov diagnostic of the bounded-confidence flow."""
    if spec.variant == "mlp":
        raise NoPotential("the MLP nonlinearity is not a gradient field")
    d = sheaf.d
    x = np.asarray(x, dtype=np.float64).reshape(g.n, d, -1)
    ft, fh, tails, heads = _edge_operator_arrays(sheaf, g, normalized)
    y = fh @ x[heads] - ft @ x[tails]
    sq = np.sum(y * y, axis=1)  # (E, f)
    if spec.variant == "identity":
        return float(np.sum(sq))
    de = np.broadcast_to(np.asarray(thresholds, dtype=np.float64).reshape(-1, 1),
                         sq.shape)
    return float(np.sum(psi_value(sq, de, spec.psi)))


def euler_flow(sheaf, g, spec, x0, thresholds, step=0.05, steps=100, normalized=False):
    """Explicit Euler integration of x' = -L^Phi x; returns (trajectory, potentials)."""
    x = np.asarray(x0, dtype=np.float64).copy()
    energies = [potential_energy(sheaf, g, spec, x, thresholds, normalized)]
    for _ in range(steps):
        x = x - step * apply_nonlinear_laplacian(sheaf, g, spec, x,
                                                 thresholds=thresholds,
                                                 normalized=normalized)
        energies.append(potential_energy(sheaf, g, spec, x, thresholds, normalized))
    return x, np.asarray(energies)

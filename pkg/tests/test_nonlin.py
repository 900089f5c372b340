import numpy as np
import pytest

from nlsd import nonlin, sheaf as sh
from nlsd import tape
from nlsd.errors import InvalidNorm, NoPotential
from nlsd.graph import build_graph
from nlsd.nonlin import (NonlinearitySpec, apply_nonlinear_laplacian, apply_phi,
                         edge_thresholds, euler_flow, potential_energy,
                         psi_prime, psi_value)
from nlsd.rng import make_rng
from nlsd.tape import Tensor


def random_graph(rng, n, p=0.3):
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    return build_graph(n, pairs if pairs else [(0, 1)])


def test_psi_prime_psi2_values():
    d = np.array(1.0)
    assert psi_prime(np.array(0.5), d, "psi2") == 1.0
    assert psi_prime(np.array(1.0), d, "psi2") == 0.0
    assert psi_prime(np.array(3.0), d, "psi2") == 0.0


def test_psi_prime_psi3_shape():
    d = np.array(2.0)
    assert psi_prime(np.array(0.0), d, "psi3") == 0.0
    assert psi_prime(np.array(1.0), d, "psi3") == pytest.approx(1.0)
    assert psi_prime(np.array(2.0), d, "psi3") == 0.0
    assert psi_prime(np.array(5.0), d, "psi3") == 0.0


def test_psi_value_forms():
    d = np.array(1.0)
    assert psi_value(np.array(0.25), d, "psi2") == 0.25
    assert psi_value(np.array(1.5), d, "psi2") == 1.0
    d3 = np.array(2.0)
    assert psi_value(np.array(0.0), d3, "psi3") == 0.0
    assert psi_value(np.array(2.0), d3, "psi3") == pytest.approx(4.0 / np.pi)
    assert psi_value(np.array(9.0), d3, "psi3") == pytest.approx(4.0 / np.pi)


def test_psi_negative_norm_rejected():
    with pytest.raises(InvalidNorm):
        psi_prime(np.array(-0.1), np.array(1.0))
    with pytest.raises(InvalidNorm):
        psi_value(np.array(-0.1), np.array(1.0))


def test_psi3_derivative_relation():
    # d/dx psi3(x) equals psi_prime everywhere but the cutoff
    d = np.array(1.7)
    xs = np.linspace(0.01, 3.0, 200)
    xs = xs[np.abs(xs - 1.7) > 0.02]
    h = 1e-6
    fd = (psi_value(xs + h, d, "psi3") - psi_value(xs - h, d, "psi3")) / (2 * h)
    np.testing.assert_allclose(fd, psi_prime(xs, d, "psi3"), atol=1e-6)


def test_identity_phi_matches_linear_laplacian():
    rng = make_rng(30)
    g = random_graph(rng, 8)
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    x = rng.normal(size=(g.n * 2, 3))
    spec = NonlinearitySpec(variant="identity")
    out = apply_nonlinear_laplacian(s, g, spec, x)
    np.testing.assert_allclose(out, sh.laplacian_nodewise(s, g, x), atol=1e-10)


def test_gated_laplacian_matches_edge_deletion_oracle():
    # a fully closed psi2 gate on edge e is the same as deleting edge e
    rng = make_rng(31)
    g = random_graph(rng, 7)
    s = sh.random_sheaf(g, 2, "general", rng)
    x = rng.normal(size=(g.n * 2, 1)) * 10.0  # large signal: every gate closes
    thr = np.full(g.num_edges, 1e-6)
    spec = NonlinearitySpec(variant="bounded_confidence", psi="psi2")
    out = apply_nonlinear_laplacian(s, g, spec, x, thresholds=thr)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)

    # close only edge 0: result equals the linear Laplacian of the subgraph
    thr = np.full(g.num_edges, 1e12)
    thr[0] = 1e-12
    out = apply_nonlinear_laplacian(s, g, spec, x, thresholds=thr)
    sub = build_graph(g.n, [tuple(e) for e in g.edges[1:]], g.labels)
    sub_maps = {}
    for e in range(1, g.num_edges):
        v, u = int(g.edges[e][0]), int(g.edges[e][1])
        sub_maps[(v, e - 1)] = s.maps[(v, e)]
        sub_maps[(u, e - 1)] = s.maps[(u, e)]
    s_sub = sh.Sheaf(2, sub_maps)
    np.testing.assert_allclose(out, sh.laplacian_nodewise(s_sub, sub, x), atol=1e-9)


def test_nonlinear_laplacian_preserves_kernel():
    # global sections satisfy delta x = 0, so Phi(0) y-path stays 0 for
    # bounded confidence; L^Phi x = 0 on the harmonic space
    rng = make_rng(32)
    g = build_graph(5, [(i, i + 1) for i in range(4)])
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    basis = sh.harmonic_space(s, g)
    assert basis.shape[1] > 0
    spec = NonlinearitySpec(variant="bounded_confidence", psi="psi3")
    thr = np.full(g.num_edges, 0.7)
    out = apply_nonlinear_laplacian(s, g, spec, basis, thresholds=thr)
    assert np.max(np.abs(out)) < 1e-8


def test_bounded_confidence_is_gradient_of_potential():
    # grad_x Psi(x) = 2 L^Phi x, checked with central differences
    rng = make_rng(33)
    g = random_graph(rng, 5)
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    spec = NonlinearitySpec(variant="bounded_confidence", psi="psi3")
    thr = np.full(g.num_edges, 1.3)
    x = rng.normal(size=(g.n * 2, 1)) * 0.4
    analytic = 2.0 * apply_nonlinear_laplacian(s, g, spec, x, thresholds=thr)
    h = 1e-6
    fd = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i, 0] += h
        xm[i, 0] -= h
        fd[i, 0] = (potential_energy(s, g, spec, xp, thr)
                    - potential_energy(s, g, spec, xm, thr)) / (2 * h)
    np.testing.assert_allclose(analytic, fd, atol=1e-5)


def test_edge_permutation_equivariance():
    # relabeling edges leaves L^Phi x unchanged (maps move with their edges)
    rng = make_rng(34)
    g = random_graph(rng, 6)
    s = sh.random_sheaf(g, 2, "general", rng)
    x = rng.normal(size=(g.n * 2, 2))
    thr = rng.uniform(0.5, 2.0, size=g.num_edges)
    spec = NonlinearitySpec(variant="bounded_confidence", psi="psi3")
    out = apply_nonlinear_laplacian(s, g, spec, x, thresholds=thr)

    perm = rng.permutation(g.num_edges)
    g2 = build_graph(g.n, [tuple(g.edges[e]) for e in perm], g.labels)
    maps2 = {}
    for new_e, old_e in enumerate(perm):
        v, u = int(g.edges[old_e][0]), int(g.edges[old_e][1])
        maps2[(v, new_e)] = s.maps[(v, old_e)]
        maps2[(u, new_e)] = s.maps[(u, old_e)]
    # build_graph sorts edges, so find where each permuted edge landed
    order = {tuple(g.edges[old_e]): old_e for old_e in range(g.num_edges)}
    remap = [order[tuple(e)] for e in g2.edges]
    maps2 = {}
    for new_e, old_e in enumerate(remap):
        v, u = int(g2.edges[new_e][0]), int(g2.edges[new_e][1])
        maps2[(v, new_e)] = s.maps[(v, old_e)]
        maps2[(u, new_e)] = s.maps[(u, old_e)]
    s2 = sh.Sheaf(2, maps2)
    out2 = apply_nonlinear_laplacian(s2, g2, spec, x, thresholds=thr[remap])
    np.testing.assert_allclose(out, out2, atol=1e-10)


def test_mlp_phi_identity_network_matches_linear():
    rng = make_rng(35)
    g = random_graph(rng, 6)
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    x = rng.normal(size=(g.n * 2, 3))
    spec = NonlinearitySpec(variant="mlp", mlp_hidden=(2,))
    eye = [(np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))]
    out = apply_nonlinear_laplacian(s, g, spec, np.abs(x), mlp_params=eye)
    # identity layers with a relu between them: Phi(y) = relu(y), so the
    # oracle is delta^T relu(delta x)
    delta = sh.assemble_coboundary(s, g)
    y = delta.apply(np.abs(x).reshape(g.n * 2, 3))
    y_r = np.maximum(y.reshape(g.num_edges, 2, 3), 0.0).reshape(g.num_edges * 2, 3)
    expect = delta.transpose().apply(y_r)
    np.testing.assert_allclose(out, expect, atol=1e-10)


def test_potential_energy_no_potential_for_mlp():
    rng = make_rng(36)
    g = random_graph(rng, 4)
    s = sh.random_sheaf(g, 1, "diagonal", rng)
    spec = NonlinearitySpec(variant="mlp")
    with pytest.raises(NoPotential):
        potential_energy(s, g, spec, np.zeros((g.n, 1)), None)


def test_apply_phi_tape_matches_numpy_path():
    rng = make_rng(37)
    g = random_graph(rng, 6)
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    x = rng.normal(size=(g.n * 2, 3))
    thr = rng.uniform(0.5, 1.5, size=g.num_edges)
    spec = NonlinearitySpec(variant="bounded_confidence", psi="psi3")
    numpy_out = apply_nonlinear_laplacian(s, g, spec, x, thresholds=thr)

    xs = x.reshape(g.n, 2, 3)
    ft = np.stack([s.maps[(int(g.tails[e]), e)] for e in range(g.num_edges)])
    fh = np.stack([s.maps[(int(g.heads[e]), e)] for e in range(g.num_edges)])
    y = Tensor.constant(fh @ xs[g.heads] - ft @ xs[g.tails])
    phi_y = apply_phi(y, spec, thresholds=Tensor.constant(thr.reshape(-1, 1, 1)))
    agg = np.zeros_like(xs)
    np.add.at(agg, g.heads, np.swapaxes(fh, 1, 2) @ phi_y.value)
    np.subtract.at(agg, g.tails, np.swapaxes(ft, 1, 2) @ phi_y.value)
    np.testing.assert_allclose(agg.reshape(g.n * 2, 3), numpy_out, atol=1e-10)


def test_edge_thresholds_modes():
    theta = Tensor.param(np.array(0.0))
    thr = edge_thresholds("single", {"theta": theta}, num_edges=4)
    assert thr.shape == (4, 1, 1)
    np.testing.assert_allclose(thr.value, np.log(2.0), atol=1e-12)

    w = Tensor.param(np.array([1.0, -1.0]))
    b = Tensor.param(np.array([0.5]))
    diff = Tensor.constant(np.array([[0.2, 0.1], [1.0, 3.0]]))
    thr = edge_thresholds("per_edge", {"w": w, "b": b}, pair_diff=diff)
    assert thr.shape == (2, 1, 1)
    assert np.all(thr.value > 0)


def test_euler_flow_identity_phi_decreases_dirichlet():
    rng = make_rng(38)
    g = random_graph(rng, 8)
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    spec = NonlinearitySpec(variant="identity")
    x0 = rng.normal(size=(g.n * 2, 1))
    _, energies = euler_flow(s, g, spec, x0, None, step=0.05, steps=50,
                             normalized=True)
    assert np.all(np.diff(energies) <= 1e-12)


def test_euler_flow_bounded_confidence_lyapunov():
    rng = make_rng(39)
    g = random_graph(rng, 8)
    s = sh.random_sheaf(g, 2, "orthogonal", rng)
    spec = NonlinearitySpec(variant="bounded_confidence", psi="psi3")
    thr = np.full(g.num_edges, 1.0)
    x0 = rng.normal(size=(g.n * 2, 1)) * 0.5
    _, energies = euler_flow(s, g, spec, x0, thr, step=0.05, steps=100,
                             normalized=True)
    assert np.all(np.diff(energies) <= 1e-10)

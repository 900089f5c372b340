import numpy as np
import pytest

from nlsd.errors import BudgetExhausted
from nlsd.graph import homophily
from nlsd.rng import make_rng
from nlsd.synthetic import (MEANS_CLOSE, MEANS_DEFAULT, SyntheticSpec,
                            gen_base_edges, gen_dataset_sequence, gen_features,
                            gen_sequence)


SMALL = SyntheticSpec(nodes_per_class=60, seed=3)


def test_feature_moments_within_3_sigma():
    spec = SyntheticSpec(nodes_per_class=2000, seed=1)
    feats, labels = gen_features(spec)
    for c, mu in enumerate(MEANS_DEFAULT):
        block = feats[labels == c]
        # sample mean of N(mu, 3I): sd of each coordinate is sqrt(3/n)
        se = np.sqrt(3.0 / len(block))
        assert np.all(np.abs(block.mean(axis=0) - mu) < 3 * se)
        # per-coordinate variance close to 3
        var_se = 3.0 * np.sqrt(2.0 / (len(block) - 1))
        assert np.all(np.abs(block.var(axis=0, ddof=1) - 3.0) < 3 * var_se)


def test_close_means_distance():
    d01 = np.linalg.norm(np.array(MEANS_CLOSE[0]) - np.array(MEANS_CLOSE[1]))
    assert d01 == pytest.approx(np.sqrt(0.02))


def test_labels_balanced():
    feats, labels = gen_features(SMALL)
    assert np.bincount(labels).tolist() == [60, 60, 60]


def test_base_graph_fully_intra():
    feats, labels = gen_features(SMALL)
    base = gen_base_edges(SMALL, feats, labels)
    assert homophily(base) == 1.0
    assert base.connected_components() >= 3


def test_er_base_graph():
    spec = SyntheticSpec(nodes_per_class=200, base="er", er_p=0.05, seed=4)
    feats, labels = gen_features(spec)
    base = gen_base_edges(spec, feats, labels)
    assert homophily(base) == 1.0
    # expected edges: 3 classes x p x C(200, 2)
    expect = 3 * 0.05 * 200 * 199 / 2
    assert abs(base.num_edges - expect) < 4 * np.sqrt(expect)


def test_constant_budget_preserves_edge_count():
    feats, labels = gen_features(SMALL)
    base = gen_base_edges(SMALL, feats, labels)
    graphs = gen_sequence(SMALL, base)
    for g in graphs:
        assert g.num_edges == base.num_edges


def test_constant_budget_100_percent_inter_kills_homophily():
    spec = SyntheticSpec(nodes_per_class=60, mutation_mode="inter",
                         budget="constant", percentages=(0, 100), seed=5)
    feats, labels = gen_features(spec)
    base = gen_base_edges(spec, feats, labels)
    graphs = gen_sequence(spec, base)
    assert homophily(graphs[0]) == 1.0
    assert homophily(graphs[1]) == 0.0


def test_intra_mutation_keeps_homophily():
    spec = SyntheticSpec(nodes_per_class=60, mutation_mode="intra",
                         percentages=(0, 40), seed=6)
    feats, labels = gen_features(spec)
    base = gen_base_edges(spec, feats, labels)
    graphs = gen_sequence(spec, base)
    assert homophily(graphs[1]) == 1.0


def test_both_mode_mixes_edges():
    spec = SyntheticSpec(nodes_per_class=60, mutation_mode="both",
                         percentages=(0, 80), seed=7)
    feats, labels = gen_features(spec)
    base = gen_base_edges(spec, feats, labels)
    g = gen_sequence(spec, base)[1]
    assert 0.0 < homophily(g) < 1.0


def test_increasing_budget_grows_edge_count():
    spec = SyntheticSpec(nodes_per_class=60, budget="increasing",
                         percentages=(0, 50, 150), seed=8)
    feats, labels = gen_features(spec)
    base = gen_base_edges(spec, feats, labels)
    graphs = gen_sequence(spec, base)
    nb = base.num_edges
    assert graphs[0].num_edges == nb
    assert graphs[1].num_edges == nb + int(round(0.5 * nb))
    assert graphs[2].num_edges == nb + int(round(1.5 * nb))
    # every base edge survives under the add-only budget
    base_set = {tuple(e) for e in base.edges}
    assert base_set <= {tuple(e) for e in graphs[2].edges}


def test_constant_budget_over_100_raises():
    spec = SyntheticSpec(nodes_per_class=60, seed=9)
    feats, labels = gen_features(spec)
    base = gen_base_edges(spec, feats, labels)
    from nlsd.synthetic import _mutate
    with pytest.raises(BudgetExhausted):
        _mutate(base, labels, "inter", "constant", 120, make_rng(0))


def test_invalid_percentages():
    with pytest.raises(ValueError):
        SyntheticSpec(percentages=(0, 120), budget="constant")
    with pytest.raises(ValueError):
        SyntheticSpec(percentages=(40, 10))


def test_sequence_reproducible_and_prefix_stable():
    spec_a = SyntheticSpec(nodes_per_class=60, percentages=(0, 10, 40), seed=10)
    spec_b = SyntheticSpec(nodes_per_class=60, percentages=(0, 10, 40), seed=10)
    ga = gen_dataset_sequence(spec_a)[2]
    gb = gen_dataset_sequence(spec_b)[2]
    for x, y in zip(ga, gb):
        assert np.array_equal(x.edges, y.edges)
    other_seed = SyntheticSpec(nodes_per_class=60, percentages=(0, 10, 40), seed=11)
    gc = gen_dataset_sequence(other_seed)[2]
    assert not np.array_equal(ga[1].edges, gc[1].edges)


def test_features_fixed_across_sequence():
    feats, labels, graphs = gen_dataset_sequence(SMALL)
    feats2, labels2 = gen_features(SMALL)
    assert np.array_equal(feats, feats2)
    assert np.array_equal(labels, labels2)
    assert all(g.n == len(labels) for g in graphs)


def test_mutated_graphs_have_no_duplicate_edges():
    spec = SyntheticSpec(nodes_per_class=60, mutation_mode="both",
                         percentages=(0, 100), seed=12)
    feats, labels, graphs = gen_dataset_sequence(spec)
    for g in graphs:
        edges = [tuple(e) for e in g.edges]
        assert len(edges) == len(set(edges))
        assert all(v < u for v, u in edges)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import induced_egonet
from topoflow.exceptions import ConfigError
from topoflow.graph import TrafficGraph
from topoflow.topology import (
    EGONET_BASE_FEATURES,
    WALK_BASE_FEATURES,
    WalkEnd,
    catalog_size,
    egonet_base_features,
    extract_egonet,
    node_features,
    sample_walk,
    stack_features,
    walk_base_features,
)

EGO = {name: k for k, name in enumerate(EGONET_BASE_FEATURES)}
WALK = {name: k for k, name in enumerate(WALK_BASE_FEATURES)}


def graph(edges, endpoints=None):
    """Graph over integer-labeled endpoints; returns (g, id_of)."""
    triples = [(str(e[0]), str(e[1]), e[2] if len(e) > 2 else 1.0) for e in edges]
    g = TrafficGraph.from_edges(triples, endpoints=[str(e) for e in endpoints or ()])
    return g, g.node_of


def ego_by_label(edges, center, endpoints=None):
    g, ids = graph(edges, endpoints)
    ego = extract_egonet(g, ids[str(center)])
    label = {v: int(k) for k, v in ids.items()}
    return ego, {label[m] for m in ego.members}, {(label[u], label[v]) for u, v, _ in ego.edges}


def test_isolated_node_egonet():
    g, ids = graph([(1, 2)], endpoints=[1, 2, 9])
    ego = extract_egonet(g, ids["9"])
    assert ego.members == {ids["9"]} and ego.edges == ()
    f = egonet_base_features(ego)
    assert f[EGO["egonet_node_count"]] == 1
    assert f[EGO["out_links"]] == f[EGO["in_links"]] == 0
    weight_feats = [k for n, k in EGO.items() if "weight" in n]
    assert np.all(f[weight_feats] == 0)


def test_star_egonet():
    _, members, edges = ego_by_label([(1, 2), (1, 3), (3, 1)], 1)
    assert members == {1, 2, 3}
    assert edges == {(1, 2), (1, 3), (3, 1)}


def test_triangle_with_pendant():
    _, members, edges = ego_by_label([(1, 2), (2, 3), (3, 1), (4, 2)], 1)
    assert members == {1, 2, 3}
    assert edges == {(1, 2), (2, 3), (3, 1)}


def test_star_counts():
    g, ids = graph([(1, 2), (1, 3)])
    f = egonet_base_features(extract_egonet(g, ids["1"]))
    assert f[EGO["out_links"]] == 2 and f[EGO["in_links"]] == 0
    assert f[EGO["egonet_node_count"]] == 3


def test_egonet_weight_features_by_hand():
    # 1->2 (2), 2->1 (3), 2->3 (5), 3->4 (7) centered at 2
    g, ids = graph([(1, 2, 2.0), (2, 1, 3.0), (2, 3, 5.0), (3, 4, 7.0), (1, 3, 11.0)])
    f = egonet_base_features(extract_egonet(g, ids["2"]))
    expect = {
        "egonet_node_count": 3, "out_links": 2, "in_links": 1, "egonet_edge_count": 4,
        "center_out_weight": 8.0, "center_in_weight": 2.0, "egonet_total_weight": 21.0,
        "egonet_mean_weight": 5.25, "egonet_max_weight": 11.0, "egonet_min_weight": 2.0,
        "reciprocal_pairs": 1, "center_edge_ratio": 0.75, "neighbor_edge_count": 1,
        "neighbor_total_weight": 11.0, "neighbor_mean_weight": 11.0, "neighbor_max_weight": 11.0,
    }
    for name, v in expect.items():
        assert f[EGO[name]] == v, name


def test_self_loop_ignored_in_egonet():
    g, ids = graph([(1, 1, 9.0), (1, 2, 1.0)])
    ego = extract_egonet(g, ids["1"])
    assert [(u, v) for u, v, _ in ego.edges] == [(ids["1"], ids["2"])]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=1, max_size=30), st.data())
def test_egonet_matches_brute_force(edges, data):
    g, ids = graph(edges)
    center = data.draw(st.sampled_from(sorted({a for e in edges for a in e})))
    ego = extract_egonet(g, ids[str(center)])
    members, sub = induced_egonet(edges, center)
    label = {v: int(k) for k, v in ids.items()}
    assert {label[m] for m in ego.members} == members
    assert {(label[u], label[v]) for u, v, _ in ego.edges} == sub
    assert egonet_base_features(ego)[EGO["egonet_node_count"]] == len(members)


def test_walk_dead_end():
    g, ids = graph([(1, 2)])
    w = sample_walk(g, ids["2"], 5, 0)
    assert w.steps == () and w.terminated_by is WalkEnd.DEAD_END
    f = walk_base_features(w)
    assert f[WALK["walk_length"]] == 0 and f[WALK["first_leg_weight"]] == 0


def test_walk_two_cycle_returns():
    g, ids = graph([(1, 2, 5.0), (2, 1, 7.0)])
    w = sample_walk(g, ids["1"], 5, 0)
    assert w.nodes == [ids["1"], ids["2"], ids["1"]]
    assert w.terminated_by is WalkEnd.RETURNED_TO_START


def test_walk_chain_length_reached():
    g, ids = graph([(1, 2), (2, 3), (3, 4)])
    w = sample_walk(g, ids["1"], 2, 0)
    assert w.nodes == [ids["1"], ids["2"], ids["3"]]
    assert w.terminated_by is WalkEnd.LENGTH_REACHED


def test_walk_two_cycle_leg_and_bottleneck():
    g, ids = graph([(1, 2, 5.0), (2, 1, 7.0)])
    f = walk_base_features(sample_walk(g, ids["1"], 3, 0))
    assert f[WALK["first_leg_weight"]] == 5.0
    assert f[WALK["bottleneck_weight"]] == 5.0
    Z = node_features(g, catalog="random_walk", p=7, walk_length=3, walks_per_node=4)
    assert Z[ids["1"]][WALK["first_leg_weight"]] == 5.0
    assert Z[ids["1"]][WALK["bottleneck_weight"]] == 5.0


def test_walks_follow_edges_and_are_seeded():
    rng = np.random.default_rng(0)
    edges = [(int(a), int(b)) for a, b in rng.integers(12, size=(60, 2))]
    g, _ = graph(edges)
    for seed in range(20):
        w = sample_walk(g, 0, 6, seed)
        assert len(w.steps) <= 6
        for u, v, wt in w.steps:
            assert u != v and g.weight(u, v) == wt
        assert sample_walk(g, 0, 6, seed) == w
    with pytest.raises(ValueError):
        sample_walk(g, 0, 0, 0)


def test_walk_features_seed_reproducible_and_job_independent():
    rng = np.random.default_rng(1)
    edges = [(int(a), int(b)) for a, b in rng.integers(600, size=(2500, 2))]
    g, _ = graph(edges)
    a = node_features(g, catalog="random_walk", seed=3)
    b = node_features(g, catalog="random_walk", seed=3, n_jobs=2)
    assert a.values.tobytes() == b.values.tobytes()
    c = node_features(g, catalog="random_walk", seed=4)
    assert not np.array_equal(a.values, c.values)


def test_catalog_sizes_and_truncation():
    assert catalog_size("egonet") == 48 and catalog_size("random_walk") == 21
    g, _ = graph([(1, 2), (2, 3), (3, 1), (4, 2)])
    full = node_features(g)
    assert (full.n, full.p) == (4, 48)
    part = node_features(g, p=20)
    assert np.array_equal(part.values, full.values[:, :20])
    assert node_features(g, p=0).p == 0
    with pytest.raises(ConfigError):
        node_features(g, p=49)
    with pytest.raises(ConfigError):
        node_features(g, catalog="spectral")


def test_feature_blocks():
    g, _ = graph([(1, 2, 3.0), (2, 3, -8.0), (3, 1, 1.0), (4, 2, 2.0)])
    Z = node_features(g).values
    base, logs, ranks = Z[:, :16], Z[:, 16:32], Z[:, 32:]
    assert np.allclose(logs, np.sign(base) * np.log1p(np.abs(base)))
    assert ranks.min() >= 0 and ranks.max() <= 1
    assert np.all(np.isfinite(Z))


def test_single_node_graph():
    g, _ = graph([(1, 1, 4.0)])
    Z = node_features(g)
    assert Z.values.shape == (1, 48)
    assert np.all(Z.values[0, 32:] == 0)


def test_stack_features():
    Z = stack_features([[1.0, 2.0]])
    assert Z.values.tolist() == [[1.0, 2.0]]
    Z = stack_features([[1.0, 2.0], [3.0, 4.0]])
    assert Z[1].tolist() == [3.0, 4.0]
    with pytest.raises(ValueError):
        stack_features([[1.0], [1.0, 2.0]])


def test_382_node_matrix_shape():
    rng = np.random.default_rng(2)
    edges = [(k, (k + 1) % 382) for k in range(382)]
    edges += [(int(a), int(b)) for a, b in rng.integers(382, size=(500, 2))]
    g, _ = graph(edges)
    assert node_features(g).values.shape == (382, 48)


def test_egonet_equivariance_under_relabeling():
    rng = np.random.default_rng(3)
    edges = [(int(a), int(b), float(w)) for (a, b), w in zip(rng.integers(15, size=(50, 2)), rng.integers(1, 9, 50))]
    g1, ids1 = graph(edges)
    order = [str(x) for x in rng.permutation(sorted({int(k) for k in ids1}))]
    g2, ids2 = graph(edges, endpoints=order)
    Z1, Z2 = node_features(g1).values, node_features(g2).values
    for name in ids1:
        assert np.array_equal(Z1[ids1[name]], Z2[ids2[name]])


def test_egonet_locality():
    """Edges outside a node's egonet leave its local features unchanged."""
    base = [(1, 2, 2.0), (2, 3, 1.0), (3, 1, 4.0), (3, 5, 1.0)]
    far = [(7, 8, 9.0), (8, 9, 3.0), (5, 7, 2.0)]
    g1, ids1 = graph(base)
    g2, ids2 = graph(base + far)
    z1 = node_features(g1).values[ids1["1"], :32]
    z2 = node_features(g2).values[ids2["1"], :32]
    assert np.array_equal(z1, z2)

import numpy as np
import pytest

from convbandits import (
    ArmCatalog,
    KeyTermCatalog,
    KeyTermGraph,
    UserProfile,
    compute_keyterm_features,
    validate_graph,
)

from conftest import unit_rows


def test_single_relation_feature_equals_arm_vector():
    arms = ArmCatalog(np.array([[1.0, 0.0], [0.0, 1.0]]))
    graph = KeyTermGraph.from_entries(2, 1, [(0, 0, 1.0), (1, 0, 0.0)])
    # only arm 0 carries weight, so the key-term feature is arm 0's vector
    feats = compute_keyterm_features(graph, arms)
    np.testing.assert_allclose(feats.features[0], [1.0, 0.0])


def test_equal_weights_average():
    arms = ArmCatalog(np.array([[1.0, 0.0], [0.0, 1.0]]))
    graph = KeyTermGraph.from_entries(2, 1, [(0, 0, 1.0), (1, 0, 1.0)])
    feats = compute_keyterm_features(graph, arms)
    np.testing.assert_allclose(feats.features[0], [0.5, 0.5])


def test_features_match_bruteforce_summation(rng):
    n_arms, n_keys, d = 10, 4, 5
    arm_feats = unit_rows(rng.standard_normal((n_arms, d)))
    entries = []
    for a in range(n_arms):
        keys = rng.choice(n_keys, size=2, replace=False)
        for k in keys:
            entries.append((a, int(k), 0.5))
    graph = KeyTermGraph.from_entries(n_arms, n_keys, entries)
    feats = compute_keyterm_features(graph, ArmCatalog(arm_feats))

    # independent naive double-loop oracle
    weights = {}
    for a, k, w in entries:
        weights[(a, k)] = w
    for k in range(n_keys):
        total = sum(w for (a2, k2), w in weights.items() if k2 == k)
        expected = np.zeros(d)
        for a in range(n_arms):
            w = weights.get((a, k), 0.0)
            if w:
                expected += (w / total) * arm_feats[a]
        np.testing.assert_allclose(feats.features[k], expected, atol=1e-12)


def test_zero_weight_keyterm_rejected():
    arms = ArmCatalog(np.array([[1.0]]))
    graph = KeyTermGraph.from_entries(1, 2, [(0, 0, 1.0), (0, 1, 0.0)])
    with pytest.raises(ValueError, match="zero total weight"):
        compute_keyterm_features(graph, arms)


def test_storage_order_invariance(rng):
    n_arms, n_keys, d = 8, 3, 4
    arm_feats = unit_rows(rng.standard_normal((n_arms, d)))
    entries = [(a, k, 1.0 / n_keys) for a in range(n_arms) for k in range(n_keys)]
    shuffled = list(entries)
    rng.shuffle(shuffled)
    arms = ArmCatalog(arm_feats)
    f1 = compute_keyterm_features(
        KeyTermGraph.from_entries(n_arms, n_keys, entries), arms)
    f2 = compute_keyterm_features(
        KeyTermGraph.from_entries(n_arms, n_keys, shuffled), arms)
    assert np.array_equal(f1.features, f2.features)


def test_keyterm_feature_norm_bounded(rng):
    for seed in range(10):
        local = np.random.default_rng(seed)
        n_arms, n_keys, d = 12, 5, 6
        arm_feats = unit_rows(local.standard_normal((n_arms, d)))
        entries = []
        for a in range(n_arms):
            ks = local.choice(n_keys, size=int(local.integers(1, 4)), replace=False)
            for k in ks:
                entries.append((a, int(k), 1.0 / len(ks)))
        graph = KeyTermGraph.from_entries(n_arms, n_keys, entries)
        totals = graph.keyterm_weight_sums()
        if np.any(totals <= 0):
            continue
        feats = compute_keyterm_features(graph, ArmCatalog(arm_feats))
        norms = np.linalg.norm(feats.features, axis=1)
        assert np.all(norms <= 1.0 + 1e-9)


def test_validate_graph_reports_bad_arm_sum():
    graph = KeyTermGraph.from_entries(2, 1, [(0, 0, 0.9), (1, 0, 1.0)])
    problems = validate_graph(graph)
    assert len(problems) == 1
    assert "arm 0" in problems[0]


def test_validate_graph_reports_dead_keyterm():
    graph = KeyTermGraph.from_entries(1, 2, [(0, 0, 1.0), (0, 1, 0.0)])
    problems = validate_graph(graph)
    assert len(problems) == 1
    assert "key-term 1" in problems[0]


def test_validate_graph_clean_on_generated(small_env):
    assert validate_graph(small_env.graph) == []


def test_arm_catalog_rejects_non_unit_vectors():
    with pytest.raises(ValueError, match="unit-norm"):
        ArmCatalog(np.array([[1.0, 1.0]]))


def test_arm_catalog_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        ArmCatalog(np.array([[np.nan, 0.0]]))


def test_user_profile_norm_cap():
    UserProfile(np.array([0.6, 0.8]), 0)
    with pytest.raises(ValueError, match="exceeds 1"):
        UserProfile(np.array([1.1, 0.0]), 1)


def test_graph_rejects_duplicates_and_bad_ids():
    with pytest.raises(ValueError, match="duplicate"):
        KeyTermGraph.from_entries(2, 2, [(0, 0, 0.5), (0, 0, 0.5)])
    with pytest.raises(ValueError, match="out of range"):
        KeyTermGraph.from_entries(2, 2, [(2, 0, 1.0)])
    with pytest.raises(ValueError, match="non-negative"):
        KeyTermGraph.from_entries(2, 2, [(0, 0, -0.5)])


def test_keyterm_catalog_checks_count():
    arms = ArmCatalog(np.array([[1.0]]))
    graph = KeyTermGraph.from_entries(1, 1, [(0, 0, 1.0)])
    with pytest.raises(ValueError, match="feature count"):
        KeyTermCatalog(np.ones((2, 1)), graph)

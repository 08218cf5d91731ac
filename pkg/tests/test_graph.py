import itertools

import numpy as np
import pytest

from tagat.errors import NonPositiveEdgeWeight, UnknownTask
from tagat.graph import (
    ScanTimeSeries, TaskSet, build_edges, build_graph, build_node_features, edge_count,
)


def _scan(data, subject="s0", task="emotion"):
    return ScanTimeSeries(subject, task, np.asarray(data, dtype=np.float64), 1, 0.5)


def _factor_scan(rng, t=100, n=3, loading=1.0):
    """Columns share one latent factor, so partial correlations come out positive."""
    common = rng.standard_normal((t, 1))
    return common * loading + rng.standard_normal((t, n))


def _ceil_pairs(n, num, den):
    pairs = n * (n - 1) // 2
    return -(-pairs * num // den)


def test_node_features_collinear_pair():
    feats = build_node_features(_scan([[1, 2], [2, 4], [3, 6]]))
    np.testing.assert_allclose(feats, np.ones((2, 2)), rtol=0, atol=1e-12)


def test_node_features_match_pairwise_loop(rng):
    data = rng.standard_normal((25, 3))
    feats = build_node_features(_scan(data))
    for i, j in itertools.product(range(3), repeat=2):
        x, y = data[:, i], data[:, j]
        r = np.sum((x - x.mean()) * (y - y.mean())) / np.sqrt(
            np.sum((x - x.mean()) ** 2) * np.sum((y - y.mean()) ** 2))
        assert feats[i, j] == pytest.approx(r, abs=1e-12)


def test_node_features_permute_consistently(rng):
    data = rng.standard_normal((30, 5))
    perm = rng.permutation(5)
    a = build_node_features(_scan(data))
    b = build_node_features(_scan(data[:, perm]))
    np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-14)


def test_node_features_affine_invariance(rng):
    data = rng.standard_normal((30, 6))
    scaled = data * rng.uniform(0.5, 4.0, 6) + rng.normal(0, 10, 6)
    np.testing.assert_allclose(build_node_features(_scan(scaled)),
                               build_node_features(_scan(data)), rtol=0, atol=1e-10)


def test_drop_diagonal_knob(rng):
    feats = build_node_features(_scan(rng.standard_normal((20, 4))), drop_diagonal=True)
    assert np.array_equal(np.diag(feats), np.zeros(4))


def test_edge_count_for_268_rois():
    assert 268 * 267 // 2 == 35778
    assert edge_count(268, 0.05) == 1789


@pytest.mark.parametrize("density, num, den", [(0.01, 1, 100), (0.05, 5, 100), (0.2, 20, 100)])
def test_edge_count_formula_all_sizes(density, num, den):
    for n in range(3, 269):
        assert edge_count(n, density) == _ceil_pairs(n, num, den)


def test_dominant_pair_is_selected(rng):
    cov = np.eye(4)
    cov[1, 3] = cov[3, 1] = 0.9
    cov[0, 2] = cov[2, 0] = 0.2
    data = rng.standard_normal((400, 4)) @ np.linalg.cholesky(cov).T
    edges, weights = build_edges(_scan(data), density=0.1, ridge=1e-3)
    # brute-force rank oracle
    sample = np.cov(data, rowvar=False) + 1e-3 * np.eye(4)
    prec = np.linalg.inv(sample)
    best = max(((i, j) for i in range(4) for j in range(i + 1, 4)),
               key=lambda ij: -prec[ij] / np.sqrt(prec[ij[0], ij[0]] * prec[ij[1], ij[1]]))
    assert best == (1, 3)
    assert edges.tolist() == [[1, 3]]
    assert weights[0] > 0.8


def test_retained_count_monotone_in_density(rng):
    data = _factor_scan(rng, t=200, n=12, loading=2.0)
    counts = [len(build_edges(_scan(data), d)[0]) for d in (0.01, 0.05, 0.1, 0.2, 0.3)]
    assert counts == sorted(counts)


def test_nonpositive_weight_is_a_hard_error(rng):
    data = rng.standard_normal((200, 6))
    with pytest.raises(NonPositiveEdgeWeight) as exc:
        build_edges(_scan(data), density=0.95)
    assert exc.value.w <= 0


def test_ties_broken_lexicographically():
    from tagat.graph import select_edges

    pcorr = np.zeros((4, 4))
    for i, j in [(0, 3), (1, 2), (0, 1)]:
        pcorr[i, j] = pcorr[j, i] = 0.5
    edges, _ = select_edges(pcorr, density=0.3)  # keeps 2 of 6
    assert edges.tolist() == [[0, 1], [0, 3]]


def test_build_graph_deterministic(rng):
    ts = _scan(_factor_scan(rng, n=8))
    a, b = build_graph(ts, 0.1), build_graph(ts, 0.1)
    assert np.array_equal(a.node_features, b.node_features)
    assert np.array_equal(a.edges, b.edges) and np.array_equal(a.weights, b.weights)


def test_graph_invariants_on_synthetic_scans():
    from tagat.synth import SynthConfig, generate_population

    for ts in generate_population(SynthConfig(n_subjects=4, n_tasks=2, n_rois=30, seed=1)):
        g = build_graph(ts)
        assert g.n_edges == edge_count(30, 0.05)
        assert np.all(g.weights > 0)
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        assert len({tuple(e) for e in g.edges}) == g.n_edges


def _scripted_pipeline(data, density, ridge):
    """Independent loop-based pipeline: Pearson, covariance, inverse, partial corr, rank."""
    t, n = data.shape
    means = [sum(data[:, j]) / t for j in range(n)]
    cov = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            cov[i, j] = sum((data[k, i] - means[i]) * (data[k, j] - means[j])
                            for k in range(t)) / (t - 1)
    feats = np.array([[cov[i, j] / np.sqrt(cov[i, i] * cov[j, j]) for j in range(n)]
                      for i in range(n)])
    prec = np.linalg.inv(cov + ridge * np.eye(n))
    pairs = [(i, j, -prec[i, j] / np.sqrt(prec[i, i] * prec[j, j]))
             for i in range(n) for j in range(i + 1, n)]
    pairs.sort(key=lambda p: -p[2])
    keep = int(np.ceil(density * len(pairs) - 1e-12))
    return feats, pairs[:keep]


def test_pipeline_matches_scripted_oracle(rng):
    data = _factor_scan(rng, t=100, n=3, loading=1.5)
    ridge = 0.01
    g = build_graph(_scan(data), density=0.5, ridge=ridge)
    feats, pairs = _scripted_pipeline(data, 0.5, ridge)
    np.testing.assert_allclose(g.node_features, feats, rtol=0, atol=1e-8)
    assert g.edges.tolist() == [[i, j] for i, j, _ in pairs]
    np.testing.assert_allclose(g.weights, [w for _, _, w in pairs], rtol=0, atol=1e-8)


def test_relabeling_rois_relabels_graph(rng):
    for _ in range(10):
        data = _factor_scan(rng, t=120, n=8, loading=1.0)
        perm = rng.permutation(8)  # new column c holds old ROI perm[c]
        a = build_graph(_scan(data), density=0.2)
        b = build_graph(_scan(data[:, perm]), density=0.2)
        np.testing.assert_allclose(b.node_features, a.node_features[np.ix_(perm, perm)],
                                   atol=1e-12)

        def canon(edges, weights, relabel):
            return sorted((tuple(sorted((relabel[i], relabel[j]))), round(w, 10))
                          for (i, j), w in zip(edges.tolist(), weights))

        assert canon(b.edges, b.weights, perm) == canon(a.edges, a.weights, np.arange(8))


def test_scan_validation():
    with pytest.raises(ValueError):
        ScanTimeSeries("s", "t", np.zeros((4, 2)), 1, 1.5)
    with pytest.raises(ValueError):
        ScanTimeSeries("s", "t", np.zeros((4, 2)), 2, 0.5)


def test_taskset_lookup():
    tasks = TaskSet.canonical()
    assert len(tasks) == 7
    assert tasks.get("wm").index == 7
    assert tasks.get(1).name == "emotion"
    with pytest.raises(UnknownTask):
        tasks.get("rest")
    with pytest.raises(UnknownTask):
        tasks.get(8)

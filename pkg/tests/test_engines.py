import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import pdist

from kselect.engines import (ClusterAssignment, EngineError, cut_tree, gmm_em, hclust,
                             hclust_complete, kmeans, kmeanspp, lloyd, relabel, write_assignment)
from kselect.mdata import CondensedDistances, MarkerMatrix
from kselect.reduce import pca_scores

from oracles import (brute_force_wss, diag_gauss_loglik, exhaustive_init_kmeans,
                     naive_complete_linkage, set_partitions)


def _cd(D):
    i, j = np.triu_indices(D.shape[0], 1)
    return CondensedDistances(D.shape[0], D[i, j])


# --------------------------------------------------------------------- assignment

def test_relabel_first_appearance():
    np.testing.assert_array_equal(relabel([7, 3, 7, 9, 3]), [1, 2, 1, 3, 2])


def test_assignment_invariants():
    with pytest.raises(ValueError):
        ClusterAssignment([1, 1, 3], 3, "kmeans")
    with pytest.raises(ValueError):
        ClusterAssignment([0, 1], 2, "kmeans")
    a = ClusterAssignment([1, 2, 2], 2, "hclust")
    np.testing.assert_array_equal(a.sizes(), [1, 2])


def test_write_assignment(tmp_path):
    write_assignment(ClusterAssignment([1, 2, 1], 2, "kmeans"), tmp_path / "a.tsv", ["x", "y", "z"])
    assert (tmp_path / "a.tsv").read_text().splitlines() == ["id\tlabel", "x\t1", "y\t2", "z\t1"]


# --------------------------------------------------------------------- k-means

def test_set_partition_oracle_counts():
    # Stirling numbers of the second kind
    assert sum(1 for _ in set_partitions(5, 2)) == 15
    assert sum(1 for _ in set_partitions(6, 3)) == 90


def test_kmeans_k1_total_ss(rng):
    x = rng.random((9, 4))
    a = kmeans(x, 1)
    assert np.all(a.labels == 1)
    assert a.objective == pytest.approx(((x - x.mean(axis=0)) ** 2).sum(), rel=1e-12)


def test_kmeans_k_equals_n(rng):
    x = rng.random((6, 3))
    a = kmeans(x, 6)
    assert sorted(a.labels) == list(range(1, 7))
    assert a.objective == pytest.approx(0.0, abs=1e-12)


def test_kmeans_two_blobs(rng):
    x = np.vstack([rng.normal(0, 0.1, (4, 3)), rng.normal(5, 0.1, (4, 3))])
    a = kmeans(x, 2, seed=3)
    np.testing.assert_array_equal(a.labels, [1, 1, 1, 1, 2, 2, 2, 2])
    assert a.objective == pytest.approx(brute_force_wss(x, 2), abs=1e-9)


def test_kmeans_accepts_marker_matrix(rng):
    m = MarkerMatrix(rng.integers(0, 2, (10, 6)).astype(float), imputed=True)
    assert kmeans(m, 2).n == 10


def test_kmeans_too_many_clusters():
    x = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 1.0]])
    with pytest.raises(EngineError):
        kmeans(x, 3)


def test_kmeans_deterministic(rng):
    x = rng.random((30, 5))
    a, b = kmeans(x, 3, seed=11), kmeans(x, 3, seed=11)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.objective == b.objective


def test_lloyd_wss_non_increasing(rng):
    for _ in range(20):
        x = rng.random((40, 6))
        centers = x[kmeanspp(x, 4, rng)]
        _, _, hist = lloyd(x, centers)
        assert np.all(np.diff(hist) <= 1e-9 * hist[0])
        assert hist[-1] <= hist[0] + 1e-12


def test_more_restarts_never_worse(rng):
    x = rng.random((25, 4))
    prev = np.inf
    for r in range(1, 8):
        w = kmeans(x, 4, restarts=r, seed=5).objective
        assert w <= prev
        prev = w


def test_exhaustive_restarts_reach_global_minimum(rng):
    for _ in range(10):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(1, 4))
        x = rng.random((n, 2))
        assert exhaustive_init_kmeans(x, k, kmeans) == pytest.approx(brute_force_wss(x, k), abs=1e-9)


# --------------------------------------------------------------------- hierarchical

def test_hclust_three_points():
    d = CondensedDistances(3, [1.0, 2.0, 3.0])  # d01=1, d02=2, d12=3
    t = hclust_complete(d)
    np.testing.assert_array_equal(t.heights, [1.0, 3.0])
    np.testing.assert_array_equal(cut_tree(t, 2).labels, [1, 1, 2])


def test_hclust_two_points():
    t = hclust_complete(CondensedDistances(2, [4.5]))
    np.testing.assert_array_equal(t.merges, [[0, 1, 4.5, 2]])


def test_hclust_matches_naive_reference(rng):
    for _ in range(20):
        n = 12
        D = rng.random((n, n))
        D = D + D.T
        np.fill_diagonal(D, 0)
        np.testing.assert_array_equal(hclust_complete(_cd(D)).merges, naive_complete_linkage(D))


def test_hclust_ties_match_naive_reference(rng):
    for _ in range(30):
        n = int(rng.integers(2, 13))
        D = rng.integers(1, 4, (n, n)).astype(float)
        D = np.triu(D, 1) + np.triu(D, 1).T
        np.testing.assert_array_equal(hclust_complete(_cd(D)).merges, naive_complete_linkage(D))


def test_hclust_agrees_with_scipy(rng):
    x = rng.random((25, 8))
    v = pdist(x, "cityblock")
    t = hclust(CondensedDistances(25, v))
    ref = linkage(v, "complete")
    np.testing.assert_allclose(t.heights, ref[:, 2], rtol=1e-12)
    np.testing.assert_array_equal(np.sort(t.merges[:, :2], axis=1), np.sort(ref[:, :2], axis=1))
    ta = hclust(CondensedDistances(25, v), "average")
    np.testing.assert_allclose(ta.heights, linkage(v, "average")[:, 2], rtol=1e-12)


def test_unknown_linkage(rng):
    with pytest.raises(ValueError):
        hclust(CondensedDistances(3, [1.0, 2.0, 3.0]), "single")


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 14), st.integers(0, 2 ** 32 - 1))
def test_cut_tree_properties(n, seed):
    D = np.random.default_rng(seed).random((n, n))
    D = D + D.T
    t = hclust_complete(_cd(D))
    assert np.all(np.diff(t.heights) >= 0)
    assert np.all(cut_tree(t, 1).labels == 1)
    assert sorted(cut_tree(t, n).labels) == list(range(1, n + 1))
    prev = cut_tree(t, 1).labels
    for k in range(2, n + 1):
        cur = cut_tree(t, k).labels
        assert cur.max() == k and cur[0] == 1
        # every finer cluster sits inside one coarser cluster
        for c in range(1, k + 1):
            assert np.unique(prev[cur == c]).size == 1
        prev = cur
    with pytest.raises(ValueError):
        cut_tree(t, 0)
    with pytest.raises(ValueError):
        cut_tree(t, n + 1)


# --------------------------------------------------------------------- mixture

def test_gmm_k1_closed_form(rng):
    x = rng.normal(size=(40, 3)) * [1.0, 2.0, 0.5]
    fit, a = gmm_em(x, 1)
    assert np.all(a.labels == 1)
    mu, var = x.mean(axis=0), x.var(axis=0)
    closed = -0.5 * (x.shape[0] * np.sum(np.log(2 * np.pi * var)) + x.shape[0] * 3)
    assert fit.log_likelihood == pytest.approx(closed, rel=1e-10)
    np.testing.assert_allclose(fit.means[0], mu, atol=1e-12)
    np.testing.assert_allclose(fit.variances[0], var, rtol=1e-10)


def test_gmm_two_separated_gaussians(rng):
    truth = np.repeat([1, 2], 50)
    x = np.where(truth == 1, -5.0, 5.0)[:, None] + rng.normal(0, 0.5, (100, 1))
    _, a = gmm_em(x, 2, seed=1)
    agree = max(np.mean(a.labels == truth), np.mean(a.labels == 3 - truth))
    assert agree == 1.0


def test_gmm_fit_invariants_and_loglik(rng):
    x = np.vstack([rng.normal(0, 1, (30, 2)), rng.normal(4, 1, (30, 2))])
    fit, a = gmm_em(x, 2, seed=2)
    assert fit.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(fit.weights > 0)
    np.testing.assert_allclose(fit.responsibilities.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(np.diff(fit.history) >= -1e-8)
    assert fit.history[-1] == fit.log_likelihood == a.objective
    assert diag_gauss_loglik(x, fit.weights, fit.means, fit.variances) == pytest.approx(
        fit.log_likelihood, rel=1e-8)
    floor = 1e-6 * x.var(axis=0).sum()
    assert np.all(fit.variances >= floor)


def test_gmm_on_pca_scores(rng):
    m = MarkerMatrix(rng.integers(0, 2, (30, 40)).astype(float), imputed=True)
    fit, a = gmm_em(pca_scores(m, 3), 3, seed=0)
    assert a.k == 3 and a.method == "mclust"
    assert fit.means.shape == (3, 3)


def test_gmm_errors():
    with pytest.raises(EngineError):
        gmm_em(np.random.default_rng(0).random((3, 2)), 3)
    with pytest.raises(EngineError):
        gmm_em(np.ones((10, 2)), 2)

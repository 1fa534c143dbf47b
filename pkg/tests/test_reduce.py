import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kselect.mdata import MarkerMatrix
from kselect.reduce import pca_decompose, pca_scores, truncate, write_scores


def _eig_oracle(x):
    """Scores from an eigendecomposition of the sample covariance."""
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    return w[order], xc @ v[:, order]


def test_single_varying_column():
    x = np.full((10, 4), 0.5)
    x[:, 2] = np.arange(10) % 2
    s = pca_scores(MarkerMatrix(x, imputed=True), 3)
    assert s.explained_variance[0] == pytest.approx(np.var(x[:, 2], ddof=1), rel=1e-12)
    assert np.var(s.scores[:, 0], ddof=1) == pytest.approx(np.var(x[:, 2], ddof=1), rel=1e-12)
    assert np.all(s.explained_variance[1:] < 1e-20)


def test_variance_conservation(rng):
    x = rng.random((12, 30))
    s = pca_scores(MarkerMatrix(x, imputed=True), 11)
    total = np.var(x, axis=0, ddof=1).sum()
    assert abs(s.explained_variance.sum() - total) <= 1e-9 * total


def test_matches_covariance_eigendecomposition(rng):
    x = rng.integers(0, 2, (20, 50)).astype(float)
    s = pca_scores(MarkerMatrix(x, imputed=True), 19)
    w, scores = _eig_oracle(x)
    np.testing.assert_allclose(s.explained_variance, w[:19], rtol=1e-8, atol=1e-12)
    for c in range(10):  # leading components are well separated
        ref = scores[:, c]
        sign = np.sign(ref @ s.scores[:, c])
        np.testing.assert_allclose(s.scores[:, c], sign * ref, atol=1e-8)


def test_sign_convention(rng):
    s = pca_decompose(rng.random((8, 6)))
    for c in range(s.n_comp):
        load = s.loadings[:, c]
        assert load[np.argmax(np.abs(load))] > 0


def test_columns_centred_and_orthogonal(rng):
    s = pca_scores(rng.random((15, 40)), 5)
    np.testing.assert_allclose(s.scores.mean(axis=0), 0, atol=1e-12)
    g = s.scores.T @ s.scores
    norms = np.linalg.norm(s.scores, axis=0)
    off = g - np.diag(np.diag(g))
    assert np.all(np.abs(off) <= 1e-8 * np.outer(norms, norms))
    assert np.all(np.diff(s.explained_variance) <= 0)


def test_range_and_zero_variance_errors(rng):
    x = rng.random((5, 3))
    with pytest.raises(ValueError):
        pca_scores(x, 0)
    with pytest.raises(ValueError):
        pca_scores(x, 4)
    with pytest.raises(ValueError):
        pca_scores(rng.random((3, 8)), 3)  # n - 1 = 2
    with pytest.raises(ValueError):
        pca_scores(np.ones((5, 3)), 1)
    with pytest.raises(ValueError):
        pca_scores(MarkerMatrix([[0.0, 1.0], [1.0, 1.0]]), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
def test_nested_components(n, p, seed):
    x = np.random.default_rng(seed).random((n, p))
    r = min(n - 1, p)
    full = pca_scores(x, r)
    for k in range(1, r + 1):
        part = pca_scores(x, k)
        np.testing.assert_array_equal(part.scores, full.scores[:, :k])
    assert truncate(full, 1).n_comp == 1


def test_write_scores(tmp_path, rng):
    s = pca_scores(rng.random((4, 5)), 2)
    write_scores(s, tmp_path / "s.tsv", row_ids=list("abcd"))
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0] == "id\tPC1\tPC2"
    assert float(lines[1].split("\t")[1]) == s.scores[0, 0]

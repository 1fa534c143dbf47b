"""Principal component scores of a marker matrix."""
import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray
    explained_variance: np.ndarray
    loadings: np.ndarray = None

    @property
    def n_rows(self):
        return self.scores.shape[0]

    @property
    def n_comp(self):
        return self.scores.shape[1]


def _as_array(m):
    cells = getattr(m, "cells", m)
    if getattr(m, "imputed", True) is False:
        raise ValueError("PCA requires an imputed matrix")
    return np.asarray(cells, dtype=float)


def pca_decompose(m):
    """Full thin SVD of the column-centred data.

    Returns scores and variances for every one of the ``min(n - 1, p)``
    components, with the sign of each component fixed so that its
    largest-magnitude loading is positive (first such index on ties).
    """
    x = _as_array(m)
    n, p = x.shape
    xc = x - x.mean(axis=0)
    if not np.any(xc):
        raise ValueError("matrix has zero variance")
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    r = min(n - 1, p)
    u, s, vt = u[:, :r], s[:r], vt[:r]
    flip = np.sign(vt[np.arange(r), np.argmax(np.abs(vt), axis=1)])
    flip[flip == 0] = 1.0
    u = u * flip
    vt = vt * flip[:, None]
    return ScoreMatrix(scores=u * s, explained_variance=s ** 2 / (n - 1), loadings=vt.T)


def truncate(s, k):
    """First ``k`` components of a decomposition."""
    if not 1 <= k <= s.n_comp:
        raise ValueError(f"k={k} outside 1..{s.n_comp}")
    loadings = None if s.loadings is None else s.loadings[:, :k]
    return ScoreMatrix(s.scores[:, :k], s.explained_variance[:k], loadings)


def pca_scores(m, k):
    """Scores of the top ``k`` principal components (centred, unscaled)."""
    x = _as_array(m)
    n, p = x.shape
    if not 1 <= k <= min(n - 1, p):
        raise ValueError(f"k={k} outside 1..{min(n - 1, p)} for a {n}x{p} matrix")
    return truncate(pca_decompose(x), k)


def write_scores(s, path, row_ids=None, delimiter="\t"):
    row_ids = row_ids if row_ids is not None else [str(i) for i in range(s.n_rows)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["id", *(f"PC{c + 1}" for c in range(s.n_comp))])
        for rid, row in zip(row_ids, s.scores):
            w.writerow([rid, *(repr(float(v)) for v in row)])

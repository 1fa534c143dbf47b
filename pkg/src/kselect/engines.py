"""Clustering engines: k-means, agglomerative hierarchical clustering and a
diagonal-covariance Gaussian mixture fitted by EM.

Every engine returns a :class:`ClusterAssignment` whose labels run over
``1..k`` with each label used at least once. All randomness comes from keyed
streams, so a fixed ``seed`` gives identical output on every call.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream

METHODS = ("kmeans", "hclust", "mclust")


class EngineError(RuntimeError):
    """An engine could not produce a valid assignment for the requested k."""


def relabel(labels):
    """Map arbitrary labels to ``1..k`` in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, len(first) + 1)
    return rank[inverse.ravel()]


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    k: int
    method: str
    objective: float = float("nan")

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if self.k < 1:
            raise ValueError("k must be positive")
        if labels.min() < 1 or labels.max() > self.k:
            raise ValueError(f"labels must lie in 1..{self.k}")
        if np.unique(labels).size != self.k:
            raise ValueError(f"not every label in 1..{self.k} is used")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.labels.size

    def sizes(self):
        return np.bincount(self.labels, minlength=self.k + 1)[1:]


def write_assignment(a, path, row_ids=None, delimiter="\t"):
    row_ids = row_ids if row_ids is not None else [str(i) for i in range(a.n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["id", "label"])
        for rid, lab in zip(row_ids, a.labels.tolist()):
            w.writerow([rid, lab])


def _data(m):
    if getattr(m, "imputed", True) is False:
        raise ValueError("clustering requires an imputed matrix")
    x = getattr(m, "cells", None)
    if x is None:
        x = getattr(m, "scores", m)
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------

def kmeanspp(x, k, rng, xx=None):
    """Indices of ``k`` seed points chosen by D^2 weighting."""
    n = x.shape[0]
    xx = (x * x).sum(axis=1) if xx is None else xx
    idx = [int(rng.integers(n))]
    d2 = np.maximum(xx - 2.0 * (x @ x[idx[0]]) + xx[idx[0]], 0.0)
    for _ in range(1, k):
        cum = np.cumsum(d2)
        if cum[-1] <= 0:
            raise EngineError("fewer distinct points than clusters")
        i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        i = min(i, n - 1)
        idx.append(i)
        d2 = np.minimum(d2, np.maximum(xx - 2.0 * (x @ x[i]) + xx[i], 0.0))
    return np.array(idx)


def _sq_dists(x, xx, centers):
    d2 = xx[:, None] - 2.0 * (x @ centers.T) + (centers * centers).sum(axis=1)
    return np.maximum(d2, 0.0)


def _centroids(x, labels, k):
    onehot = np.zeros((x.shape[0], k))
    onehot[np.arange(x.shape[0]), labels] = 1.0
    counts = onehot.sum(axis=0)
    return (onehot.T @ x) / counts[:, None], counts


def _wss(x, labels, centers):
    r = x - centers[labels]
    return float(np.einsum("ij,ij->", r, r))


def n_distinct_rows(x):
    x = np.ascontiguousarray(x)
    return len({row.tobytes() for row in x})


def lloyd(x, centers, max_iter=100):
    """Lloyd iterations from the given centres.

    Returns ``(labels, centers, history)`` where labels are 0-based and
    ``history[0]`` is the cost of the initial centres, followed by the
    within-cluster sum of squares after each update.
    """
    x = np.asarray(x, dtype=float)
    centers = np.array(centers, dtype=float)
    k = centers.shape[0]
    xx = (x * x).sum(axis=1)
    total_xx = xx.sum()
    rows = np.arange(x.shape[0])
    history = []
    labels = None
    for it in range(max_iter):
        d2 = _sq_dists(x, xx, centers)
        new = np.argmin(d2, axis=1)
        if it == 0:
            history.append(float(d2[rows, new].sum()))
        counts = np.bincount(new, minlength=k)
        while (counts == 0).any():
            # move the point farthest from its centre into the empty cluster
            own = d2[rows, new].copy()
            own[counts[new] <= 1] = -1.0
            far = int(np.argmax(own))
            counts[new[far]] -= 1
            empty = int(np.flatnonzero(counts == 0)[0])
            new[far] = empty
            counts[empty] += 1
            d2[far] = np.inf
            d2[far, empty] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers, counts = _centroids(x, labels, k)
        history.append(float(total_xx - counts @ (centers * centers).sum(axis=1)))
    if history:
        history[-1] = _wss(x, labels, centers)
    return labels, centers, history


def kmeans(m, k, restarts=10, max_iter=100, seed=0, init=None):
    """Best-of-``restarts`` k-means with k-means++ seeding.

    Parameters
    ----------
    m : MarkerMatrix or array_like
        Data, rows are observations.
    k : int
        Number of clusters.
    init : array_like, shape (k, p), optional
        Explicit starting centres; when given a single run is made.

    Returns
    -------
    ClusterAssignment
        ``objective`` is the within-cluster sum of squares.
    """
    x = _data(m)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise EngineError(f"k={k} outside 1..{n}")
    n_distinct = n_distinct_rows(x)
    if k > n_distinct:
        raise EngineError(f"k={k} exceeds the {n_distinct} distinct rows")
    if init is not None:
        starts = [np.asarray(init, dtype=float)]
    else:
        xx = (x * x).sum(axis=1)
        starts = (x[kmeanspp(x, k, stream(seed, r), xx)] for r in range(max(1, restarts)))
    best_labels, best_wss = None, np.inf
    for centers in starts:
        labels, _, hist = lloyd(x, centers, max_iter)
        if hist[-1] < best_wss:
            best_labels, best_wss = labels, hist[-1]
    return ClusterAssignment(relabel(best_labels), k, "kmeans", best_wss)


# --------------------------------------------------------------------------
# hierarchical clustering
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Merge history of ``n`` leaves.

    ``merges`` has one row per merge: ``(left, right, height, size)``. Leaves
    are nodes ``0..n-1`` and merge ``t`` creates node ``n + t``.
    """

    n: int
    merges: np.ndarray
    linkage: str = "complete"

    @property
    def heights(self):
        return self.merges[:, 2]


def _row_min(D, r):
    seg = D[r, r + 1:]
    if seg.size == 0:
        return np.inf, -1
    j = int(np.argmin(seg))
    return seg[j], r + 1 + j


def hclust(d, linkage="complete"):
    """Agglomerative clustering of a condensed distance vector.

    At each step the closest pair of clusters merges; ties go to the pair
    whose smallest member indices are lexicographically smallest. Supported
    linkages are ``"complete"`` (maximum) and ``"average"``.
    """
    if linkage not in ("complete", "average"):
        raise ValueError(f"unknown linkage {linkage!r}")
    n = d.n
    D = d.square()
    np.fill_diagonal(D, np.inf)
    minval = np.full(n, np.inf)
    minarg = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        minval[r], minarg[r] = _row_min(D, r)
    node = np.arange(n)
    size = np.ones(n)
    merges = np.empty((n - 1, 4))
    for t in range(n - 1):
        a = int(np.argmin(minval))
        b = int(minarg[a])
        h = minval[a]
        merges[t] = (node[a], node[b], h, size[a] + size[b])
        if linkage == "complete":
            new = np.maximum(D[a], D[b])
        else:
            with np.errstate(invalid="ignore"):
                new = (size[a] * D[a] + size[b] * D[b]) / (size[a] + size[b])
        new[a] = new[b] = np.inf
        D[a, :] = new
        D[:, a] = new
        D[b, :] = np.inf
        D[:, b] = np.inf
        minval[b], minarg[b] = np.inf, -1
        node[a] = n + t
        size[a] += size[b]

        stale = np.flatnonzero((minarg[:b] == b) | (minarg[:b] == a))
        for r in stale:
            minval[r], minarg[r] = _row_min(D, r)
        # rows above ``a`` may now be closest to the merged cluster
        head = np.arange(a)
        better = (new[:a] < minval[:a]) | ((new[:a] == minval[:a]) & (a < minarg[:a]))
        better &= np.isfinite(new[:a])
        minval[head[better]] = new[:a][better]
        minarg[head[better]] = a
        minval[a], minarg[a] = _row_min(D, a)
    return Dendrogram(n, merges, linkage)


def hclust_complete(d):
    return hclust(d, "complete")


def cut_tree(t, k):
    """Cluster assignment from the tree with its ``k - 1`` highest merges removed.

    Labels are numbered in order of first leaf appearance. ``objective`` is
    the height of the last merge kept (0 when ``k == n``).
    """
    n = t.n
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside 1..{n}")
    keep = n - k
    parent = np.arange(2 * n - 1)
    for s in range(keep):
        left, right = int(t.merges[s, 0]), int(t.merges[s, 1])
        parent[left] = parent[right] = n + s
    roots = np.empty(n, dtype=np.int64)
    for leaf in range(n):
        r = leaf
        while parent[r] != r:
            r = parent[r]
        roots[leaf] = r
    height = float(t.merges[keep - 1, 2]) if keep > 0 else 0.0
    return ClusterAssignment(relabel(roots), k, "hclust", height)


# --------------------------------------------------------------------------
# Gaussian mixture
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GmmFit:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    responsibilities: np.ndarray
    history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self):
        return self.weights.size


def _log_joint(x, weights, means, variances):
    # (n, k) log of weight_c * N(x | mean_c, diag(var_c))
    log_det = np.log(variances).sum(axis=1)
    inv = 1.0 / variances
    maha = (x * x) @ inv.T - 2.0 * x @ (means * inv).T + (means * means * inv).sum(axis=1)
    d = x.shape[1]
    return np.log(weights) - 0.5 * (d * np.log(2 * np.pi) + log_det + maha)


def _em_run(x, k, centers, floor, max_iter, tol):
    n, d = x.shape
    weights = np.full(k, 1.0 / k)
    means = centers.copy()
    variances = np.tile(np.maximum(x.var(axis=0), floor), (k, 1))
    history = []
    for it in range(max_iter):
        lj = _log_joint(x, weights, means, variances)
        top = lj.max(axis=1, keepdims=True)
        norm = np.log(np.exp(lj - top).sum(axis=1)) + top[:, 0]
        ll = float(norm.sum())
        resp = np.exp(lj - norm[:, None])
        history.append(ll)
        if it > 0 and ll - history[-2] < tol:
            break
        if it == max_iter - 1:
            break
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        variances = np.maximum((resp.T @ (x * x)) / nk[:, None] - means * means, floor)
    return GmmFit(weights, means, variances, ll, resp, history, len(history))


def gmm_em(s, k, restarts=5, max_iter=200, tol=1e-6, seed=0):
    """Diagonal-covariance Gaussian mixture fitted by EM.

    Each restart starts from k-means++ centres, uniform weights and the
    pooled per-dimension variance. Variances are floored at ``1e-6`` times
    the total variance of the data. The restart with the highest final
    log-likelihood among those whose hard assignment uses all ``k``
    components wins.

    Returns
    -------
    fit : GmmFit
    assignment : ClusterAssignment
        ``objective`` is the log-likelihood.
    """
    x = _data(s)
    n = x.shape[0]
    if n <= k:
        raise EngineError(f"need more than k={k} observations, got {n}")
    total_var = float(x.var(axis=0).sum())
    if total_var <= 0:
        raise EngineError("all rows identical")
    floor = 1e-6 * total_var
    best, best_labels = None, None
    for r in range(max(1, restarts)):
        centers = x[kmeanspp(x, k, stream(seed, r))]
        fit = _em_run(x, k, centers, floor, max_iter, tol)
        labels = np.argmax(fit.responsibilities, axis=1)
        if np.unique(labels).size < k:
            continue
        if best is None or fit.log_likelihood > best.log_likelihood:
            best, best_labels = fit, labels
    if best is None:
        raise EngineError(f"every EM restart left a component empty at k={k}")
    return best, ClusterAssignment(relabel(best_labels), k, "mclust", best.log_likelihood)

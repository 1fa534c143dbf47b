"""Hubert's gamma: correlation between pairwise distances and cluster
co-membership.

The statistic here is the normalised form, the Pearson correlation over all
pairs ``i < j`` between ``d(i, j)`` and the indicator that ``i`` and ``j``
sit in different clusters. It is undefined (``nan``) when either vector is
constant, which includes every single-cluster assignment.
"""
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GammaValue:
    gamma: float
    n_pairs: int
    method: str = ""
    k: int = 0

    @property
    def defined(self):
        return not math.isnan(self.gamma)


def _labels(a):
    return np.asarray(getattr(a, "labels", a))


def gamma_from_arrays(values, labels):
    """Hubert's gamma for condensed distances ``values`` and a label vector."""
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    n = labels.size
    if values.size != n * (n - 1) // 2:
        raise ValueError(f"{values.size} distances do not match {n} labels")
    i, j = np.triu_indices(n, 1)
    between = labels[i] != labels[j]
    n_b = int(between.sum())
    n_w = between.size - n_b
    if n_b == 0 or n_w == 0:
        return math.nan
    centred = values - values.mean()
    ss = float(centred @ centred)
    if ss == 0.0 or centred.min() == centred.max():
        return math.nan
    # point-biserial form of the Pearson correlation
    n_pairs = between.size
    mean_b = centred[between].sum() / n_b
    mean_w = centred[~between].sum() / n_w
    r = (mean_b - mean_w) * math.sqrt(n_b * n_w) / (n_pairs * math.sqrt(ss / n_pairs))
    return float(min(1.0, max(-1.0, r)))


def hubert_gamma(d, a):
    """Hubert's gamma of assignment ``a`` on distances ``d``."""
    labels = _labels(a)
    if d.n != labels.size:
        raise ValueError(f"distance matrix has n={d.n}, assignment has {labels.size} labels")
    return GammaValue(gamma_from_arrays(d.values, labels), d.n * (d.n - 1) // 2,
                      getattr(a, "method", ""), int(getattr(a, "k", np.unique(labels).size)))


def true_gamma(d, truth):
    """Hubert's gamma of the generating labels on full-data distances."""
    g = hubert_gamma(d, truth)
    return GammaValue(g.gamma, g.n_pairs, "truth", g.k)

"""Labelled binary marker data with a chosen number of clusters.

Clusters drift away from a shared ancestral population under the
Balding-Nichols model: marker ``m`` has ancestral frequency
``p_m ~ U(0.05, 0.95)``, cluster ``c`` has frequency
``p_cm ~ Beta(p_m (1 - F) / F, (1 - p_m)(1 - F) / F)`` and every cell is a
Bernoulli draw from its cluster's frequency. The drift parameter ``F``
sets how far apart clusters lie; :func:`calibrate_separation` ties it to a
target value of the true Hubert's gamma.

Three presets named after migration levels are provided. ``LOW`` migration
gives the most separated clusters (true gamma about 0.77 at k = 3),
``MED`` about 0.58 and ``HIGH`` about 0.46.
"""
import csv
import functools
import logging
from dataclasses import dataclass, replace

import numpy as np

from ._rng import derive_seed, stream
from .engines import ClusterAssignment
from .mdata import MarkerMatrix, manhattan_distances, write_markers
from .validity import gamma_from_arrays

logger = logging.getLogger(__name__)

CLUSTER_COUNTS = (1, 2, 3, 4, 5, 6, 9, 12)
PRESET_TARGETS = {"LOW": 0.77, "MED": 0.58, "HIGH": 0.46}
PRESET_SEED = 20130601
F_MIN, F_MAX = 1e-6, 0.9


class CalibrationError(ValueError):
    def __init__(self, message, lower=None, upper=None):
        super().__init__(message)
        self.lower = lower
        self.upper = upper


@dataclass(frozen=True)
class SimConfig:
    n_obs: int = 200
    n_markers: int = 400
    n_clusters: int = 3
    separation: float = 0.1
    seed: int = 0
    missing_rate: float = 0.0

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_clusters > self.n_obs:
            raise ValueError(f"n_clusters={self.n_clusters} invalid for {self.n_obs} observations")
        if not 0 < self.separation < 1:
            raise ValueError("separation F must lie in (0, 1)")
        if self.n_obs < 2 or self.n_markers < 1:
            raise ValueError("need at least 2 observations and 1 marker")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must lie in [0, 1)")

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    markers: MarkerMatrix
    truth: ClusterAssignment
    config: SimConfig
    frequencies: np.ndarray = None


def balanced_labels(n, k):
    """Labels ``1..k`` in contiguous blocks whose sizes differ by at most one."""
    return np.arange(n) * k // n + 1


def simulate_markers(cfg):
    """Draw one labelled dataset; identical configs give identical data."""
    rng = stream(cfg.seed, 7)
    n, p, k, F = cfg.n_obs, cfg.n_markers, cfg.n_clusters, cfg.separation
    ancestral = rng.uniform(0.05, 0.95, size=p)
    scale = (1.0 - F) / F
    freqs = rng.beta(ancestral * scale, (1.0 - ancestral) * scale, size=(k, p))
    labels = balanced_labels(n, k)
    cells = (rng.random((n, p)) < freqs[labels - 1]).astype(float)
    imputed = True
    if cfg.missing_rate > 0:
        mask = rng.random((n, p)) < cfg.missing_rate
        # keep at least one observed cell per column
        mask[rng.integers(0, n, size=p), np.arange(p)] = False
        cells[mask] = np.nan
        imputed = False
    markers = MarkerMatrix(cells, row_ids=[f"s{i + 1}" for i in range(n)],
                           col_ids=[f"m{j + 1}" for j in range(p)], imputed=imputed)
    return LabeledDataset(markers, ClusterAssignment(labels, k, "truth"), cfg, freqs)


def dataset_true_gamma(ds):
    d = manhattan_distances(ds.markers)
    return gamma_from_arrays(d.values, ds.truth.labels)


def mean_true_gamma(cfg, separation, replicates=10):
    """Mean true gamma over ``replicates`` seeded datasets at drift ``separation``.

    Replicate ``r`` always uses the same seed whatever the drift, so the
    function is smooth enough to bisect.
    """
    vals = [dataset_true_gamma(simulate_markers(cfg.replace(
        separation=separation, seed=derive_seed(cfg.seed, 11, r)))) for r in range(replicates)]
    return float(np.mean(vals))


def calibrate_separation(target, k=3, base=None, replicates=10, tol=0.02, max_iter=20):
    """Drift ``F`` whose mean true gamma is within ``tol`` of ``target``.

    Bisection runs on ``log F`` over ``[1e-6, 0.9]``.

    Returns
    -------
    F : float
    achieved : float
        Mean true gamma at ``F``.

    Raises
    ------
    CalibrationError
        ``target`` lies outside the gamma range spanned by the bracket.
    """
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    if k < 2:
        raise ValueError("true gamma is undefined for a single cluster")
    base = (base or SimConfig()).replace(n_clusters=k)
    lo, hi = np.log(F_MIN), np.log(F_MAX)
    g_lo = mean_true_gamma(base, F_MIN, replicates)
    g_hi = mean_true_gamma(base, F_MAX, replicates)
    if not g_lo <= target <= g_hi:
        raise CalibrationError(
            f"target gamma {target} outside achievable range [{g_lo:.4f}, {g_hi:.4f}] "
            f"for F in [{F_MIN}, {F_MAX}]", g_lo, g_hi)
    F, g = float(np.exp(hi)), g_hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        F = float(np.exp(mid))
        g = mean_true_gamma(base, F, replicates)
        if abs(g - target) <= tol:
            break
        if g < target:
            lo = mid
        else:
            hi = mid
    logger.info("calibrated F=%.5g for target %.3f at k=%d (achieved %.4f)", F, target, k, g)
    return F, g


@functools.lru_cache(maxsize=None)
def preset_separation(name):
    """Drift value for a named preset, calibrated once at k = 3 and cached."""
    name = name.upper()
    if name not in PRESET_TARGETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESET_TARGETS)}")
    F, _ = calibrate_separation(PRESET_TARGETS[name], k=3,
                                base=SimConfig(seed=PRESET_SEED), tol=0.005)
    return F


def write_dataset(ds, path, delimiter=None):
    """Write markers to ``path`` and truth labels to ``<path>.truth.tsv``."""
    write_markers(ds.markers, path, delimiter=delimiter)
    truth_path = f"{path}.truth.tsv"
    with open(truth_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "cluster"])
        for rid, lab in zip(ds.markers.row_ids, ds.truth.labels.tolist()):
            w.writerow([rid, lab])
    return truth_path


def read_truth(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))[1:]
    labels = [int(r[1]) for r in rows if r]
    return [r[0] for r in rows if r], ClusterAssignment(labels, max(labels), "truth")

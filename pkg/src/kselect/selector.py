"""Choosing the number of clusters.

For each bootstrap replicate the three engines are run at every candidate
``k`` and scored with Hubert's gamma against the replicate's own Manhattan
distances. Consecutive cluster counts are compared with a paired sign-flip
test across replicates, separately for each method. Within the method that
reaches the highest mean gamma, the answer is the smallest ``k`` whose
gamma rises significantly from ``k - 1`` but does not rise significantly
to ``k + 1``.

Single-cluster data cannot be detected by that rule, so the shape of the
mean gamma curve is also classified (steadily rising from a low start means
no structure; an interior peak or a decline from a high start means
clusters).
"""
import dataclasses
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed, stream
from .engines import METHODS, EngineError, cut_tree, gmm_em, hclust, kmeans
from .mdata import bootstrap_rows, manhattan_distances
from .reduce import pca_decompose, truncate
from .validity import gamma_from_arrays

logger = logging.getLogger(__name__)

CLUSTERED = "CLUSTERED"
NO_STRUCTURE = "NO_STRUCTURE"
INCONCLUSIVE = "INCONCLUSIVE"

# stream tags, keep stable: changing them changes every seeded result
_BOOT, _ENGINE, _PERM = 0, 1, 2


@dataclass(frozen=True)
class SelectionConfig:
    """Settings for one selection run.

    The ``diag_*`` fields set the thresholds of the curve-shape diagnostic
    (see :func:`classify_curve`).
    """

    k_max: int = 10
    n_boot: int = 50
    alpha: float = 0.01
    master_seed: int = 0
    methods: tuple = METHODS
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 100
    em_restarts: int = 5
    em_max_iter: int = 200
    em_tol: float = 1e-6
    linkage: str = "complete"
    n_resamples: int = 9999
    exact_max: int = 14
    diag_low_start: float = 0.4
    diag_drop_tol: float = 0.005
    diag_peak_tol: float = 0.01
    workers: int = 1

    def __post_init__(self):
        if self.k_max < 2:
            raise ValueError("k_max must be at least 2")
        if self.n_boot < 2:
            raise ValueError("need at least 2 bootstrap replicates")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in self.methods))
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def ks(self):
        return tuple(range(2, self.k_max + 1))


@dataclass(frozen=True, eq=False)
class GammaTable:
    """Hubert's gamma per ``(method, k, replicate)``; ``nan`` marks UNDEFINED.

    ``gammas[m, k - 2, r]`` holds method ``methods[m]`` at ``k`` clusters on
    replicate ``r + 1``.
    """

    gammas: np.ndarray
    methods: tuple
    ks: tuple
    causes: tuple = ()

    @property
    def n_boot(self):
        return self.gammas.shape[2]

    def series(self, method, k):
        return self.gammas[self.methods.index(method), self.ks.index(k)]

    def curve(self, method):
        """Mean gamma over replicates at each k (``nan`` where nothing is defined)."""
        g = self.gammas[self.methods.index(method)]
        return _nanmean(g, axis=1)

    def curve_sd(self, method):
        g = self.gammas[self.methods.index(method)]
        n = np.sum(~np.isnan(g), axis=1)
        out = np.full(len(self.ks), np.nan)
        for i in np.flatnonzero(n >= 2):
            out[i] = np.nanstd(g[i], ddof=1)
        return out

    def n_defined(self, method):
        return np.sum(~np.isnan(self.gammas[self.methods.index(method)]), axis=1)


def _nanmean(a, axis):
    n = np.sum(~np.isnan(a), axis=axis)
    s = np.nansum(a, axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / np.maximum(n, 1), np.nan)


def _replicate(m, cfg, rep_id):
    ks = cfg.ks
    out = np.full((len(cfg.methods), len(ks)), np.nan)
    causes = []
    boot = bootstrap_rows(m, rep_id, cfg.master_seed)
    x = boot.data.cells
    d = manhattan_distances(boot.data)

    def note(method, k, exc):
        causes.append((method, k, rep_id, f"{type(exc).__name__}: {exc}"))

    tree = pcs = None
    if "hclust" in cfg.methods:
        tree = hclust(d, cfg.linkage)
    if "mclust" in cfg.methods:
        try:
            pcs = pca_decompose(x)
        except ValueError as exc:
            pcs = exc
    for mi, method in enumerate(cfg.methods):
        code = METHODS.index(method)
        for ki, k in enumerate(ks):
            seed = derive_seed(cfg.master_seed, _ENGINE, rep_id, code, k)
            try:
                if method == "kmeans":
                    a = kmeans(x, k, cfg.kmeans_restarts, cfg.kmeans_max_iter, seed)
                elif method == "hclust":
                    a = cut_tree(tree, k)
                else:
                    if isinstance(pcs, Exception):
                        raise pcs
                    _, a = gmm_em(truncate(pcs, k), k, cfg.em_restarts,
                                  cfg.em_max_iter, cfg.em_tol, seed)
                out[mi, ki] = gamma_from_arrays(d.values, a.labels)
            except (EngineError, ValueError, np.linalg.LinAlgError) as exc:
                note(method, k, exc)
    return out, causes


def run_grid(m, cfg):
    """Gamma for every ``(method, k, replicate)`` cell.

    Engine failures leave the cell UNDEFINED and are recorded in
    ``causes``; the result does not depend on ``cfg.workers``.
    """
    if not m.imputed:
        raise ValueError("run_grid requires an imputed matrix")
    if cfg.k_max >= m.n_rows:
        raise ValueError(f"k_max={cfg.k_max} must be below the {m.n_rows} observations")
    rep_ids = range(1, cfg.n_boot + 1)
    if cfg.workers == 1:
        results = [_replicate(m, cfg, r) for r in rep_ids]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda r: _replicate(m, cfg, r), rep_ids))
    gammas = np.stack([r[0] for r in results], axis=2)
    causes = tuple(c for r in results for c in r[1])
    for c in causes[:10]:
        logger.debug("undefined cell %s k=%d rep=%d: %s", *c)
    if causes:
        logger.info("%d undefined grid cells", len(causes))
    return GammaTable(gammas, cfg.methods, cfg.ks, causes)


# --------------------------------------------------------------------------
# paired permutation test
# --------------------------------------------------------------------------

def _sign_patterns(b):
    codes = np.arange(2 ** b, dtype=np.int64)[:, None]
    return 1.0 - 2.0 * ((codes >> np.arange(b)) & 1)


def paired_signflip_test(diffs, n_resamples=9999, exact_max=14, seed=0):
    """One-sided p-value that the mean paired difference is positive.

    The null distribution flips the sign of each difference independently.
    With at most ``exact_max`` usable pairs every one of the ``2**b`` sign
    patterns is enumerated; beyond that ``n_resamples`` random patterns are
    drawn and the observed one is counted as well. ``nan`` differences are
    dropped; fewer than two usable pairs gives ``nan``.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[~np.isnan(d)]
    b = d.size
    if b < 2:
        return math.nan
    if not d.any():
        return 1.0
    obs = d.sum() / b
    tol = 1e-10 * np.abs(d).sum() / b
    if b <= exact_max:
        null = _sign_patterns(b) @ d / b
        return float(np.count_nonzero(null >= obs - tol) / null.size)
    rng = stream(seed, b)
    signs = 1.0 - 2.0 * rng.integers(0, 2, size=(n_resamples, b))
    null = signs @ d / b
    return float((1 + np.count_nonzero(null >= obs - tol)) / (n_resamples + 1))


# --------------------------------------------------------------------------
# diagnostic
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveShape:
    shape: str  # rising | peak | declining | other | undetermined
    peak_k: int = 0

    @property
    def vote(self):
        if self.shape == "rising":
            return NO_STRUCTURE
        if self.shape in ("peak", "declining"):
            return CLUSTERED
        return INCONCLUSIVE


def _paired_se(g):
    """Standard error of the mean of ``g[i] - g[j]`` for every pair of rows."""
    n = g.shape[0]
    se = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = g[i] - g[j]
            d = d[~np.isnan(d)]
            if d.size > 1:
                se[i, j] = se[j, i] = d.std(ddof=1) / np.sqrt(d.size)
    return se


def classify_curve(curve, ks, low_start=0.4, drop_tol=0.005, peak_tol=0.01, replicates=None,
                   z=2.0):
    """Shape of a mean-gamma-versus-k curve.

    ``rising``: never drops more than ``drop_tol`` below its running maximum
    and starts below ``low_start``. ``peak``: the peak lies strictly inside
    the range and the curve ends more than ``drop_tol`` below it.
    ``declining``: the peak is the first point and it is at least
    ``low_start``. The peak is the smallest k within ``peak_tol`` of the
    maximum, so a plateau is located at its left edge.

    If ``replicates`` (k x b gammas behind ``curve``) is given, a drop from
    k_i to k_j only counts when it also exceeds ``z`` paired standard errors
    of ``gamma_i - gamma_j``, so bootstrap noise is not read as a peak.
    """
    curve = np.asarray(curve, dtype=float)
    ks = np.asarray(ks)
    ok = ~np.isnan(curve)
    if ok.sum() < 2:
        return CurveShape("undetermined")
    c, kk = curve[ok], ks[ok]
    top = float(c.max())
    peak = int(np.flatnonzero(c >= top - peak_tol)[0])
    tol = np.full((c.size, c.size), float(drop_tol))
    if replicates is not None:
        tol = np.maximum(tol, z * _paired_se(np.asarray(replicates, dtype=float)[ok]))
    # drop from an earlier point i to a later point j, beyond its tolerance
    diff = c[:, None] - c[None, :]
    later = np.triu(np.ones_like(tol, dtype=bool), 1)
    real = later & (diff > tol)
    if not real.any():
        if c[0] < low_start:
            return CurveShape("rising", int(kk[peak]))
        return CurveShape("other", int(kk[peak]))
    top_i = int(np.argmax(c))
    if 0 < peak < c.size - 1 and real[top_i, -1]:
        return CurveShape("peak", int(kk[peak]))
    if peak == 0 and c[0] >= low_start:
        return CurveShape("declining", int(kk[0]))
    return CurveShape("other", int(kk[peak]))


@dataclass(frozen=True)
class Diagnosis:
    flag: str
    shapes: dict
    peak_k: int = 0


def diagnose_structure(t, low_start=0.4, drop_tol=0.005, peak_tol=0.01):
    """Classify each method's curve and vote.

    k-means and hierarchical clustering vote; the mixture model only breaks
    a disagreement between them. For a CLUSTERED verdict ``peak_k`` comes
    from the agreeing method with the highest curve.
    """
    shapes = {m: classify_curve(t.curve(m), t.ks, low_start, drop_tol, peak_tol,
                                replicates=t.gammas[t.methods.index(m)])
              for m in t.methods}
    # a method with no usable curve neither votes nor breaks ties
    known = [m for m in shapes if shapes[m].shape != "undetermined"]
    voters = [m for m in ("kmeans", "hclust") if m in known] or known
    votes = [shapes[m].vote for m in voters]
    if not votes:
        flag = INCONCLUSIVE
    elif len(set(votes)) == 1:
        flag = votes[0]
    elif "mclust" in known and shapes["mclust"].vote in votes:
        flag = shapes["mclust"].vote
    else:
        flag = INCONCLUSIVE
    peak_k = 0
    if flag == CLUSTERED:
        agreeing = [m for m in dict.fromkeys(voters + ["mclust"])
                    if m in known and shapes[m].vote == CLUSTERED]
        best = max(agreeing, key=lambda m: (np.nanmax(t.curve(m)), -agreeing.index(m)))
        peak_k = shapes[best].peak_k
    return Diagnosis(flag, shapes, peak_k)


# --------------------------------------------------------------------------
# decision rule
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SelectionReport:
    chosen_k: int | None
    chosen_method: str | None
    structure_flag: str
    winning_gamma: float
    candidate_k: dict
    candidate_gamma: dict
    curves: dict
    curve_sd: dict
    n_defined: dict
    pvalues: dict
    shapes: dict
    ks: tuple
    alpha: float
    diagnosis: Diagnosis = None
    warnings: tuple = ()
    config: SelectionConfig = None
    best_method: str | None = None

    def to_text(self):
        return format_report(self)


def _candidate(pv, ks, alpha):
    """Smallest k with a significant rise into it and none out of it."""
    sig = [p < alpha if not math.isnan(p) else False for p in pv]
    for i, k in enumerate(ks):
        up = i == 0 or sig[i - 1]
        down = i < len(sig) and sig[i]
        if up and not down:
            return k, (i == len(ks) - 1 and i > 0)
    return None, False


def select_k(t, cfg):
    """Apply the decision rule to a complete gamma table."""
    ks = t.ks
    curves, sds, ndef, pvalues, cand_k, cand_g = {}, {}, {}, {}, {}, {}
    warnings = []
    any_sig = False
    for method in t.methods:
        code = METHODS.index(method)
        curves[method] = t.curve(method)
        sds[method] = t.curve_sd(method)
        ndef[method] = t.n_defined(method)
        pv = np.array([
            paired_signflip_test(t.series(method, k + 1) - t.series(method, k),
                                 cfg.n_resamples, cfg.exact_max,
                                 derive_seed(cfg.master_seed, _PERM, code, k))
            for k in ks[:-1]])
        pvalues[method] = pv
        any_sig |= bool(np.any(pv < cfg.alpha))
        if np.all(np.isnan(curves[method])):
            cand_k[method], cand_g[method] = None, math.nan
            continue
        k, boundary = _candidate(pv, ks, cfg.alpha)
        g = curves[method][ks.index(k)] if k is not None else math.nan
        if math.isnan(g):
            k = None
        cand_k[method], cand_g[method] = k, g
        if boundary and k is not None:
            warnings.append(f"{method}: gamma still rising significantly at k_max={cfg.k_max}")

    best = None
    for method in t.methods:
        g = cand_g[method]
        if cand_k[method] is not None and (best is None or g > cand_g[best]):
            best = method

    diag = diagnose_structure(t, cfg.diag_low_start, cfg.diag_drop_tol, cfg.diag_peak_tol)
    if best is None:
        flag = INCONCLUSIVE
        warnings.append("no method produced a defined gamma curve")
    elif diag.flag == NO_STRUCTURE:
        flag = NO_STRUCTURE
    elif any_sig or diag.flag == CLUSTERED:
        flag = CLUSTERED
    else:
        flag = diag.flag
    if flag == CLUSTERED:
        chosen_k, chosen_method, win = cand_k[best], best, cand_g[best]
    else:
        chosen_k = chosen_method = None
        win = cand_g[best] if best is not None else math.nan
        if best is not None and not any_sig:
            warnings.append("no significant increase in gamma for any method")

    return SelectionReport(
        chosen_k=chosen_k, chosen_method=chosen_method, structure_flag=flag,
        winning_gamma=float(win), candidate_k=cand_k, candidate_gamma=cand_g,
        curves=curves, curve_sd=sds, n_defined=ndef, pvalues=pvalues,
        shapes=diag.shapes, ks=ks, alpha=cfg.alpha, diagnosis=diag, warnings=tuple(warnings),
        config=cfg, best_method=best)


def select(m, cfg):
    """Run the grid and the decision rule; returns ``(report, table)``."""
    t = run_grid(m, cfg)
    return select_k(t, cfg), t


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------

def _f(v, digits=6):
    if v is None:
        return "NA"
    v = float(v)
    return "NA" if math.isnan(v) else f"{v:.{digits}f}"


def format_report(r):
    """Key-value header followed by tab-separated curve and p-value tables."""
    out = io.StringIO()
    w = out.write
    w("# cluster-count selection report\n")
    w(f"chosen_k\t{r.chosen_k if r.chosen_k is not None else 'NONE'}\n")
    w(f"chosen_method\t{r.chosen_method or 'NONE'}\n")
    w(f"structure_flag\t{r.structure_flag}\n")
    w(f"winning_gamma\t{_f(r.winning_gamma)}\n")
    w(f"best_method\t{r.best_method or 'NONE'}\n")
    if r.diagnosis is not None:
        w(f"diagnosis_peak_k\t{r.diagnosis.peak_k or 'NA'}\n")
    w(f"alpha\t{r.alpha}\n")
    if r.config is not None:
        for f in dataclasses.fields(r.config):
            if f.name == "workers":
                continue
            v = getattr(r.config, f.name)
            v = ",".join(v) if isinstance(v, tuple) else v
            w(f"config.{f.name}\t{v}\n")
    for msg in r.warnings:
        w(f"warning\t{msg}\n")
    w("\n[candidates]\nmethod\tcandidate_k\tmean_gamma\tshape\tpeak_k\n")
    for m in r.curves:
        k = r.candidate_k[m]
        s = r.shapes.get(m)
        w(f"{m}\t{k if k is not None else 'NA'}\t{_f(r.candidate_gamma[m])}\t"
          f"{s.shape if s else 'NA'}\t{s.peak_k if s else 'NA'}\n")
    w("\n[curves]\nmethod\tk\tmean_gamma\tsd_gamma\tn_defined\n")
    for m in r.curves:
        for i, k in enumerate(r.ks):
            w(f"{m}\t{k}\t{_f(r.curves[m][i])}\t{_f(r.curve_sd[m][i])}\t{int(r.n_defined[m][i])}\n")
    w("\n[pvalues]\nmethod\tk_from\tk_to\tp_value\tsignificant\n")
    for m in r.pvalues:
        for i, p in enumerate(r.pvalues[m]):
            sig = "yes" if (not math.isnan(p) and p < r.alpha) else "no"
            w(f"{m}\t{r.ks[i]}\t{r.ks[i] + 1}\t{_f(p)}\t{sig}\n")
    return out.getvalue()

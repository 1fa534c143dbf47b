"""Validation on simulated data, bootstrap-count sensitivity, and report
files (tables plus SVG plots)."""
import csv
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import derive_seed
from .engines import METHODS
from .popsim import PRESET_TARGETS, SimConfig, dataset_true_gamma, preset_separation, simulate_markers
from .selector import (NO_STRUCTURE, GammaTable, SelectionConfig, SelectionReport, format_report,
                       run_grid, select_k)

logger = logging.getLogger(__name__)

PRESETS = tuple(PRESET_TARGETS)
SUMMARY_COLUMNS = ("k_true", "preset", "separation", "reps", "n_failed", "mean_est_k",
                   "mean_true_gamma", "mean_est_gamma", "prop_correct", "no_structure_rate",
                   "share_kmeans", "share_hclust", "share_mclust")


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass
class CellOutcome:
    k_true: int
    preset: str
    separation: float
    chosen: list = field(default_factory=list)
    best_method: list = field(default_factory=list)
    est_gamma: list = field(default_factory=list)
    true_gamma: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    n_failed: int = 0

    @property
    def reps(self):
        return len(self.chosen)

    def prop_correct(self):
        if self.k_true < 2 or not self.chosen:
            return math.nan
        return sum(k == self.k_true for k in self.chosen) / len(self.chosen)

    def no_structure_rate(self):
        return sum(f == NO_STRUCTURE for f in self.flags) / len(self.flags) if self.flags else math.nan

    def mean_est_k(self):
        ks = [k for k in self.chosen if k is not None]
        return float(np.mean(ks)) if ks else math.nan

    def method_shares(self):
        won = [m for m in self.best_method if m is not None]
        counts = Counter(won)
        return {m: (counts[m] / len(won) if won else math.nan) for m in METHODS}

    def row(self):
        shares = self.method_shares()
        return {
            "k_true": self.k_true, "preset": self.preset, "separation": self.separation,
            "reps": self.reps, "n_failed": self.n_failed, "mean_est_k": self.mean_est_k(),
            "mean_true_gamma": _nanmean(self.true_gamma), "mean_est_gamma": _nanmean(self.est_gamma),
            "prop_correct": self.prop_correct(), "no_structure_rate": self.no_structure_rate(),
            **{f"share_{m}": shares[m] for m in METHODS},
        }


def _nanmean(values):
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else math.nan


@dataclass
class ValidationSummary:
    cells: list
    config: SelectionConfig
    sim: SimConfig

    def rows(self):
        return [c.row() for c in self.cells]

    def cell(self, k_true, preset):
        for c in self.cells:
            if c.k_true == k_true and c.preset == preset:
                return c
        raise KeyError((k_true, preset))

    def to_table(self):
        lines = ["\t".join(SUMMARY_COLUMNS)]
        for r in self.rows():
            lines.append("\t".join(_cell_text(r[c]) for c in SUMMARY_COLUMNS))
        return "\n".join(lines) + "\n"


def _cell_text(v, digits=4):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else f"{v:.{digits}g}" if abs(v) < 1e-3 and v else f"{v:.{digits}f}"
    return str(v)


def _one_replicate(k_true, preset, separation, rep, sim, cfg, seed):
    sim_seed = derive_seed(seed, 101, k_true, PRESETS.index(preset), rep)
    ds = simulate_markers(sim.replace(n_clusters=k_true, separation=separation, seed=sim_seed))
    tg = dataset_true_gamma(ds) if k_true > 1 else math.nan
    run_cfg = cfg.replace(master_seed=derive_seed(seed, 102, k_true, PRESETS.index(preset), rep),
                          workers=1)
    report = select_k(run_grid(ds.markers, run_cfg), run_cfg)
    return report.chosen_k, report.best_method, report.winning_gamma, tg, report.structure_flag


def _safe_replicate(args):
    try:
        return _one_replicate(*args)
    except Exception as exc:  # tallied, never fatal
        logger.warning("replicate %s failed: %s", args[:4], exc)
        return None


def run_validation(reps=20, k_set=(1, 2, 3, 6), presets=PRESETS, cfg=None, sim=None,
                   seed=0, n_jobs=1):
    """Simulate, select and tally for every ``(k_true, preset)`` cell.

    Parameters
    ----------
    reps : int
        Simulated datasets per cell.
    k_set : sequence of int
        True cluster counts.
    presets : sequence of str
        Separation presets (``LOW``, ``MED``, ``HIGH``).
    cfg : SelectionConfig
        Selection settings; ``master_seed`` and ``workers`` are overridden
        per replicate.
    n_jobs : int
        Worker processes. Results do not depend on it.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    cfg = cfg or SelectionConfig(k_max=8, n_boot=50)
    sim = sim or SimConfig()
    if cfg.k_max <= max(k_set):
        logger.warning("k_max=%d leaves no upper comparison for k_true=%d", cfg.k_max, max(k_set))
    cells, tasks = [], []
    for k_true in k_set:
        for preset in presets:
            F = preset_separation(preset)
            cells.append(CellOutcome(k_true, preset, F))
            tasks.extend((k_true, preset, F, r, sim, cfg, seed) for r in range(reps))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_safe_replicate, tasks, chunksize=1))
    else:
        results = [_safe_replicate(t) for t in tasks]
    for i, res in enumerate(results):
        cell = cells[i // reps]
        if res is None:
            cell.n_failed += 1
            continue
        chosen, best, est, tg, flag = res
        cell.chosen.append(chosen)
        cell.best_method.append(best)
        cell.est_gamma.append(est)
        cell.true_gamma.append(tg)
        cell.flags.append(flag)
    return ValidationSummary(cells, cfg, sim)


# --------------------------------------------------------------------------
# bootstrap-count sensitivity
# --------------------------------------------------------------------------

@dataclass
class SensitivityResult:
    rows: list
    stabilization_b: int

    def to_table(self):
        lines = ["b\tchosen_k\tmethod\tgamma\tstructure_flag"]
        for r in self.rows:
            lines.append(f"{r['b']}\t{r['chosen_k'] if r['chosen_k'] is not None else 'NONE'}\t"
                         f"{r['method'] or 'NONE'}\t{_cell_text(r['gamma'], 6)}\t{r['flag']}")
        lines.append(f"# stabilization_b\t{self.stabilization_b}")
        return "\n".join(lines) + "\n"


def prefix_table(t, b):
    """The first ``b`` replicates of a gamma table."""
    return GammaTable(t.gammas[:, :, :b].copy(), t.methods, t.ks,
                      tuple(c for c in t.causes if c[2] <= b))


def bootstrap_sensitivity(m, b_levels=(50, 100, 200), cfg=None, table=None):
    """Selection outcome at several bootstrap counts.

    Replicate streams are keyed by replicate id, so the run at ``b`` uses
    exactly the first ``b`` replicates of the largest run; the grid is
    computed once at ``max(b_levels)`` and sliced. ``stabilization_b`` is
    the smallest level from which every larger level returns the same k as
    the largest.
    """
    levels = sorted(set(int(b) for b in b_levels))
    if not levels or levels[0] < 2:
        raise ValueError("bootstrap levels must be at least 2")
    cfg = cfg or SelectionConfig()
    full = table if table is not None else run_grid(m, cfg.replace(n_boot=levels[-1]))
    rows = []
    for b in levels:
        rep = select_k(prefix_table(full, b), cfg.replace(n_boot=b))
        rows.append({"b": b, "chosen_k": rep.chosen_k, "method": rep.chosen_method,
                     "gamma": rep.winning_gamma, "flag": rep.structure_flag})
    final = rows[-1]["chosen_k"]
    stab = levels[-1]
    for r in reversed(rows):
        if r["chosen_k"] != final:
            break
        stab = r["b"]
    return SensitivityResult(rows, stab)


# --------------------------------------------------------------------------
# separation bands and overlays
# --------------------------------------------------------------------------

def true_gamma_reference(k_set=(2, 3, 6), presets=PRESETS, reps=20, sim=None, seed=0):
    """Simulated true gammas per ``(preset, k)``."""
    sim = sim or SimConfig()
    ref = {}
    for preset in presets:
        F = preset_separation(preset)
        for k in k_set:
            ref[(preset, k)] = np.array([
                dataset_true_gamma(simulate_markers(sim.replace(
                    n_clusters=k, separation=F, seed=derive_seed(seed, 103, k, r))))
                for r in range(reps)])
    return ref


def separation_band(gamma, k, reference):
    """Preset whose band contains ``gamma`` at ``k``.

    Bands are split at midpoints between adjacent preset means of the
    reference true gammas, the outermost bands extending to -1 and 1.
    """
    means = {p: float(np.mean(v)) for (p, kk), v in reference.items() if kk == k}
    if not means:
        pooled = {}
        for (p, _), v in reference.items():
            pooled.setdefault(p, []).extend(np.asarray(v).tolist())
        means = {p: float(np.mean(v)) for p, v in pooled.items()}
    return min(means, key=lambda p: (abs(means[p] - gamma), p))


# --------------------------------------------------------------------------
# file emission
# --------------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "kselect"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


_COLORS = {"kmeans": "tab:blue", "hclust": "tab:orange", "mclust": "tab:green",
           "LOW": "tab:blue", "MED": "tab:orange", "HIGH": "tab:red"}


def _draw_curve(ax, r, method):
    ks = np.asarray(r.ks)
    y = np.asarray(r.curves[method])
    pv = np.asarray(r.pvalues[method])
    color = _COLORS[method]
    ax.plot(ks, y, "o", color=color, ms=4, label=method)
    for i in range(len(ks) - 1):
        sig = not math.isnan(pv[i]) and pv[i] < r.alpha
        ax.plot(ks[i:i + 2], y[i:i + 2], "-", color=color, lw=3.0 if sig else 1.0)
    ax.set_xlabel("number of clusters")
    ax.set_ylabel("Hubert's gamma")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_selection(report, out_dir, plots=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "report.txt", out / "curves.tsv", out / "pvalues.tsv"]
    files[0].write_text(format_report(report))
    _write_rows(files[1], ["method", "k", "mean_gamma", "sd_gamma", "n_defined"],
                [[m, k, _cell_text(float(report.curves[m][i]), 6),
                  _cell_text(float(report.curve_sd[m][i]), 6), int(report.n_defined[m][i])]
                 for m in report.curves for i, k in enumerate(report.ks)])
    _write_rows(files[2], ["method", "k_from", "k_to", "p_value", "significant"],
                [[m, report.ks[i], report.ks[i] + 1, _cell_text(float(p), 6),
                  "yes" if p < report.alpha else "no"]
                 for m in report.pvalues for i, p in enumerate(report.pvalues[m])])
    if plots:
        plt = _plt()
        for m in report.curves:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            _draw_curve(ax, report, m)
            ax.set_title(m)
            path = out / f"gamma_{m}.svg"
            _save(fig, path)
            plt.close(fig)
            files.append(path)
        fig, ax = plt.subplots(figsize=(6, 4))
        for m in report.curves:
            _draw_curve(ax, report, m)
        ax.legend(frameon=False)
        path = out / "gamma_all.svg"
        _save(fig, path)
        plt.close(fig)
        files.append(path)
    return files


def emit_validation(summary, out_dir, plots=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "summary.tsv", out / "outcomes.tsv"]
    files[0].write_text(summary.to_table())
    _write_rows(files[1], ["k_true", "preset", "rep", "chosen_k", "best_method", "est_gamma",
                           "true_gamma", "structure_flag"],
                [[c.k_true, c.preset, i + 1, k if k is not None else "NONE", bm or "NONE",
                  _cell_text(float(eg), 6), _cell_text(float(tg), 6), fl]
                 for c in summary.cells
                 for i, (k, bm, eg, tg, fl) in enumerate(zip(c.chosen, c.best_method, c.est_gamma,
                                                             c.true_gamma, c.flags))])
    if plots:
        plt = _plt()
        k_vals = sorted({c.k_true for c in summary.cells})
        presets = list(dict.fromkeys(c.preset for c in summary.cells))
        fig, axes = plt.subplots(len(k_vals), len(presets), squeeze=False, sharex=True,
                                 figsize=(3 * len(presets), 1.8 * len(k_vals)))
        top = summary.config.k_max
        for c in summary.cells:
            ax = axes[k_vals.index(c.k_true)][presets.index(c.preset)]
            counts = Counter(k if k is not None else 1 for k in c.chosen)
            xs = list(range(1, top + 1))
            ax.bar(xs, [counts.get(x, 0) for x in xs], color=_COLORS.get(c.preset, "grey"))
            ax.set_title(f"k={c.k_true}, {c.preset}", fontsize=8)
        for ax in axes[-1]:
            ax.set_xlabel("chosen k (1 = no structure)")
        fig.tight_layout()
        path = out / "outcomes.svg"
        _save(fig, path)
        plt.close(fig)
        files.append(path)
    return files


def emit_sensitivity(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sensitivity.tsv"
    path.write_text(result.to_table())
    return [path]


def emit_overlay(reference, points, out_dir):
    """Simulated true-gamma distributions per preset and k, with observed
    ``(label, k, gamma)`` points drawn on top."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / "overlay.tsv"
    rows = [["reference", p, k, _cell_text(float(g), 6)]
            for (p, k), v in sorted(reference.items()) for g in v]
    rows += [["observed", label, k, _cell_text(float(g), 6)] for label, k, g in points]
    _write_rows(tsv, ["kind", "name", "k", "gamma"], rows)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    presets = list(dict.fromkeys(p for p, _ in reference))
    for j, p in enumerate(presets):
        for (pp, k), v in sorted(reference.items()):
            if pp != p:
                continue
            x = np.full(len(v), k + (j - 1) * 0.15)
            ax.plot(x, v, "o", ms=2.5, alpha=0.5, color=_COLORS.get(p, "grey"),
                    label=p if k == min(kk for q, kk in reference if q == p) else None)
    for label, k, g in points:
        ax.plot([k], [g], "k*", ms=10)
        ax.annotate(label, (k, g), textcoords="offset points", xytext=(5, 5), fontsize=8)
    ax.set_xlabel("number of clusters")
    ax.set_ylabel("true Hubert's gamma")
    ax.legend(frameon=False, title="migration")
    svg = out / "overlay.svg"
    _save(fig, svg)
    plt.close(fig)
    return [tsv, svg]


def emit_report(obj, out_dir, plots=True):
    """Write the files for a selection report, validation summary or
    sensitivity result and return their paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out_dir}: {exc}") from exc
    if isinstance(obj, SelectionReport):
        return emit_selection(obj, out_dir, plots)
    if isinstance(obj, ValidationSummary):
        return emit_validation(obj, out_dir, plots)
    if isinstance(obj, SensitivityResult):
        return emit_sensitivity(obj, out_dir)
    raise TypeError(f"cannot emit {type(obj).__name__}")

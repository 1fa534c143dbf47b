"""Command-line interface.

Every flag may also be given in a key-value config file (``--config``),
one ``key = value`` per line; keys are the long flag names with or without
leading dashes. Flags on the command line win over the config file.

Errors are reported on stderr as a one-line JSON object with an ``error``
category, and the exit code identifies the category.
"""
import argparse
import json
import logging
import sys

from . import __version__
from .engines import METHODS, cut_tree, gmm_em, hclust, kmeans, write_assignment
from .harness import (PRESETS, bootstrap_sensitivity, emit_report, emit_selection,
                      emit_sensitivity, run_validation)
from .mdata import (DEFAULT_MISSING, MarkerParseError, MarkerValidationError, impute_mean,
                    load_markers, manhattan_distances, write_distances, write_markers)
from .popsim import CalibrationError, SimConfig, preset_separation, simulate_markers, write_dataset
from .reduce import pca_scores
from .selector import SelectionConfig, diagnose_structure, run_grid, select_k

EXIT_CODES = {"internal": 1, "usage": 2, "parse": 3, "validation": 4, "io": 5}

logger = logging.getLogger("kselect")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _str_list(text):
    return tuple(v for v in str(text).replace(" ", "").split(",") if v)


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_input(p):
    p.add_argument("input", help="delimited marker file")
    p.add_argument("--missing", default=DEFAULT_MISSING, help="missing-value token (default NA)")
    p.add_argument("--delimiter", default=None, help="field delimiter (default: tab for .tsv/.txt, else comma)")


def _add_selection(p):
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--bootstraps", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="threads for the bootstrap grid")
    p.add_argument("--methods", type=_str_list, default=METHODS)
    p.add_argument("--linkage", choices=("complete", "average"), default="complete")
    p.add_argument("--restarts", type=int, default=10, help="k-means restarts")
    p.add_argument("--em-restarts", type=int, default=5)


def _selection_config(a, **extra):
    return SelectionConfig(k_max=a.k_max, n_boot=a.bootstraps, alpha=a.alpha, master_seed=a.seed,
                           methods=a.methods, linkage=a.linkage, kmeans_restarts=a.restarts,
                           em_restarts=a.em_restarts, workers=a.workers, **extra)


def build_parser():
    parser = _Parser(
        prog="kselect",
        description="Choose the number of clusters in binary marker data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key = value file mirroring the flags")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="command")
    subs = {}

    p = subs["impute"] = sub.add_parser("impute", help="replace missing cells by column means")
    _add_input(p)
    p.add_argument("-o", "--output", required=True)

    p = subs["distances"] = sub.add_parser("distances", help="pairwise Manhattan distances (i, j, d)")
    _add_input(p)
    p.add_argument("-o", "--output", required=True)

    p = subs["cluster"] = sub.add_parser("cluster", help="one clustering method at a fixed k")
    _add_input(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--linkage", choices=("complete", "average"), default="complete")
    p.add_argument("-o", "--output", required=True)

    p = subs["select-k"] = sub.add_parser("select-k", help="bootstrap selection of the number of clusters")
    _add_input(p)
    _add_selection(p)
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--plots", type=_bool, default=True)

    p = subs["diagnose"] = sub.add_parser("diagnose", help="curve-shape check for the absence of structure")
    _add_input(p)
    _add_selection(p)
    p.add_argument("-o", "--output-dir", default=None)

    p = subs["simulate"] = sub.add_parser("simulate", help="write a simulated labelled dataset")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--separation", type=float, default=None, help="drift F in (0, 1)")
    p.add_argument("--n-obs", type=int, default=200)
    p.add_argument("--n-markers", type=int, default=400)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = subs["validate"] = sub.add_parser("validate", help="selection accuracy on simulated data")
    _add_selection(p)
    p.set_defaults(k_max=8)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--k-set", type=_int_list, default=(1, 2, 3, 6))
    p.add_argument("--presets", type=_str_list, default=PRESETS)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--plots", type=_bool, default=True)

    p = subs["sensitivity"] = sub.add_parser("sensitivity", help="selection at several bootstrap counts")
    _add_input(p)
    _add_selection(p)
    p.add_argument("--b-levels", type=_int_list, default=(50, 100, 200))
    p.add_argument("-o", "--output-dir", required=True)
    return parser, subs


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(parser, subs, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    command = next((a for a in argv if a in subs), None)
    target = subs.get(command)
    if target is None:
        return
    dests = {a.dest: a for a in target._actions}
    unknown = sorted(set(values) - set(dests))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    for key, value in values.items():
        action = dests[key]
        if not action.option_strings:
            # positional given in the config file: only used when absent on the command line
            action.nargs = "?"
        action.required = False
        target.set_defaults(**{key: value})


def _load(a):
    return load_markers(a.input, delimiter=a.delimiter, missing=a.missing)


def _cmd_impute(a):
    write_markers(impute_mean(_load(a)), a.output, delimiter=a.delimiter, missing=a.missing)


def _cmd_distances(a):
    write_distances(manhattan_distances(impute_mean(_load(a))), a.output)


def _cmd_cluster(a):
    m = impute_mean(_load(a))
    if a.method == "kmeans":
        asg = kmeans(m, a.k, restarts=a.restarts, seed=a.seed)
    elif a.method == "hclust":
        asg = cut_tree(hclust(manhattan_distances(m), a.linkage), a.k)
    else:
        _, asg = gmm_em(pca_scores(m, a.k), a.k, seed=a.seed)
    write_assignment(asg, a.output, row_ids=m.row_ids)


def _cmd_select(a):
    m = impute_mean(_load(a))
    cfg = _selection_config(a)
    report = select_k(run_grid(m, cfg), cfg)
    emit_selection(report, a.output_dir, plots=a.plots)
    k = report.chosen_k if report.chosen_k is not None else "NONE"
    print(f"chosen_k={k} method={report.chosen_method or 'NONE'} "
          f"flag={report.structure_flag} gamma={report.winning_gamma:.4f}")


def _cmd_diagnose(a):
    m = impute_mean(_load(a))
    cfg = _selection_config(a)
    t = run_grid(m, cfg)
    diag = diagnose_structure(t, cfg.diag_low_start, cfg.diag_drop_tol, cfg.diag_peak_tol)
    print(f"structure_flag={diag.flag}")
    for method, s in diag.shapes.items():
        print(f"{method}\t{s.shape}\tpeak_k={s.peak_k}")
    if a.output_dir:
        emit_report(select_k(t, cfg), a.output_dir)


def _cmd_simulate(a):
    if a.separation is None:
        F = preset_separation(a.preset or "LOW")
    elif a.preset is not None:
        raise UsageError("give either --preset or --separation, not both")
    else:
        F = a.separation
    ds = simulate_markers(SimConfig(n_obs=a.n_obs, n_markers=a.n_markers, n_clusters=a.clusters,
                                    separation=F, seed=a.seed, missing_rate=a.missing_rate))
    truth = write_dataset(ds, a.output)
    print(f"wrote {a.output} and {truth} (F={F:.6g})")


def _cmd_validate(a):
    presets = tuple(p.upper() for p in a.presets)
    bad = set(presets) - set(PRESETS)
    if bad:
        raise UsageError(f"unknown presets {sorted(bad)}")
    cfg = _selection_config(a)
    summary = run_validation(reps=a.reps, k_set=a.k_set, presets=presets, cfg=cfg,
                             seed=a.seed, n_jobs=a.jobs)
    emit_report(summary, a.output_dir, plots=a.plots)
    sys.stdout.write(summary.to_table())


def _cmd_sensitivity(a):
    m = impute_mean(_load(a))
    result = bootstrap_sensitivity(m, a.b_levels, _selection_config(a))
    emit_sensitivity(result, a.output_dir)
    sys.stdout.write(result.to_table())


COMMANDS = {
    "impute": _cmd_impute, "distances": _cmd_distances, "cluster": _cmd_cluster,
    "select-k": _cmd_select, "diagnose": _cmd_diagnose, "simulate": _cmd_simulate,
    "validate": _cmd_validate, "sensitivity": _cmd_sensitivity,
}


def _fail(category, exc):
    sys.stderr.write(json.dumps({"error": category, "message": str(exc)}) + "\n")
    return EXIT_CODES[category]


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        _apply_config(parser, subs, argv)
    except UsageError as exc:
        return _fail("usage", exc)
    except OSError as exc:
        return _fail("io", exc)
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not a.command:
        parser.print_help(sys.stderr)
        return EXIT_CODES["usage"]
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[a.command](a)
    except UsageError as exc:
        return _fail("usage", exc)
    except MarkerParseError as exc:
        return _fail("parse", exc)
    except (MarkerValidationError, CalibrationError, ValueError) as exc:
        return _fail("validation", exc)
    except OSError as exc:
        return _fail("io", exc)
    return 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()

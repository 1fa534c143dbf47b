import json
import subprocess
import sys

import numpy as np
import pytest

from kselect.cli import EXIT_CODES, main, read_config
from kselect.mdata import load_markers
from kselect.popsim import SimConfig, simulate_markers, write_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ds = simulate_markers(SimConfig(n_obs=60, n_markers=150, n_clusters=3, separation=0.2,
                                    seed=2, missing_rate=0.02))
    path = d / "sim.tsv"
    write_dataset(ds, str(path))
    return path


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_impute_and_distances(dataset, tmp_path):
    assert main(["impute", str(dataset), "-o", str(tmp_path / "imp.tsv")]) == 0
    imp = load_markers(tmp_path / "imp.tsv", imputed=True)
    assert imp.imputed
    assert not np.isnan(imp.cells).any()
    assert main(["distances", str(dataset), "-o", str(tmp_path / "d.tsv")]) == 0
    lines = (tmp_path / "d.tsv").read_text().splitlines()
    assert lines[0] == "i\tj\td" and len(lines) == 1 + 60 * 59 // 2


@pytest.mark.parametrize("method", ["kmeans", "hclust", "mclust"])
def test_cluster(dataset, tmp_path, method):
    out = tmp_path / f"{method}.tsv"
    assert main(["cluster", str(dataset), "--method", method, "-k", "3", "-o", str(out)]) == 0
    labels = [int(line.split("\t")[1]) for line in out.read_text().splitlines()[1:]]
    assert sorted(set(labels)) == [1, 2, 3] and len(labels) == 60


def test_select_k_and_config_file(dataset, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# selection settings\nk-max = 5\nbootstraps = 12\nseed = 7\nalpha = 0.01\n"
                   f"output_dir = {tmp_path / 'a'}\nplots = no\n")
    assert main(["--config", str(cfg), "select-k", str(dataset)]) == 0
    assert "chosen_k=3" in capsys.readouterr().out
    report = (tmp_path / "a" / "report.txt").read_text()
    assert "config.k_max\t5" in report and "config.n_boot\t12" in report
    assert "config.master_seed\t7" in report
    # command-line flags override the file
    assert main(["--config", str(cfg), "select-k", str(dataset), "--k-max", "4",
                 "-o", str(tmp_path / "b")]) == 0
    assert "config.k_max\t4" in (tmp_path / "b" / "report.txt").read_text()


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("--k-max = 6\n\n  seed=3  # trailing\n")
    assert read_config(p) == {"k_max": "6", "seed": "3"}


def test_diagnose_and_sensitivity(dataset, tmp_path, capsys):
    assert main(["diagnose", str(dataset), "--k-max", "5", "--bootstraps", "8"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("structure_flag=")
    assert main(["sensitivity", str(dataset), "--k-max", "4", "--b-levels", "4,8",
                 "-o", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "sensitivity.tsv").exists()


def test_simulate_and_validate(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["simulate", "-o", str(out), "--clusters", "2", "--preset", "HIGH",
                 "--n-obs", "20", "--n-markers", "30"]) == 0
    assert load_markers(out).shape == (20, 30)
    assert (tmp_path / "s.csv.truth.tsv").exists()
    assert main(["simulate", "-o", str(out), "--separation", "0.1", "--preset", "LOW"]) == EXIT_CODES["usage"]
    assert main(["validate", "--reps", "1", "--k-set", "2", "--presets", "LOW", "--k-max", "3",
                 "--bootstraps", "3", "-o", str(tmp_path / "v"), "--plots", "false"]) == 0
    assert (tmp_path / "v" / "summary.tsv").exists()


def test_error_categories(tmp_path, capsys):
    assert main(["select-k", str(tmp_path / "missing.tsv"), "-o", str(tmp_path)]) == EXIT_CODES["io"]
    assert _err(capsys)["error"] == "io"

    bad = tmp_path / "bad.csv"
    bad.write_text("id,a\nx,2\ny,0\n")
    assert main(["impute", str(bad), "-o", str(tmp_path / "o")]) == EXIT_CODES["parse"]
    assert _err(capsys)["error"] == "parse"

    empty = tmp_path / "empty.csv"
    empty.write_text("id,a,b\nx,NA,1\ny,NA,0\n")
    assert main(["impute", str(empty), "-o", str(tmp_path / "o")]) == EXIT_CODES["validation"]
    assert _err(capsys)["error"] == "validation"

    assert main(["cluster"]) == EXIT_CODES["usage"]
    assert _err(capsys)["error"] == "usage"
    assert main([]) == EXIT_CODES["usage"]

    cfg = tmp_path / "bad.cfg"
    cfg.write_text("not-a-key = 1\n")
    assert main(["--config", str(cfg), "impute", str(bad), "-o", "x"]) == EXIT_CODES["usage"]
    assert _err(capsys)["error"] == "usage"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "kselect", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("impute", "distances", "cluster", "select-k", "simulate", "validate",
                "sensitivity", "diagnose"):
        assert cmd in r.stdout

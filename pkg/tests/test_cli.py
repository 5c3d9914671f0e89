import csv
import json
from pathlib import Path

import numpy as np
import pytest

from dspace.cli import main
from dspace.data import read_dataset_csv


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def flow_csv(tmp_path_factory):
    """A small CICIDS-shaped CSV: identifiers, rate columns with Infinity, labels."""
    path = tmp_path_factory.mktemp("data") / "flows.csv"
    rng = np.random.default_rng(0)
    n = 400
    columns = ["Flow ID", "Src IP", "Dst IP", "Src Port", "Dst Port", "Protocol",
               "Timestamp"] + [f"feat{i}" for i in range(10)] + ["Flow Bytes/s", "Label"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for i in range(n):
            label = "DDoS" if i % 2 else "BENIGN"
            signal = (3.0 if i % 2 else 0.0) + rng.normal()
            feats = [repr(float(signal))] + [repr(float(v)) for v in rng.normal(size=9)]
            rate = "Infinity" if i % 97 == 0 else repr(float(abs(rng.normal())))
            writer.writerow(
                [f"flow-{i}", "10.0.0.1", "10.0.0.2", "443", "5555", "6",
                 "21/04/2017 03:30:42"] + feats + [rate, label]
            )
    return path


@pytest.fixture(scope="module")
def prep_dir(flow_csv, tmp_path_factory):
    outdir = tmp_path_factory.mktemp("prep")
    code = run_cli("prep", "--input", flow_csv, "--outdir", outdir,
                   "--top-k", "6", "--trees", "20", "--max-depth", "5", "--seed", "1")
    assert code == 0
    return outdir


def test_synth_writes_loadable_csv(tmp_path):
    out = tmp_path / "blobs.csv"
    assert run_cli("synth", "--out", out, "--dim", "4", "--n-per-class", "30",
                   "--separation", "2", "--seed", "5") == 0
    ds = read_dataset_csv(out)
    assert ds.n_rows == 60
    assert ds.n_features == 4
    assert (out.parent / "manifest.json").exists()


def test_prep_artifacts(prep_dir):
    for name in ("train.csv", "val.csv", "test.csv", "scaler.json",
                 "importance.json", "selection.json", "manifest.json"):
        assert (prep_dir / name).exists(), name
    train = read_dataset_csv(prep_dir / "train.csv")
    assert train.n_features == 6  # --top-k passthrough
    # identifiers are gone
    assert not any("Port" in c or "IP" in c for c in train.feature_names)
    manifest = json.loads((prep_dir / "manifest.json").read_text())
    assert manifest["command"] == "prep"
    assert manifest["config"]["top_k"] == 6


def test_prep_missing_input_names_path(tmp_path, capsys):
    code = run_cli("prep", "--input", tmp_path / "absent.csv", "--outdir", tmp_path)
    assert code != 0
    assert "absent.csv" in capsys.readouterr().err


def test_train_dspace_artifacts_and_determinism(prep_dir, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    flags = ["--data-dir", prep_dir, "--regime", "dspace", "--model", "mlp-attn",
             "--alpha", "0.5", "--train-n", "100", "--seed", "7",
             "--epochs", "2", "--episodes-per-epoch", "3"]
    assert run_cli("train", *flags, "--outdir", out_a) == 0
    assert run_cli("train", *flags, "--outdir", out_b) == 0
    for name in ("model.json", "prototypes.json", "runresult.json",
                 "loss_curve.csv", "loss_curve.png", "manifest.json"):
        assert (out_a / name).exists(), name
    for name in ("model.json", "prototypes.json", "runresult.json", "loss_curve.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_train_replay_from_manifest_snapshot(prep_dir, tmp_path):
    out_a = tmp_path / "a"
    assert run_cli("train", "--data-dir", prep_dir, "--outdir", out_a,
                   "--regime", "proto", "--seed", "3", "--train-n", "100",
                   "--epochs", "2", "--episodes-per-epoch", "3") == 0
    manifest = json.loads((out_a / "manifest.json").read_text())

    # the manifest's config block replays verbatim
    config_path = tmp_path / "replay.json"
    config_path.write_text(json.dumps(manifest["config"]))
    out_b = tmp_path / "b"
    assert run_cli("train", "--config", config_path, "--outdir", out_b) == 0
    for name in ("model.json", "runresult.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_prep_replay_from_manifest_snapshot(prep_dir, flow_csv, tmp_path):
    manifest = json.loads((prep_dir / "manifest.json").read_text())
    config_path = tmp_path / "replay.json"
    config_path.write_text(json.dumps(manifest["config"]))
    out = tmp_path / "prep2"
    assert run_cli("prep", "--config", config_path, "--outdir", out) == 0
    for name in ("train.csv", "val.csv", "test.csv", "scaler.json", "selection.json"):
        assert (out / name).read_bytes() == (prep_dir / name).read_bytes()


def test_train_validation_errors_listed(prep_dir, capsys):
    code = run_cli("train", "--data-dir", prep_dir, "--alpha", "1.5", "--epochs", "0")
    assert code == 2
    err = capsys.readouterr().err
    assert "alpha" in err
    assert "epochs" in err  # all failures reported, not just the first


def test_eval_prints_metrics(prep_dir, tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert run_cli("train", "--data-dir", prep_dir, "--outdir", run_dir,
                   "--regime", "offline", "--seed", "2", "--epochs", "3") == 0
    assert run_cli("eval", "--run-dir", run_dir, "--test", prep_dir / "test.csv") == 0
    out = capsys.readouterr().out
    assert "accuracy" in out and "precision" in out
    value = float(next(l for l in out.splitlines() if l.startswith("accuracy")).split()[1])
    assert 0.0 <= value <= 100.0


def test_bench_small_grid_reports_and_zero_std(tmp_path, capsys):
    outdir = tmp_path / "bench"
    code = run_cli(
        "bench", "--grid", "small", "--runs", "2", "--outdir", outdir,
        "--force-seed", "11", "--train-n", "60",
        "--blob-dim", "6", "--blob-n", "300", "--blob-separation", "5",
    )
    assert code == 0
    for name in ("report.md", "report.csv", "report.json", "benchmark.png",
                 "manifest.json"):
        assert (outdir / name).exists(), name
    with open(outdir / "report.csv") as handle:
        rows = list(csv.DictReader(handle))
    assert rows, "csv report has no rows"
    assert all(float(row["std"]) == 0.0 for row in rows)
    regimes = {row["regime"] for row in rows}
    assert regimes == {"offline", "online", "proto", "dspace"}


def test_bench_on_prep_artifacts(prep_dir, tmp_path):
    outdir = tmp_path / "bench"
    code = run_cli("bench", "--data-dir", prep_dir, "--grid", "small", "--runs", "2",
                   "--train-n", "40", "--outdir", outdir, "--no-figure")
    assert code == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["inputs"] == {"data_dir": str(prep_dir)}
    report = json.loads((outdir / "report.json").read_text())
    assert set(report["mlp"]) == {"offline", "online", "proto", "dspace"}


def test_bench_rerun_byte_identical(tmp_path):
    args = ["bench", "--grid", "small", "--runs", "2", "--train-n", "60",
            "--blob-dim", "5", "--blob-n", "200", "--blob-separation", "4",
            "--no-figure"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(*args, "--outdir", a) == 0
    assert run_cli(*args, "--outdir", b) == 0
    for name in ("report.md", "report.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_eval_perfect_fit_prints_100(tmp_path, capsys):
    blobs = tmp_path / "blobs.csv"
    assert run_cli("synth", "--out", blobs, "--dim", "4", "--n-per-class", "200",
                   "--separation", "14", "--seed", "2") == 0
    prep_out = tmp_path / "prep"
    assert run_cli("prep", "--input", blobs, "--label-column", "label",
                   "--benign-token", "0", "--outdir", prep_out, "--top-k", "4",
                   "--trees", "10", "--max-depth", "4") == 0
    run_dir = tmp_path / "run"
    assert run_cli("train", "--data-dir", prep_out, "--outdir", run_dir,
                   "--regime", "offline", "--seed", "1") == 0
    capsys.readouterr()
    assert run_cli("eval", "--run-dir", run_dir, "--test", prep_out / "test.csv") == 0
    assert "accuracy 100.00" in capsys.readouterr().out


def test_env_var_default_artifact_root(tmp_path, monkeypatch):
    monkeypatch.setenv("DSPACE_DATA_DIR", str(tmp_path / "root"))
    assert run_cli("synth", "--dim", "3", "--n-per-class", "10") == 0
    assert (tmp_path / "root" / "synth" / "blobs.csv").exists()


def test_gradcheck_cli(capsys):
    assert run_cli("gradcheck") == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert "PASS" in out


def test_unknown_config_key_rejected(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text('{"bogus_key": 1}')
    assert run_cli("synth", "--config", config, "--out", tmp_path / "x.csv") != 0
    assert "bogus_key" in capsys.readouterr().err

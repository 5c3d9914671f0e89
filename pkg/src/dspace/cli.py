"""Command-line interface: prep, train, eval, bench, gradcheck, synth.

Configuration precedence is defaults < --config JSON file < explicit
flags; every command records the fully resolved snapshot in its
manifest, and re-running a command with that snapshot reproduces the
numeric artifacts byte for byte.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import SplitSpec, read_dataset_csv, stratified_split, write_dataset_csv
from .evaluation import METRIC_NAMES, confusion, emit_report, metrics, predict, run_benchmark
from .forest import ForestConfig
from .gradcheck import run_gradient_checks
from .pipeline import (
    StageError,
    artifact_root,
    prep,
    load_run,
    train_run,
    write_manifest,
    _now,
)
from .synth import BlobSpec, gen_gaussian_blobs
from .training import MODELS, REGIMES, TrainConfig

MODEL_FLAGS = {"mlp": "mlp", "mlp-attn": "mlp_attention", "mlp_attention": "mlp_attention"}


def _parse_int_list(text: str):
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_name_list(text: str):
    return [part.strip() for part in text.split(",") if part.strip()]


def _merge_config(args: argparse.Namespace, defaults: dict, aliases: dict | None = None) -> dict:
    """defaults < config file < explicit command-line values.

    aliases map manifest-snapshot field names onto flag names, so the
    "config" block of a recorded manifest can be replayed verbatim.
    """
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = dict(json.loads(Path(config_path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("config", f"cannot read config {config_path}: {exc}")
        for snapshot_key, flag_key in (aliases or {}).items():
            if snapshot_key in doc:
                value = doc.pop(snapshot_key)
                if flag_key is not None:
                    doc[flag_key] = value
        if "dual_space" in doc:  # snapshot carries alpha nested
            doc["alpha"] = doc.pop("dual_space")["alpha"]
        unknown = set(doc) - set(defaults)
        if unknown:
            raise StageError("config", f"unknown config keys: {sorted(unknown)}")
        merged.update(doc)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _fail(errors, stage: str = "config") -> int:
    for message in errors:
        print(f"error[{stage}]: {message}", file=sys.stderr)
    return 2


# ---------------------------------------------------------------- synth

SYNTH_DEFAULTS = {
    "out": None,
    "dim": 28,
    "n_per_class": 1000,
    "separation": 4.0,
    "noise": 0.0,
    "seed": 0,
}


def cmd_synth(args) -> int:
    cfg = _merge_config(args, SYNTH_DEFAULTS)
    errors = []
    if cfg["out"] is None:
        cfg["out"] = str(artifact_root() / "synth" / "blobs.csv")
    if cfg["dim"] < 1:
        errors.append("--dim must be >= 1")
    if cfg["n_per_class"] < 1:
        errors.append("--n-per-class must be >= 1")
    if not (0.0 <= cfg["noise"] < 0.5):
        errors.append("--noise must lie in [0, 0.5)")
    if cfg["separation"] < 0:
        errors.append("--separation must be >= 0")
    if errors:
        return _fail(errors)
    started = _now()
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = gen_gaussian_blobs(
        BlobSpec(
            dim=cfg["dim"],
            n_per_class=cfg["n_per_class"],
            mean_separation=cfg["separation"],
            label_noise=cfg["noise"],
            seed=cfg["seed"],
        )
    )
    write_dataset_csv(ds, out)
    write_manifest(out.parent, "synth", cfg, {}, {"dataset": out}, started)
    print(f"wrote {ds.n_rows} rows x {ds.n_features} features to {out}")
    return 0


# ----------------------------------------------------------------- prep

PREP_DEFAULTS = {
    "input": None,
    "outdir": None,
    "label_column": "Label",
    "benign_token": "BENIGN",
    "top_k": 28,
    "train_frac": 0.70,
    "val_frac": 0.15,
    "test_frac": 0.15,
    "seed": 0,
    "trees": 100,
    "max_depth": 12,
    "features_per_split": None,
    "min_samples_leaf": 5,
    "exclude": [],
    "drop": [],
}


PREP_SNAPSHOT_ALIASES = {
    "n_trees": "trees",
    "train_fraction": "train_frac",
    "val_fraction": "val_frac",
    "test_fraction": "test_frac",
    "extra_exclude": "exclude",
    "extra_drop": "drop",
    "forest_seed": None,
    "top_k_effective": None,
}


def cmd_prep(args) -> int:
    cfg = _merge_config(args, PREP_DEFAULTS, aliases=PREP_SNAPSHOT_ALIASES)
    errors = []
    if not cfg["input"]:
        errors.append("--input is required")
    elif not Path(cfg["input"]).exists():
        errors.append(f"input path does not exist: {cfg['input']}")
    if cfg["top_k"] < 1:
        errors.append("--top-k must be >= 1")
    if errors:
        return _fail(errors)
    outdir = Path(cfg["outdir"] or artifact_root() / "prep")
    paths = prep(
        cfg["input"],
        outdir,
        label_column=cfg["label_column"],
        benign_token=cfg["benign_token"],
        top_k=cfg["top_k"],
        split=SplitSpec(cfg["train_frac"], cfg["val_frac"], cfg["test_frac"], cfg["seed"]),
        forest_cfg=ForestConfig(
            n_trees=cfg["trees"],
            max_depth=cfg["max_depth"],
            features_per_split=cfg["features_per_split"],
            min_samples_leaf=cfg["min_samples_leaf"],
            seed=cfg["seed"],
        ),
        extra_exclude=cfg["exclude"],
        extra_drop=cfg["drop"],
    )
    train = read_dataset_csv(paths["train"])
    print(f"prep complete: {train.n_features} features kept, artifacts in {outdir}")
    return 0


# ---------------------------------------------------------------- train

TRAIN_DEFAULTS = {
    "data_dir": None,
    "outdir": None,
    "regime": "dspace",
    "model": "mlp",
    "alpha": 0.5,
    "train_n": None,
    "seed": 0,
    "epochs": 10,
    "batch_size": 32,
    "episodes_per_epoch": 20,
    "k_support": 5,
    "k_query": 15,
    "max_online_updates": 50,
    "lr": 1e-3,
    "weight_decay": 0.01,
    "hidden": "64,32",
    "dropout": 0.2,
    "figure": True,
}


def _train_config_from(cfg: dict):
    """(TrainConfig | None, error list)."""
    errors = []
    if cfg["model"] not in MODEL_FLAGS:
        errors.append(f"--model must be one of {sorted(set(MODEL_FLAGS))}")
    if cfg["regime"] not in REGIMES:
        errors.append(f"--regime must be one of {REGIMES}")
    if not (0.0 <= cfg["alpha"] <= 1.0):
        errors.append(f"--alpha must lie in [0,1], got {cfg['alpha']}")
    if cfg["train_n"] is not None and (cfg["train_n"] < 2 or cfg["train_n"] % 2):
        errors.append("--train-n must be an even count >= 2")
    if not (0.0 <= cfg["dropout"] < 1.0):
        errors.append("--dropout must lie in [0,1)")
    try:
        hidden = _parse_int_list(cfg["hidden"]) if isinstance(cfg["hidden"], str) else tuple(cfg["hidden"])
        if not hidden or any(h < 1 for h in hidden):
            errors.append("--hidden needs positive comma-separated widths")
    except ValueError:
        errors.append(f"--hidden is not a comma-separated int list: {cfg['hidden']!r}")
        hidden = (64, 32)
    for name in ("epochs", "batch_size", "episodes_per_epoch", "k_support",
                 "k_query", "max_online_updates"):
        if cfg[name] < 1:
            errors.append(f"--{name.replace('_', '-')} must be >= 1")
    if errors:
        return None, errors
    return (
        TrainConfig(
            regime=cfg["regime"],
            model=MODEL_FLAGS[cfg["model"]],
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            max_online_updates=cfg["max_online_updates"],
            episodes_per_epoch=cfg["episodes_per_epoch"],
            k_support=cfg["k_support"],
            k_query=cfg["k_query"],
            dual_space={"alpha": cfg["alpha"]},
            lr=cfg["lr"],
            weight_decay=cfg["weight_decay"],
            hidden_dims=hidden,
            dropout_p=cfg["dropout"],
            train_n=cfg["train_n"],
            seed=cfg["seed"],
        ),
        [],
    )


TRAIN_SNAPSHOT_ALIASES = {"dropout_p": "dropout", "hidden_dims": "hidden"}


def cmd_train(args) -> int:
    cfg = _merge_config(args, TRAIN_DEFAULTS, aliases=TRAIN_SNAPSHOT_ALIASES)
    train_cfg, errors = _train_config_from(cfg)
    if not cfg["data_dir"]:
        errors.append("--data-dir is required (prep artifacts)")
    elif not (Path(cfg["data_dir"]) / "train.csv").exists():
        errors.append(f"no train.csv under {cfg['data_dir']}")
    if errors:
        return _fail(errors)
    outdir = Path(cfg["outdir"] or artifact_root() / "train")
    paths = train_run(cfg["data_dir"], outdir, train_cfg, make_figure=cfg["figure"])
    print(f"trained {train_cfg.model}/{train_cfg.regime} seed {train_cfg.seed}; "
          f"artifacts in {outdir}")
    return 0


# ----------------------------------------------------------------- eval

EVAL_DEFAULTS = {"run_dir": None, "test": None}


def cmd_eval(args) -> int:
    cfg = _merge_config(args, EVAL_DEFAULTS)
    errors = []
    for key in ("run_dir", "test"):
        if not cfg[key]:
            errors.append(f"--{key.replace('_', '-')} is required")
        elif not Path(cfg[key]).exists():
            errors.append(f"path does not exist: {cfg[key]}")
    if errors:
        return _fail(errors)
    result = load_run(cfg["run_dir"])
    test = read_dataset_csv(cfg["test"])
    report = metrics(confusion(predict(result, test), test.labels))
    for name in METRIC_NAMES:
        print(f"{name} {getattr(report, name) * 100:.2f}")
    return 0


# ---------------------------------------------------------------- bench

BENCH_DEFAULTS = {
    "data_dir": None,
    "outdir": None,
    "grid": "full",
    "runs": 30,
    "base_seed": 0,
    "force_seed": None,
    "jobs": 1,
    "train_n": 100,
    "blob_dim": 28,
    "blob_n": 1000,
    "blob_separation": 4.0,
    "blob_noise": 0.0,
    "blob_seed": 0,
    "alpha": 0.5,
    "figure": True,
}


def _bench_grid(name: str, train_n: int, alpha: float):
    ds = {"alpha": alpha}
    if name == "small":
        return [
            TrainConfig(regime=r, model="mlp", train_n=train_n, dual_space=dict(ds))
            for r in REGIMES
        ]
    if name == "full":
        grid = []
        for size in (None, train_n):
            for model in MODELS:
                for regime in REGIMES:
                    grid.append(
                        TrainConfig(
                            regime=regime, model=model, train_n=size, dual_space=dict(ds)
                        )
                    )
        return grid
    raise ValueError(f"unknown grid {name!r} (expected 'small' or 'full')")


def cmd_bench(args) -> int:
    cfg = _merge_config(args, BENCH_DEFAULTS)
    errors = []
    if cfg["runs"] < 2:
        errors.append("--runs must be >= 2")
    if cfg["grid"] not in ("small", "full"):
        errors.append("--grid must be 'small' or 'full'")
    if cfg["jobs"] < 1:
        errors.append("--jobs must be >= 1")
    if not (0.0 <= cfg["alpha"] <= 1.0):
        errors.append("--alpha must lie in [0,1]")
    if cfg["data_dir"] and not (Path(cfg["data_dir"]) / "train.csv").exists():
        errors.append(f"no train.csv under {cfg['data_dir']}")
    if errors:
        return _fail(errors)
    started = _now()
    outdir = Path(cfg["outdir"] or artifact_root() / "bench")
    outdir.mkdir(parents=True, exist_ok=True)

    if cfg["data_dir"]:
        datasets = tuple(
            read_dataset_csv(Path(cfg["data_dir"]) / f"{name}.csv")
            for name in ("train", "val", "test")
        )
        source = {"data_dir": str(cfg["data_dir"])}
    else:
        blobs = gen_gaussian_blobs(
            BlobSpec(
                dim=cfg["blob_dim"],
                n_per_class=cfg["blob_n"],
                mean_separation=cfg["blob_separation"],
                label_noise=cfg["blob_noise"],
                seed=cfg["blob_seed"],
            )
        )
        datasets = stratified_split(blobs, SplitSpec(seed=cfg["blob_seed"]))
        source = {"synthetic_blobs": f"dim={cfg['blob_dim']} n={cfg['blob_n']} "
                                     f"sep={cfg['blob_separation']} noise={cfg['blob_noise']}"}

    grid = _bench_grid(cfg["grid"], cfg["train_n"], cfg["alpha"])
    matrix = run_benchmark(
        datasets, grid, n_runs=cfg["runs"], base_seed=cfg["base_seed"],
        jobs=cfg["jobs"], force_seed=cfg["force_seed"],
    )
    artifacts = {}
    for fmt, suffix in (("markdown", "md"), ("csv", "csv"), ("json", "json")):
        path = outdir / f"report.{suffix}"
        path.write_text(emit_report(matrix, fmt))
        artifacts[f"report_{suffix}"] = path
    if cfg["figure"]:
        from .figures import save_benchmark_figure

        artifacts["figure"] = outdir / "benchmark.png"
        save_benchmark_figure(matrix, artifacts["figure"])
    write_manifest(outdir, "bench", cfg, source, artifacts, started)
    print(emit_report(matrix, "markdown"))
    print(f"reports written to {outdir}")
    return 0


# ------------------------------------------------------------ gradcheck

GRADCHECK_DEFAULTS = {"seed": 20240517, "tolerance": 1e-4}


def cmd_gradcheck(args) -> int:
    cfg = _merge_config(args, GRADCHECK_DEFAULTS)
    results = run_gradient_checks(seed=cfg["seed"])
    worst = 0.0
    for check in results:
        print(f"{check.name:28s} {check.n_params:4d} params   "
              f"max rel error {check.max_rel_error:.3e}")
        worst = max(worst, check.max_rel_error)
    print(f"max relative error: {worst:.3e} (tolerance {cfg['tolerance']:.0e})")
    if worst < cfg["tolerance"]:
        print("gradcheck PASS")
        return 0
    print("gradcheck FAIL", file=sys.stderr)
    return 1


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dspace",
        description="Few-shot DDoS detection: dual-space prototypical network pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-blob dataset CSV")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--dim", type=int)
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="clean a flow CSV and fit selection + scaling")
    p.add_argument("--config")
    p.add_argument("--input")
    p.add_argument("--outdir")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--benign-token", dest="benign_token")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--test-frac", dest="test_frac", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--features-per-split", dest="features_per_split", type=int)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
    p.add_argument("--exclude", type=_parse_name_list,
                   help="comma-separated extra columns to exclude at cleaning")
    p.add_argument("--drop", type=_parse_name_list,
                   help="comma-separated extra identifier columns to drop")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train one (model, regime, seed) combination")
    p.add_argument("--config")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--outdir")
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--model", choices=sorted(set(MODEL_FLAGS)))
    p.add_argument("--alpha", type=float)
    p.add_argument("--train-n", dest="train_n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--episodes-per-epoch", dest="episodes_per_epoch", type=int)
    p.add_argument("--k-support", dest="k_support", type=int)
    p.add_argument("--k-query", dest="k_query", type=int)
    p.add_argument("--max-online-updates", dest="max_online_updates", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 64,32")
    p.add_argument("--dropout", type=float)
    p.add_argument("--no-figure", dest="figure", action="store_false", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained run on a dataset CSV")
    p.add_argument("--config")
    p.add_argument("--run-dir", dest="run_dir")
    p.add_argument("--test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run the seeded benchmark grid and emit reports")
    p.add_argument("--config")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--outdir")
    p.add_argument("--grid", choices=("small", "full"))
    p.add_argument("--runs", type=int)
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--force-seed", dest="force_seed", type=int,
                   help="use one fixed seed for every run (std becomes 0)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--train-n", dest="train_n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--blob-dim", dest="blob_dim", type=int)
    p.add_argument("--blob-n", dest="blob_n", type=int)
    p.add_argument("--blob-separation", dest="blob_separation", type=float)
    p.add_argument("--blob-noise", dest="blob_noise", type=float)
    p.add_argument("--blob-seed", dest="blob_seed", type=int)
    p.add_argument("--no-figure", dest="figure", action="store_false", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error{exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

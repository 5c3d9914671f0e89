"""End-to-end pipeline stages and run artifacts (files + manifests)."""

import csv
import datetime
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    IDENTIFIER_COLUMNS,
    TEXT_COLUMNS,
    SplitSpec,
    clean_and_binarize,
    drop_identifier_columns,
    load_csv,
    read_dataset_csv,
    stratified_split,
    subsample_reduced,
    write_dataset_csv,
)
from .forest import ForestConfig, fit_random_forest_importance, select_top_k
from .network import model_from_json, model_to_json
from .preprocess import (
    ScalerParams,
    SelectionMask,
    apply_robust_scaler,
    apply_selection,
    fit_robust_scaler,
)
from .fewshot import Prototypes
from .rng import derive_seed
from .training import RunResult, TrainConfig, run_regime


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def artifact_root() -> Path:
    return Path(os.environ.get("DSPACE_DATA_DIR", "dspace_runs"))


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def write_manifest(outdir: Path, command: str, config: dict, inputs: dict,
                   artifacts: dict, started: str) -> Path:
    doc = {
        "tool": "dspace",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": inputs,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "started": started,
        "finished": _now(),
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def prep(
    input_path,
    outdir,
    label_column: str = "Label",
    benign_token: str = "BENIGN",
    top_k: int = 28,
    split: SplitSpec | None = None,
    forest_cfg: ForestConfig | None = None,
    extra_exclude=(),
    extra_drop=(),
) -> dict:
    """clean -> drop identifiers -> split -> forest on train -> select -> scale -> write."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = _now()
    split = split or SplitSpec()
    forest_cfg = forest_cfg or ForestConfig()

    def stage(name, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, str(exc)) from exc

    table = stage("load", lambda: load_csv(input_path))
    ds = stage(
        "clean",
        lambda: clean_and_binarize(
            table, label_column, benign_token,
            exclude_columns=list(TEXT_COLUMNS) + list(extra_exclude),
        ),
    )
    ds = stage(
        "drop-identifiers",
        lambda: drop_identifier_columns(ds, list(IDENTIFIER_COLUMNS) + list(extra_drop)),
    )
    train, val, test = stage("split", lambda: stratified_split(ds, split))
    report = stage("forest", lambda: fit_random_forest_importance(train, forest_cfg))
    mask = stage("select", lambda: select_top_k(report, min(top_k, train.n_features)))
    train_sel, val_sel, test_sel = (apply_selection(d, mask) for d in (train, val, test))
    scaler = stage("scale", lambda: fit_robust_scaler(train_sel))
    train_out, val_out, test_out = (
        apply_robust_scaler(d, scaler) for d in (train_sel, val_sel, test_sel)
    )

    def write_all():
        paths = {}
        for name, d in (("train", train_out), ("val", val_out), ("test", test_out)):
            paths[name] = outdir / f"{name}.csv"
            write_dataset_csv(d, paths[name])
        paths["scaler"] = outdir / "scaler.json"
        paths["scaler"].write_text(scaler.to_json())
        paths["importance"] = outdir / "importance.json"
        paths["importance"].write_text(report.to_json())
        paths["selection"] = outdir / "selection.json"
        paths["selection"].write_text(mask.to_json())
        return paths

    paths = stage("write", write_all)
    config = {
        "input": str(input_path),
        "label_column": label_column,
        "benign_token": benign_token,
        "top_k": top_k,
        "top_k_effective": mask.k,
        "train_fraction": split.train_fraction,
        "val_fraction": split.val_fraction,
        "test_fraction": split.test_fraction,
        "seed": split.seed,
        "n_trees": forest_cfg.n_trees,
        "max_depth": forest_cfg.max_depth,
        "features_per_split": forest_cfg.features_per_split,
        "min_samples_leaf": forest_cfg.min_samples_leaf,
        "forest_seed": forest_cfg.seed,
        "extra_exclude": list(extra_exclude),
        "extra_drop": list(extra_drop),
    }
    paths["manifest"] = write_manifest(
        outdir, "prep", config, {"input": str(input_path)}, paths, started
    )
    return paths


def _loss_curve_csv(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "train_loss", "val_loss"])
        for step, train_loss, val_loss in curve:
            writer.writerow(
                [step, repr(float(train_loss)),
                 "" if val_loss is None else repr(float(val_loss))]
            )


def run_result_json(result: RunResult, model_file: str, prototypes_file: str | None) -> str:
    """RunResult serialization: config echo, loss curve, artifact references.

    Wall time is deliberately excluded so re-runs of the same seed are
    byte-identical; timing lives in the manifest instead.
    """
    doc = {
        "regime": result.regime,
        "model": result.model,
        "seed": result.seed,
        "config": result.train_config.to_dict(),
        "loss_curve": [
            [step, train_loss, val_loss] for step, train_loss, val_loss in result.loss_curve
        ],
        "model_file": model_file,
        "prototypes_file": prototypes_file,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def train_run(data_dir, outdir, cfg: TrainConfig, make_figure: bool = True) -> dict:
    """Train one (model, regime, seed, train size) combination from prep artifacts."""
    data_dir = Path(data_dir)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = _now()
    train_path = data_dir / "train.csv"
    val_path = data_dir / "val.csv"
    if not train_path.exists():
        raise StageError("load", f"missing prep artifact {train_path}")
    train = read_dataset_csv(train_path)
    val = read_dataset_csv(val_path)
    if cfg.train_n is not None:
        train = subsample_reduced(train, cfg.train_n, derive_seed(cfg.seed, "reduced"))

    result = run_regime(train, val, cfg)

    paths = {"model": outdir / "model.json"}
    paths["model"].write_text(model_to_json(result.params, result.net_config))
    proto_file = None
    if result.prototypes is not None:
        paths["prototypes"] = outdir / "prototypes.json"
        paths["prototypes"].write_text(result.prototypes.to_json())
        proto_file = "prototypes.json"
    paths["run_result"] = outdir / "runresult.json"
    paths["run_result"].write_text(run_result_json(result, "model.json", proto_file))
    paths["loss_curve"] = outdir / "loss_curve.csv"
    _loss_curve_csv(result.loss_curve, paths["loss_curve"])
    if make_figure:
        from .figures import save_loss_curves

        paths["loss_figure"] = outdir / "loss_curve.png"
        save_loss_curves(
            result.loss_curve,
            paths["loss_figure"],
            title=f"{cfg.model} / {cfg.regime} (seed {cfg.seed})",
        )

    config = cfg.to_dict()
    config["data_dir"] = str(data_dir)
    paths["manifest"] = write_manifest(
        outdir, "train", config, {"data_dir": str(data_dir)}, paths, started
    )
    return paths


def load_run(run_dir) -> RunResult:
    """Rebuild a RunResult from a train_run output directory."""
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "runresult.json").read_text())
    params, net_cfg, _ = model_from_json((run_dir / doc["model_file"]).read_text())
    prototypes = None
    if doc.get("prototypes_file"):
        prototypes = Prototypes.from_json((run_dir / doc["prototypes_file"]).read_text())
    cfg_doc = dict(doc["config"])
    cfg = TrainConfig(**cfg_doc)
    return RunResult(
        regime=doc["regime"],
        model=doc["model"],
        seed=doc["seed"],
        loss_curve=[tuple(entry) for entry in doc["loss_curve"]],
        params=params,
        net_config=net_cfg,
        prototypes=prototypes,
        wall_time=0.0,
        train_config=cfg,
    )

"""Confusion metrics, the seeded benchmark matrix, and report emission."""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset, subsample_reduced
from .fewshot import DualSpaceConfig, estimate
from .network import forward
from .rng import derive_seed
from .training import RunResult, TrainConfig, run_regime

REGIME_ORDER = ("offline", "online", "proto", "dspace")
METRIC_NAMES = ("accuracy", "f1", "precision", "recall")


@dataclass
class ConfusionCounts:
    """Binary confusion counts; the positive class is DDoS (label 1)."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    precision: float
    recall: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0,1]")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion(predicted, actual) -> ConfusionCounts:
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    for name, values in (("predicted", predicted), ("actual", actual)):
        if np.any((values != 0) & (values != 1)):
            raise ValueError(f"{name} labels must be binary")
    return ConfusionCounts(
        tp=int(np.sum((predicted == 1) & (actual == 1))),
        fp=int(np.sum((predicted == 1) & (actual == 0))),
        tn=int(np.sum((predicted == 0) & (actual == 0))),
        fn=int(np.sum((predicted == 0) & (actual == 1))),
    )


def metrics(c: ConfusionCounts) -> MetricsReport:
    """Accuracy/precision/recall/F1 with the zero-denominator-is-zero convention."""
    if c.total == 0:
        raise ValueError("metrics of empty counts")
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 0.0
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return MetricsReport(
        accuracy=(c.tp + c.tn) / c.total,
        f1=f1,
        precision=precision,
        recall=recall,
    )


def predict(result: RunResult, ds: LabeledDataset) -> np.ndarray:
    """Test-time predictions for a trained run.

    Logit-head regimes take the argmax; prototypical regimes classify by
    nearest frozen prototype.  The traditional regime scores with
    alpha = 1 (pure normalized Euclidean, whose argmin equals the plain
    Euclidean argmin), the dual-space regime with its trained alpha.
    """
    output, _ = forward(result.params, result.net_config, ds.features, "eval")
    if result.regime in ("offline", "online"):
        return np.argmax(output, axis=1)
    if result.prototypes is None:
        raise ValueError("prototypical run has no frozen prototypes")
    ds_cfg = result.train_config.dual_space
    if result.regime == "proto":
        ds_cfg = DualSpaceConfig(alpha=1.0, norm_eps=ds_cfg.norm_eps)
    return estimate(output, result.prototypes, ds_cfg)


@dataclass
class BenchmarkCell:
    model: str
    regime: str
    train_size: str  # "full" or the reduced count as text
    runs: list  # MetricsReport per run

    def mean(self, metric: str) -> float:
        return float(np.mean([getattr(r, metric) for r in self.runs]))

    def std(self, metric: str) -> float:
        values = [getattr(r, metric) for r in self.runs]
        return float(np.std(values, ddof=1))


@dataclass
class BenchmarkMatrix:
    cells: list  # BenchmarkCell, in grid order
    n_runs: int

    def __post_init__(self):
        for cell in self.cells:
            if len(cell.runs) != self.n_runs:
                raise ValueError(
                    f"cell ({cell.model}, {cell.regime}, {cell.train_size}) has "
                    f"{len(cell.runs)} runs, expected {self.n_runs}"
                )


def _train_size_label(cfg: TrainConfig) -> str:
    return "full" if cfg.train_n is None else str(cfg.train_n)


def _one_run(datasets, template: TrainConfig, seed: int) -> MetricsReport:
    train, val, test = datasets
    cfg = replace(template, seed=seed)
    if cfg.train_n is not None:
        train = subsample_reduced(train, cfg.train_n, derive_seed(seed, "reduced"))
    result = run_regime(train, val, cfg)
    return metrics(confusion(predict(result, test), test.labels))


def run_benchmark(
    datasets,
    grid,
    n_runs: int,
    base_seed: int,
    jobs: int = 1,
    force_seed: int | None = None,
) -> BenchmarkMatrix:
    """Execute every grid template n_runs times and aggregate the metrics.

    Run i of every cell uses seed base_seed + i (or force_seed for all
    runs when given, which pins the std of every metric to exactly 0).
    Cells and runs are independent; with jobs > 1 they execute
    concurrently and results are placed by (cell, run) index, so the
    matrix never depends on scheduling.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("benchmark grid is empty")
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2 so a sample std exists")

    tasks = [
        (ci, ri, force_seed if force_seed is not None else base_seed + ri)
        for ci in range(len(grid))
        for ri in range(n_runs)
    ]

    def job(task):
        ci, ri, seed = task
        template = grid[ci]
        try:
            return ci, ri, _one_run(datasets, template, seed)
        except Exception as exc:
            raise RuntimeError(
                f"benchmark cell (model={template.model}, regime={template.regime}, "
                f"train_size={_train_size_label(template)}) run {ri} failed: {exc}"
            ) from exc

    results = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for ci, ri, report in pool.map(job, tasks):
                results[(ci, ri)] = report
    else:
        for task in tasks:
            ci, ri, report = job(task)
            results[(ci, ri)] = report

    cells = [
        BenchmarkCell(
            model=template.model,
            regime=template.regime,
            train_size=_train_size_label(template),
            runs=[results[(ci, ri)] for ri in range(n_runs)],
        )
        for ci, template in enumerate(grid)
    ]
    return BenchmarkMatrix(cells=cells, n_runs=n_runs)


def _ordered_cells(matrix: BenchmarkMatrix):
    models = []
    sizes = []
    for cell in matrix.cells:
        if cell.model not in models:
            models.append(cell.model)
        if cell.train_size not in sizes:
            sizes.append(cell.train_size)
    ordered = []
    for size in sizes:
        for model in models:
            for regime in REGIME_ORDER:
                for cell in matrix.cells:
                    if (cell.model, cell.regime, cell.train_size) == (model, regime, size):
                        ordered.append(cell)
    return ordered


def emit_report(matrix: BenchmarkMatrix, format: str = "markdown") -> str:
    """Render the matrix as markdown, csv, or json.

    Markdown shows metrics as "mean +/- std" percentages with two
    decimals; csv and json carry the raw values at full precision.
    """
    cells = _ordered_cells(matrix)
    if format == "markdown":
        lines = []
        for size in dict.fromkeys(c.train_size for c in cells):
            lines.append(f"## Train size: {size}")
            lines.append("")
            lines.append("| Model | Regime | Accuracy | F-1 | Precision | Recall |")
            lines.append("|---|---|---|---|---|---|")
            for cell in cells:
                if cell.train_size != size:
                    continue
                row = [cell.model, cell.regime]
                for metric in METRIC_NAMES:
                    row.append(
                        f"{cell.mean(metric) * 100:.2f} ± {cell.std(metric) * 100:.2f}"
                    )
                lines.append("| " + " | ".join(row) + " |")
            lines.append("")
        return "\n".join(lines)
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["model", "regime", "train_size", "metric", "mean", "std"])
        for cell in cells:
            for metric in METRIC_NAMES:
                writer.writerow(
                    [cell.model, cell.regime, cell.train_size, metric,
                     repr(cell.mean(metric)), repr(cell.std(metric))]
                )
        return buffer.getvalue()
    if format == "json":
        doc = {}
        for cell in cells:
            doc.setdefault(cell.model, {}).setdefault(cell.regime, {})[cell.train_size] = {
                metric: {
                    "mean": cell.mean(metric),
                    "std": cell.std(metric),
                    "runs": [getattr(r, metric) for r in cell.runs],
                }
                for metric in METRIC_NAMES
            }
        return json.dumps(doc, indent=2)
    raise ValueError(f"unknown report format {format!r}")

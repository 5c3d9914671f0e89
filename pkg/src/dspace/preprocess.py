"""Robust scaling and feature-selection masks.

Scaling centers each feature on its median and divides by the
interquartile range, which keeps the heavy-tailed rate features found in
flow captures from dominating training.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile on the sorted values.

    Position h = q * (n - 1); the result interpolates between the two
    order statistics bracketing h.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("quantile of empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("quantile input must be finite")
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0,1], got {q}")
    v = np.sort(v)
    h = q * (v.size - 1)
    lo = int(math.floor(h))
    hi = min(lo + 1, v.size - 1)
    frac = h - lo
    return float(v[lo] + frac * (v[hi] - v[lo]))


@dataclass
class ScalerParams:
    """Per-feature medians and guarded IQRs."""

    medians: np.ndarray
    iqrs: np.ndarray
    feature_names: list

    def __post_init__(self):
        self.medians = np.asarray(self.medians, dtype=np.float64)
        self.iqrs = np.asarray(self.iqrs, dtype=np.float64)
        if not (len(self.medians) == len(self.iqrs) == len(self.feature_names)):
            raise ValueError("scaler parameter lengths disagree")
        if np.any(self.iqrs <= 0):
            raise ValueError("all stored IQRs must be positive (guard replaces zeros)")

    def to_json(self) -> str:
        return json.dumps(
            {
                "medians": self.medians.tolist(),
                "iqrs": self.iqrs.tolist(),
                "feature_names": list(self.feature_names),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ScalerParams":
        doc = json.loads(text)
        return cls(doc["medians"], doc["iqrs"], doc["feature_names"])


def fit_robust_scaler(ds: LabeledDataset) -> ScalerParams:
    """Per-feature median and IQR; zero IQRs are replaced by 1.0 so
    constant columns are centered but not rescaled."""
    if ds.n_rows == 0:
        raise ValueError("cannot fit scaler on an empty dataset")
    medians = np.empty(ds.n_features)
    iqrs = np.empty(ds.n_features)
    for j in range(ds.n_features):
        col = ds.features[:, j]
        medians[j] = quantile(col, 0.5)
        iqr = quantile(col, 0.75) - quantile(col, 0.25)
        iqrs[j] = iqr if iqr > 0 else 1.0
    return ScalerParams(medians, iqrs, list(ds.feature_names))


def apply_robust_scaler(ds: LabeledDataset, params: ScalerParams) -> LabeledDataset:
    """Transform each cell to (x - median) / iqr; labels unchanged."""
    if list(ds.feature_names) != list(params.feature_names):
        raise ValueError(
            "scaler fitted on different columns: "
            f"{params.feature_names[:4]}... vs {ds.feature_names[:4]}..."
        )
    scaled = (ds.features - params.medians) / params.iqrs
    return LabeledDataset(
        scaled,
        ds.labels,
        list(ds.feature_names),
        f"{ds.provenance}; robust-scaled" if ds.provenance else "robust-scaled",
    )


@dataclass
class SelectionMask:
    """Top-k feature indices in ranking order."""

    selected_indices: list
    k: int

    def __post_init__(self):
        if len(self.selected_indices) != self.k:
            raise ValueError("selection length disagrees with k")
        if len(set(self.selected_indices)) != self.k:
            raise ValueError("selected indices must be unique")

    def to_json(self) -> str:
        return json.dumps(
            {"selected_indices": [int(i) for i in self.selected_indices], "k": self.k},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SelectionMask":
        doc = json.loads(text)
        return cls(doc["selected_indices"], doc["k"])


def apply_selection(ds: LabeledDataset, mask: SelectionMask) -> LabeledDataset:
    """Project the dataset onto the selected feature columns (in mask order)."""
    idx = list(mask.selected_indices)
    if any(i < 0 or i >= ds.n_features for i in idx):
        raise ValueError("selection index out of range for this dataset")
    return LabeledDataset(
        ds.features[:, idx],
        ds.labels,
        [ds.feature_names[i] for i in idx],
        f"{ds.provenance}; selected top {mask.k} features"
        if ds.provenance
        else f"selected top {mask.k} features",
    )

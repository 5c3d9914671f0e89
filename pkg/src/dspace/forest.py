"""Random-forest feature importance via mean decrease in Gini impurity.

The ensemble exists purely for feature ranking: trees never predict, they
only accumulate the impurity decrease attributable to each feature.  Each
tree draws a bootstrap sample and, at every node, a uniform
without-replacement subset of candidate features; the best Gini split is
found by an exhaustive scan over sorted values.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    features_per_split: int | None = None  # None -> ceil(sqrt(n_features))
    min_samples_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def resolved_features_per_split(self, n_features: int) -> int:
        k = self.features_per_split
        if k is None:
            k = math.ceil(math.sqrt(n_features))
        return min(k, n_features)


@dataclass
class ImportanceReport:
    """Normalized importances plus a descending ranking (ties -> lower index)."""

    importances: np.ndarray
    ranking: list

    def __post_init__(self):
        self.importances = np.asarray(self.importances, dtype=np.float64)
        if np.any(self.importances < 0):
            raise ValueError("importances must be non-negative")
        if abs(float(self.importances.sum()) - 1.0) > 1e-9:
            raise ValueError("importances must sum to 1")
        expected = list(np.argsort(-self.importances, kind="stable"))
        if [int(i) for i in self.ranking] != [int(i) for i in expected]:
            raise ValueError("ranking is not sorted by descending importance")

    def to_json(self) -> str:
        return json.dumps(
            {
                "importances": self.importances.tolist(),
                "ranking": [int(i) for i in self.ranking],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ImportanceReport":
        doc = json.loads(text)
        return cls(np.asarray(doc["importances"]), doc["ranking"])


def _gini_from_counts(n0: float, n1: float) -> float:
    m = n0 + n1
    if m == 0:
        return 0.0
    p0 = n0 / m
    p1 = n1 / m
    return 1.0 - (p0 * p0 + p1 * p1)


def _best_split(x, y, idx, feats, min_leaf):
    """Exhaustive Gini scan over the candidate features at one node.

    Returns (feature, threshold, left_mask_over_idx, weighted_impurity)
    or None when no admissible split exists.  Split thresholds sit at
    midpoints between distinct consecutive sorted values; both children
    must hold at least min_leaf samples.
    """
    m = len(idx)
    vals = x[np.ix_(idx, feats)]  # (m, k)
    order = np.argsort(vals, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(vals, order, axis=0)
    sorted_y = y[idx][order]  # (m, k)

    total_ones = float(sorted_y[:, 0].sum())
    left_ones = np.cumsum(sorted_y, axis=0)[:-1].astype(np.float64)  # (m-1, k)
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    left_zeros = n_left - left_ones
    right_ones = total_ones - left_ones
    right_zeros = n_right - right_ones

    gini_left = 1.0 - ((left_zeros / n_left) ** 2 + (left_ones / n_left) ** 2)
    gini_right = 1.0 - ((right_zeros / n_right) ** 2 + (right_ones / n_right) ** 2)
    weighted = (n_left * gini_left + n_right * gini_right) / m

    admissible = (
        (sorted_vals[:-1] < sorted_vals[1:])
        & (n_left >= min_leaf)
        & (n_right >= min_leaf)
    )
    weighted = np.where(admissible, weighted, np.inf)
    flat = int(np.argmin(weighted))
    pos, col = divmod(flat, weighted.shape[1])
    best = weighted[pos, col]
    if not np.isfinite(best):
        return None

    lo = sorted_vals[pos, col]
    hi = sorted_vals[pos + 1, col]
    threshold = lo + (hi - lo) / 2.0
    if not (lo <= threshold < hi):  # midpoint rounded onto an endpoint
        threshold = lo
    feature = int(feats[col])
    left_mask = x[idx, feature] <= threshold
    return feature, threshold, left_mask, float(best)


def _grow(x, y, idx, depth, cfg, k, n_total, rng, importances):
    m = len(idx)
    ones = float(y[idx].sum())
    impurity = _gini_from_counts(m - ones, ones)
    if (
        depth >= cfg.max_depth
        or m < 2 * cfg.min_samples_leaf
        or impurity == 0.0
    ):
        return
    feats = rng.choice(x.shape[1], size=k, replace=False)
    split = _best_split(x, y, idx, feats, cfg.min_samples_leaf)
    if split is None:
        return
    feature, _, left_mask, weighted_child = split
    # Mean decrease in impurity, weighted by this node's sample fraction.
    importances[feature] += (m / n_total) * (impurity - weighted_child)
    _grow(x, y, idx[left_mask], depth + 1, cfg, k, n_total, rng, importances)
    _grow(x, y, idx[~left_mask], depth + 1, cfg, k, n_total, rng, importances)


def fit_random_forest_importance(
    ds: LabeledDataset, cfg: ForestConfig = ForestConfig()
) -> ImportanceReport:
    """Fit the ensemble and return normalized per-feature importances.

    Tree t uses its own Philox stream keyed seed + t (bootstrap draw
    first, then per-node feature draws in depth-first order), so results
    do not depend on any execution schedule.  Per-tree raw importance
    sums are averaged across trees and normalized once at the end.
    """
    x = np.ascontiguousarray(ds.features, dtype=np.float64)
    y = ds.labels
    n, d = x.shape
    if len(np.unique(y)) < 2:
        raise ValueError("forest fitting requires both classes present")
    if n < 2 * cfg.min_samples_leaf:
        raise ValueError(
            f"{n} rows < 2 * min_samples_leaf = {2 * cfg.min_samples_leaf}"
        )
    k = cfg.resolved_features_per_split(d)

    total = np.zeros(d)
    for t in range(cfg.n_trees):
        rng = np.random.Generator(np.random.Philox(key=cfg.seed + t))
        boot = rng.integers(0, n, size=n)
        tree_imp = np.zeros(d)
        _grow(x, y, boot, 0, cfg, k, n, rng, tree_imp)
        total += tree_imp
    total /= cfg.n_trees

    mass = float(total.sum())
    if mass <= 0:
        raise ValueError("forest made no splits; importances are undefined")
    importances = total / mass
    ranking = [int(i) for i in np.argsort(-importances, kind="stable")]
    return ImportanceReport(importances, ranking)


def select_top_k(report: ImportanceReport, k: int):
    """First k entries of the ranking as a SelectionMask."""
    from .preprocess import SelectionMask

    if k > len(report.ranking):
        raise ValueError(f"k={k} exceeds {len(report.ranking)} features")
    if k < 1:
        raise ValueError("k must be >= 1")
    return SelectionMask(list(report.ranking[:k]), k)

import numpy as np
import numpy.testing as npt
import pytest

from dspace.data import LabeledDataset
from dspace.forest import (
    ForestConfig,
    ImportanceReport,
    fit_random_forest_importance,
    select_top_k,
)

SMALL_CFG = ForestConfig(n_trees=25, max_depth=6, min_samples_leaf=5, seed=3)


def planted_dataset(n=400, d=10, seed=0):
    """label = 1{feature_0 > 0}; features 1..d-1 are independent noise."""
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, d))
    labels = (features[:, 0] > 0).astype(int)
    return LabeledDataset(features, labels, [f"f{i}" for i in range(d)])


def test_planted_feature_ranked_first():
    ds = planted_dataset()
    report = fit_random_forest_importance(ds, SMALL_CFG)
    assert report.ranking[0] == 0
    assert report.importances[0] > 0.5


def test_matches_reference_ensemble_ranking():
    # oracle: an independent reference ensemble on the same synthetic data
    sklearn_ensemble = pytest.importorskip("sklearn.ensemble")
    ds = planted_dataset(seed=5)
    mine = fit_random_forest_importance(ds, SMALL_CFG)
    ref = sklearn_ensemble.RandomForestClassifier(
        n_estimators=50, max_depth=6, min_samples_leaf=5, random_state=0
    ).fit(ds.features, ds.labels)
    assert mine.ranking[0] == int(np.argmax(ref.feature_importances_))


def test_single_feature_importance_is_one():
    ds = planted_dataset(d=1)
    report = fit_random_forest_importance(ds, SMALL_CFG)
    npt.assert_allclose(report.importances, [1.0])


def test_deterministic_per_seed():
    ds = planted_dataset()
    a = fit_random_forest_importance(ds, SMALL_CFG)
    b = fit_random_forest_importance(ds, SMALL_CFG)
    npt.assert_array_equal(a.importances, b.importances)
    assert a.ranking == b.ranking


def test_importances_nonnegative_unit_sum():
    ds = planted_dataset(seed=11)
    report = fit_random_forest_importance(ds, SMALL_CFG)
    assert np.all(report.importances >= 0)
    npt.assert_allclose(report.importances.sum(), 1.0, atol=1e-12)


def test_column_permutation_maps_top_feature():
    ds = planted_dataset(seed=2)
    perm = np.array([3, 0, 5, 1, 2, 4, 7, 6, 9, 8])
    permuted = LabeledDataset(
        ds.features[:, perm], ds.labels, [ds.feature_names[i] for i in perm]
    )
    a = fit_random_forest_importance(ds, SMALL_CFG)
    b = fit_random_forest_importance(permuted, SMALL_CFG)
    # feature_0 moved to column 1 under this permutation
    assert a.ranking[0] == 0
    assert b.ranking[0] == 1


def test_single_class_rejected():
    ds = LabeledDataset(np.random.default_rng(0).normal(size=(40, 3)),
                        np.zeros(40, dtype=int), ["a", "b", "c"])
    with pytest.raises(ValueError, match="both classes"):
        fit_random_forest_importance(ds, SMALL_CFG)


def test_degenerate_config_rejected():
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        ForestConfig(max_depth=0)
    with pytest.raises(ValueError):
        ForestConfig(features_per_split=0)


def test_too_few_rows_rejected():
    ds = planted_dataset(n=6)
    with pytest.raises(ValueError, match="min_samples_leaf"):
        fit_random_forest_importance(ds, ForestConfig(min_samples_leaf=5))


def test_report_validation_and_round_trip():
    report = ImportanceReport(np.array([0.5, 0.3, 0.2]), [0, 1, 2])
    back = ImportanceReport.from_json(report.to_json())
    npt.assert_array_equal(back.importances, report.importances)
    with pytest.raises(ValueError, match="ranking"):
        ImportanceReport(np.array([0.5, 0.3, 0.2]), [1, 0, 2])
    with pytest.raises(ValueError, match="sum"):
        ImportanceReport(np.array([0.5, 0.3]), [0, 1])


# ----------------------------------------------------------- select_top_k

def test_select_top_k_forced_ordering():
    report = ImportanceReport(np.array([0.5, 0.3, 0.2]), [0, 1, 2])
    assert select_top_k(report, 2).selected_indices == [0, 1]


def test_select_all_is_ranking_order():
    report = ImportanceReport(np.array([0.2, 0.5, 0.3]), [1, 2, 0])
    assert select_top_k(report, 3).selected_indices == [1, 2, 0]


def test_select_tie_breaks_to_lower_index():
    report_values = np.array([0.4, 0.4, 0.2])
    ranking = list(np.argsort(-report_values, kind="stable"))
    report = ImportanceReport(report_values, ranking)
    assert select_top_k(report, 1).selected_indices == [0]


def test_select_k_too_large():
    report = ImportanceReport(np.array([1.0]), [0])
    with pytest.raises(ValueError, match="exceeds"):
        select_top_k(report, 2)

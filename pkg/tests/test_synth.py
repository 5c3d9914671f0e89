import math

import numpy as np
import pytest

from dspace.synth import BlobSpec, gen_gaussian_blobs


def phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2)))


def nearest_true_mean_accuracy(ds, separation):
    mu0 = np.zeros(ds.n_features)
    mu1 = np.zeros(ds.n_features)
    mu1[0] = separation
    d0 = ((ds.features - mu0) ** 2).sum(axis=1)
    d1 = ((ds.features - mu1) ** 2).sum(axis=1)
    pred = (d1 < d0).astype(int)
    return float((pred == ds.labels).mean())


def test_deterministic_per_seed():
    spec = BlobSpec(dim=5, n_per_class=50, mean_separation=2.0, label_noise=0.1, seed=9)
    a = gen_gaussian_blobs(spec)
    b = gen_gaussian_blobs(spec)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_label_counts_exact_without_noise():
    ds = gen_gaussian_blobs(BlobSpec(dim=3, n_per_class=123, seed=1))
    assert np.bincount(ds.labels).tolist() == [123, 123]


def test_empirical_means_converge():
    spec = BlobSpec(dim=6, n_per_class=4000, mean_separation=3.0, seed=2)
    ds = gen_gaussian_blobs(spec)
    mu1 = np.zeros(6)
    mu1[0] = 3.0
    m0 = ds.features[ds.labels == 0].mean(axis=0)
    m1 = ds.features[ds.labels == 1].mean(axis=0)
    bound = 4 * math.sqrt(6 / 4000)
    assert np.linalg.norm(m0) <= bound
    assert np.linalg.norm(m1 - mu1) <= bound


def test_zero_separation_is_chance():
    # oracle: binomial 99% band around 0.5 at n=2000
    ds = gen_gaussian_blobs(BlobSpec(dim=4, n_per_class=1000, mean_separation=0.0, seed=3))
    acc = nearest_true_mean_accuracy(ds, 0.0)
    assert 0.4 <= acc <= 0.6


def test_separation_eight_near_perfect():
    # oracle: Gaussian tail, expected accuracy = Phi(4)
    assert phi(4.0) >= 0.9999
    ds = gen_gaussian_blobs(BlobSpec(dim=4, n_per_class=20_000, mean_separation=8.0, seed=4))
    assert nearest_true_mean_accuracy(ds, 8.0) >= 0.999


def test_label_noise_flip_rate():
    ds = gen_gaussian_blobs(
        BlobSpec(dim=2, n_per_class=20_000, mean_separation=30.0, label_noise=0.1, seed=5)
    )
    # at separation 30 the true class is recoverable from x[0], so the
    # observed flip rate estimates label_noise directly
    true = (ds.features[:, 0] > 15.0).astype(int)
    flip_rate = float((true != ds.labels).mean())
    assert abs(flip_rate - 0.1) < 0.01


def test_spec_validation():
    with pytest.raises(ValueError):
        BlobSpec(dim=0, n_per_class=5)
    with pytest.raises(ValueError):
        BlobSpec(dim=2, n_per_class=5, label_noise=0.5)
    with pytest.raises(ValueError):
        BlobSpec(dim=2, n_per_class=5, mean_separation=-1)


def test_csv_schema_matches_pipeline(tmp_path):
    from dspace.data import read_dataset_csv, write_dataset_csv

    ds = gen_gaussian_blobs(BlobSpec(dim=3, n_per_class=10, seed=6))
    path = tmp_path / "blobs.csv"
    write_dataset_csv(ds, path)
    back = read_dataset_csv(path)
    assert np.array_equal(back.features, ds.features)
    assert back.feature_names == ds.feature_names

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlp01.data import (
    CIFAR_RECORD,
    ConfigError,
    DataError,
    Dataset,
    NoiseConfig,
    cifar10_files,
    gaussian_augment,
    load_cifar10_pair,
    load_dataset,
    noise_augmented_training_set,
    read_cifar10_records,
    save_dataset,
    split_per_class,
    stratified_batch,
    synth_blobs,
    synth_images,
    write_cifar10_records,
)


def _fake_batch(path, labels, seed=0):
    pixels = np.random.default_rng(seed).integers(0, 256, size=(len(labels), 3072), dtype=np.uint8)
    write_cifar10_records(path, labels, pixels)
    return pixels


def test_cifar_round_trip_is_byte_exact(tmp_path):
    labels = np.array([3, 0, 9, 1, 1], dtype=np.uint8)
    pixels = _fake_batch(tmp_path / "b.bin", labels)
    got_l, got_p = read_cifar10_records(tmp_path / "b.bin")
    assert np.array_equal(got_l, labels)
    assert np.array_equal(got_p, pixels)
    assert (tmp_path / "b.bin").stat().st_size == 5 * CIFAR_RECORD


def test_pair_loader_maps_labels_and_scales(tmp_path):
    labels = np.array([1, 0, 5, 1, 0, 0], dtype=np.uint8)
    pixels = np.zeros((6, 3072), dtype=np.uint8)
    pixels[0, 0] = 255
    pixels[1, 1] = 51
    write_cifar10_records(tmp_path / "b.bin", labels, pixels)
    ds = load_cifar10_pair([tmp_path / "b.bin"], 1, 0)
    assert ds.n == 5
    assert list(ds.labels) == [1, -1, 1, -1, -1]
    assert ds.features[0, 0] == 1.0
    assert ds.features[1, 1] == pytest.approx(0.2)
    assert ds.class_map == {"-1": 0, "+1": 1}
    assert ds.features.min() >= 0 and ds.features.max() <= 1


def test_short_record_reports_offset(tmp_path):
    _fake_batch(tmp_path / "b.bin", [0, 1])
    with open(tmp_path / "b.bin", "ab") as fh:
        fh.write(b"\x00" * 100)
    with pytest.raises(DataError, match=f"offset {2 * CIFAR_RECORD}"):
        read_cifar10_records(tmp_path / "b.bin")


def test_invalid_label_reports_offset(tmp_path):
    _fake_batch(tmp_path / "b.bin", [0, 1, 12])
    with pytest.raises(DataError, match=f"invalid label 12 at byte offset {2 * CIFAR_RECORD}"):
        read_cifar10_records(tmp_path / "b.bin")


def test_missing_class_and_missing_files(tmp_path):
    _fake_batch(tmp_path / "b.bin", [0, 0, 2])
    with pytest.raises(DataError, match="class 1"):
        load_cifar10_pair([tmp_path / "b.bin"], 0, 1)
    with pytest.raises(ConfigError):
        load_cifar10_pair([tmp_path / "b.bin"], 3, 3)
    with pytest.raises(DataError, match="missing CIFAR-10 files"):
        cifar10_files(tmp_path, "train")


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([1, 0, -1]))
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([1, -1]))
    with pytest.raises(DataError):
        Dataset(np.zeros(3), np.array([1, -1, 1]))


def test_augment_sigma_zero_is_identity(blobs8):
    out = gaussian_augment(blobs8, NoiseConfig(0.0, 3))
    assert np.array_equal(out.features, blobs8.features)
    assert out.features is not blobs8.features


def test_augment_clips_and_matches_draws():
    ds = Dataset(np.array([[0.99, 0.01, 0.5]]), np.array([1]))
    out = gaussian_augment(ds, NoiseConfig(0.3, 9))
    draws = np.random.default_rng(9).standard_normal((1, 3)) * 0.3
    assert np.allclose(out.features, np.clip(ds.features + draws, 0, 1))
    assert out.features.min() >= 0 and out.features.max() <= 1


def test_augment_deterministic_and_mode(blobs8):
    cfg = NoiseConfig(0.1, 4)
    a, b = gaussian_augment(blobs8, cfg), gaussian_augment(blobs8, cfg)
    assert np.array_equal(a.features, b.features)
    assert noise_augmented_training_set(blobs8, cfg).n == blobs8.n
    both = noise_augmented_training_set(blobs8, cfg, mode="append")
    assert both.n == 2 * blobs8.n
    assert np.array_equal(both.features[: blobs8.n], blobs8.features)
    with pytest.raises(ConfigError):
        noise_augmented_training_set(blobs8, cfg, mode="mix")
    with pytest.raises(ConfigError):
        NoiseConfig(-0.1)


@given(sigma=st.floats(0, 3), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_augment_stays_in_unit_box(sigma, seed):
    X = np.random.default_rng(seed).random((7, 5))
    out = gaussian_augment(Dataset(X, np.ones(7)), NoiseConfig(sigma, seed))
    assert out.features.min() >= 0 and out.features.max() <= 1


def _labels_ds(n_neg, n_pos):
    y = np.concatenate([-np.ones(n_neg), np.ones(n_pos)])
    return Dataset(np.zeros((y.size, 1)), y)


def test_stratified_counts(rng):
    ds = _labels_ds(10, 20)
    idx = stratified_batch(ds, 0.5, rng)
    assert np.count_nonzero(ds.labels[idx] == -1) == 5
    assert np.count_nonzero(ds.labels[idx] == 1) == 10
    big = _labels_ds(5000, 5000)
    idx = stratified_batch(big, 0.75, rng)
    assert np.count_nonzero(big.labels[idx] == -1) == 3750
    assert np.count_nonzero(big.labels[idx] == 1) == 3750


def test_stratified_full_fraction_is_permutation(rng):
    ds = _labels_ds(7, 4)
    idx = stratified_batch(ds, 1.0, rng)
    assert sorted(idx) == list(range(11))


def test_stratified_errors(rng):
    for bad in (0.0, -0.5, 1.01):
        with pytest.raises(ConfigError):
            stratified_batch(_labels_ds(3, 3), bad, rng)
    with pytest.raises(DataError):
        stratified_batch(_labels_ds(0, 3), 0.5, rng)


@given(n_neg=st.integers(1, 60), n_pos=st.integers(1, 60), frac=st.floats(0.01, 1.0), seed=st.integers(0, 999))
@settings(max_examples=80, deadline=None)
def test_stratified_property(n_neg, n_pos, frac, seed):
    ds = _labels_ds(n_neg, n_pos)
    idx = stratified_batch(ds, frac, np.random.default_rng(seed))
    assert len(set(idx.tolist())) == idx.size
    assert np.count_nonzero(ds.labels[idx] == -1) == math.ceil(frac * n_neg)
    assert np.count_nonzero(ds.labels[idx] == 1) == math.ceil(frac * n_pos)


def test_blobs_separable_by_perceptron():
    ds = synth_blobs(100, 2, 10.0, 0)
    X = np.hstack([ds.features, np.ones((ds.n, 1))])
    w = np.zeros(3)
    for _ in range(1000):
        wrong = np.flatnonzero(np.where(X @ w > 0, 1, -1) != ds.labels)
        if wrong.size == 0:
            break
        w += ds.labels[wrong[0]] * X[wrong[0]]
    assert np.all(np.where(X @ w > 0, 1, -1) == ds.labels)


def test_blobs_geometry_and_determinism():
    a, b = synth_blobs(500, 3, 4.0, 7), synth_blobs(500, 3, 4.0, 7)
    assert np.array_equal(a.features, b.features)
    gap = a.features[a.labels == 1].mean(0) - a.features[a.labels == -1].mean(0)
    assert gap[0] == pytest.approx(4.0, abs=0.3)
    assert np.abs(gap[1:]).max() < 0.3


def test_coincident_blobs_near_chance():
    ds = synth_blobs(2000, 2, 0.0, 1)
    acc = np.mean(np.where(ds.features[:, 0] > 0, 1, -1) == ds.labels)
    assert abs(acc - 0.5) < 0.05


def test_synth_images_in_unit_box():
    ds = synth_images(30, 50, 2)
    assert ds.features.shape == (60, 50)
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    assert np.array_equal(ds.features, synth_images(30, 50, 2).features)


def test_split_per_class(blobs8):
    sub = split_per_class(blobs8, 10, 0)
    assert sub.n == 20 and np.count_nonzero(sub.labels == 1) == 10
    assert split_per_class(blobs8, None, 0) is blobs8


def test_cache_round_trip(tmp_path, blobs8):
    save_dataset(blobs8, tmp_path / "c.bin")
    back = load_dataset(tmp_path / "c.bin")
    assert np.array_equal(back.labels, blobs8.labels)
    assert np.array_equal(back.features, blobs8.features.astype(np.float32).astype(np.float64))


def test_cache_rejects_bad_files(tmp_path, blobs8):
    save_dataset(blobs8, tmp_path / "c.bin")
    blob = bytearray((tmp_path / "c.bin").read_bytes())
    (tmp_path / "trunc.bin").write_bytes(bytes(blob[:-3]))
    with pytest.raises(DataError, match="expected"):
        load_dataset(tmp_path / "trunc.bin")
    blob[:4] = b"XXXX"
    (tmp_path / "bad.bin").write_bytes(bytes(blob))
    with pytest.raises(DataError, match="magic"):
        load_dataset(tmp_path / "bad.bin")

import struct

import numpy as np
import pytest

from syncpretrain.dataset import (BadMagicError, CountMismatchError, InsufficientClassError,
                                  LabeledDataset, TruncatedFileError, batch_sizes, load_idx,
                                  minibatch_indices, minibatches, stratified_split, write_idx)
from tests.conftest import write_raw_idx


def test_scaling_endpoints(tmp_path):
    pixels = np.stack([np.zeros((28, 28)), np.full((28, 28), 255)])
    write_raw_idx(tmp_path / "i", tmp_path / "l", pixels, np.array([3, 7]))
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    assert ds.images.shape == (2, 784)
    assert set(np.unique(ds.images)) == {0.0, 1.0}
    assert ds.labels.tolist() == [3, 7]


def test_bad_magic(tmp_path):
    pixels = np.zeros((1, 2, 2))
    write_raw_idx(tmp_path / "i", tmp_path / "l", pixels, np.array([1]))
    with pytest.raises(BadMagicError):
        load_idx(tmp_path / "l", tmp_path / "l")


def test_truncated(tmp_path):
    write_raw_idx(tmp_path / "i", tmp_path / "l", np.zeros((3, 4, 4)), np.arange(3))
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "i").write_bytes(raw[:-5])
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path / "i", tmp_path / "l")
    (tmp_path / "l").write_bytes(struct.pack(">I", 0x801))
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_count_mismatch(tmp_path):
    write_raw_idx(tmp_path / "i", tmp_path / "l", np.zeros((3, 4, 4)), np.arange(2))
    with pytest.raises(CountMismatchError):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_round_trip_bit_identical(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(6, 28, 28))
    write_raw_idx(tmp_path / "i", tmp_path / "l", pixels, np.arange(6))
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    write_idx(ds, tmp_path / "i2", tmp_path / "l2")
    again = load_idx(tmp_path / "i2", tmp_path / "l2")
    assert np.array_equal(ds.images, again.images)
    assert np.array_equal(ds.labels, again.labels)
    assert (tmp_path / "i").read_bytes() == (tmp_path / "i2").read_bytes()


def _toy(per_class=3, seed=0):
    labels = np.repeat(np.arange(10), per_class)
    images = np.random.default_rng(seed).random((labels.size, 4))
    return LabeledDataset(images, labels)


def test_stratified_one_per_class():
    data = _toy(3)
    train, valid = stratified_split(data, 1, seed=4)
    assert np.bincount(valid.labels, minlength=10).tolist() == [1] * 10
    assert len(train) == 20


def test_stratified_degenerate():
    data = _toy(3)
    train, valid = stratified_split(data, 0, seed=4)
    assert len(valid) == 0
    assert np.array_equal(train.images, data.images)


def test_stratified_partition_and_determinism():
    data = _toy(5)
    # identify rows by their (unique) first feature
    key = lambda d: sorted(d.images[:, 0].tolist())
    t1, v1 = stratified_split(data, 2, seed=9)
    t2, v2 = stratified_split(data, 2, seed=9)
    assert np.array_equal(v1.images, v2.images)
    assert key(data) == sorted(key(t1) + key(v1))
    assert not set(key(t1)) & set(key(v1))


def test_stratified_insufficient_names_class():
    labels = np.array([0, 0, 1])
    with pytest.raises(InsufficientClassError) as err:
        stratified_split(LabeledDataset(np.zeros((3, 2)), labels), 2, seed=0)
    assert err.value.label == 1


def test_batch_sizes():
    data = np.zeros((250, 3))
    assert [b.shape[0] for b in minibatches(data, 100, 1)] == [100, 100, 50]
    assert batch_sizes(250, 100) == [100, 100, 50]


def test_same_seed_same_order():
    a = minibatch_indices(37, 5, 11)
    b = minibatch_indices(37, 5, 11)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = minibatch_indices(37, 5, 12)
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_union_covers_all_rows_once():
    idx = np.concatenate(minibatch_indices(103, 10, 3))
    assert sorted(idx.tolist()) == list(range(103))


def test_zero_batch_size_rejected():
    with pytest.raises(ValueError):
        list(minibatches(np.zeros((3, 2)), 0, 0))


def test_real_desk_pool(desk_data_dir):
    ds = load_idx(desk_data_dir / "desk-images-idx3-ubyte",
                  desk_data_dir / "desk-labels-idx1-ubyte")
    assert ds.images.shape == (5000, 784)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert np.bincount(ds.labels).tolist() == [500] * 10

#!/usr/bin/env python3
"""
Tests for IDX / CIFAR-10 parsing, subsetting and the synthetic tasks.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'lgn-scripts'))

import gzip
import struct

import numpy as np
import pytest

from data_loader import (
    CIFAR_RECORD_BYTES, DATA_DIR_ENV, Dataset, DatasetSpec, enumerate_inputs, load_cifar10_binary, load_dataset,
    load_idx, load_mnist, random_teacher_circuit, resolve_data_dir, subset, synthetic_task,
)
from error_handler import (
    ConfigError, DataError, IdxDimensionError, IdxMagicError, IdxTruncatedError, LabelRangeError,
)


def _images_bytes(images):
    n, rows, cols = images.shape
    return struct.pack(">IIII", 0x803, n, rows, cols) + images.astype(np.uint8).tobytes()


def _labels_bytes(labels):
    return struct.pack(">II", 0x801, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


def _write_mnist(directory, n_train=6, n_test=4, seed=0):
    rng = np.random.default_rng(seed)
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        images = rng.integers(0, 256, (n, 28, 28))
        labels = rng.integers(0, 10, n)
        (directory / f"{prefix}-images-idx3-ubyte").write_bytes(_images_bytes(images))
        (directory / f"{prefix}-labels-idx1-ubyte").write_bytes(_labels_bytes(labels))


class TestIdx:
    def test_images_are_scaled(self, tmp_path):
        images = np.array([[[0, 255], [51, 102]]])
        path = tmp_path / "images.idx3"
        path.write_bytes(_images_bytes(images))
        loaded = load_idx(path)
        assert loaded.shape == (1, 2, 2)
        np.testing.assert_allclose(loaded[0], [[0.0, 1.0], [0.2, 0.4]])

    def test_labels_and_gzip(self, tmp_path):
        path = tmp_path / "labels.idx1.gz"
        with gzip.open(path, "wb") as handle:
            handle.write(_labels_bytes([3, 1, 4, 1, 5]))
        assert load_idx(path, num_classes=10).tolist() == [3, 1, 4, 1, 5]

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "short.idx3"
        path.write_bytes(_images_bytes(np.zeros((2, 3, 3)))[:-4])
        with pytest.raises(IdxTruncatedError) as excinfo:
            load_idx(path)
        assert excinfo.value.details == {"expected": 16 + 18, "actual": 16 + 14}

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "long.idx1"
        path.write_bytes(_labels_bytes([1, 2]) + b"\x00")
        with pytest.raises(IdxTruncatedError):
            load_idx(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">II", 0x802, 1) + b"\x00")
        with pytest.raises(IdxMagicError):
            load_idx(path)

    def test_dimension_overflow(self, tmp_path):
        path = tmp_path / "huge.idx3"
        path.write_bytes(struct.pack(">IIII", 0x803, 70000, 70000, 70000))
        with pytest.raises(IdxDimensionError):
            load_idx(path)

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "labels.idx1"
        path.write_bytes(_labels_bytes([0, 10]))
        with pytest.raises(LabelRangeError):
            load_idx(path, num_classes=10)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_idx(tmp_path / "nothing.idx")


def test_load_mnist_flattens_images(tmp_path):
    _write_mnist(tmp_path)
    train = load_mnist(tmp_path, "train")
    assert train.features.shape == (6, 784)
    assert train.classes == 10
    assert load_mnist(tmp_path, "test").features.shape == (4, 784)
    with pytest.raises(ConfigError):
        load_mnist(tmp_path, "validation")


def test_load_cifar_batches(tmp_path):
    rng = np.random.default_rng(0)
    records = rng.integers(0, 256, (3, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = [0, 9, 4]
    (tmp_path / "test_batch.bin").write_bytes(records.tobytes())
    pixels, labels = load_cifar10_binary(tmp_path, "test")
    assert pixels.shape == (3, 3, 1024)
    assert labels.tolist() == [0, 9, 4]
    np.testing.assert_array_equal(pixels[1, 2], records[1, 1 + 2048:])

    (tmp_path / "test_batch.bin").write_bytes(records.tobytes()[:-1])
    with pytest.raises(IdxTruncatedError):
        load_cifar10_binary(tmp_path, "test")


def test_dataset_checks_labels():
    with pytest.raises(LabelRangeError):
        Dataset(np.zeros((2, 3)), np.array([0, 2]), classes=2)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 3)), np.array([0]), classes=2)


def test_subset_is_seeded():
    data = synthetic_task("parity", dims=6, samples=None, seed=0)
    a = subset(data, 10, seed=3)
    b = subset(data, 10, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    assert len(a) == 10
    assert subset(data, 1000, seed=3) is data


def test_resolve_data_dir_precedence(monkeypatch, tmp_path):
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path / "env"))
    assert resolve_data_dir() == tmp_path / "env"
    assert resolve_data_dir(config_value=str(tmp_path / "cfg")) == tmp_path / "cfg"
    assert resolve_data_dir(str(tmp_path / "flag"), str(tmp_path / "cfg")) == tmp_path / "flag"
    monkeypatch.delenv(DATA_DIR_ENV)
    assert resolve_data_dir() is None


class TestSynthetic:
    def test_enumerate_inputs_counts_msb_first(self):
        bits = enumerate_inputs(3)
        assert bits.shape == (8, 3)
        assert bits[1].tolist() == [0, 0, 1]
        assert bits[6].tolist() == [1, 1, 0]

    def test_parity_labels(self):
        data = synthetic_task("parity", dims=4, samples=None, seed=0)
        assert len(data) == 16
        assert data.labels.tolist() == [bin(i).count("1") % 2 for i in range(16)]

    def test_teacher_circuit_is_reproducible(self):
        a = synthetic_task("random-teacher-circuit", dims=10, samples=200, seed=4)
        b = synthetic_task("random-teacher-circuit", dims=10, samples=200, seed=4)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        teacher = a.metadata["teacher"]
        np.testing.assert_array_equal(teacher.predict(a.features), a.labels)

    def test_teacher_uses_input_dependent_gates(self):
        teacher = random_teacher_circuit(8, 2, seed=1)
        for gates in teacher.gates:
            assert not np.any(np.isin(gates, [0, 15]))

    def test_two_moons_are_bits(self):
        data = synthetic_task("two-moons-binarized", dims=16, samples=100, seed=0)
        assert data.features.shape == (100, 16)
        assert set(np.unique(data.features)) <= {0, 1}

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            synthetic_task("spirals", dims=4, samples=10, seed=0)


def test_load_dataset_synthetic_splits_share_the_teacher():
    spec = DatasetSpec(name="teacher-circuit", dims=10, samples=300, test_samples=100, seed=2)
    train, test = load_dataset(spec)
    assert (len(train), len(test)) == (300, 100)
    teacher = train.metadata["teacher"]
    np.testing.assert_array_equal(teacher.predict(test.features), test.labels)


def test_load_dataset_mnist_binary(tmp_path):
    _write_mnist(tmp_path, n_train=8, n_test=5)
    train, test = load_dataset(DatasetSpec(name="mnist-binary", subset=5, test_subset=None), tmp_path)
    assert train.features.shape == (5, 784)
    assert test.features.shape == (5, 784)
    assert set(np.unique(train.features)) <= {0, 1}


def test_load_dataset_needs_a_directory(monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    with pytest.raises(DataError):
        load_dataset(DatasetSpec(name="mnist"))
    with pytest.raises(ConfigError):
        load_dataset(DatasetSpec(name="imagenet"))


if __name__ == "__main__":
    print("📂 Testing data loading...")
    pytest.main([__file__, "-v"])

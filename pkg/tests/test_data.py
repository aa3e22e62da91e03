import os
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import Perceptron

from manifold_reg import data
from manifold_reg.data import Dataset
from manifold_reg.exceptions import ContractError, FormatError


def _records(n, rng, label_bytes=1, label_max=10):
    labels = rng.integers(0, label_max, size=(n, label_bytes), dtype=np.uint8)
    pixels = rng.integers(0, 256, size=(n, data.PIXELS), dtype=np.uint8)
    return labels, pixels, np.concatenate([labels, pixels], axis=1).tobytes()


def test_cifar10_two_records_round_trip(tmp_path, rng):
    labels, pixels, blob = _records(2, rng)
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(blob)
    ds = data.parse_cifar10(path)
    assert len(ds) == 2 and ds.sample_shape == (3, 32, 32)
    assert np.array_equal(ds.labels, labels[:, 0])
    assert np.array_equal(ds.raw.reshape(2, -1), pixels)
    # red plane first, row-major
    assert ds.raw[0, 0, 0, 1] == pixels[0, 1] and ds.raw[0, 1, 0, 0] == pixels[0, 1024]
    assert np.allclose(ds.images, pixels.reshape(2, 3, 32, 32) / 255.0)
    assert data.cifar10_bytes(ds) == blob


def test_cifar100_round_trip_both_label_modes(tmp_path, rng):
    coarse = rng.integers(0, 20, size=(3, 1), dtype=np.uint8)
    fine = rng.integers(0, 100, size=(3, 1), dtype=np.uint8)
    pixels = rng.integers(0, 256, size=(3, data.PIXELS), dtype=np.uint8)
    blob = np.concatenate([coarse, fine, pixels], axis=1).tobytes()
    path = tmp_path / "train.bin"
    path.write_bytes(blob)
    f = data.parse_cifar100(path, "fine")
    c = data.parse_cifar100(path, "coarse")
    assert f.num_classes == 100 and np.array_equal(f.labels, fine[:, 0])
    assert c.num_classes == 20 and np.array_equal(c.labels, coarse[:, 0])
    assert data.cifar100_bytes(f, coarse[:, 0]) == blob


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_cifar_round_trip_property(n, seed):
    rng = np.random.default_rng(seed)
    labels, pixels, blob = _records(n, rng)
    coarse = rng.integers(0, 20, size=n, dtype=np.uint8)
    fine = rng.integers(0, 100, size=n, dtype=np.uint8)
    blob100 = np.c_[coarse, fine, pixels].tobytes()
    with tempfile.TemporaryDirectory() as tmp:
        p10, p100 = Path(tmp) / "a.bin", Path(tmp) / "b.bin"
        p10.write_bytes(blob)
        p100.write_bytes(blob100)
        assert data.cifar10_bytes(data.parse_cifar10(p10)) == blob
        assert data.cifar100_bytes(data.parse_cifar100(p100, "fine"), coarse) == blob100


@pytest.mark.parametrize("size", [0, 1537, 3073 + 100])
def test_truncated_files_rejected(tmp_path, size):
    path = tmp_path / "bad.bin"
    path.write_bytes(bytes(size))
    with pytest.raises(FormatError):
        data.parse_cifar10(path)


def test_cifar100_half_record_rejected(tmp_path, rng):
    path = tmp_path / "train.bin"
    path.write_bytes(bytes(3074 + 3074 // 2))
    with pytest.raises(FormatError):
        data.parse_cifar100(path)


def test_bad_label_byte_rejected(tmp_path, rng):
    _, _, blob = _records(1, rng)
    path = tmp_path / "b.bin"
    path.write_bytes(bytes([42]) + blob[1:])
    with pytest.raises(FormatError):
        data.parse_cifar10(path)


def test_verify_good_and_truncated(tmp_path, rng):
    _, _, blob = _records(3, rng)
    (tmp_path / "data_batch_1.bin").write_bytes(blob)
    data.write_checksums(tmp_path)
    assert data.verify_cifar(tmp_path) == []
    (tmp_path / "data_batch_1.bin").write_bytes(blob[:-10])
    names = [name for name, _ in data.verify_cifar(tmp_path)]
    assert "data_batch_1.bin" in names


def test_verify_strict_demands_canonical_set(tmp_path, rng):
    (tmp_path / "data_batch_1.bin").write_bytes(_records(1, rng)[2])
    problems = dict(data.verify_cifar(tmp_path, strict=True))
    assert "test_batch.bin" in problems and "data_batch_1.bin" in problems


def test_synthetic_separable_in_intrinsic_space():
    ds = data.synthetic_manifold(400, 2, 10, classes=2, noise=0.0, seed=3)
    # labels are an argmax of linear scores, so a perceptron on the coordinates converges
    probe = Perceptron(max_iter=10_000, tol=None, random_state=0).fit(ds.intrinsic, ds.labels)
    assert probe.score(ds.intrinsic, ds.labels) == 1.0


def test_synthetic_deterministic_and_disjoint():
    a = data.synthetic_manifold(50, 3, 12, seed=1)
    b = data.synthetic_manifold(50, 3, 12, seed=1)
    assert np.array_equal(a.raw, b.raw) and np.array_equal(a.labels, b.labels)
    tr, te = data.synthetic_split(50, 50, intrinsic_dim=3, ambient_dim=12, seed=1)
    assert not np.array_equal(tr.raw, te.raw)


def test_synthetic_linear_residual_energy_bounded_by_noise():
    sigma, d, D = 0.05, 4, 64
    ds = data.synthetic_manifold(4000, d, D, noise=sigma, seed=0, embedding="linear")
    x = ds.raw - ds.raw.mean(0)
    eig = np.sort(np.linalg.eigvalsh(x.T @ x / len(x)))[::-1]
    assert eig[d:].sum() <= 1.2 * sigma**2 * (D - d)
    assert eig[d - 1] > 10 * sigma**2


def test_pixel_range_exact():
    tr, te = data.synthetic_split(100, 50, intrinsic_dim=2, ambient_dim=8, noise=0.1)
    tr, te = data.to_pixel_range(tr, te)
    for ds in (tr, te):
        assert ds.raw.min() >= 0.0 and ds.raw.max() <= 1.0
    assert tr.raw.min() == 0.0 and tr.raw.max() == 1.0


def test_synth_serialize_parse_round_trip(tmp_path):
    tr, _ = data.to_pixel_range(*data.synthetic_split(20, 5, intrinsic_dim=4, ambient_dim=data.PIXELS))
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(data.cifar10_bytes(tr))
    back = data.parse_cifar10(path)
    assert np.array_equal(back.labels, tr.labels)
    assert np.abs(back.images.reshape(20, -1) - tr.raw).max() <= 0.5 / 255 + 1e-12
    assert data.cifar10_bytes(back) == path.read_bytes()


def test_minibatches_cover_once():
    ds = Dataset(np.arange(10.0)[:, None], np.zeros(10), 1)
    batches = list(data.minibatches(ds, 3, seed=0, epoch=0))
    assert [len(b) for b in batches] == [3, 3, 3, 1]
    assert sorted(np.concatenate([b.index for b in batches])) == list(range(10))
    for b in batches:
        assert np.array_equal(b.x[:, 0], b.index.astype(float))


def test_minibatch_order_seeded():
    ds = Dataset(np.zeros((200, 1)), np.zeros(200), 1)
    order = lambda s, e: np.concatenate([b.index for b in data.minibatches(ds, 7, s, e)])  # noqa: E731
    assert np.array_equal(order(1, 2), order(1, 2))
    assert not np.array_equal(order(1, 2), order(1, 3))


def test_minibatch_size_contract():
    ds = Dataset(np.zeros((4, 1)), np.zeros(4), 1)
    with pytest.raises(ContractError):
        list(data.minibatches(ds, 0))
    with pytest.raises(ContractError):
        list(data.minibatches(ds, 5))


def test_standardized_uses_reference_stats(rng):
    tr = Dataset(rng.normal(3.0, 2.0, size=(500, 4)), np.zeros(500), 1)
    te = Dataset(rng.normal(3.0, 2.0, size=(100, 4)), np.zeros(100), 1)
    s = tr.standardized()
    assert np.allclose(s.images.mean(0), 0) and np.allclose(s.images.std(0), 1)
    assert np.array_equal(te.standardized(tr).mean, s.mean)


def test_labels_validated():
    with pytest.raises(ContractError):
        Dataset(np.zeros((2, 1)), [0, 3], 2)


@pytest.mark.skipif(not os.environ.get(data.DATA_ROOT_ENV), reason=f"${data.DATA_ROOT_ENV} not set")
def test_real_cifar10_shapes():
    tr, te = data.load_cifar10(split="train"), data.load_cifar10(split="test")
    assert len(tr) == 50_000 and len(te) == 10_000
    assert len(np.unique(tr.labels)) == 10

"""CIFAR binary parsing, synthetic manifold data and seeded mini-batching.

CIFAR-10 binary records are ``1 label byte + 3072 pixel bytes``; CIFAR-100
records are ``coarse label byte + fine label byte + 3072 pixel bytes``.  The
pixel bytes hold the red, green and blue 32x32 planes in row-major order.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .exceptions import ContractError, FormatError
from .seeding import substream

PIXELS = 3 * 32 * 32
IMAGE_SHAPE = (3, 32, 32)
DATA_ROOT_ENV = "MANIFOLD_REG_DATA"

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)  # fmt: skip

CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)
CIFAR10_DIRNAME = "cifar-10-batches-bin"
CIFAR100_DIRNAME = "cifar-100-binary"
CANONICAL_SIZES = {
    "cifar10": {name: 10_000 * (1 + PIXELS) for name in CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES},
    "cifar100": {"train.bin": 50_000 * (2 + PIXELS), "test.bin": 10_000 * (2 + PIXELS)},
}


@dataclass
class Dataset:
    """Labelled samples.  ``raw`` may be uint8 pixels (scaled by 1/255 on access) or floats."""

    raw: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    class_names: tuple[str, ...] = ()
    intrinsic: np.ndarray | None = None
    mean: np.ndarray | None = field(default=None, repr=False)
    std: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.raw) != len(self.labels):
            raise ContractError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.raw.shape[1:])

    def batch(self, index) -> np.ndarray:
        """float64 samples for ``index``, scaled (and standardized when enabled)."""
        x = self.raw[index]
        x = x / 255.0 if x.dtype == np.uint8 else x.astype(np.float64)
        if self.mean is not None:
            x = (x - self.mean) / self.std
        return x

    @property
    def images(self) -> np.ndarray:
        return self.batch(slice(None))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        intrinsic = None if self.intrinsic is None else self.intrinsic[index]
        return replace(self, raw=self.raw[index], labels=self.labels[index], intrinsic=intrinsic)

    def head(self, n: int | None, seed: int | None = None) -> "Dataset":
        """First ``n`` samples, or a seeded random ``n``-subset when ``seed`` is given."""
        if n is None or n >= len(self):
            return self
        if seed is None:
            return self.subset(np.arange(n))
        idx = np.sort(substream(seed, "subset").permutation(len(self))[:n])
        return self.subset(idx)

    def standardized(self, reference: "Dataset | None" = None) -> "Dataset":
        """Per-channel (or per-feature) standardization using ``reference`` statistics."""
        x = (reference or self).replace_stats(None, None).images
        axes = (0, 2, 3) if x.ndim == 4 else (0,)
        mean = x.mean(axis=axes, keepdims=True)[0]
        std = x.std(axis=axes, keepdims=True)[0]
        std = np.where(std > 0, std, 1.0)
        return self.replace_stats(mean, std)

    def replace_stats(self, mean, std) -> "Dataset":
        return replace(self, mean=mean, std=std)


@dataclass
class MiniBatch:
    x: np.ndarray
    y: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


# -- CIFAR binary --------------------------------------------------------------


def _read_records(path, label_bytes: int) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    buf = np.fromfile(path, dtype=np.uint8)
    record = label_bytes + PIXELS
    if buf.size == 0 or buf.size % record:
        raise FormatError(f"{path}: size {buf.size} is not a positive multiple of the {record}-byte record")
    rows = buf.reshape(-1, record)
    return rows[:, :label_bytes], rows[:, label_bytes:].reshape(-1, *IMAGE_SHAPE)


def parse_cifar10(path, split: str = "train") -> Dataset:
    labels, pixels = _read_records(path, 1)
    labels = labels[:, 0]
    if labels.max() >= 10:
        raise FormatError(f"{path}: label byte {int(labels.max())} outside [0, 10)")
    return Dataset(pixels, labels, 10, split, CIFAR10_CLASSES)


def parse_cifar100(path, label_mode: str = "fine", split: str = "train") -> Dataset:
    if label_mode not in ("fine", "coarse"):
        raise ContractError("label_mode must be 'fine' or 'coarse'")
    labels, pixels = _read_records(path, 2)
    coarse, fine = labels[:, 0], labels[:, 1]
    if coarse.max() >= 20 or fine.max() >= 100:
        raise FormatError(f"{path}: label byte outside the CIFAR-100 range")
    if label_mode == "fine":
        return Dataset(pixels, fine, 100, split)
    return Dataset(pixels, coarse, 20, split)


def _quantize(ds: Dataset) -> np.ndarray:
    if ds.raw.dtype == np.uint8:
        return ds.raw.reshape(len(ds), -1)
    x = ds.raw.reshape(len(ds), -1)
    if x.shape[1] != PIXELS:
        raise ContractError(f"CIFAR records hold {PIXELS} values per sample, got {x.shape[1]}")
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def cifar10_bytes(ds: Dataset) -> bytes:
    """Serialize to the CIFAR-10 record layout (floats are taken to be in [0, 1])."""
    pixels = _quantize(ds)
    if ds.labels.max(initial=0) > 255:
        raise ContractError("labels must fit in one byte")
    return np.concatenate([ds.labels.astype(np.uint8)[:, None], pixels], axis=1).tobytes()


def cifar100_bytes(ds: Dataset, coarse_labels) -> bytes:
    pixels = _quantize(ds)
    coarse = np.asarray(coarse_labels, dtype=np.uint8)[:, None]
    return np.concatenate([coarse, ds.labels.astype(np.uint8)[:, None], pixels], axis=1).tobytes()


def resolve_root(root=None, dirname: str = CIFAR10_DIRNAME) -> Path:
    """Directory holding the binary files: ``root`` (or $MANIFOLD_REG_DATA), descending into the canonical subdir if present."""
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise FileNotFoundError(f"no data root given and ${DATA_ROOT_ENV} is not set")
    root = Path(root)
    if (root / dirname).is_dir():
        root = root / dirname
    if not root.is_dir():
        raise FileNotFoundError(f"data root {root} does not exist")
    return root


def load_cifar10(root=None, split: str = "train") -> Dataset:
    base = resolve_root(root, CIFAR10_DIRNAME)
    names = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
    parts = [parse_cifar10(base / n, split) for n in names if (base / n).exists()]
    if not parts:
        raise FileNotFoundError(f"no CIFAR-10 {split} files in {base}")
    return Dataset(
        np.concatenate([p.raw for p in parts]), np.concatenate([p.labels for p in parts]),
        10, split, CIFAR10_CLASSES,
    )


def load_cifar100(root=None, split: str = "train", label_mode: str = "fine") -> Dataset:
    base = resolve_root(root, CIFAR100_DIRNAME)
    path = base / ("train.bin" if split == "train" else "test.bin")
    if not path.exists():
        raise FileNotFoundError(f"missing {path}")
    return parse_cifar100(path, label_mode, split)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_checksums(directory) -> Path:
    directory = Path(directory)
    lines = [f"{_sha256(p)}  {p.name}" for p in sorted(directory.glob("*.bin"))]
    out = directory / "SHA256SUMS"
    out.write_text("\n".join(lines) + "\n")
    return out


def verify_cifar(root, kind: str = "cifar10", strict: bool = False) -> list[tuple[str, str]]:
    """Check record structure, label ranges and (if present) SHA256SUMS.

    Returns a list of ``(filename, problem)``; empty means the files look good.
    ``strict`` additionally demands the full canonical file set and sizes.
    """
    dirname = CIFAR10_DIRNAME if kind == "cifar10" else CIFAR100_DIRNAME
    try:
        base = resolve_root(root, dirname)
    except FileNotFoundError as exc:
        return [(str(root), str(exc))]
    expected = CANONICAL_SIZES[kind]
    problems = []
    present = [n for n in expected if (base / n).exists()]
    if not present:
        problems.append((str(base), f"no {kind} binary files found"))
    for name in expected:
        path = base / name
        if not path.exists():
            if strict:
                problems.append((name, "missing"))
            continue
        size = path.stat().st_size
        if strict and size != expected[name]:
            problems.append((name, f"size {size} != canonical {expected[name]}"))
            continue
        try:
            parse_cifar10(path) if kind == "cifar10" else parse_cifar100(path)
        except FormatError as exc:
            problems.append((name, str(exc)))
    sums = base / "SHA256SUMS"
    if sums.exists():
        for line in sums.read_text().splitlines():
            if not line.strip():
                continue
            digest, name = line.split(None, 1)
            name = name.strip()
            target = base / name
            if not target.exists():
                problems.append((name, "listed in SHA256SUMS but missing"))
            elif _sha256(target) != digest:
                problems.append((name, "checksum mismatch"))
    return problems


# -- synthetic manifold data -------------------------------------------------------


def _quadratic_features(u: np.ndarray) -> np.ndarray:
    d = u.shape[1]
    i, j = np.triu_indices(d)
    return u[:, i] * u[:, j]


def synthetic_manifold(n: int, intrinsic_dim: int, ambient_dim: int, classes: int = 2,
                       noise: float = 0.0, seed: int = 0, embedding: str = "polynomial",
                       curvature: float = 2.0, split: str = "train", offset: int = 0) -> Dataset:
    """Samples on a smooth ``intrinsic_dim``-dimensional surface in ``ambient_dim`` space.

    Intrinsic coordinates are uniform on ``[-1, 1]^d``.  The ``polynomial``
    embedding maps them through random linear and quadratic terms (the quadratic
    part scaled by ``curvature``); ``linear`` uses the linear part only.  The
    class is the argmax of random linear scores of the intrinsic coordinates,
    so classes are linearly separable in intrinsic space.  The geometry depends
    only on ``seed``; ``offset`` selects a disjoint block of samples so train and
    test sets can be drawn from the same manifold.
    """
    if not 0 < intrinsic_dim < ambient_dim:
        raise ContractError("need 0 < intrinsic_dim < ambient_dim")
    if classes < 2:
        raise ContractError("need at least two classes")
    if embedding not in ("polynomial", "linear"):
        raise ContractError("embedding must be 'polynomial' or 'linear'")
    geo = substream(seed, "synth", 0)
    lin = geo.standard_normal((intrinsic_dim, ambient_dim)) / np.sqrt(intrinsic_dim)
    n_quad = intrinsic_dim * (intrinsic_dim + 1) // 2
    quad = geo.standard_normal((n_quad, ambient_dim)) / np.sqrt(n_quad)
    scores = geo.standard_normal((intrinsic_dim, classes))

    rng = substream(seed, "synth", 1, offset)
    u = rng.uniform(-1.0, 1.0, size=(n, intrinsic_dim))
    x = u @ lin
    if embedding == "polynomial":
        x = x + curvature * (_quadratic_features(u) @ quad)
    if noise:
        x = x + noise * rng.standard_normal(x.shape)
    labels = np.argmax(u @ scores, axis=1)
    names = tuple(str(c) for c in range(classes))
    return Dataset(x, labels, classes, split, names, intrinsic=u)


def synthetic_split(n_train: int, n_test: int, **kw) -> tuple[Dataset, Dataset]:
    """Train and test sets drawn independently from one synthetic manifold."""
    train = synthetic_manifold(n_train, split="train", offset=0, **kw)
    test = synthetic_manifold(n_test, split="test", offset=1, **kw)
    return train, test


def to_pixel_range(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Min-max map float samples into [0, 1] using ``train`` statistics (clipped)."""
    lo, hi = train.raw.min(), train.raw.max()
    scale = (hi - lo) or 1.0
    return [replace(d, raw=np.clip((d.raw - lo) / scale, 0.0, 1.0)) for d in (train, *others)]


# -- mini-batches -------------------------------------------------------------------


def minibatches(ds: Dataset, batch_size: int, seed: int = 0, epoch: int = 0) -> Iterator[MiniBatch]:
    """One pass over ``ds`` in an order seeded by ``(seed, epoch)``; the last batch may be short."""
    n = len(ds)
    if not 1 <= batch_size <= n:
        raise ContractError(f"batch size must be in [1, {n}], got {batch_size}")
    order = substream(seed, "shuffle", epoch).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield MiniBatch(ds.batch(idx), ds.labels[idx], idx)

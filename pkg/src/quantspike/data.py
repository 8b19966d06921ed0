"""Dataset loading and generation.

Supported sources:

* ``toy2d`` — a generated two-class 2-D point cloud for smoke tests,
* ``idx-images`` — image/label pairs in the big-endian IDX container
  (the MNIST family format), read from a directory,
* ``csv-images`` — one sample per row, label first, pixel values 0-255.

Images normalize to float32 in [0, 1]; labels are int64 class indices.
There is also a synthetic 10-class image generator used by the desk
experiments — structured enough that a small CNN separates it, noisy
enough that accuracy is not saturated at tiny time budgets.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError

_IDX_MAGIC_IMAGES = 0x00000803
_IDX_MAGIC_LABELS = 0x00000801


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def input_shape(self) -> tuple:
        return tuple(self.train_x.shape[1:])

    @property
    def num_classes(self) -> int:
        return int(max(self.train_y.max(), self.test_y.max())) + 1

    def subsample(self, n_train: int | None, n_test: int | None) -> "Dataset":
        return Dataset(
            train_x=self.train_x[:n_train] if n_train else self.train_x,
            train_y=self.train_y[:n_train] if n_train else self.train_y,
            test_x=self.test_x[:n_test] if n_test else self.test_x,
            test_y=self.test_y[:n_test] if n_test else self.test_y,
        )


def make_toy2d(n: int = 200, seed: int = 0, test_fraction: float = 0.25) -> Dataset:
    """Two linearly separable Gaussian blobs in the plane."""
    rng = np.random.default_rng(seed)
    half = n // 2
    a = rng.normal(loc=(-1.5, -1.0), scale=0.5, size=(half, 2))
    b = rng.normal(loc=(1.5, 1.0), scale=0.5, size=(n - half, 2))
    x = np.concatenate([a, b]).astype(np.float32)
    y = np.concatenate([np.zeros(half, np.int64), np.ones(n - half, np.int64)])
    perm = rng.permutation(n)
    x, y = x[perm], y[perm]
    n_test = max(1, int(n * test_fraction))
    return Dataset(
        train_x=x[n_test:], train_y=y[n_test:], test_x=x[:n_test], test_y=y[:n_test]
    )


def read_idx(path) -> np.ndarray:
    """Read one IDX container: big-endian header, raw ubyte payload."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParseError(f"{path}: file ends at byte {len(raw)}, header needs 4")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == _IDX_MAGIC_IMAGES:
        ndim = 3
    elif magic == _IDX_MAGIC_LABELS:
        ndim = 1
    else:
        raise ParseError(f"{path}: bad magic number 0x{magic:08x} at byte 0")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise ParseError(
            f"{path}: file ends at byte {len(raw)}, header needs {header_len}"
        )
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = header_len + int(np.prod(dims))
    if len(raw) != expected:
        raise ParseError(
            f"{path}: file has {len(raw)} bytes, expected {expected} for dims {dims}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array as an IDX file (1-D labels or 3-D images)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim == 3:
        magic = _IDX_MAGIC_IMAGES
    elif array.ndim == 1:
        magic = _IDX_MAGIC_LABELS
    else:
        raise ConfigurationError(f"IDX payload must be 1-D or 3-D, got {array.ndim}-D")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def _load_idx_split(images_path, labels_path):
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise ParseError(f"{images_path}: expected an image file, got {images.ndim}-D payload")
    if labels.ndim != 1:
        raise ParseError(f"{labels_path}: expected a label file, got {labels.ndim}-D payload")
    if len(images) != len(labels):
        raise ParseError(
            f"{images_path}: {len(images)} images but {len(labels)} labels"
        )
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return x, labels.astype(np.int64)


def load_idx_dataset(root) -> Dataset:
    """Load train/test IDX pairs from a directory.

    Expects train-images.idx, train-labels.idx, test-images.idx,
    test-labels.idx under ``root``.
    """
    root = Path(root)
    train_x, train_y = _load_idx_split(root / "train-images.idx", root / "train-labels.idx")
    test_x, test_y = _load_idx_split(root / "test-images.idx", root / "test-labels.idx")
    return Dataset(train_x=train_x, train_y=train_y, test_x=test_x, test_y=test_y)


def _read_csv_split(path):
    labels, rows = [], []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ParseError(f"{path}: line {lineno}: need label plus pixels, got {width} values")
            elif len(row) != width:
                raise ParseError(
                    f"{path}: line {lineno}: expected {width} values, got {len(row)}"
                )
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as e:
                raise ParseError(f"{path}: line {lineno}: {e}") from None
    if not rows:
        raise ParseError(f"{path}: no samples")
    x = np.asarray(rows, dtype=np.float32) / 255.0
    y = np.asarray(labels, dtype=np.int64)
    side = int(round(np.sqrt(x.shape[1])))
    if side * side == x.shape[1]:
        x = x.reshape(-1, 1, side, side)
    return x, y


def load_csv_dataset(root) -> Dataset:
    """Load train.csv/test.csv (label-first rows, pixels 0-255).

    Square pixel counts reshape to single-channel images; anything else
    stays a flat feature vector.
    """
    root = Path(root)
    train_x, train_y = _read_csv_split(root / "train.csv")
    test_x, test_y = _read_csv_split(root / "test.csv")
    if train_x.shape[1:] != test_x.shape[1:]:
        raise ParseError(
            f"{root}: train samples {train_x.shape[1:]} but test samples {test_x.shape[1:]}"
        )
    return Dataset(train_x=train_x, train_y=train_y, test_x=test_x, test_y=test_y)


def load_dataset(name: str, path=None, n_train: int | None = None, n_test: int | None = None) -> Dataset:
    """Dispatch on dataset kind: toy2d | idx-images | csv-images."""
    if name == "toy2d":
        ds = make_toy2d()
    elif name == "idx-images":
        if path is None:
            raise ConfigurationError("idx-images needs a data directory path")
        ds = load_idx_dataset(path)
    elif name == "csv-images":
        if path is None:
            raise ConfigurationError("csv-images needs a data directory path")
        ds = load_csv_dataset(path)
    else:
        raise ConfigurationError(
            f"unknown dataset {name!r}; expected toy2d, idx-images or csv-images"
        )
    return ds.subsample(n_train, n_test)


def make_synthetic_images(
    n_train: int = 8000,
    n_test: int = 2000,
    num_classes: int = 10,
    size: int = 28,
    seed: int = 1234,
    noise_std: float = 60.0,
    max_shift: int = 6,
) -> Dataset:
    """Generate an image problem from gain-paired textured prototypes.

    Classes come in confusable pairs: both members of a pair share one
    random texture (a low-resolution field blown up to full size) and
    differ only in overall gain (full strength vs attenuated). Telling a
    pair apart therefore rests on reading absolute activation magnitude,
    not just spatial pattern; samples are additionally shifted, lightly
    brightness-jittered and corrupted with pixel noise before uint8
    quantization. A small CNN learns the task in a few epochs, yet the
    magnitude-coded labels keep accuracy below the ceiling and make
    predictions genuinely sensitive to activation-level perturbations.
    """
    if size % 4:
        raise ConfigurationError(f"size must be a multiple of 4, got {size}")
    rng = np.random.default_rng(seed)
    coarse = size // 4
    prototypes = rng.uniform(0.0, 255.0, size=(num_classes, coarse, coarse))
    for c in range(1, num_classes, 2):
        prototypes[c] = 0.8 * prototypes[c - 1]
    prototypes = prototypes.repeat(4, axis=1).repeat(4, axis=2)

    def _sample(n, labels):
        imgs = prototypes[labels]
        shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
        out = np.empty((n, size, size), np.float32)
        for i in range(n):
            out[i] = np.roll(imgs[i], tuple(shifts[i]), axis=(0, 1))
        out *= rng.uniform(0.9, 1.0, size=(n, 1, 1)).astype(np.float32)
        out += rng.normal(0.0, noise_std, size=out.shape).astype(np.float32)
        return np.clip(out, 0, 255).astype(np.uint8)

    train_y = rng.integers(0, num_classes, size=n_train)
    test_y = rng.integers(0, num_classes, size=n_test)
    train_imgs = _sample(n_train, train_y)
    test_imgs = _sample(n_test, test_y)
    return Dataset(
        train_x=(train_imgs.astype(np.float32) / 255.0)[:, None],
        train_y=train_y.astype(np.int64),
        test_x=(test_imgs.astype(np.float32) / 255.0)[:, None],
        test_y=test_y.astype(np.int64),
    )


def save_as_idx(ds: Dataset, root):
    """Write a Dataset to a directory in IDX form (uint8 images)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for split, x, y in [("train", ds.train_x, ds.train_y), ("test", ds.test_x, ds.test_y)]:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ConfigurationError(
                f"IDX export needs single-channel image data, got shape {x.shape}"
            )
        imgs = np.clip(np.round(x[:, 0] * 255.0), 0, 255).astype(np.uint8)
        write_idx(root / f"{split}-images.idx", imgs)
        write_idx(root / f"{split}-labels.idx", y.astype(np.uint8))

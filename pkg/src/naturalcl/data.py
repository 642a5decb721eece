"""Dataset loading (IDX, feature CSV), synthetic blobs and pixel permutations."""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def class_index(self) -> dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.labels == c) for c in np.unique(self.labels).tolist()}

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.name, self.image_shape)


def _read_idx(path, magic: int, ndims: int):
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise ValueError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise ValueError(f"{path}: truncated payload ({len(raw) - header} of {size} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path, name: str = "") -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float32) / np.float32(255.0)
    return Dataset(features, labels.astype(np.int64), name or Path(images_path).name, (rows, cols))


def write_idx(dataset: Dataset, images_path, labels_path):
    """Inverse of :func:`load_idx` for datasets whose features are k/255."""
    if dataset.image_shape is None:
        raise ValueError("dataset has no image shape")
    rows, cols = dataset.image_shape
    pixels = np.rint(dataset.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def data_dir(explicit=None) -> Path | None:
    """Explicit directory, else ``$NATURALCL_DATA_DIR``, else None."""
    d = explicit or os.environ.get("NATURALCL_DATA_DIR")
    return Path(d) if d else None


def find_mnist(directory=None) -> Path | None:
    """Directory holding the four MNIST IDX files, or None if absent."""
    d = data_dir(directory)
    if d is None:
        return None
    for cand in (d, d / "mnist", d / "MNIST" / "raw"):
        if all((cand / f).is_file() for pair in MNIST_FILES.values() for f in pair):
            return cand
    return None


def load_mnist(directory=None) -> tuple[Dataset, Dataset]:
    d = find_mnist(directory)
    if d is None:
        raise FileNotFoundError(
            "MNIST IDX files not found; pass a data directory or set NATURALCL_DATA_DIR"
        )
    train = load_idx(*(d / f for f in MNIST_FILES["train"]), name="mnist-train")
    test = load_idx(*(d / f for f in MNIST_FILES["test"]), name="mnist-test")
    return train, test


def load_feature_csv(path, name: str = "") -> Dataset:
    """Feature table: one row per sample, label first, then the feature values."""
    labels, rows = [], []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                if lineno == 1:
                    continue  # header line
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows with widths {sorted(widths)}")
    return Dataset(
        np.asarray(rows, dtype=np.float32), np.asarray(labels, dtype=np.int64), name or Path(path).stem
    )


def write_feature_csv(dataset: Dataset, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for y, x in zip(dataset.labels.tolist(), dataset.features.tolist()):
            writer.writerow([y] + [repr(v) for v in x])


def _class_means(n_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    if n_classes <= dim:
        directions = np.eye(dim)[:n_classes]
    else:
        directions = rng.standard_normal((n_classes, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * directions


def synth_gaussian(n_classes: int, dim: int, per_class: int, separation: float, seed: int,
                   name: str = "synthetic") -> Dataset:
    """Isotropic unit-variance blobs centred at ``separation * u_c``, rescaled into [0, 1]."""
    if n_classes < 1 or dim < 1 or per_class < 1:
        raise ValueError("n_classes, dim and per_class must all be >= 1")
    if not separation > 0:
        raise ValueError(f"separation must be > 0, got {separation}")
    rng = np.random.default_rng(seed)
    means = _class_means(n_classes, dim, separation, rng)
    labels = np.repeat(np.arange(n_classes), per_class)
    x = means[labels] + rng.standard_normal((labels.size, dim))
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)
    return Dataset(x.astype(np.float32), labels.astype(np.int64), name)


def synth_train_test(n_classes: int, dim: int, n_train: int, n_test: int, separation: float,
                     seed: int) -> tuple[Dataset, Dataset]:
    """Train/test blobs from a single draw so both share one rescaling."""
    full = synth_gaussian(n_classes, dim, n_train + n_test, separation, seed)
    per = n_train + n_test
    offs = np.arange(n_classes)[:, None] * per
    train_rows = (offs + np.arange(n_train)).ravel()
    test_rows = (offs + np.arange(n_train, per)).ravel()
    train, test = full.subset(train_rows), full.subset(test_rows)
    return (Dataset(train.features, train.labels, "synthetic-train"),
            Dataset(test.features, test.labels, "synthetic-test"))


def pad_images(dataset: Dataset, size: int = 32) -> Dataset:
    """Zero-pad square images symmetrically to ``size`` x ``size``."""
    if dataset.image_shape is None:
        raise ValueError("dataset has no image shape")
    rows, cols = dataset.image_shape
    if rows > size or cols > size:
        raise ValueError(f"cannot pad {rows}x{cols} images to {size}x{size}")
    top, left = (size - rows) // 2, (size - cols) // 2
    imgs = dataset.features.reshape(-1, rows, cols)
    out = np.zeros((len(dataset), size, size), dtype=dataset.features.dtype)
    out[:, top:top + rows, left:left + cols] = imgs
    return Dataset(out.reshape(len(dataset), size * size), dataset.labels, dataset.name, (size, size))


@dataclass(frozen=True)
class PixelPermutation:
    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm)
        if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(p.size)):
            raise ValueError("perm is not a permutation of 0..d-1")

    def __len__(self):
        return self.perm.size

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.perm, np.arange(self.perm.size)))

    def inverse(self) -> "PixelPermutation":
        return PixelPermutation(np.argsort(self.perm))


def apply_permutation(dataset: Dataset, perm: PixelPermutation) -> Dataset:
    if len(perm) != dataset.dim:
        raise ValueError(f"permutation length {len(perm)} != feature dim {dataset.dim}")
    return Dataset(dataset.features[:, perm.perm], dataset.labels, dataset.name, dataset.image_shape)

"""Dataset readers (MNIST IDX, CIFAR-10 binary), domain shifts and batching."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_RECORDS = 10000
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_FILE_BYTES = CIFAR_RECORDS * CIFAR_RECORD_BYTES

# per-channel statistics of the clean training splits
NORMALIZATION = {
    "mnist": ((0.1307,), (0.3081,)),
    "cifar10": ((0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616)),
}

SHIFTS = ("none", "invert", "rotate20", "noise")
NOISE_RANGE = 0.05
ROTATION_DEGREES = 20.0


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W], values in [0, 1]
    labels: np.ndarray  # int64 class ids
    split: str = "train"
    name: str = ""

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return replace(self, images=self.images[:n], labels=self.labels[:n])


def default_data_dir() -> Path:
    return Path(os.environ.get("PCADAPT_DATA_DIR", "data"))


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------

def _read_maybe_gz(directory: Path, name: str) -> bytes:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            if candidate.suffix == ".gz":
                with gzip.open(candidate, "rb") as fh:
                    return fh.read()
            return candidate.read_bytes()
    raise DataFormatError("missing_file", f"{name}[.gz] not found in {directory}")


def parse_idx_images(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode an IDX3 image file to a uint8 array of shape [N, rows, cols]."""
    if len(buf) < 16:
        raise DataFormatError("bad_header", f"{source}: {len(buf)} bytes is shorter than the IDX3 header")
    magic, n, rows, cols = struct.unpack(">iiii", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError("bad_magic", f"{source}: magic {magic}, expected {IDX_IMAGES_MAGIC}")
    expected = n * rows * cols
    payload = len(buf) - 16
    if payload < expected:
        raise DataFormatError("truncated_payload", f"{source}: {payload} payload bytes, expected {expected}")
    if payload > expected:
        raise DataFormatError("wrong_size", f"{source}: {payload - expected} trailing bytes")
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def parse_idx_labels(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 8:
        raise DataFormatError("bad_header", f"{source}: {len(buf)} bytes is shorter than the IDX1 header")
    magic, n = struct.unpack(">ii", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError("bad_magic", f"{source}: magic {magic}, expected {IDX_LABELS_MAGIC}")
    payload = len(buf) - 8
    if payload < n:
        raise DataFormatError("truncated_payload", f"{source}: {payload} payload bytes, expected {n}")
    if payload > n:
        raise DataFormatError("wrong_size", f"{source}: {payload - n} trailing bytes")
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8)
    if labels.size and labels.max() > 9:
        raise DataFormatError("label_range", f"{source}: label {int(labels.max())} > 9")
    return labels.astype(np.int64)


def load_mnist(directory, dtype=np.float64) -> tuple[Dataset, Dataset]:
    """Read the four MNIST IDX files (optionally gzip-compressed) from ``directory``."""
    directory = Path(directory)
    out = []
    for split, (img_name, lbl_name) in MNIST_FILES.items():
        images = parse_idx_images(_read_maybe_gz(directory, img_name), img_name)
        labels = parse_idx_labels(_read_maybe_gz(directory, lbl_name), lbl_name)
        if images.shape[0] != labels.shape[0]:
            raise DataFormatError("count_mismatch", f"{split}: {images.shape[0]} images vs {labels.shape[0]} labels")
        x = (images.astype(dtype) / 255.0)[:, None, :, :]
        out.append(Dataset(x, labels, split, "mnist"))
    return out[0], out[1]


def encode_idx_images(images: np.ndarray) -> bytes:
    n, r, c = images.shape
    return struct.pack(">iiii", IDX_IMAGES_MAGIC, n, r, c) + np.asarray(images, dtype=np.uint8).tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">ii", IDX_LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


# ---------------------------------------------------------------------------
# CIFAR-10
# ---------------------------------------------------------------------------

def parse_cifar_batch(buf: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Decode one binary batch: records of 1 label byte + 3072 channel-major pixel bytes."""
    if len(buf) != CIFAR_FILE_BYTES:
        raise DataFormatError("wrong_size", f"{source}: {len(buf)} bytes, expected {CIFAR_FILE_BYTES}")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(CIFAR_RECORDS, CIFAR_RECORD_BYTES)
    labels = rec[:, 0]
    if labels.max() > 9:
        raise DataFormatError("label_range", f"{source}: label {int(labels.max())} > 9")
    return rec[:, 1:].reshape(CIFAR_RECORDS, 3, 32, 32), labels.astype(np.int64)


def encode_cifar_batch(images: np.ndarray, labels: np.ndarray) -> bytes:
    rec = np.empty((images.shape[0], CIFAR_RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images.reshape(images.shape[0], -1)
    return rec.tobytes()


def _cifar_file(directory: Path, name: str) -> bytes:
    for d in (directory, directory / "cifar-10-batches-bin"):
        if (d / name).exists():
            return (d / name).read_bytes()
    raise DataFormatError("missing_file", f"{name} not found in {directory}")


def load_cifar10(directory, dtype=np.float64) -> tuple[Dataset, Dataset]:
    directory = Path(directory)
    parts = [parse_cifar_batch(_cifar_file(directory, n), n) for n in CIFAR_TRAIN_FILES]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = parse_cifar_batch(_cifar_file(directory, CIFAR_TEST_FILE), CIFAR_TEST_FILE)
    return (Dataset(train_x.astype(dtype) / 255.0, train_y, "train", "cifar10"),
            Dataset(test_x.astype(dtype) / 255.0, test_y, "test", "cifar10"))


def load_dataset(name: str, directory=None, dtype=np.float64) -> tuple[Dataset, Dataset]:
    directory = Path(directory) if directory else default_data_dir()
    if name == "mnist":
        return load_mnist(directory / "mnist" if (directory / "mnist").is_dir() else directory, dtype)
    if name == "cifar10":
        sub = directory / "cifar10"
        return load_cifar10(sub if sub.is_dir() else directory, dtype)
    raise ConfigError(f"unknown dataset {name!r}")


# ---------------------------------------------------------------------------
# Domain shifts
# ---------------------------------------------------------------------------

def rotate_bilinear(images: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate [N, C, H, W] images clockwise (as displayed) about the center, zero fill."""
    n, c, h, w = images.shape
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r, q = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    yo, xo = r - cy, q - cx
    # inverse map: output pixel samples the source rotated back counter-clockwise
    xs = np.cos(theta) * xo + np.sin(theta) * yo + cx
    ys = -np.sin(theta) * xo + np.cos(theta) * yo + cy
    x0, y0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    out = np.zeros_like(images)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        contrib = np.zeros_like(images)
        contrib[:, :, valid] = images[:, :, yy[valid], xx[valid]]
        out += contrib * wgt.astype(images.dtype)
    return out


def apply_shift(ds: Dataset, kind: str, seed: int = 0) -> Dataset:
    """Apply one of the deterministic domain shifts to unnormalized images in [0, 1]."""
    if kind == "none":
        return ds
    if kind == "invert":
        x = ds.images[:, :, ::-1, ::-1].copy()
    elif kind == "rotate20":
        x = np.clip(rotate_bilinear(ds.images, ROTATION_DEGREES), 0.0, 1.0)
    elif kind == "noise":
        split_key = {"train": 0, "test": 1}.get(ds.split, 2)
        rng = np.random.default_rng([int(seed) & ((1 << 63) - 1), split_key])
        noise = rng.uniform(-NOISE_RANGE, NOISE_RANGE, size=ds.images.shape).astype(ds.images.dtype)
        x = np.clip(ds.images + noise, 0.0, 1.0)
    else:
        raise ConfigError(f"unknown shift {kind!r}; expected one of {SHIFTS}")
    return replace(ds, images=x)


# ---------------------------------------------------------------------------
# Normalization, augmentation, batching
# ---------------------------------------------------------------------------

def normalize(images: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=images.dtype).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=images.dtype).reshape(1, -1, 1, 1)
    if np.any(std == 0):
        raise ConfigError("normalization std must be non-zero")
    return (images - mean) / std


def augment_crop_flip(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop with zero padding plus random horizontal flip, per image."""
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oy = rng.integers(0, 2 * pad + 1, size=n)
    ox = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, :, oy[i]:oy[i] + h, ox[i]:ox[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def epoch_batches(ds: Dataset, batch_size: int, rng: np.random.Generator, *, mean, std,
                  augment: bool = False, num_classes: int = 10, shuffle: bool = True):
    """Materialize one epoch of normalized ``(x, one_hot_y)`` batches.

    Order comes from ``rng.permutation`` (numpy PCG64).  All batches are built
    before returning so that training can be timed on its own.
    """
    from .optim import one_hot

    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rng.permutation(len(ds)) if shuffle else np.arange(len(ds))
    x = ds.images[order]
    if augment:
        x = augment_crop_flip(x, rng)
    x = normalize(x, mean, std)
    y = one_hot(ds.labels[order], num_classes, dtype=x.dtype)
    return [(x[i:i + batch_size], y[i:i + batch_size]) for i in range(0, len(ds), batch_size)]

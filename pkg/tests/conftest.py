import os
from pathlib import Path

import numpy as np
import pytest

from pcadapt.data import (CIFAR_RECORD_BYTES, CIFAR_RECORDS, MNIST_FILES, Dataset, encode_cifar_batch,
                          encode_idx_images, encode_idx_labels)
from pcadapt.nn import FC, LayerParams, LayerSpec, network_from_groups

REPO = Path(__file__).resolve().parents[1]
ACCEPTANCE_LINES: list[str] = []


def data_root() -> Path:
    return Path(os.environ.get("PCADAPT_DATA_DIR", REPO / "data"))


def mnist_available() -> bool:
    d = data_root() / "mnist"
    return d.is_dir() and any(d.glob("train-images*"))


def identity_fc(n: int) -> tuple[LayerSpec, LayerParams]:
    return LayerSpec(FC, in_features=n, out_features=n), LayerParams(np.eye(n), np.zeros(n))


def dense(rng, i, o, act="identity", scale=0.5):
    spec = LayerSpec(FC, act, in_features=i, out_features=o)
    return spec, LayerParams(rng.normal(scale=scale, size=(o, i)), rng.normal(scale=0.1, size=o))


def small_mlp(rng, sizes=(4, 5, 3), act="tanh"):
    groups = []
    for k, (i, o) in enumerate(zip(sizes, sizes[1:])):
        groups.append([dense(rng, i, o, act if k < len(sizes) - 2 else "identity")])
    return network_from_groups(groups, (sizes[0],))


def blobs(n=200, seed=0, dim=2, classes=2, sep=4.0):
    """Linearly separable Gaussian blobs as image-shaped [N, 1, 1, dim] datasets."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    centers = rng.normal(size=(classes, dim))
    centers *= sep / np.linalg.norm(centers[0] - centers[1] if classes > 1 else centers[0])
    x = centers[labels] + 0.3 * rng.normal(size=(n, dim))
    return x, labels


def synthetic_dataset(n, shape=(1, 28, 28), seed=0, split="train"):
    """Random images whose class is encoded by a bright patch position, so the task is learnable."""
    rng = np.random.default_rng([seed, 1 if split == "test" else 0])
    labels = rng.integers(0, 10, n)
    images = rng.uniform(0, 0.2, size=(n, *shape))
    c, h, w = shape
    for i, lab in enumerate(labels):
        r, col = divmod(int(lab), 5)
        images[i, :, r * h // 2:(r + 1) * h // 2, col * w // 5:(col + 1) * w // 5] += 0.7
    return Dataset(np.clip(images, 0, 1), labels.astype(np.int64), split, "synthetic")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def idx_mutations(tmp_path):
    """(name, expected code, directory) for each IDX mutation class, built from a tiny valid MNIST tree."""
    rng = np.random.default_rng(0)

    def write(root, tweak=None):
        root.mkdir(parents=True, exist_ok=True)
        for split, (img, lbl) in MNIST_FILES.items():
            n = 6 if split == "train" else 4
            files = {img: encode_idx_images(rng.integers(0, 256, (n, 28, 28))),
                     lbl: encode_idx_labels(rng.integers(0, 10, n))}
            if tweak:
                files = tweak(split, img, lbl, files)
            for name, buf in files.items():
                if buf is not None:
                    (root / name).write_bytes(buf)
        return root

    def on_train(fn, which):
        def tweak(split, img, lbl, files):
            if split == "train":
                key = img if which == "img" else lbl
                files[key] = fn(files[key])
            return files
        return tweak

    def relabel(buf):
        b = bytearray(buf)
        b[8] = 12
        return bytes(b)

    cases = [
        ("images magic 2049", "bad_magic", on_train(lambda b: b[:3] + b"\x01" + b[4:], "img")),
        ("labels magic 2051", "bad_magic", on_train(lambda b: b[:3] + b"\x03" + b[4:], "lbl")),
        ("truncated image payload by one byte", "truncated_payload", on_train(lambda b: b[:-1], "img")),
        ("truncated label payload by one byte", "truncated_payload", on_train(lambda b: b[:-1], "lbl")),
        ("header cut short", "bad_header", on_train(lambda b: b[:10], "img")),
        ("trailing bytes", "wrong_size", on_train(lambda b: b + b"\x00", "img")),
        ("label byte 12", "label_range", on_train(relabel, "lbl")),
        ("missing file", "missing_file", on_train(lambda b: None, "lbl")),
    ]
    valid = write(tmp_path / "valid")
    return valid, [(name, code, write(tmp_path / f"case{i}", tw)) for i, (name, code, tw) in enumerate(cases)]


def cifar_mutations():
    """(name, expected code, bytes) mutation classes for one CIFAR-10 batch file."""
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (CIFAR_RECORDS, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, CIFAR_RECORDS)
    good = encode_cifar_batch(images, labels)
    bad = bytearray(good)
    bad[5 * CIFAR_RECORD_BYTES] = 12
    return good, (images, labels), [
        ("truncated by one byte", "wrong_size", good[:-1]),
        ("one extra byte", "wrong_size", good + b"\x00"),
        ("label byte 12", "label_range", bytes(bad)),
    ]

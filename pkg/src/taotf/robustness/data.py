"""Datasets: synthetic oriented-bar images, the TAOTF-DS file format, IDX."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np

DS_HEADER = "TAOTF-DS v1"
SPLIT_FRACTIONS = (0.70, 0.10, 0.20)


@dataclass
class Dataset:
    """Images in [0, 1] with labels; splits are contiguous 70/10/20 blocks.

    Samples are stored already shuffled, so the split is positional and
    survives a write/read round trip.
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or len(self.images) != len(self.labels):
            raise ValueError("images must be (n, h, w) with one label per image")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def _bounds(self):
        n = len(self)
        a = int(round(SPLIT_FRACTIONS[0] * n))
        b = a + int(round(SPLIT_FRACTIONS[1] * n))
        return a, b

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        a, b = self._bounds()
        sl = {"train": slice(0, a), "val": slice(a, b), "test": slice(b, None)}.get(name)
        if sl is None:
            raise ValueError(f"unknown split {name!r}")
        return self.images[sl], self.labels[sl]

    @property
    def train(self):
        return self.split("train")

    @property
    def val(self):
        return self.split("val")

    @property
    def test(self):
        return self.split("test")


def _bar(h, w, cy, cx, angle, half_len, width):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    along = dx * math.cos(angle) + dy * math.sin(angle)
    across = -dx * math.sin(angle) + dy * math.cos(angle)
    taper = np.clip(half_len + 0.5 - np.abs(along), 0.0, 1.0)
    return np.exp(-0.5 * (across / width) ** 2) * taper


def _blob(h, w, cy, cx, radius):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.exp(-0.5 * ((yy - cy) ** 2 + (xx - cx) ** 2) / radius**2)


def synthesize_dataset(n: int, h: int = 16, w: int = 16, n_classes: int = 4, seed: int = 0,
                       noise: float = 0.2) -> Dataset:
    """Class-conditional images: a bar whose orientation encodes the class
    plus a blob at a class-specific position, on a noisy background.

    Per-sample jitter: orientation (about 3 degrees std), amplitude, and
    Gaussian background noise of std ``noise``.
    """
    if not 2 <= n_classes <= 10:
        raise ValueError(f"n_classes must be in [2, 10], got {n_classes}")
    if h < 8 or w < 8:
        raise ValueError(f"images must be at least 8x8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % n_classes)
    images = np.empty((n, h, w))
    cy0, cx0 = (h - 1) / 2.0, (w - 1) / 2.0
    half_len = 0.35 * min(h, w)
    for i, k in enumerate(labels):
        angle = math.pi * k / n_classes + math.radians(rng.normal(0.0, 3.0))
        amp = rng.uniform(0.6, 1.0)
        img = amp * _bar(h, w, cy0, cx0, angle, half_len, 0.9)
        phi = 2.0 * math.pi * k / n_classes + math.pi / 4
        by = cy0 + 0.3 * h * math.sin(phi)
        bx = cx0 + 0.3 * w * math.cos(phi)
        img += 0.6 * amp * _blob(h, w, by, bx, 1.2)
        img += 0.15 + noise * rng.standard_normal((h, w))
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, n_classes)


def template_accuracy(data: Dataset) -> float:
    """Nearest class-mean accuracy on the test split, templates from train."""
    xtr, ytr = data.train
    xte, yte = data.test
    templates = np.stack([xtr[ytr == k].mean(axis=0) for k in range(data.n_classes)])
    d = ((xte[:, None] - templates[None]) ** 2).sum(axis=(2, 3))
    return float(np.mean(np.argmin(d, axis=1) == yte))


def dump_dataset(data: Dataset) -> bytes:
    n, h, w = data.images.shape
    head = f"{DS_HEADER}\n{n} {h} {w} {data.n_classes}\n"
    labels = "".join(f"{int(y)}\n" for y in data.labels)
    return (head + labels).encode("ascii") + np.ascontiguousarray(data.images, dtype="<f8").tobytes()


def parse_dataset(buf: bytes) -> Dataset:
    pos = 0

    def line():
        nonlocal pos
        end = buf.index(b"\n", pos)
        text = buf[pos:end].decode("ascii")
        pos = end + 1
        return text

    if line() != DS_HEADER:
        raise ValueError("not a TAOTF-DS v1 file")
    n, h, w, k = (int(t) for t in line().split())
    labels = np.array([int(line()) for _ in range(n)], dtype=np.int64)
    if len(buf) - pos != 8 * n * h * w:
        raise ValueError("pixel block has the wrong length")
    images = np.frombuffer(buf, dtype="<f8", offset=pos).astype(np.float64).reshape(n, h, w)
    return Dataset(images, labels, k)


def save_dataset(data: Dataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dump_dataset(data))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        return parse_dataset(f.read())


def _read_idx(path) -> np.ndarray:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        buf = f.read()
    magic, = struct.unpack(">I", buf[:4])
    if magic not in (0x00000801, 0x00000803):
        raise ValueError(f"unsupported IDX magic {magic:#010x}")
    ndim = magic & 0xFF
    dims = struct.unpack(">" + "I" * ndim, buf[4:4 + 4 * ndim])
    data = np.frombuffer(buf, dtype=np.uint8, offset=4 + 4 * ndim)
    return data.reshape(dims)


def load_idx(images_path, labels_path, seed: int = 0, limit: int | None = None) -> Dataset:
    """Load IDX (MNIST-style) ubyte files, scaled to [0, 1] and shuffled."""
    images = _read_idx(images_path).astype(np.float64) / 255.0
    labels = _read_idx(labels_path).astype(np.int64)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError("IDX files must hold (n, h, w) images and n labels")
    order = np.random.default_rng(seed).permutation(len(labels))
    if limit is not None:
        order = order[:limit]
    return Dataset(images[order], labels[order], int(labels.max()) + 1)

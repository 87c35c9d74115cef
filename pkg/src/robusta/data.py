"""Dataset ingestion: IDX containers, CSV tables and synthetic generators."""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

from . import seeding
from .errors import DatasetError, ParseError
from .kernels import Labeler
from .model_core import LabeledDataset, LinearClassifier

# IDX type byte -> big-endian numpy dtype
IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_TYPE_OF = {dt.str.lstrip("<>|"): code for code, dt in IDX_TYPES.items()}


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX container into an array of the stored dtype and shape."""
    data = bytes(data)
    if len(data) < 4:
        raise ParseError("truncated header", offset=len(data))
    if data[0] != 0 or data[1] != 0:
        raise ParseError("bad magic: first two bytes must be zero", offset=0)
    code, ndim = data[2], data[3]
    if code not in IDX_TYPES:
        raise ParseError(f"unsupported data type 0x{code:02x}", offset=2)
    head = 4 + 4 * ndim
    if len(data) < head:
        raise ParseError("truncated dimension table", offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:head])
    dtype = IDX_TYPES[code]
    size = math.prod(dims) * dtype.itemsize
    if len(data) < head + size:
        raise ParseError(f"truncated payload: need {size} bytes, have {len(data) - head}", offset=len(data))
    if len(data) > head + size:
        raise ParseError("trailing bytes after payload", offset=head + size)
    return np.frombuffer(data, dtype=dtype, count=math.prod(dims), offset=head).reshape(dims)


def write_idx(arr) -> bytes:
    arr = np.asarray(arr)
    key = arr.dtype.str.lstrip("<>|=")
    if key not in _TYPE_OF:
        raise ValueError(f"dtype {arr.dtype} has no IDX encoding")
    code = _TYPE_OF[key]
    head = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=IDX_TYPES[code]).tobytes()


def load_idx(path):
    return parse_idx(Path(path).read_bytes())


def idx_dataset(images, labels, n_classes=None):
    """Images as flattened coordinates scaled by 1/255, labels as integers."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise DatasetError("image and label counts differ")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return LabeledDataset(X, labels.astype(np.int64), n_classes)


def load_csv_dataset(path, n_classes=None, features=None):
    """Read ``f0,...,label`` rows with features in [0, 1].

    ``features`` optionally pins the expected feature column names. Errors carry
    the 1-based line number of the offending row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "label" not in header:
        raise DatasetError(f"{path}: header must contain a 'label' column")
    li = header.index("label")
    names = [h for i, h in enumerate(header) if i != li]
    if features is not None and list(features) != names:
        raise DatasetError(f"{path}: expected feature columns {list(features)}, got {names}")
    X, y, bad = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for i, c in enumerate(row) if i != li]
            lab = int(row[li])
        except ValueError as exc:
            raise DatasetError(f"{path}: line {lineno}: {exc}") from None
        if any(not (0.0 <= v <= 1.0) for v in vals):
            bad.append(lineno)
        X.append(vals)
        y.append(lab)
    if bad:
        raise DatasetError(f"{path}: features outside [0, 1] at lines {bad}")
    if not X:
        raise DatasetError(f"{path}: no data rows")
    return LabeledDataset(np.array(X), np.array(y), n_classes)


def write_csv_dataset(path, dataset):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(dataset.m)] + ["label"])
        for x, lab in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [int(lab)])


# --------------------------------------------------------------------------
# synthetic data

_LO, _HI = 0.05, 0.95


def _to_unit(Z, lo, hi):
    return _LO + (_HI - _LO) * (Z - lo) / (hi - lo)


def _from_unit(X, lo, hi):
    return lo + (X - _LO) * (hi - lo) / (_HI - _LO)


def _moons_box(noise):
    pad = 4 * noise
    return np.array([-1.0 - pad, -0.5 - pad]), np.array([2.0 + pad, 1.0 + pad])


def _moon_labels(Z):
    # nearest arc: upper arc centred (0,0), lower arc centred (1,0.5), radius 1
    def arc_dist(P, c, upper):
        v = P - c
        ang = np.arctan2(v[:, 1], v[:, 0])
        ang = np.clip(ang, 0, np.pi) if upper else np.clip(ang, -np.pi, 0)
        nearest = c + np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return np.linalg.norm(P - nearest, axis=1)

    d0 = arc_dist(Z, np.array([0.0, 0.0]), True)
    d1 = arc_dist(Z, np.array([1.0, 0.5]), False)
    return (d1 < d0).astype(np.int64)


def synth_dataset(kind, n, noise=0.1, seed=0, *, m=2, n_classes=3):
    """Deterministic 2-D (or m-D) toy data inside [0.05, 0.95]^m plus its labeler.

    two_moons
        Interleaved half circles with Gaussian jitter; the labeler picks the
        nearer arc.
    gaussian_blobs
        ``n_classes`` isotropic Gaussians with centres on a circle; the labeler
        is the nearest centre (Bayes-optimal for equal priors).
    linear_separable
        Uniform points split by a random hyperplane through the centre; ``noise``
        is the label flip probability and the labeler is the hyperplane.
    """
    if n < 2:
        raise DatasetError("synthetic datasets need n >= 2")
    gen = seeding.rng(seed, seeding.SYNTH)
    if kind == "two_moons":
        n0 = n // 2
        n1 = n - n0
        t0 = gen.uniform(0, np.pi, n0)
        t1 = gen.uniform(0, np.pi, n1)
        Z = np.concatenate([np.stack([np.cos(t0), np.sin(t0)], 1),
                            np.stack([1 - np.cos(t1), 0.5 - np.sin(t1)], 1)])
        Z = Z + noise * gen.standard_normal(Z.shape)
        y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
        lo, hi = _moons_box(noise)
        X = np.clip(_to_unit(Z, lo, hi), _LO, _HI)
        order = gen.permutation(n)
        labeler = Labeler(lambda P: _moon_labels(_from_unit(P, lo, hi)), name="two_moons")
        return LabeledDataset(X[order], y[order], 2), labeler
    if kind == "gaussian_blobs":
        ang = 2 * np.pi * np.arange(n_classes) / n_classes
        centres = np.zeros((n_classes, m))
        centres[:, 0] = 0.5 + 0.25 * np.cos(ang)
        centres[:, 1 % m] = 0.5 + 0.25 * np.sin(ang) if m > 1 else centres[:, 0]
        if m > 2:
            centres[:, 2:] = 0.5
        y = gen.integers(0, n_classes, n)
        X = np.clip(centres[y] + noise * gen.standard_normal((n, m)), _LO, _HI)

        def nearest(P):
            return np.argmin(((P[:, None, :] - centres[None]) ** 2).sum(-1), axis=1)

        return LabeledDataset(X, y, n_classes), Labeler(nearest, name="gaussian_blobs")
    if kind == "linear_separable":
        w = gen.standard_normal(m)
        w /= np.linalg.norm(w)
        c = -w @ np.full(m, 0.5)
        lin = LinearClassifier.from_hyperplane(w, c)
        X = gen.uniform(_LO, _HI, (n, m))
        y = lin.predict(X)
        flip = gen.random(n) < noise
        y = np.where(flip, 1 - y, y)
        return LabeledDataset(X, y, 2), lin
    raise DatasetError(f"unknown synthetic dataset {kind!r}")


# 8x8 stroke templates, one per class
_GLYPHS = [
    ["........", "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..", "........"],
    ["........", "...##...", "..###...", "...##...", "...##...", "...##...", "..####..", "........"],
    ["........", "########", "........", "........", "........", "........", "########", "........"],
    ["........", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "........"],
    ["#.......", ".#......", "..#.....", "...#....", "....#...", ".....#..", "......#.", ".......#"],
    [".......#", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".#......", "#......."],
    ["........", "...##...", "...##...", "########", "########", "...##...", "...##...", "........"],
    ["........", ".######.", ".#....#.", ".#.##.#.", ".#.##.#.", ".#....#.", ".######.", "........"],
]


def synth_glyphs(n, noise=0.1, seed=0, n_classes=8, side=8):
    """Small image-like dataset: jittered 8x8 stroke templates with pixel noise.

    Each image is its class template shifted by up to one pixel, scaled by a
    random stroke intensity in [0.6, 1], plus Gaussian pixel noise, clipped to
    [0, 1]. Flattened to ``side * side`` coordinates.
    """
    if n < 2:
        raise DatasetError("synthetic datasets need n >= 2")
    if not 2 <= n_classes <= len(_GLYPHS) or side != 8:
        raise DatasetError("glyphs support side=8 and 2..8 classes")
    gen = seeding.rng(seed, seeding.SYNTH, 1)
    tmpl = np.array([[[c == "#" for c in row] for row in g] for g in _GLYPHS[:n_classes]], dtype=np.float64)
    y = gen.integers(0, n_classes, n)
    shifts = gen.integers(-1, 2, (n, 2))
    inten = gen.uniform(0.6, 1.0, n)
    imgs = np.empty((n, side, side))
    for i in range(n):
        imgs[i] = np.roll(tmpl[y[i]], tuple(shifts[i]), axis=(0, 1)) * inten[i]
    imgs += noise * gen.standard_normal(imgs.shape)
    return LabeledDataset(np.clip(imgs.reshape(n, -1), 0.0, 1.0), y, n_classes)


def train_test_split(dataset, test_fraction=0.25, seed=0):
    n = len(dataset)
    perm = seeding.rng(seed, seeding.SPLIT).permutation(n)
    k = int(round(n * test_fraction))
    return dataset.subset(np.sort(perm[k:])), dataset.subset(np.sort(perm[:k]))

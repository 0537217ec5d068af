"""Datasets: IDX file reader/writer and a seeded synthetic digit generator."""
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import LoadError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class DatasetSpec:
    source: str
    image_shape: tuple
    classes: int
    n_train: int
    n_test: int
    mean: tuple
    std: tuple


@dataclass
class Dataset:
    spec: DatasetSpec
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, magic):
    """Parse an unsigned-byte IDX file and return the array with its dims.

    The layout is a big-endian u32 magic (``0x0000080N``, N = number of
    dims), N big-endian u32 dims, then the raw bytes.
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise LoadError(f"{path}: truncated header (offset 0, {len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise LoadError(f"{path}: wrong magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LoadError(f"{path}: truncated header (need {header} bytes, have {len(raw)})")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise LoadError(
            f"{path}: truncated payload at offset {len(raw)}, expected {header + size} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def normalize(images_u8, mean=None, std=None):
    """Scale bytes to [0, 1] then standardize per channel (stats from the data if not given)."""
    x = images_u8.astype(np.float32) / np.float32(255.0)
    if mean is None:
        mean = tuple(float(m) for m in x.mean(axis=(0, 2, 3)))
        std = tuple(float(s) or 1.0 for s in x.std(axis=(0, 2, 3)))
    m = np.asarray(mean, np.float32)[None, :, None, None]
    s = np.asarray(std, np.float32)[None, :, None, None]
    return (x - m) / s, mean, std


def load_idx(images_path, labels_path, normalized=True, mean=None, std=None):
    """Load an IDX image/label pair as ``(spec, images[N,1,H,W] float32, labels int64)``."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise LoadError(
            f"{labels_path}: count mismatch at offset 4: {labels.shape[0]} labels "
            f"for {images.shape[0]} images")
    images = images[:, None, :, :]
    if normalized:
        x, mean, std = normalize(images, mean, std)
    else:
        x = images.astype(np.float32) / np.float32(255.0)
        mean, std = (0.0,), (1.0,)
    y = labels.astype(np.int64)
    classes = int(y.max()) + 1 if y.size else 0
    spec = DatasetSpec("idx-files", tuple(x.shape[1:]), classes, len(x), 0, mean, std)
    return spec, x, y


def load_idx_dataset(train_images, train_labels, test_images=None, test_labels=None,
                     holdout=0.2):
    """Train/test dataset from IDX files; without test files the last ``holdout`` share is held out."""
    spec, x, y = load_idx(train_images, train_labels)
    if test_images is not None:
        _, xt, yt = load_idx(test_images, test_labels, mean=spec.mean, std=spec.std)
    else:
        cut = len(x) - int(round(len(x) * holdout))
        x, xt, y, yt = x[:cut], x[cut:], y[:cut], y[cut:]
    classes = int(max(y.max(), yt.max())) + 1
    spec = DatasetSpec("idx-files", spec.image_shape, classes, len(x), len(xt), spec.mean, spec.std)
    return Dataset(spec, x, y, xt, yt)


def _segment_distance(yy, xx, p, q):
    d = q - p
    denom = float(d @ d) or 1.0
    t = np.clip(((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(yy - (p[0] + t * d[0]), xx - (p[1] + t * d[1]))


def _render(strokes, side, width):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    img = np.zeros((side, side))
    for p, q in strokes:
        dist = _segment_distance(yy, xx, p, q)
        img = np.maximum(img, np.clip(1.0 - (dist - width / 2.0), 0.0, 1.0))
    return img


def _templates(classes, side, rng):
    lo, hi = 3.0, side - 4.0
    out = []
    for _ in range(classes):
        pts = rng.uniform(lo, hi, (int(rng.integers(3, 5)), 2))
        out.append([(pts[k], pts[k + 1]) for k in range(len(pts) - 1)])
    return out


def _samples(templates, per_class, side, rng, shift=2, noise=0.1, wobble=1.0):
    images, labels = [], []
    for label, strokes in enumerate(templates):
        for _ in range(per_class):
            moved = [(p + rng.uniform(-wobble, wobble, 2), q + rng.uniform(-wobble, wobble, 2))
                     for p, q in strokes]
            img = _render(moved, side, width=rng.uniform(1.0, 2.0))
            dy, dx = rng.integers(-shift, shift + 1, 2)
            img = np.roll(img, (dy, dx), axis=(0, 1))
            img = img + rng.normal(0.0, noise, img.shape)
            images.append(np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8))
            labels.append(label)
    order = rng.permutation(len(labels))
    return np.stack(images)[order], np.asarray(labels, dtype=np.uint8)[order]


def synth_digits_raw(classes=10, n_train=2000, n_test=1000, side=16, seed=0):
    """Byte images and labels ``(train_x, train_y, test_x, test_y)`` before normalization.

    Each class has a fixed stroke template drawn from ``seed``; every sample
    perturbs the stroke endpoints, thickness and position (shift up to
    +-2 px) and adds Gaussian pixel noise (sigma 0.1). Train and test come
    from separate child streams.
    """
    if side < 8:
        raise ValueError("side must be >= 8")
    if n_train % classes or n_test % classes:
        raise ValueError("sample counts must be multiples of the class count")
    tmpl_seq, train_seq, test_seq = np.random.SeedSequence(seed).spawn(3)
    templates = _templates(classes, side, np.random.default_rng(tmpl_seq))
    xtr, ytr = _samples(templates, n_train // classes, side, np.random.default_rng(train_seq))
    xte, yte = _samples(templates, n_test // classes, side, np.random.default_rng(test_seq))
    return xtr, ytr, xte, yte


def synth_digits(classes=10, n_train=2000, n_test=1000, side=16, seed=0):
    """Synthetic stand-in for a small digit dataset, normalized like IDX data."""
    xtr, ytr, xte, yte = synth_digits_raw(classes, n_train, n_test, side, seed)
    x, mean, std = normalize(xtr[:, None])
    xt, _, _ = normalize(xte[:, None], mean, std)
    spec = DatasetSpec("synthetic", (1, side, side), classes, n_train, n_test, mean, std)
    return Dataset(spec, x, ytr.astype(np.int64), xt, yte.astype(np.int64))

"""Dataset ingestion (IDX, CSV, seeded synthetic clusters) and split bookkeeping."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError
from ..rng import rng_stream

IDX_TYPES = {
    0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    images: np.ndarray      # float32 [N, ...]
    labels: np.ndarray      # int64 [N]
    class_count: int

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


@dataclass
class DataSplits:
    """Disjoint index sets into one source: readout fitting, reconstruction, evaluation."""
    reconstruction: Dataset
    evaluation: Dataset
    pretrain: Dataset | None = None
    indices: dict | None = None


# ---------------------------------------------------------------- IDX

def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError(f"truncated IDX header: {len(buf)} of 4 magic bytes", len(buf))
    if buf[0:2] != b"\x00\x00":
        raise FormatError(f"bad IDX magic: expected b'\\x00\\x00', got {buf[0:2]!r}", 0)
    code = buf[2]
    if code not in IDX_TYPES:
        raise FormatError(f"unknown IDX element type 0x{code:02x}; expected one of "
                          f"{', '.join(f'0x{c:02x}' for c in IDX_TYPES)}", 2)
    ndim = buf[3]
    if ndim == 0:
        raise FormatError("IDX rank must be at least 1, got 0", 3)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"truncated IDX dimension header: need {header} bytes, "
                          f"file has {len(buf)}", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    for i, d in enumerate(dims):
        if d == 0:
            raise FormatError(f"IDX dimension {i} is zero", 4 + 4 * i)
    dtype = IDX_TYPES[code]
    need = header + int(np.prod(dims)) * dtype.itemsize
    if len(buf) < need:
        raise FormatError(f"truncated IDX payload: expected {need - header} bytes of data, "
                          f"found {len(buf) - header}", len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} unexpected trailing bytes after IDX payload", need)
    return np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    """IDX image tensor as float32 [N, 1, H, W] (or [N, C, H, W] for rank-4 files),
    unsigned bytes scaled to [0, 1]."""
    arr = parse_idx(Path(path).read_bytes())
    out = arr.astype(np.float32)
    if arr.dtype == np.dtype(">u1"):
        out /= np.float32(255.0)
    if out.ndim == 3:
        out = out[:, None]
    return out


def load_idx_labels(path) -> np.ndarray:
    arr = parse_idx(Path(path).read_bytes())
    if arr.ndim != 1:
        raise FormatError(f"IDX label file must be rank 1, got rank {arr.ndim}", 3)
    return arr.astype(np.int64)


# ---------------------------------------------------------------- synthetic

def synthetic(classes=4, dims=(3, 8, 8), samples=200, seed=0, separation=1.0,
              noise=1.0) -> Dataset:
    """Gaussian class clusters: per-class mean image plus isotropic noise.

    Labels cycle through the classes so every class is equally represented.
    """
    rng = rng_stream(seed, 0)
    dims = tuple(int(d) for d in dims)
    means = rng.standard_normal((classes,) + dims) * separation
    labels = np.arange(samples) % classes
    rng.shuffle(labels)
    images = means[labels] + rng.standard_normal((samples,) + dims) * noise
    return Dataset(images.astype(np.float32), labels.astype(np.int64), classes)


# ---------------------------------------------------------------- front door

def load_dataset(source, format="synthetic", labels=None, shape=None, classes=None) -> Dataset:
    """Load labelled samples.

    * ``idx``: ``source`` is the image file, ``labels`` the label file.
    * ``csv``: one sample per row, label first; ``shape`` reshapes the features.
    * ``synthetic``: ``source`` is a dict ``{classes, dims, samples, seed, ...}``.
    """
    if format == "synthetic":
        spec = dict(source)
        return synthetic(**spec)
    if format == "idx":
        if labels is None:
            raise ConfigError("idx format needs a labels file")
        images = load_idx_images(source)
        y = load_idx_labels(labels)
        if len(y) != len(images):
            raise FormatError(f"{len(images)} images but {len(y)} labels")
        return Dataset(images, y, int(classes or y.max() + 1))
    if format == "csv":
        try:
            raw = np.loadtxt(source, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"unparsable CSV: {exc}") from exc
        y = raw[:, 0].astype(np.int64)
        x = raw[:, 1:].astype(np.float32)
        if shape is not None:
            x = x.reshape((len(x),) + tuple(shape))
        return Dataset(x, y, int(classes or y.max() + 1))
    raise ConfigError(f"unknown dataset format {format!r}")


def make_splits(data: Dataset, reconstruction: int, evaluation: int, seed: int,
                pretrain: int = 0) -> DataSplits:
    """Draw disjoint reconstruction / evaluation (/ pretrain) subsets."""
    need = reconstruction + evaluation + pretrain
    if need > len(data):
        raise ConfigError(f"dataset has {len(data)} samples, splits need {need}")
    if np.any(data.labels < 0) or np.any(data.labels >= data.class_count):
        raise FormatError("labels outside [0, class_count)")
    perm = rng_stream(seed, 3).permutation(len(data))
    r = np.sort(perm[:reconstruction])
    e = np.sort(perm[reconstruction:reconstruction + evaluation])
    p = np.sort(perm[reconstruction + evaluation:need])
    return DataSplits(data.subset(r), data.subset(e), data.subset(p) if pretrain else None,
                      {"reconstruction": r, "evaluation": e, "pretrain": p})

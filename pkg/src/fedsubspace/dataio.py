"""Dataset loading, normalisation and the non-IID client partition.

Datasets hold flattened images, one row per sample, pixels in [0, 1].  The
partition draws q classes per client and then about n/m samples per client
without replacement from a shared pool, so shards are disjoint unless the
pool runs dry.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

_IMAGE_SUFFIXES = {".png", ".pgm"}


@dataclass(frozen=True)
class Dataset:
    """Flattened image collection with ground-truth labels."""

    samples: np.ndarray      # (n, d) float64 in [0, 1]
    labels: np.ndarray       # (n,) int64 in [0, class_count)
    height: int
    width: int
    channels: int
    class_count: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if samples.ndim != 2 or labels.ndim != 1 or samples.shape[0] != labels.shape[0]:
            raise DataError("samples must be (n, d) with one label per row")
        if samples.shape[1] != self.height * self.width * self.channels:
            raise DataError("sample width does not match height*width*channels")
        if samples.size and (samples.min() < 0.0 or samples.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataError("labels must lie in [0, class_count)")
        samples.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class DatasetShard:
    """One client's slice of a dataset."""

    client_id: int
    samples: np.ndarray
    labels: np.ndarray
    classes_present: frozenset[int]
    sample_indices: np.ndarray         # indices into the source dataset
    height: int
    width: int
    channels: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        indices = np.ascontiguousarray(self.sample_indices, dtype=np.int64)
        if samples.shape[0] != labels.shape[0] or samples.shape[0] != indices.shape[0]:
            raise DataError("shard arrays must agree on sample count")
        if samples.shape[0] < 1:
            raise DataError("shard must hold at least one sample")
        if not set(labels.tolist()) <= set(self.classes_present):
            raise DataError("shard labels must belong to classes_present")
        for arr in (samples, labels, indices):
            arr.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_indices", indices)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset over m clients with q classes each."""

    m: int
    q: int
    seed: int
    samples_per_client: int | None = None   # default: floor(n / m)

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("client count m must be >= 1")
        if self.q < 1:
            raise ConfigError("classes per client q must be >= 1")


# ---------------------------------------------------------------------------
# IDX loading


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise FormatError(f"truncated file: expected {count} bytes for {what}")
    return data[offset:offset + count]


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load the big-endian IDX image/label pair used for handwritten digits."""
    with open(images_path, "rb") as fh:
        img_data = fh.read()
    with open(labels_path, "rb") as fh:
        lab_data = fh.read()

    header = _read_exact(img_data, 0, 16, "image header")
    magic, n_images, rows, cols = struct.unpack(">IIII", header)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}")
    pixels = _read_exact(img_data, 16, n_images * rows * cols, "pixel data")
    if len(img_data) != 16 + n_images * rows * cols:
        raise FormatError("image file has trailing bytes")

    header = _read_exact(lab_data, 0, 8, "label header")
    magic, n_labels = struct.unpack(">II", header)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x}")
    if n_labels != n_images:
        raise FormatError(f"count mismatch: {n_images} images vs {n_labels} labels")
    raw_labels = _read_exact(lab_data, 8, n_labels, "label data")
    if len(lab_data) != 8 + n_labels:
        raise FormatError("label file has trailing bytes")

    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise FormatError(f"label out of range: {labels.max()}")
    samples = np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, rows * cols)
    return Dataset(
        samples=samples / 255.0,
        labels=labels,
        height=rows,
        width=cols,
        channels=1,
        class_count=10,
    )


# ---------------------------------------------------------------------------
# image directories


def bilinear_resize(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of an (h, w) or (h, w, c) array."""

    def coords(in_size, out_size):
        if out_size == 1:
            return np.full(1, (in_size - 1) / 2.0)
        return np.arange(out_size) * ((in_size - 1) / (out_size - 1))

    h, w = image.shape[:2]
    ys = coords(h, target_h)
    xs = coords(w, target_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    fy = ys - y0
    fx = xs - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    if image.ndim == 2:
        img = image[:, :, None]
    else:
        img = image
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return out[:, :, 0] if image.ndim == 2 else out


def load_image_dir(root_path, target_h: int, target_w: int) -> Dataset:
    """Load a directory-per-class image tree, resized to target_h x target_w.

    Class ids follow the lexicographic order of the class directory names.
    All images must share a channel count (grayscale or RGB).
    """
    from pathlib import Path

    from PIL import Image

    root = Path(root_path)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise FormatError(f"no class subdirectories under {root}")

    rows: list[np.ndarray] = []
    labels: list[int] = []
    channels: int | None = None
    for class_idx, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
        )
        for path in files:
            try:
                with Image.open(path) as im:
                    if im.mode not in ("L", "RGB"):
                        im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
                    arr = np.asarray(im, dtype=np.float64) / 255.0
            except (OSError, ValueError) as exc:
                raise FormatError(f"unreadable image {path}: {exc}") from exc
            ch = 1 if arr.ndim == 2 else arr.shape[2]
            if channels is None:
                channels = ch
            elif channels != ch:
                raise FormatError(f"mixed channel counts: {path} has {ch}, expected {channels}")
            resized = bilinear_resize(arr, target_h, target_w)
            rows.append(resized.reshape(-1))
            labels.append(class_idx)
    if not rows:
        raise FormatError(f"no readable images under {root}")
    return Dataset(
        samples=np.vstack(rows),
        labels=np.asarray(labels),
        height=target_h,
        width=target_w,
        channels=channels,
        class_count=len(class_dirs),
    )


# ---------------------------------------------------------------------------
# partitioning


def partition(dataset: Dataset, spec: PartitionSpec) -> list[DatasetShard]:
    """Split a dataset into m label-skewed shards, deterministic in the seed.

    Each client first draws q distinct classes, then its samples come from the
    shared not-yet-assigned pool restricted to those classes.  Only when that
    pool is exhausted are remaining slots filled by with-replacement draws
    from all samples of the chosen classes.
    """
    c = dataset.class_count
    if spec.q > c:
        raise ConfigError(f"q={spec.q} exceeds class count {c}")
    if dataset.n < spec.m:
        raise ConfigError(f"cannot split {dataset.n} samples over {spec.m} clients")
    target = spec.samples_per_client or dataset.n // spec.m
    if target < 1:
        raise ConfigError("samples per client must be >= 1")

    rng = np.random.default_rng(spec.seed)
    available = np.ones(dataset.n, dtype=bool)
    shards = []
    for client_id in range(spec.m):
        classes = rng.choice(c, size=spec.q, replace=False)
        in_classes = np.isin(dataset.labels, classes)
        eligible = np.flatnonzero(available & in_classes)
        take = min(target, eligible.size)
        picked = rng.choice(eligible, size=take, replace=False) if take else np.empty(0, np.int64)
        available[picked] = False
        if take < target:
            fallback_pool = np.flatnonzero(in_classes)
            if fallback_pool.size == 0:
                raise ConfigError(
                    f"client {client_id}: no samples exist for classes {sorted(classes.tolist())}"
                )
            extra = rng.choice(fallback_pool, size=target - take, replace=True)
            picked = np.concatenate([picked, extra])
        shards.append(DatasetShard(
            client_id=client_id,
            samples=dataset.samples[picked],
            labels=dataset.labels[picked],
            classes_present=frozenset(int(x) for x in classes),
            sample_indices=picked,
            height=dataset.height,
            width=dataset.width,
            channels=dataset.channels,
        ))
    return shards


def write_partition_manifest(shards: list[DatasetShard], path) -> None:
    """JSON manifest of which dataset rows each client received."""
    payload = [
        {
            "client_id": s.client_id,
            "classes": sorted(s.classes_present),
            "sample_indices": s.sample_indices.tolist(),
        }
        for s in shards
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_subspaces(
    classes: int,
    points_per_class: int,
    height: int,
    width: int,
    subspace_dim: int,
    noise: float,
    seed: int,
    channels: int = 1,
) -> Dataset:
    """Points near random low-dimensional linear subspaces, packed into [0, 1].

    Each class draws an orthonormal basis of a subspace of the flattened pixel
    space; samples are bounded (uniform-coefficient) combinations of the basis
    plus isotropic gaussian noise, then affinely squeezed around 0.5 to
    satisfy the pixel range.  Bounded coefficients keep the packing scale
    close to the typical point magnitude, so the subspace structure is not
    dwarfed by the 0.5 offset.
    """
    d = height * width * channels
    if subspace_dim > d:
        raise ConfigError("subspace dimension exceeds ambient dimension")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(classes):
        basis, _ = np.linalg.qr(rng.standard_normal((d, subspace_dim)))
        coeffs = rng.uniform(-1.0, 1.0, size=(points_per_class, subspace_dim))
        blocks.append(coeffs @ basis.T)
    x = np.vstack(blocks)
    x = x + noise * rng.standard_normal(x.shape)
    labels = np.repeat(np.arange(classes), points_per_class)
    scale = np.abs(x).max()
    x = 0.5 + 0.49 * x / (scale if scale > 0 else 1.0)
    order = rng.permutation(x.shape[0])
    return Dataset(
        samples=x[order],
        labels=labels[order],
        height=height,
        width=width,
        channels=channels,
        class_count=classes,
    )

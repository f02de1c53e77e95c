"""Datasets: IDX (MNIST) loading, Gaussian blobs, normalization and batching."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for malformed IDX files."""


class BadMagicError(IdxFormatError):
    pass


class DimensionMismatchError(IdxFormatError):
    """Header dimensions disagree with the payload length."""


class CountMismatchError(IdxFormatError):
    """Image and label files describe different numbers of items."""


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "dataset"
    norm_stats: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got shape {self.images.shape}")
        if len(self.images) < 1:
            raise ValueError("dataset must hold at least one image")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (len(self.images),):
                raise ValueError("need exactly one label per image")
            if labels.min() < 0:
                raise ValueError("labels must be non-negative")
            present = np.unique(labels)
            if len(present) != present[-1] + 1:
                raise ValueError("class ids must be contiguous from 0")
            object.__setattr__(self, "labels", labels.astype(np.int64))
        self.images.setflags(write=False)

    def __len__(self):
        return len(self.images)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1

    def subset(self, rows: Sequence[int], name: Optional[str] = None) -> "Dataset":
        rows = np.asarray(rows)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.images[rows].copy(), labels, name or self.name, self.norm_stats)


@dataclass(frozen=True)
class BlobSpec:
    num_classes: int
    dim: int
    points_per_class: int
    class_std: float = 0.5
    center_scale: float = 4.0
    seed: int = 0
    # optional class-independent clusters in the last ``nuisance_dim`` coordinates
    nuisance_dim: int = 0
    nuisance_modes: int = 0
    nuisance_scale: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("blobs need num_classes >= 2")
        if self.dim < 1:
            raise ValueError("blobs need dim >= 1")
        if self.points_per_class < 1:
            raise ValueError("blobs need points_per_class >= 1")
        if not self.class_std > 0:
            raise ValueError("class_std must be positive")
        if not 0 <= self.nuisance_dim < self.dim:
            raise ValueError("nuisance_dim must leave at least one class coordinate")
        if self.nuisance_dim and self.nuisance_modes < 1:
            raise ValueError("nuisance_dim needs nuisance_modes >= 1")

    @property
    def class_dim(self) -> int:
        return self.dim - self.nuisance_dim


@dataclass
class Batch:
    indices: np.ndarray
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    epoch: int = 0
    number: int = 0
    seed: int = 0

    def __len__(self):
        return len(self.indices)


# --------------------------------------------------------------------------
# IDX


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise DimensionMismatchError(f"{what}: file too short for a magic number")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise DimensionMismatchError(f"{what}: file shorter than its {header}-byte header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = math.prod(dims)
    payload = len(raw) - header
    if payload != expected:
        raise DimensionMismatchError(
            f"{what}: header {dims} implies {expected} payload bytes, found {payload}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``uint8`` array of shape N x rows x cols."""
    return _parse_idx(_read_bytes(path), IMAGES_MAGIC, 3, str(path))


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), LABELS_MAGIC, 1, str(path))


def write_idx_images(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.dtype != np.uint8:
        raise ValueError("expected a uint8 array of shape N x rows x cols")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGES_MAGIC, *pixels.shape))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path=None, name: Optional[str] = None) -> Dataset:
    """Load an IDX image file (and optional label file) with pixels scaled to [0, 1]."""
    raw = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if len(labels) != len(raw):
            raise CountMismatchError(
                f"{len(raw)} images but {len(labels)} labels")
    images = raw.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(images, labels, name or Path(images_path).name)


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory: Path, stem: str) -> Path:
    for candidate in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / candidate).exists():
            return directory / candidate
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist(directory, split: str = "train") -> Dataset:
    directory = Path(directory)
    img, lab = _MNIST_FILES[split]
    return load_idx(_find(directory, img), _find(directory, lab), name=f"mnist-{split}")


# --------------------------------------------------------------------------
# synthetic data


def _on_sphere(rng, count, dim, radius):
    raw = rng.standard_normal((count, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return radius * raw / norms


def blob_centers(spec: BlobSpec) -> np.ndarray:
    """Class centers drawn uniformly on the sphere of radius ``center_scale``.

    With nuisance coordinates the centers live in the leading ``class_dim``
    coordinates and are zero elsewhere.
    """
    rng = np.random.default_rng(spec.seed)
    centers = np.zeros((spec.num_classes, spec.dim))
    centers[:, :spec.class_dim] = _on_sphere(rng, spec.num_classes, spec.class_dim,
                                             spec.center_scale)
    return centers


def nuisance_centers(spec: BlobSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    centers = np.zeros((spec.nuisance_modes, spec.dim))
    if spec.nuisance_dim:
        centers[:, spec.class_dim:] = _on_sphere(rng, spec.nuisance_modes, spec.nuisance_dim,
                                                 spec.nuisance_scale)
    return centers


def make_blobs(spec: BlobSpec, draw: int = 0) -> Dataset:
    """Isotropic Gaussian clouds around seeded centers, shaped N x dim x 1 x 1.

    When ``nuisance_dim`` is set, each point is additionally shifted to one of
    ``nuisance_modes`` centers in the nuisance coordinates, chosen uniformly
    and independently of its class. ``draw`` selects an independent sample
    around the same centers, which is how held-out sets are produced.
    """
    centers = blob_centers(spec)
    rng = np.random.default_rng([spec.seed, 1 + draw])
    labels = np.repeat(np.arange(spec.num_classes), spec.points_per_class)
    noise = rng.standard_normal((len(labels), spec.dim)) * spec.class_std
    points = centers[labels] + noise
    if spec.nuisance_dim:
        modes = rng.integers(spec.nuisance_modes, size=len(labels))
        points += nuisance_centers(spec)[modes]
    name = f"blobs-K{spec.num_classes}-d{spec.dim}" + (f"-draw{draw}" if draw else "")
    return Dataset(points[:, :, None, None], labels, name)


def select_classes(ds: Dataset, classes: Sequence[int], name: Optional[str] = None) -> Dataset:
    """Rows whose label is in ``classes``, relabelled 0..len(classes)-1 in the given order."""
    if ds.labels is None:
        raise ValueError("select_classes needs a labelled dataset")
    classes = [int(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise ValueError("duplicate class ids")
    remap = np.full(ds.num_classes, -1, dtype=np.int64)
    remap[classes] = np.arange(len(classes))
    rows = np.flatnonzero(np.isin(ds.labels, classes))
    if len(rows) == 0:
        raise ValueError(f"no rows with labels in {classes}")
    return Dataset(ds.images[rows].copy(), remap[ds.labels[rows]],
                   name or f"{ds.name}[{','.join(map(str, classes))}]", ds.norm_stats)


# --------------------------------------------------------------------------
# normalization and batching


def normalize(ds: Dataset, stats: Optional[tuple[float, float]] = None) -> Dataset:
    """Subtract one global mean and divide by one global std.

    With ``stats`` given (e.g. a training set's ``norm_stats``) those are used
    instead of statistics of ``ds`` itself.
    """
    if stats is None:
        if ds.images.size < 2:
            raise DegenerateDataError("need at least two pixels to normalize")
        mean = float(ds.images.mean())
        std = float(ds.images.std())
        if not std > 0:
            raise DegenerateDataError("pixel variance is zero")
    else:
        mean, std = float(stats[0]), float(stats[1])
        if not std > 0:
            raise DegenerateDataError("stored std must be positive")
    images = (ds.images - mean) / std
    return replace(ds, images=images, norm_stats=(mean, std))


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def batch_iter(ds: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Shuffled mini-batches for one epoch; the final partial batch is kept."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    order = np.random.default_rng([seed, epoch]).permutation(len(ds))
    for number, start in enumerate(range(0, len(ds), batch_size)):
        idx = order[start:start + batch_size]
        labels = None if ds.labels is None else ds.labels[idx]
        yield Batch(idx, ds.images[idx], labels, epoch, number, seed)

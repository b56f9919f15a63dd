"""Continual task streams: data ingestion, relabeling, batch iteration.

The base dataset is loaded (MNIST IDX files or a synthetic Gaussian-cluster
source), subsampled once, and normalized once; tasks then share the exact
same input storage and differ only by reseeded label randomization.  All
randomness flows through named streams keyed off the config's base seed, so
the subsample, every task's labels, and every epoch's batch order replay
bit-identically.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .errors import ConfigError, DegenerateDataError, FormatError
from .nn import Batch
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class MnistSource:
    images_path: str
    labels_path: str


@dataclass(frozen=True)
class SyntheticSource:
    n: int
    d: int
    classes: int = 10
    seed: int = 0
    separation: float = 3.0
    spectrum: float = 0.0  # power-law exponent of the per-dimension variances

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.classes < 2:
            raise ConfigError("synthetic source needs n >= 1, d >= 1, classes >= 2")
        if self.spectrum < 0.0:
            raise ConfigError(f"spectrum exponent must be >= 0, got {self.spectrum}")


@dataclass(frozen=True)
class StreamConfig:
    source: Union[MnistSource, SyntheticSource]
    subsample_n: int = 21000
    tasks: int = 40
    epochs_per_task: int = 250
    batch_size: int = 256
    randomize_frac: float = 1.0  # fraction of labels redrawn each task
    base_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.randomize_frac <= 1.0:
            raise ConfigError(f"randomize_frac must be in [0, 1], got {self.randomize_frac}")
        if self.subsample_n < 1 or self.tasks < 1 or self.epochs_per_task < 1:
            raise ConfigError("subsample_n, tasks, epochs_per_task must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class RawDataset:
    images: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,)
    n_classes: int


@dataclass
class BaseDataset:
    inputs: np.ndarray  # (n, d) normalized, shared across tasks
    labels: np.ndarray  # (n,) original labels
    n_classes: int
    mean: float
    std: float
    indices: np.ndarray  # subsample rows taken from the raw dataset


@dataclass(frozen=True)
class TaskView:
    task_index: int
    inputs: np.ndarray  # reference to BaseDataset.inputs (never copied)
    labels: np.ndarray


# ---------------------------------------------------------------------------
# IDX ingestion


def _read_file(path: str) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":  # gzip-compressed IDX
        data = gzip.decompress(data)
    return data


def load_idx(images_path: str, labels_path: str) -> RawDataset:
    """Parse big-endian IDX image/label files into a raw dataset.

    Validates the magic numbers (0x00000803 images, 0x00000801 labels), the
    dimension records, and exact byte counts; failures carry the offending
    byte offset.
    """
    img = _read_file(images_path)
    if len(img) < 16:
        raise FormatError(f"{images_path}: truncated IDX header ({len(img)} bytes)", offset=len(img))
    magic, n_img, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}", offset=0)
    expected = 16 + n_img * rows * cols
    if len(img) != expected:
        raise FormatError(
            f"{images_path}: expected {expected} bytes, found {len(img)}",
            offset=min(len(img), expected),
        )
    images = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n_img, rows * cols)

    lab = _read_file(labels_path)
    if len(lab) < 8:
        raise FormatError(f"{labels_path}: truncated IDX header ({len(lab)} bytes)", offset=len(lab))
    magic, n_lab = struct.unpack(">II", lab[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}", offset=0)
    if len(lab) != 8 + n_lab:
        raise FormatError(
            f"{labels_path}: expected {8 + n_lab} bytes, found {len(lab)}",
            offset=min(len(lab), 8 + n_lab),
        )
    if n_lab != n_img:
        raise FormatError(
            f"image count {n_img} != label count {n_lab}", offset=4
        )
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8)
    return RawDataset(images, labels, 10)


# ---------------------------------------------------------------------------
# synthetic source


def synthesize(src: SyntheticSource) -> RawDataset:
    """Class-conditional Gaussian clusters.

    Cluster means are drawn once at scale separation / sqrt(d), so the
    expected distance between two class means is about separation * sqrt(2).
    With spectrum > 0 the per-dimension variances follow a power law
    (j+1)^-spectrum normalized to mean 1, concentrating variance in the
    leading dimensions the way image pixels do; spectrum 0 is isotropic.
    """
    rng = stream(src.seed, "synthetic")
    means = rng.normal(0.0, src.separation / math.sqrt(src.d), size=(src.classes, src.d))
    labels = rng.integers(0, src.classes, size=src.n)
    noise = rng.normal(0.0, 1.0, size=(src.n, src.d))
    if src.spectrum > 0.0:
        scales = (1.0 + np.arange(src.d)) ** (-0.5 * src.spectrum)
        scales *= math.sqrt(src.d / np.sum(scales**2))
        noise *= scales
    images = means[labels] + noise
    return RawDataset(images, labels, src.classes)


def load_source(cfg: StreamConfig) -> RawDataset:
    if isinstance(cfg.source, MnistSource):
        return load_idx(cfg.source.images_path, cfg.source.labels_path)
    return synthesize(cfg.source)


# ---------------------------------------------------------------------------
# preparation and task construction


def prepare(raw: RawDataset, cfg: StreamConfig) -> BaseDataset:
    """Subsample once, then normalize by the scalar pixel mean/std.

    The subsample is fixed by the base seed; every task reuses the resulting
    input matrix unchanged.
    """
    n_total = raw.images.shape[0]
    if n_total == 0:
        raise ConfigError("raw dataset is empty")
    if cfg.subsample_n > n_total:
        raise ConfigError(f"subsample_n {cfg.subsample_n} exceeds dataset size {n_total}")
    rng = stream(cfg.base_seed, "subsample")
    indices = rng.choice(n_total, size=cfg.subsample_n, replace=False)
    x = raw.images[indices].astype(np.float64)
    mean = float(np.mean(x))
    std = float(np.std(x))
    if std == 0.0:
        raise DegenerateDataError("zero pixel standard deviation; cannot normalize")
    inputs = (x - mean) / std
    labels = raw.labels[indices].astype(np.int64)
    return BaseDataset(inputs, labels, raw.n_classes, mean, std, indices)


def task_labels(base: BaseDataset, task_index: int, cfg: StreamConfig) -> np.ndarray:
    """Labels for one task: a seeded fraction of positions redrawn uniformly.

    Positions come from a permutation seeded by (base_seed, task_index); at
    randomize_frac = 1.0 the whole label vector is redrawn.
    """
    if task_index >= cfg.tasks:
        raise ValueError(f"task_index {task_index} out of range [0, {cfg.tasks})")
    n = base.labels.shape[0]
    rng = stream(cfg.base_seed, "labels", task_index)
    k = int(round(cfg.randomize_frac * n))
    positions = rng.permutation(n)[:k]
    labels = base.labels.copy()
    labels[positions] = rng.integers(0, base.n_classes, size=k)
    return labels


def make_task(base: BaseDataset, task_index: int, cfg: StreamConfig) -> TaskView:
    return TaskView(task_index, base.inputs, task_labels(base, task_index, cfg))


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def batches(view: TaskView, epoch: int, cfg: StreamConfig) -> Iterator[Batch]:
    """Deterministic shuffled minibatches; the final partial batch is kept."""
    n = view.inputs.shape[0]
    order = stream(cfg.base_seed, "batches", view.task_index, epoch).permutation(n)
    for start in range(0, n, cfg.batch_size):
        sel = order[start : start + cfg.batch_size]
        yield Batch(view.inputs[sel], view.labels[sel])

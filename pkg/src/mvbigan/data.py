"""Dataset ingestion and view construction.

Covers IDX file parsing, the three digit view regimes (four quarters,
cumulative masked streams, heterogeneous label + half image), nested view
sequence sampling, epoch batching, and the two-dimensional Gaussian-mixture
task used as an analytic oracle.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .core import Example, SubsetMask, ViewSequence, ViewSet
from .errors import (
    BadMagic,
    EmptyDataset,
    InvalidLength,
    InvalidSpec,
    ShapeMismatch,
    TruncatedFile,
)

IMAGE_SIDE = 28
IMAGE_SIZE = IMAGE_SIDE * IMAGE_SIDE
QUARTER_SIDE = IMAGE_SIDE // 2
QUARTER_SIZE = QUARTER_SIDE * QUARTER_SIDE
MASK_FILL = 0.5

IDX_UBYTE = 0x08


@dataclass(frozen=True)
class TaskSpec:
    """Shapes and sequence length for one task."""

    kind: str  # quarters | stream | hetero | synthetic
    num_views: int
    view_sizes: tuple
    output_size: int
    seq_len: int
    # stream geometry: each step reveals one more random rectangle with
    # sides drawn uniformly from [rect_min, rect_max]
    rect_min: int = 6
    rect_max: int = 12

    @staticmethod
    def quarters(seq_len: int = 4) -> "TaskSpec":
        return TaskSpec("quarters", 4, (QUARTER_SIZE,) * 4, IMAGE_SIZE, seq_len)

    @staticmethod
    def stream(steps: int = 4, rect_min: int = 6, rect_max: int = 12) -> "TaskSpec":
        return TaskSpec(
            "stream", steps, (IMAGE_SIZE,) * steps, IMAGE_SIZE, steps,
            rect_min=rect_min, rect_max=rect_max,
        )

    @staticmethod
    def hetero(seq_len: int = 2) -> "TaskSpec":
        return TaskSpec("hetero", 2, (10, IMAGE_SIZE), IMAGE_SIZE, seq_len)

    @staticmethod
    def synthetic(seq_len: int = 2) -> "TaskSpec":
        return TaskSpec("synthetic", 2, (1, 1), 2, seq_len)

    @property
    def ordered_sequences(self) -> bool:
        """Stream views arrive in a fixed order; other tasks are permuted."""
        return self.kind == "stream"

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        d = dict(d)
        d["view_sizes"] = tuple(d["view_sizes"])
        return TaskSpec(**d)


@dataclass(frozen=True)
class SyntheticSpec:
    """Four-component planar Gaussian mixture with sign views.

    Targets are drawn from equally weighted components centered at the
    four points (+-1, +-1) with isotropic stddev; view k is the sign of
    target dimension k as a +-1 scalar, optionally perturbed by additive
    Gaussian noise.
    """

    centers: tuple = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))
    stddev: float = 0.1
    view_noise: float = 0.0

    def validate(self) -> "SyntheticSpec":
        pts = [tuple(float(v) for v in c) for c in self.centers]
        if len(set(pts)) != len(pts):
            raise InvalidSpec("mixture centers must be distinct")
        if any(len(c) != 2 for c in pts):
            raise InvalidSpec("mixture centers must be planar points")
        if not self.stddev > 0:
            raise InvalidSpec(f"stddev must be positive, got {self.stddev}")
        if self.view_noise < 0:
            raise InvalidSpec("view_noise must be nonnegative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["centers"] = tuple(tuple(c) for c in d["centers"])
        return SyntheticSpec(**d).validate()


class ViewDataset:
    """Column-stored dataset: targets (N, n) and per-view arrays (N, n_k)."""

    def __init__(self, task: TaskSpec, targets: np.ndarray, views: Sequence[np.ndarray]):
        targets = np.ascontiguousarray(targets, dtype=np.float32)
        views = [np.ascontiguousarray(v, dtype=np.float32) for v in views]
        if targets.ndim != 2 or targets.shape[1] != task.output_size:
            raise ShapeMismatch(f"targets shape {targets.shape} for task {task.kind}")
        if len(views) != task.num_views:
            raise ShapeMismatch(f"{len(views)} view columns, task has {task.num_views}")
        for k, v in enumerate(views):
            if v.shape != (len(targets), task.view_sizes[k]):
                raise ShapeMismatch(f"view column {k} has shape {v.shape}")
        self.task = task
        self.targets = targets
        self.views = views

    def __len__(self) -> int:
        return len(self.targets)

    def example(self, i: int) -> Example:
        """Materialize item i as core domain types (full mask)."""
        vs = ViewSet(
            SubsetMask.full(self.task.num_views),
            tuple(v[i] for v in self.views),
        )
        return Example(self.targets[i], vs)

    def viewset(self, i: int, mask: SubsetMask | Sequence[int] | None = None) -> ViewSet:
        full = ViewSet(
            SubsetMask.full(self.task.num_views), tuple(v[i] for v in self.views)
        )
        return full if mask is None else full.with_mask(mask)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def parse_idx(path) -> tuple:
    """Parse an IDX file into (dims, data scaled to [0, 1]).

    Header is big-endian: two zero bytes, a type code (unsigned byte data
    only), a dimension count, then one 32-bit size per dimension, then the
    raw bytes. Each byte b maps to b / 255. Gzipped files are accepted
    transparently.
    """
    blob = _read_bytes(path)
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is too short for a header")
    zero, dtype, ndim = blob[0] << 8 | blob[1], blob[2], blob[3]
    if zero != 0 or dtype != IDX_UBYTE:
        raise BadMagic(f"{path}: bad magic {blob[:4].hex()}")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFile(f"{path}: header needs {header} bytes, file has {len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(blob) - header != count:
        raise TruncatedFile(
            f"{path}: payload has {len(blob) - header} bytes, dims {dims} need {count}"
        )
    data = np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)
    return list(dims), data.astype(np.float32) / 255.0


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (inverse of parse_idx for u8 data)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, IDX_UBYTE, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx_images(path) -> np.ndarray:
    """Images from an IDX file as (N, 28, 28) floats in [0, 1]."""
    dims, data = parse_idx(path)
    if len(dims) != 3 or dims[1] != IMAGE_SIDE or dims[2] != IMAGE_SIDE:
        raise ShapeMismatch(f"{path}: expected N x 28 x 28 images, got dims {dims}")
    return data


def load_idx_labels(path) -> np.ndarray:
    """Labels from an IDX file as (N,) integers."""
    dims, data = parse_idx(path)
    if len(dims) != 1:
        raise ShapeMismatch(f"{path}: expected a flat label file, got dims {dims}")
    return np.rint(data * 255.0).astype(np.int64)


def make_quarter_views(image: np.ndarray) -> ViewSet:
    """Split a 28x28 image into its four quarters, all views available.

    View order: top-left, top-right, bottom-left, bottom-right; each is
    flattened to length 196 in row-major order.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ShapeMismatch(f"expected a 28x28 image, got shape {img.shape}")
    q = QUARTER_SIDE
    quarters = (
        img[:q, :q].reshape(-1),
        img[:q, q:].reshape(-1),
        img[q:, :q].reshape(-1),
        img[q:, q:].reshape(-1),
    )
    return ViewSet(SubsetMask.full(4), quarters)


def reassemble_quarters(views: Sequence[np.ndarray]) -> np.ndarray:
    """Inverse of make_quarter_views: four length-196 views to a 28x28 image."""
    if len(views) != 4:
        raise ShapeMismatch(f"need 4 quarter views, got {len(views)}")
    q = QUARTER_SIDE
    quads = [np.asarray(v, dtype=np.float32).reshape(q, q) for v in views]
    top = np.concatenate([quads[0], quads[1]], axis=1)
    bottom = np.concatenate([quads[2], quads[3]], axis=1)
    return np.concatenate([top, bottom], axis=0)


def make_stream_views(
    image: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    rect_min: int = 6,
    rect_max: int = 12,
) -> list:
    """Cumulative reveal views of a 28x28 image.

    View t (from 0) shows the union of t random axis-aligned rectangles of
    the image; everything still hidden is exactly the 0.5 fill. View 0
    carries no information, and revealed sets grow with t.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ShapeMismatch(f"expected a 28x28 image, got shape {img.shape}")
    if steps < 1:
        raise InvalidLength(f"need at least one stream step, got {steps}")
    revealed = np.zeros_like(img, dtype=bool)
    views = []
    for t in range(steps):
        if t > 0:
            h = int(rng.integers(rect_min, rect_max + 1))
            w = int(rng.integers(rect_min, rect_max + 1))
            r = int(rng.integers(0, IMAGE_SIDE - h + 1))
            c = int(rng.integers(0, IMAGE_SIDE - w + 1))
            revealed[r : r + h, c : c + w] = True
        views.append(np.where(revealed, img, MASK_FILL).reshape(-1))
    return views


def make_hetero_views(
    image: np.ndarray, label: int, rng: np.random.Generator
) -> ViewSet:
    """Heterogeneous pair: a one-hot class attribute and a half-hidden image.

    View 0 is the length-10 one-hot label; view 1 is the image with one
    random half (left, right, top, or bottom) replaced by the 0.5 fill.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ShapeMismatch(f"expected a 28x28 image, got shape {img.shape}")
    if not 0 <= int(label) <= 9:
        raise ValueError(f"label must be in 0..9, got {label}")
    onehot = np.zeros(10, dtype=np.float32)
    onehot[int(label)] = 1.0
    masked = img.copy()
    half = IMAGE_SIDE // 2
    side = int(rng.integers(4))
    if side == 0:
        masked[:, :half] = MASK_FILL
    elif side == 1:
        masked[:, half:] = MASK_FILL
    elif side == 2:
        masked[:half, :] = MASK_FILL
    else:
        masked[half:, :] = MASK_FILL
    return ViewSet(SubsetMask.full(2), (onehot, masked.reshape(-1)))


def sample_view_sequence(
    num_views: int, length: int, rng: np.random.Generator, ordered: bool = False
) -> ViewSequence:
    """Nested masks with popcounts 1..length.

    Views are added one at a time in a uniformly random order (or in index
    order for stream-style tasks where arrival order is fixed).
    """
    if not 1 <= length <= num_views:
        raise InvalidLength(f"length must be in 1..{num_views}, got {length}")
    order = np.arange(num_views) if ordered else rng.permutation(num_views)
    bits = np.zeros(num_views, dtype=np.int8)
    masks = []
    for t in range(length):
        bits[order[t]] = 1
        masks.append(SubsetMask(bits.copy()))
    return ViewSequence(tuple(masks))


def make_batches(
    dataset, batch_size: int, rng: "np.random.Generator | int"
) -> list:
    """Index batches covering one epoch: full shuffle, final short batch kept."""
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def sample_synthetic(
    spec: SyntheticSpec, count: int, rng: np.random.Generator
) -> ViewDataset:
    """Draw a synthetic mixture dataset with sign views."""
    spec.validate()
    if count < 1:
        raise InvalidSpec(f"count must be >= 1, got {count}")
    centers = np.asarray(spec.centers, dtype=np.float64)
    comp = rng.integers(len(centers), size=count)
    y = centers[comp] + spec.stddev * rng.standard_normal((count, 2))
    view0 = np.where(y[:, 0] > 0, 1.0, -1.0)[:, None]
    view1 = np.where(y[:, 1] > 0, 1.0, -1.0)[:, None]
    if spec.view_noise > 0:
        view0 = view0 + spec.view_noise * rng.standard_normal(view0.shape)
        view1 = view1 + spec.view_noise * rng.standard_normal(view1.shape)
    return ViewDataset(
        TaskSpec.synthetic(),
        y.astype(np.float32),
        [view0.astype(np.float32), view1.astype(np.float32)],
    )


def build_quarters_dataset(images: np.ndarray) -> ViewDataset:
    """Four-quarter dataset from (N, 28, 28) images in [0, 1]."""
    imgs = np.asarray(images, dtype=np.float32)
    n = len(imgs)
    q = QUARTER_SIDE
    views = [
        imgs[:, :q, :q].reshape(n, -1),
        imgs[:, :q, q:].reshape(n, -1),
        imgs[:, q:, :q].reshape(n, -1),
        imgs[:, q:, q:].reshape(n, -1),
    ]
    return ViewDataset(TaskSpec.quarters(), imgs.reshape(n, -1), views)


def build_stream_dataset(
    images: np.ndarray, task: TaskSpec, rng: np.random.Generator
) -> ViewDataset:
    """Cumulative-reveal dataset; reveal geometry is drawn once per item."""
    imgs = np.asarray(images, dtype=np.float32)
    n = len(imgs)
    cols = [np.empty((n, IMAGE_SIZE), dtype=np.float32) for _ in range(task.num_views)]
    for i in range(n):
        for t, view in enumerate(
            make_stream_views(imgs[i], task.num_views, rng, task.rect_min, task.rect_max)
        ):
            cols[t][i] = view
    return ViewDataset(task, imgs.reshape(n, -1), cols)


def build_hetero_dataset(
    images: np.ndarray, labels: np.ndarray, rng: np.random.Generator
) -> ViewDataset:
    """Label one-hot + half-hidden image dataset."""
    imgs = np.asarray(images, dtype=np.float32)
    n = len(imgs)
    attr = np.zeros((n, 10), dtype=np.float32)
    attr[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
    partial = np.empty((n, IMAGE_SIZE), dtype=np.float32)
    for i in range(n):
        partial[i] = make_hetero_views(imgs[i], int(labels[i]), rng).views[1]
    return ViewDataset(TaskSpec.hetero(), imgs.reshape(n, -1), [attr, partial])

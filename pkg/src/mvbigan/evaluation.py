"""Evaluation: conditional sampling, the variance-versus-views profile,
sample-grid rendering, and the synthetic-mixture report.

Everything here runs the model in eval mode and is read-only on its
parameters. Per-item randomness is derived from (seed, item index), so
results do not depend on evaluation order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .core import LatentGaussian, SubsetMask, ViewSet
from .data import (
    IMAGE_SIDE,
    MASK_FILL,
    QUARTER_SIDE,
    SyntheticSpec,
    TaskSpec,
    ViewDataset,
    reassemble_quarters,
    sample_view_sequence,
)
from .errors import ShapeMismatch, TooFewSamples
from .networks import ModelBundle, encode_views, generate, sample_latent


def sample_conditional(
    model: ModelBundle,
    viewset: ViewSet,
    num_samples: int,
    rng: "np.random.Generator | None",
    zero_noise: bool = False,
) -> np.ndarray:
    """Draw `num_samples` outputs conditioned on the available views.

    Encodes the views once, samples that latent Gaussian pathwise, and
    decodes each sample; with `zero_noise` every draw is the modal output
    G(mu). Returns an (M, n) array.
    """
    if num_samples < 1:
        raise TooFewSamples(f"need at least one sample, got {num_samples}")
    with torch.no_grad():
        g = encode_views(model, viewset, train_mode=False)
        mu = torch.as_tensor(g.mu).unsqueeze(0).expand(num_samples, -1)
        lv = torch.as_tensor(g.log_var).unsqueeze(0).expand(num_samples, -1)
        if zero_noise:
            eps = torch.zeros_like(mu)
        else:
            eps = torch.from_numpy(
                rng.standard_normal((num_samples, g.z_dim)).astype(np.float32)
            )
        z = sample_latent(LatentGaussian(mu, lv), eps)
        out = generate(model, z, train_mode=False)
    return out.cpu().numpy()


def variance_metric(samples: np.ndarray) -> float:
    """Mean over output dimensions of the population variance across samples."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"samples must be (M, n), got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise TooFewSamples(f"variance needs >= 2 samples, got {arr.shape[0]}")
    return float(np.var(arr, axis=0).mean())


@dataclass(frozen=True)
class VarianceProfile:
    """Sample variance per sequence step, and per-item monotonicity."""

    step_mean_variance: np.ndarray  # (L,)
    item_variances: np.ndarray  # (N, L)
    item_monotone: np.ndarray  # (N,) bool: strictly decreasing at every step
    fraction_monotone: float

    @property
    def ratio_last_to_first(self) -> float:
        """Mean over items of var(last step) / var(first step)."""
        first = np.maximum(self.item_variances[:, 0], 1e-12)
        return float(np.mean(self.item_variances[:, -1] / first))


def variance_profile(
    model: ModelBundle,
    dataset: ViewDataset,
    seq_len: int,
    num_samples: int = 16,
    seed: "int | np.random.Generator" = 0,
    max_items: "int | None" = None,
) -> VarianceProfile:
    """Variance of conditional samples at each step of one view sequence
    per item, plus how often the variance strictly decreases throughout."""
    if isinstance(seed, np.random.Generator):
        item_seeds = seed.integers(np.iinfo(np.int64).max, size=len(dataset))
    else:
        item_seeds = [np.random.SeedSequence([int(seed), i]) for i in range(len(dataset))]
    n = len(dataset) if max_items is None else min(max_items, len(dataset))
    task = dataset.task
    variances = np.empty((n, seq_len), dtype=np.float64)
    for i in range(n):
        rng = np.random.default_rng(item_seeds[i])
        seq = sample_view_sequence(
            task.num_views, seq_len, rng, ordered=task.ordered_sequences
        )
        for t, mask in enumerate(seq):
            vs = dataset.viewset(i, mask)
            samples = sample_conditional(model, vs, num_samples, rng)
            variances[i, t] = variance_metric(samples)
    monotone = np.all(np.diff(variances, axis=1) < 0, axis=1)
    return VarianceProfile(
        step_mean_variance=variances.mean(axis=0),
        item_variances=variances,
        item_monotone=monotone,
        fraction_monotone=float(monotone.mean()),
    )


def to_gray(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to bytes, rounding half up (0.5 -> 128)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a binary PGM (P5, maxval 255) from a [0, 1] float image."""
    img = to_gray(image)
    if img.ndim != 2:
        raise ShapeMismatch(f"PGM needs a 2-D image, got shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a binary PGM written by write_pgm, as bytes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:  # magic, width, height, maxval
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(blob, dtype=np.uint8, offset=pos, count=width * height)
    return data.reshape(height, width)


def render_grid(inputs, sample_rows, path) -> np.ndarray:
    """Write a PGM grid: one row per sequence step, the input visualization
    first, then that step's samples. Returns the [0, 1] float canvas."""
    if len(inputs) != len(sample_rows):
        raise ShapeMismatch(
            f"{len(inputs)} input cells vs {len(sample_rows)} sample rows"
        )
    rows = []
    cell_shape = np.asarray(inputs[0]).shape
    for inp, samples in zip(inputs, sample_rows):
        cells = [np.asarray(inp, dtype=np.float64)]
        cells.extend(np.asarray(s, dtype=np.float64) for s in samples)
        for c in cells:
            if c.shape != cell_shape:
                raise ShapeMismatch(
                    f"cell shape {c.shape} differs from {cell_shape}"
                )
        rows.append(np.concatenate(cells, axis=1))
    canvas = np.concatenate(rows, axis=0)
    write_pgm(path, canvas)
    return canvas


def quarter_canvas(viewset: ViewSet) -> np.ndarray:
    """28x28 visualization of available quarters; hidden ones at mid-gray."""
    q = QUARTER_SIDE
    cells = []
    for k in range(4):
        if viewset.mask.bits[k]:
            cells.append(viewset.views[k].reshape(q, q))
        else:
            cells.append(np.full((q, q), MASK_FILL, dtype=np.float32))
    return reassemble_quarters([c.reshape(-1) for c in cells])


def input_canvas(task: TaskSpec, viewset: ViewSet) -> np.ndarray:
    """Visualization of the conditioning input for grid rendering."""
    if task.kind == "quarters":
        return quarter_canvas(viewset)
    if task.kind == "stream":
        available = np.flatnonzero(viewset.mask.bits)
        if len(available) == 0:
            return np.full((IMAGE_SIDE, IMAGE_SIDE), MASK_FILL, dtype=np.float32)
        return viewset.views[int(available[-1])].reshape(IMAGE_SIDE, IMAGE_SIDE)
    if task.kind == "hetero":
        if viewset.mask.bits[1]:
            return viewset.views[1].reshape(IMAGE_SIDE, IMAGE_SIDE)
        return np.full((IMAGE_SIDE, IMAGE_SIDE), MASK_FILL, dtype=np.float32)
    raise ShapeMismatch(f"no image visualization for task '{task.kind}'")


SIGN_CONDITIONS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def synthetic_analytic(spec: SyntheticSpec) -> dict:
    """Exact conditional moments of the sign-view mixture.

    Conditioning on both sign views isolates one component: mean at its
    center, variance stddev^2 per dimension. Conditioning on one sign view
    alone leaves a two-component mixture over the orthogonal dimension,
    with mean 0 and variance 1 + stddev^2 there.
    """
    var = float(spec.stddev) ** 2
    out = {}
    for s1, s2 in SIGN_CONDITIONS:
        out[(s1, s2)] = {
            "two_view_mean": (float(s1), float(s2)),
            "two_view_var": (var, var),
            "one_view_mean": (float(s1), 0.0),
            "one_view_var": (var, 1.0 + var),
            "other_view_mean": (0.0, float(s2)),
            "other_view_var": (1.0 + var, var),
        }
    return out


def synthetic_report(
    model: ModelBundle,
    spec: SyntheticSpec,
    num_samples: int = 512,
    seed: int = 0,
) -> dict:
    """Empirical versus analytic conditional moments for every sign pattern:
    both views, the first view alone, and the second view alone."""
    analytic = synthetic_analytic(spec)
    report = {"stddev": spec.stddev, "conditions": []}
    for idx, (s1, s2) in enumerate(SIGN_CONDITIONS):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        views = (np.array([s1], dtype=np.float32), np.array([s2], dtype=np.float32))
        sample_two = sample_conditional(
            model, ViewSet(SubsetMask((1, 1)), views), num_samples, rng
        )
        sample_one = sample_conditional(
            model, ViewSet(SubsetMask((1, 0)), views), num_samples, rng
        )
        sample_other = sample_conditional(
            model, ViewSet(SubsetMask((0, 1)), views), num_samples, rng
        )
        ana = analytic[(s1, s2)]
        entry = {
            "signs": [s1, s2],
            "two_view_mean": sample_two.mean(axis=0).tolist(),
            "two_view_var": sample_two.var(axis=0).tolist(),
            "one_view_mean": sample_one.mean(axis=0).tolist(),
            "one_view_var": sample_one.var(axis=0).tolist(),
            "other_view_mean": sample_other.mean(axis=0).tolist(),
            "other_view_var": sample_other.var(axis=0).tolist(),
        }
        for key, value in ana.items():
            entry[f"analytic_{key}"] = list(value)
        report["conditions"].append(entry)
    return report


def write_report(report: dict, text_path, json_path) -> None:
    """Write a report as key-value text plus machine-readable JSON."""
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    lines = []

    def emit(prefix: str, value):
        if isinstance(value, dict):
            for key in sorted(value):
                emit(f"{prefix}.{key}" if prefix else str(key), value[key])
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for i, item in enumerate(value):
                emit(f"{prefix}[{i}]", item)
        else:
            lines.append(f"{prefix} = {value}")

    emit("", report)
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

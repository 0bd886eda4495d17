"""Core domain types: subset masks, view sets, sequences, latent Gaussians.

All types are immutable values; every operation here is pure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import (
    LengthMismatch,
    NonBinaryEntry,
    NonFinite,
    NotNested,
    ShapeMismatch,
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ShapeMismatch(f"mask must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise NonBinaryEntry(f"mask entries must be 0 or 1, got {arr.tolist()}")
    return _freeze(arr.astype(np.int8))


@dataclass(frozen=True)
class SubsetMask:
    """Index vector s in {0,1}^V marking which views are available."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _as_bits(self.bits))

    def __len__(self) -> int:
        return int(self.bits.size)

    @property
    def count(self) -> int:
        """Number of available views."""
        return int(self.bits.sum())

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float32)

    @staticmethod
    def full(num_views: int) -> "SubsetMask":
        return SubsetMask(np.ones(num_views, dtype=np.int8))

    @staticmethod
    def empty(num_views: int) -> "SubsetMask":
        return SubsetMask(np.zeros(num_views, dtype=np.int8))


def validate_mask(mask: SubsetMask | Sequence[int], num_views: int) -> SubsetMask:
    """Check length and binary alphabet; return the validated mask.

    Raises LengthMismatch or NonBinaryEntry.
    """
    m = mask if isinstance(mask, SubsetMask) else SubsetMask(np.asarray(mask))
    if len(m) != num_views:
        raise LengthMismatch(f"mask has length {len(m)}, expected {num_views}")
    return m


def is_nested(s: SubsetMask, s_prime: SubsetMask) -> bool:
    """True iff s' keeps every view of s, i.e. s'_k >= s_k for all k."""
    if len(s) != len(s_prime):
        raise LengthMismatch(
            f"cannot compare masks of lengths {len(s)} and {len(s_prime)}"
        )
    return bool((s_prime.bits >= s.bits).all())


@dataclass(frozen=True)
class ViewSet:
    """The available views of one object: V flat arrays plus their mask.

    Views with mask bit 0 are stored as all-zero placeholders of the same
    shape, so downstream aggregation is a dense masked sum.
    """

    mask: SubsetMask
    views: tuple

    def __post_init__(self):
        views = tuple(np.asarray(v, dtype=np.float32) for v in self.views)
        if len(views) != len(self.mask):
            raise LengthMismatch(
                f"{len(views)} views for a mask of length {len(self.mask)}"
            )
        for k, v in enumerate(views):
            if v.ndim != 1:
                raise ShapeMismatch(f"view {k} must be flat, got shape {v.shape}")
            if not np.isfinite(v).all():
                raise NonFinite(f"view {k} contains non-finite values")
        object.__setattr__(self, "views", tuple(_freeze(v) for v in views))

    @property
    def num_views(self) -> int:
        return len(self.mask)

    def view_sizes(self) -> tuple:
        return tuple(v.size for v in self.views)

    def with_mask(self, mask: SubsetMask | Sequence[int]) -> "ViewSet":
        """Same views under a different availability mask."""
        return ViewSet(validate_mask(mask, self.num_views), self.views)


@dataclass(frozen=True)
class ViewSequence:
    """Ordered nested masks s(1) <= ... <= s(L) over a fixed view count."""

    masks: tuple

    def __post_init__(self):
        masks = tuple(self.masks)
        for a, b in zip(masks, masks[1:]):
            if not is_nested(a, b):
                raise NotNested(
                    f"sequence not nested: {a.bits.tolist()} then {b.bits.tolist()}"
                )
        object.__setattr__(self, "masks", masks)

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def as_matrix(self) -> np.ndarray:
        """Stack to an (L, V) float32 matrix."""
        return np.stack([m.as_float() for m in self.masks], axis=0)


@dataclass(frozen=True)
class Example:
    """A training example: the target to predict plus its view set."""

    target: np.ndarray
    viewset: ViewSet

    def __post_init__(self):
        target = np.asarray(self.target, dtype=np.float32)
        if not np.isfinite(target).all():
            raise NonFinite("target contains non-finite values")
        object.__setattr__(self, "target", _freeze(target))


def _finite_all(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.isfinite(x).all())


@dataclass(frozen=True)
class LatentGaussian:
    """Diagonal Gaussian over latent space, parameterized as (mu, log sigma^2).

    Holds either numpy arrays or torch tensors; torch tensors keep their
    autograd graph so losses can differentiate through both parameters.
    """

    mu: "np.ndarray | torch.Tensor"
    log_var: "np.ndarray | torch.Tensor"

    def __post_init__(self):
        if tuple(self.mu.shape) != tuple(self.log_var.shape):
            raise ShapeMismatch(
                f"mu shape {tuple(self.mu.shape)} != log_var shape "
                f"{tuple(self.log_var.shape)}"
            )
        if not (_finite_all(self.mu) and _finite_all(self.log_var)):
            raise NonFinite("latent Gaussian parameters must be finite")

    @property
    def z_dim(self) -> int:
        return int(self.mu.shape[-1])

    def sigma(self):
        """Per-dimension standard deviation exp(log_var / 2)."""
        if isinstance(self.log_var, torch.Tensor):
            return torch.exp(0.5 * self.log_var)
        return np.exp(0.5 * self.log_var)

    def numpy(self) -> "LatentGaussian":
        """Detach to numpy arrays (no-op when already numpy)."""
        if isinstance(self.mu, torch.Tensor):
            return LatentGaussian(
                self.mu.detach().cpu().numpy(), self.log_var.detach().cpu().numpy()
            )
        return self

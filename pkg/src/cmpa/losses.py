"""Regression and contrastive losses with ordinal rating bins.

Ratings in [0, 1] are discretized into ``C`` equal bins. Two latents form a
similar pair (``Y = 1``) when their ratings share a bin; dissimilar pairs
are pushed apart up to a margin that grows with the bin gap:
``m = |X_i - X_j| * s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

MARGIN_MODES = ("fixed_margin", "variable_margin")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class RatingBins:
    C: int = 5

    def __post_init__(self):
        if self.C < 2:
            raise LossError(f"need at least 2 bins, got C={self.C}")

    @property
    def bin_width(self):
        return 1.0 / self.C

    def assign(self, rating):
        return assign_bin(rating, self.C)


@dataclass(frozen=True)
class PairLabel:
    Y: int
    X_i: int
    X_j: int

    def __post_init__(self):
        if self.Y != int(self.X_i == self.X_j):
            raise LossError(f"inconsistent pair label {self}")


@dataclass(frozen=True)
class LossConfig:
    margin_s: float = 1.0
    C: int = 5
    mode: str = "variable_margin"
    # Scales the contrastive term in the joint loss; 1.0 is the plain sum.
    contrastive_weight: float = 1.0

    def __post_init__(self):
        if not self.margin_s > 0:
            raise LossError("margin_s must be positive")
        if self.C < 2:
            raise LossError("C must be at least 2")
        if self.mode not in MARGIN_MODES:
            raise LossError(f"unknown margin mode {self.mode!r}; expected one of {MARGIN_MODES}")
        if self.contrastive_weight < 0:
            raise LossError("contrastive_weight must be non-negative")


def assign_bin(rating: float, C: int) -> int:
    """Bin index ``min(floor(rating * C), C - 1)``; 1.0 folds into the top bin."""
    if not 0.0 <= rating <= 1.0:
        raise LossError(f"rating {rating} outside [0, 1]")
    return min(math.floor(rating * C), C - 1)


def assign_bins(ratings, C: int) -> torch.Tensor:
    ratings = torch.as_tensor(ratings, dtype=torch.float64)
    if torch.any((ratings < 0) | (ratings > 1)):
        raise LossError("ratings must lie in [0, 1]")
    return torch.clamp(torch.floor(ratings * C), max=C - 1).long()


def mse_loss(pred, target) -> torch.Tensor:
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape or pred.numel() == 0:
        raise LossError(f"shape mismatch or empty: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def _squared_distance(a, b):
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise LossError(f"dimension mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.sum((a - b) ** 2, dim=-1)


def _safe_sqrt(sq):
    # sqrt has an infinite derivative at 0; route zero distances around it.
    positive = sq > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def euclidean_distance(a, b) -> torch.Tensor:
    """L2 distance over the last axis; gradient is 0 (not NaN) at coincident points."""
    return _safe_sqrt(_squared_distance(a, b))


def contrastive_pair_loss(D, Y, m):
    """``0.5 * Y * D**2 + 0.5 * (1 - Y) * max(0, m - D)**2``"""
    D, Y, m = torch.as_tensor(D), torch.as_tensor(Y), torch.as_tensor(m)
    return 0.5 * Y * D**2 + 0.5 * (1 - Y) * torch.clamp(m - D, min=0) ** 2


def variable_margin(X_i, X_j, s: float):
    if torch.is_tensor(X_i) or torch.is_tensor(X_j):
        return torch.abs(torch.as_tensor(X_i) - torch.as_tensor(X_j)).to(torch.get_default_dtype()) * s
    return abs(X_i - X_j) * s


def pair_margins(bins_a, bins_b, cfg: LossConfig) -> torch.Tensor:
    if cfg.mode == "variable_margin":
        return variable_margin(bins_a, bins_b, cfg.margin_s)
    return torch.full(bins_a.shape, float(cfg.margin_s))


def weighted_contrastive_batch_loss(latents_a, latents_b, bins_a, bins_b, cfg: LossConfig) -> torch.Tensor:
    """Mean contrastive loss over pairs ``(latents_a[k], latents_b[k])``.

    ``bins_a`` / ``bins_b`` are the rating-bin indices of each member; the
    similarity flag is their equality.
    """
    latents_a, latents_b = torch.as_tensor(latents_a), torch.as_tensor(latents_b)
    bins_a, bins_b = torch.as_tensor(bins_a), torch.as_tensor(bins_b)
    if latents_a.ndim != 2 or latents_a.shape != latents_b.shape:
        raise LossError(f"latent batches differ: {tuple(latents_a.shape)} vs {tuple(latents_b.shape)}")
    if bins_a.shape != (latents_a.shape[0],) or bins_b.shape != bins_a.shape:
        raise LossError("one bin index per pair member is required")
    if latents_a.shape[0] == 0:
        raise LossError("empty batch")
    sq = _squared_distance(latents_a, latents_b)
    dist = _safe_sqrt(sq)
    same = (bins_a == bins_b).to(sq.dtype)
    margin = pair_margins(bins_a, bins_b, cfg).to(sq.dtype)
    per_pair = 0.5 * same * sq + 0.5 * (1 - same) * torch.clamp(margin - dist, min=0) ** 2
    return per_pair.mean()


def joint_loss(mse, contrastive, weight: float = 1.0):
    return mse + weight * contrastive

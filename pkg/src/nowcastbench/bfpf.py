"""Bi-focus attention biases for rainfall windows.

Two additive score modifiers for scaled dot-product attention:

* non-zero focus — keys close to (but not on) dry hours receive a positive
  bias ``lambda * exp(-d/tau)`` where ``d`` is the distance to the nearest
  exact-zero rainfall entry, steering attention toward wet spells;
* temporal focus — keys receive a linearly increasing recency bias
  ``alpha * j / L_K`` so later (more recent) positions attract more mass.

Distances are computed once from the raw (de-normalized) precipitation
channel of the input window: z-scored values no longer contain exact zeros.
``lambda`` and ``alpha`` are the only learnable quantities; the distance
construction is integer-valued and receives no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class BfpfParams:
    """Configuration for both focus biases.

    ``lambda_scale`` and ``alpha_scale`` are the initial values of the two
    learnable scalars. ``sentinel`` is a large finite distance (hours) used
    where a position is itself zero or has no zero on either side:
    exp(-sentinel/tau) underflows cleanly to 0.0 at double precision.
    """

    tau: float = 2.0
    lambda_scale: float = 0.1
    alpha_scale: float = 0.1
    nonzero_focus: bool = True
    temporal_focus: bool = True
    sentinel: float = 1e4

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sentinel <= 0 or not np.isfinite(self.sentinel):
            raise ValueError("sentinel must be a large finite value")


def zero_distance(raw_tp: np.ndarray, sentinel: float = 1e4) -> np.ndarray:
    """Distance (in steps) from each position to its nearest exact zero.

    Zero positions themselves get ``sentinel``; a side with no zero
    contributes ``sentinel`` to the min. Computed with two masked cumulative
    scans; equals the O(L^2) definition exactly.
    """
    x = np.asarray(raw_tp, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("raw_tp must be 1-D or 2-D (batch x length)")
    _, length = x.shape
    idx = np.arange(length, dtype=np.float64)
    is_zero = x == 0.0

    left = np.where(is_zero, idx, -np.inf)
    left = np.maximum.accumulate(left, axis=1)
    dist_left = idx - left  # +inf where no zero on the left

    right = np.where(is_zero, idx, np.inf)
    right = np.minimum.accumulate(right[:, ::-1], axis=1)[:, ::-1]
    dist_right = right - idx

    d = np.minimum(np.minimum(dist_left, dist_right), sentinel)
    d = np.where(is_zero, sentinel, d)
    return d[0] if squeeze else d


def proximity_weights(distances: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise exp(-d/tau); sentinel distances underflow to ~0."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    with np.errstate(under="ignore"):
        return np.exp(-np.asarray(distances, dtype=np.float64) / tau)


def nonzero_focus_hook(scores: Tensor, weights: np.ndarray, lambda_scale: Tensor) -> Tensor:
    """Add ``lambda * W`` along the key axis of a B x H x L_Q x L_K score tensor.

    The bias depends on the key index only and is shared across heads and
    queries. ``weights`` is a constant; only ``lambda_scale`` is learnable.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[None, :]
    if w.shape[-1] != scores.shape[-1]:
        raise ValueError(
            f"proximity weights cover {w.shape[-1]} keys, scores have {scores.shape[-1]}"
        )
    bias = Tensor(w[:, None, None, :])
    return scores + lambda_scale * bias


def temporal_focus_hook(scores: Tensor, alpha_scale: Tensor) -> Tensor:
    """Add the recency bias ``alpha * [0, 1, ..., L_K - 1] / L_K`` per key."""
    n_keys = scores.shape[-1]
    if n_keys < 1:
        raise ValueError("scores must have at least one key")
    ramp = Tensor(np.arange(n_keys, dtype=np.float64) / n_keys)
    return scores + alpha_scale * ramp


def make_hooks(params: BfpfParams, proximity: np.ndarray | None,
               lambda_scale: Tensor, alpha_scale: Tensor) -> list:
    """Assemble the configured score modifiers for attention_forward."""
    hooks = []
    if params.nonzero_focus:
        if proximity is None:
            raise ValueError("non-zero focus requires proximity weights")
        hooks.append(lambda s: nonzero_focus_hook(s, proximity, lambda_scale))
    if params.temporal_focus:
        hooks.append(lambda s: temporal_focus_hook(s, alpha_scale))
    return hooks

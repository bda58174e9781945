"""Directional, distance and padding masks as additive attention-logit offsets.

Rows index the querying word, columns the attended word. A masked entry
holds ``SENTINEL`` (-1e9) rather than IEEE -inf.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import SENTINEL, DimensionError

DIRECTIONS = ("forward", "backward")


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


@lru_cache(maxsize=256)
def build_directional(n: int, direction: str) -> np.ndarray:
    """Forward: word i sees only j < i. Backward: only j > i. Never itself."""
    _check_direction(direction)
    if n < 1:
        raise DimensionError(f"mask length must be >= 1, got {n}")
    i, j = np.indices((n, n))
    visible = j < i if direction == "forward" else j > i
    m = np.where(visible, 0.0, SENTINEL)
    m.flags.writeable = False
    return m


@lru_cache(maxsize=256)
def build_distance(n: int) -> np.ndarray:
    """Entry (i, j) is -|i - j|."""
    if n < 1:
        raise DimensionError(f"mask length must be >= 1, got {n}")
    i, j = np.indices((n, n))
    m = -np.abs(i - j).astype(np.float64)
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class MaskSet:
    forward: np.ndarray
    backward: np.ndarray
    distance: np.ndarray
    alpha: float
    n: int

    def directional(self, direction: str) -> np.ndarray:
        _check_direction(direction)
        return self.forward if direction == "forward" else self.backward


@lru_cache(maxsize=256)
def mask_set(n: int, alpha: float) -> MaskSet:
    if alpha < 0:
        raise ValueError(f"distance alpha must be non-negative, got {alpha}")
    return MaskSet(build_directional(n, "forward"), build_directional(n, "backward"),
                   build_distance(n), float(alpha), n)


def combine(masks: MaskSet, direction: str, pad_mask) -> np.ndarray:
    """``M_dir + alpha * M_dis`` with padded positions masked.

    Padded key columns are masked so real rows never see padding; padded
    query rows are masked too, so they attend to nothing and come out zero.

    ``pad_mask`` is true at real positions. It may be a single length-n row
    (returns n x n) or a batch B x n (returns B x n x n).
    """
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if pad_mask.shape[-1] != masks.n:
        raise DimensionError(f"pad mask length {pad_mask.shape[-1]} != mask size {masks.n}")
    base = masks.directional(direction)
    if masks.alpha != 0.0:
        base = base + masks.alpha * masks.distance
    # saturate: sentinel plus a distance penalty stays at the sentinel
    base = np.maximum(base, SENTINEL)
    live = pad_mask[..., :, None] & pad_mask[..., None, :]
    return np.where(live, base, SENTINEL)

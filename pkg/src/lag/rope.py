"""Rotary position embedding: apply, strip, and reposition stored keys.

A key vector is split into interleaved 2D subvectors (x[2i], x[2i+1]); each
subvector is rotated by an angle that depends on the token position and the
subvector index. Stripping multiplies by the inverse rotation, after which
the rotation for a new position can be applied, moving a cached key to a new
slot in a different context. Values never carry the rotation and are left
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import rotate_pairs
from .errors import ConfigurationError, PositionError
from .segment import KvSegment


@dataclass(frozen=True)
class RopeParams:
    head_dim: int
    base: float = 10000.0

    def __post_init__(self) -> None:
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ConfigurationError("head_dim must be a positive even number")
        if self.base <= 1.0:
            raise ConfigurationError("base must be > 1")


def angles(params: RopeParams, position: int | float) -> np.ndarray:
    """Rotation angles for one position: position * base^(-2i/head_dim)."""
    i = np.arange(params.head_dim // 2, dtype=np.float64)
    return position * params.base ** (-2.0 * i / params.head_dim)


def rope_apply(x, theta: float) -> np.ndarray:
    """Rotate a 2-vector by theta (the position-dependent rotation matrix)."""
    x = np.asarray(x, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])


def rope_strip(y, theta: float) -> np.ndarray:
    """Inverse rotation: rope_strip(rope_apply(x, t), t) == x."""
    return rope_apply(y, -theta)


def cos_sin_table(params: RopeParams, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin of the angle grid for a position vector, as float32
    [len(positions), head_dim // 2] tables ready for the rotation kernel."""
    i = np.arange(params.head_dim // 2, dtype=np.float64)
    freq = params.base ** (-2.0 * i / params.head_dim)
    grid = np.asarray(positions, dtype=np.float64)[:, None] * freq[None, :]
    return np.cos(grid).astype(np.float32), np.sin(grid).astype(np.float32)


def rotate_keys(keys: np.ndarray, positions: np.ndarray, params: RopeParams) -> np.ndarray:
    """Apply the per-position rotation to keys [heads, span, head_dim]."""
    cos, sin = cos_sin_table(params, positions)
    return rotate_pairs(np.ascontiguousarray(keys), cos, sin)


def strip_keys(keys: np.ndarray, positions: np.ndarray, params: RopeParams) -> np.ndarray:
    """Remove the per-position rotation (rotation by the negated angle)."""
    cos, sin = cos_sin_table(params, positions)
    return rotate_pairs(np.ascontiguousarray(keys), cos, -sin)


def reposition_segment(
    segment: KvSegment, new_positions, params: RopeParams
) -> KvSegment:
    """Move a stored segment to new positions: strip each key subvector of
    its original rotation, then rotate it for the new position. Values and
    the model fingerprint are unchanged."""
    new_positions = np.asarray(new_positions, dtype=np.int64)
    if new_positions.shape[0] != segment.span_len:
        raise PositionError(
            f"{new_positions.shape[0]} new positions for span {segment.span_len}"
        )
    if new_positions.shape[0] > 1 and not (np.diff(new_positions) > 0).all():
        raise PositionError("new positions must be strictly increasing")
    new_keys = [
        rotate_keys(strip_keys(k, segment.positions, params), new_positions, params)
        for k in segment.keys
    ]
    return KvSegment(
        keys=new_keys,
        values=segment.values,
        positions=new_positions,
        model_fingerprint=segment.model_fingerprint,
    )

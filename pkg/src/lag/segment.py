"""KV segments: the per-layer key/value arrays stored, moved, and injected."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibilityError, InputError, PositionError

FP32_BYTES = 4


@dataclass
class KvSegment:
    """Per-layer keys/values for a span of tokens plus the positions they
    were encoded at.

    keys[l] and values[l] have shape [num_kv_heads, span_len, head_dim]
    (float32). Keys carry the rotary rotation of their positions; values are
    rotation-free. Instances are treated as immutable.
    """

    keys: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    model_fingerprint: str = ""

    @property
    def num_layers(self) -> int:
        return len(self.keys)

    @property
    def span_len(self) -> int:
        return int(self.positions.shape[0])

    @property
    def num_kv_heads(self) -> int:
        return int(self.keys[0].shape[0]) if self.keys else 0

    @property
    def head_dim(self) -> int:
        return int(self.keys[0].shape[2]) if self.keys else 0

    @property
    def payload_nbytes(self) -> int:
        """span_len x layers x 2 x kv_heads x head_dim x 4 bytes."""
        return (
            self.span_len
            * self.num_layers
            * 2
            * self.num_kv_heads
            * self.head_dim
            * FP32_BYTES
        )

    def validate(self) -> None:
        if len(self.keys) != len(self.values):
            raise InputError("keys/values layer counts differ")
        span = self.span_len
        for l, (k, v) in enumerate(zip(self.keys, self.values)):
            if k.shape != v.shape:
                raise InputError(f"layer {l}: key/value shapes differ")
            if k.shape[1] != span:
                raise InputError(f"layer {l}: span {k.shape[1]} != positions {span}")
            if not (np.isfinite(k).all() and np.isfinite(v).all()):
                raise InputError(f"layer {l}: non-finite values")
        if span > 1 and not (np.diff(self.positions) > 0).all():
            raise PositionError("positions must be strictly increasing")

    def slice(self, start: int, stop: int) -> "KvSegment":
        """Sub-span [start, stop); position metadata is preserved."""
        if not (0 <= start <= stop <= self.span_len):
            raise InputError(f"bad slice [{start}:{stop}] of span {self.span_len}")
        return KvSegment(
            keys=[k[:, start:stop, :].copy() for k in self.keys],
            values=[v[:, start:stop, :].copy() for v in self.values],
            positions=self.positions[start:stop].copy(),
            model_fingerprint=self.model_fingerprint,
        )

    @staticmethod
    def concat(segments: list["KvSegment"]) -> "KvSegment":
        """Concatenate spans layerwise; positions must end up increasing."""
        segments = [s for s in segments if s.span_len > 0]
        if not segments:
            return KvSegment()
        first = segments[0]
        for s in segments[1:]:
            if s.model_fingerprint != first.model_fingerprint:
                raise IncompatibilityError("cannot concat segments of different models")
            if s.num_layers != first.num_layers:
                raise InputError("cannot concat segments with different layer counts")
        out = KvSegment(
            keys=[
                np.concatenate([s.keys[l] for s in segments], axis=1)
                for l in range(first.num_layers)
            ],
            values=[
                np.concatenate([s.values[l] for s in segments], axis=1)
                for l in range(first.num_layers)
            ],
            positions=np.concatenate([s.positions for s in segments]),
            model_fingerprint=first.model_fingerprint,
        )
        out.validate()
        return out

    def allclose(self, other: "KvSegment", atol: float = 0.0) -> bool:
        if (
            self.num_layers != other.num_layers
            or self.span_len != other.span_len
            or not np.array_equal(self.positions, other.positions)
        ):
            return False
        for l in range(self.num_layers):
            if not (
                np.allclose(self.keys[l], other.keys[l], rtol=0.0, atol=atol)
                and np.allclose(self.values[l], other.values[l], rtol=0.0, atol=atol)
            ):
                return False
        return True

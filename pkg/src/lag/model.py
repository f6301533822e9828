"""Deterministic decoder-only reference transformer with exportable KV caches.

The model exists to make KV mechanics testable: weights are seeded random
(never trained), everything is float32, and the forward pass accepts an
injected KV prefix whose keys already carry rotary rotations for positions
preceding the new tokens.
"""

from __future__ import annotations

import numpy as np

from ._kernels import causal_attention, rotate_pairs
from .config import ModelConfig
from .errors import CapacityError, IncompatibilityError, InputError, PositionError
from .rope import RopeParams, cos_sin_table
from .segment import KvSegment

_NORM_EPS = np.float32(1e-5)


class ByteTokenizer:
    """Byte-level tokenizer: ids 0..255 are raw bytes, 256 is end-of-text."""

    EOS = 256
    vocab_size = 257

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids) -> str:
        return bytes(i for i in ids if 0 <= i < 256).decode("utf-8", errors="replace")


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + _NORM_EPS)
    return x * scale.astype(np.float32)


def _gelu(x: np.ndarray) -> np.ndarray:
    c = np.float32(np.sqrt(2.0 / np.pi))
    return np.float32(0.5) * x * (
        np.float32(1.0) + np.tanh(c * (x + np.float32(0.044715) * x * x * x))
    )


class Model:
    """Pre-norm decoder stack with grouped KV heads and rotary positions.

    Weights are a pure function of (config, weight_seed); instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.fingerprint = config.fingerprint()
        self.rope_params = RopeParams(config.head_dim, config.rope_base)
        h = config.hidden_dim
        nh, nkv, d = config.num_heads, config.num_kv_heads, config.head_dim
        rng = np.random.default_rng(config.weight_seed)
        std = 1.0 / np.sqrt(h)

        def w(*shape):
            return rng.normal(0.0, std, size=shape).astype(np.float32)

        self.embedding = w(config.vocab_size, h)
        self.layers = [
            {
                "wq": w(h, nh * d),
                "wk": w(h, nkv * d),
                "wv": w(h, nkv * d),
                "wo": w(nh * d, h),
                "w1": w(h, 4 * h),
                "w2": w(4 * h, h),
            }
            for _ in range(config.num_layers)
        ]
        self.head = w(h, config.vocab_size)

    # -- internals ---------------------------------------------------------

    def _check_tokens(self, tokens: np.ndarray) -> None:
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise InputError("token id out of vocabulary")

    def _check_prefix(self, prefix: KvSegment | None, start_position: int) -> int:
        if prefix is None or prefix.span_len == 0:
            return 0
        if prefix.model_fingerprint != self.fingerprint:
            raise IncompatibilityError("KV prefix was produced by a different model")
        if prefix.num_layers != self.config.num_layers:
            raise IncompatibilityError("KV prefix layer count mismatch")
        pos = prefix.positions
        if pos.shape[0] > 1 and not (np.diff(pos) > 0).all():
            raise PositionError("prefix positions must be strictly increasing")
        if int(pos.max()) >= start_position:
            raise PositionError(
                f"prefix positions reach {int(pos.max())}, new tokens start at "
                f"{start_position}"
            )
        return prefix.span_len

    def _forward(
        self,
        tokens,
        start_position: int,
        prefix: KvSegment | None,
    ) -> tuple[np.ndarray, KvSegment]:
        """Returns (final hidden states [T, hidden], KvSegment of the new
        tokens). New keys are stored rotated at their absolute positions."""
        tokens = np.asarray(tokens, dtype=np.int64)
        self._check_tokens(tokens)
        t_new = tokens.shape[0]
        if start_position < 0:
            raise InputError("start_position must be >= 0")
        if start_position + t_new > self.config.max_positions:
            raise CapacityError(
                f"sequence end {start_position + t_new} exceeds max_positions "
                f"{self.config.max_positions}"
            )
        n_prefix = self._check_prefix(prefix, start_position)

        cfg = self.config
        nh, nkv, d = cfg.num_heads, cfg.num_kv_heads, cfg.head_dim
        positions = np.arange(start_position, start_position + t_new, dtype=np.int64)
        cos, sin = cos_sin_table(self.rope_params, positions)

        x = self.embedding[tokens]
        new_keys: list[np.ndarray] = []
        new_values: list[np.ndarray] = []
        for li, layer in enumerate(self.layers):
            xn = _rmsnorm(x)
            q = np.ascontiguousarray(
                (xn @ layer["wq"]).reshape(t_new, nh, d).transpose(1, 0, 2)
            )
            k = np.ascontiguousarray(
                (xn @ layer["wk"]).reshape(t_new, nkv, d).transpose(1, 0, 2)
            )
            v = np.ascontiguousarray(
                (xn @ layer["wv"]).reshape(t_new, nkv, d).transpose(1, 0, 2)
            )
            q = rotate_pairs(q, cos, sin)
            k = rotate_pairs(k, cos, sin)
            new_keys.append(k)
            new_values.append(v)
            if n_prefix:
                k_all = np.ascontiguousarray(
                    np.concatenate([prefix.keys[li], k], axis=1)
                )
                v_all = np.ascontiguousarray(
                    np.concatenate([prefix.values[li], v], axis=1)
                )
            else:
                k_all, v_all = k, v
            att = causal_attention(q, k_all, v_all, n_prefix)
            x = x + att.transpose(1, 0, 2).reshape(t_new, nh * d) @ layer["wo"]
            xf = _rmsnorm(x)
            x = x + _gelu(xf @ layer["w1"]) @ layer["w2"]

        segment = KvSegment(
            keys=new_keys,
            values=new_values,
            positions=positions,
            model_fingerprint=self.fingerprint,
        )
        return _rmsnorm(x), segment


def build_model(config: ModelConfig) -> Model:
    """Build the reference model; identical (config, seed) gives identical
    weights."""
    return Model(config)


def encode(
    model: Model, tokens, start_position: int = 0
) -> tuple[KvSegment, np.ndarray]:
    """Full KV cache for a token sequence encoded at the given positions,
    plus the final hidden states."""
    hidden, segment = model._forward(tokens, start_position, None)
    return segment, hidden


def forward_with_prefix(
    model: Model,
    prefix: KvSegment | None,
    tokens,
    start_position: int,
) -> tuple[np.ndarray, KvSegment]:
    """Logits for new tokens attending to an injected KV prefix; returns the
    combined cache (prefix followed by the new tokens' KV)."""
    hidden, new_segment = model._forward(tokens, start_position, prefix)
    logits = hidden @ model.head
    if prefix is not None and prefix.span_len:
        combined = KvSegment.concat([prefix, new_segment])
    else:
        combined = new_segment
    return logits, combined


def greedy_decode(
    model: Model,
    prefix: KvSegment | None,
    prompt,
    max_new: int,
    stop_ids=frozenset(),
) -> list[int]:
    """Deterministic argmax decoding. A generated stop id is consumed but
    excluded from the returned sequence."""
    out: list[int] = []
    if max_new <= 0:
        return out
    prompt = list(prompt)
    if prefix is not None and prefix.span_len:
        start = int(prefix.positions.max()) + 1
    else:
        start = 0
    if not prompt:
        raise InputError("greedy_decode needs a non-empty prompt")
    logits, cache = forward_with_prefix(model, prefix, prompt, start)
    pos = start + len(prompt)
    while True:
        next_id = int(np.argmax(logits[-1]))
        if next_id in stop_ids:
            break
        out.append(next_id)
        if len(out) >= max_new:
            break
        logits, cache = forward_with_prefix(model, cache, [next_id], pos)
        pos += 1
    return out

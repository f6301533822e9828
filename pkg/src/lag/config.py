"""Model hyperparameters and the fingerprint that gates KV compatibility."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the reference decoder; (config, weight_seed) fully
    determines the weights, so the fingerprint doubles as a KV-cache
    compatibility key."""

    num_layers: int = 4
    num_heads: int = 4
    num_kv_heads: int = 2
    head_dim: int = 16
    vocab_size: int = 257
    rope_base: float = 10000.0
    max_positions: int = 4096
    weight_seed: int = 0

    @property
    def hidden_dim(self) -> int:
        return self.num_heads * self.head_dim

    def validate(self) -> None:
        if self.num_layers <= 0:
            raise ConfigurationError("num_layers must be positive")
        if self.num_heads <= 0 or self.num_kv_heads <= 0:
            raise ConfigurationError("head counts must be positive")
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ConfigurationError(
                f"head_dim must be a positive even number, got {self.head_dim}"
            )
        if self.num_heads % self.num_kv_heads != 0:
            raise ConfigurationError(
                f"num_heads ({self.num_heads}) must be a multiple of "
                f"num_kv_heads ({self.num_kv_heads})"
            )
        if self.vocab_size <= 0:
            raise ConfigurationError("vocab_size must be positive")
        if self.rope_base <= 1.0:
            raise ConfigurationError("rope_base must be > 1")
        if self.max_positions <= 0:
            raise ConfigurationError("max_positions must be positive")

    def fingerprint(self) -> str:
        """Hex sha256 over every field, including the weight seed."""
        text = "|".join(
            str(v)
            for v in (
                "lag-model-v1",
                self.num_layers,
                self.num_heads,
                self.num_kv_heads,
                self.head_dim,
                self.vocab_size,
                self.rope_base,
                self.max_positions,
                self.weight_seed,
            )
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


# Fingerprint used by entries that carry no KV payload (text logs).
TEXT_FINGERPRINT = "0" * 64

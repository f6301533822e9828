"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot kernels directly and a model-level encode/decode
workload. Run from a checkout:

    python3 benchmarks/bench_kernels.py

The active model path follows LAG_NUMBA; this script times both
implementations explicitly regardless of the flag.
"""

from __future__ import annotations

import time

import numpy as np

from lag._kernels import (
    HAS_NUMBA,
    causal_attention_numba,
    causal_attention_numpy,
    rotate_pairs_numba,
    rotate_pairs_numpy,
    backend_name,
)
from lag.config import ModelConfig
from lag.model import build_model, encode, greedy_decode


def _time(fn, *args, repeat: int = 5) -> float:
    fn(*args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels() -> list[tuple[str, float, float | None]]:
    rng = np.random.default_rng(0)
    n_heads, n_kv, seq, d = 8, 4, 512, 32
    q = rng.standard_normal((n_heads, seq, d)).astype(np.float32)
    k = rng.standard_normal((n_kv, seq, d)).astype(np.float32)
    v = rng.standard_normal((n_kv, seq, d)).astype(np.float32)
    cos = rng.standard_normal((seq, d // 2)).astype(np.float32)
    sin = rng.standard_normal((seq, d // 2)).astype(np.float32)

    rows = []
    t_np = _time(causal_attention_numpy, q, k, v, 0)
    t_nb = _time(causal_attention_numba, q, k, v, 0) if HAS_NUMBA else None
    rows.append((f"causal_attention  [{n_heads}h x {seq} x {d}]", t_np, t_nb))

    t_np = _time(rotate_pairs_numpy, k, cos, sin)
    t_nb = _time(rotate_pairs_numba, k, cos, sin) if HAS_NUMBA else None
    rows.append((f"rotate_pairs      [{n_kv}h x {seq} x {d}]", t_np, t_nb))
    return rows


def bench_model() -> list[tuple[str, float, float | None]]:
    import lag._kernels as kernels
    import lag.model as model_mod

    cfg = ModelConfig(num_layers=4, num_heads=8, num_kv_heads=4, head_dim=32,
                      vocab_size=257, max_positions=2048)
    model = build_model(cfg)
    rng = np.random.default_rng(1)
    tokens = rng.integers(0, 256, 512).tolist()
    prompt = rng.integers(0, 256, 64).tolist()

    def with_backend(att, rot, fn):
        saved = kernels.causal_attention, kernels.rotate_pairs
        saved_model = model_mod.causal_attention, model_mod.rotate_pairs
        kernels.causal_attention, kernels.rotate_pairs = att, rot
        model_mod.causal_attention, model_mod.rotate_pairs = att, rot
        try:
            return fn()
        finally:
            kernels.causal_attention, kernels.rotate_pairs = saved
            model_mod.causal_attention, model_mod.rotate_pairs = saved_model

    rows = []
    enc_np = with_backend(
        causal_attention_numpy, rotate_pairs_numpy,
        lambda: _time(lambda: encode(model, tokens, 0), repeat=3),
    )
    enc_nb = None
    if HAS_NUMBA:
        enc_nb = with_backend(
            causal_attention_numba, rotate_pairs_numba,
            lambda: _time(lambda: encode(model, tokens, 0), repeat=3),
        )
    rows.append(("encode 512 tokens (4 layers)", enc_np, enc_nb))

    dec_np = with_backend(
        causal_attention_numpy, rotate_pairs_numpy,
        lambda: _time(lambda: greedy_decode(model, None, prompt, 64), repeat=3),
    )
    dec_nb = None
    if HAS_NUMBA:
        dec_nb = with_backend(
            causal_attention_numba, rotate_pairs_numba,
            lambda: _time(lambda: greedy_decode(model, None, prompt, 64), repeat=3),
        )
    rows.append(("greedy decode 64 tokens", dec_np, dec_nb))
    return rows


def main() -> None:
    print(f"active backend: {backend_name()} (numba available: {HAS_NUMBA})")
    print(f"{'workload':<42} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, t_np, t_nb in bench_kernels() + bench_model():
        nb = f"{t_nb * 1e3:.2f}ms" if t_nb is not None else "n/a"
        speed = f"{t_np / t_nb:.2f}x" if t_nb else "-"
        print(f"{name:<42} {t_np * 1e3:>8.2f}ms {nb:>10} {speed:>8}")


if __name__ == "__main__":
    main()

"""Built-in verification suites behind `lag selftest`.

Each suite re-checks one load-bearing contract against an independent
oracle: rotary round trips, repositioning vs a scalar longhand, KV-prefix
injection vs a full forward pass, top-k retrieval vs brute force, and the
entry wire format round trip with CRC detection.
"""

from __future__ import annotations

import tempfile
import time

import numpy as np

from .codec import LogEntry, SelectionStrategy, deserialize, serialize
from .config import ModelConfig
from .errors import ChecksumError, FormatError
from .model import build_model, encode, forward_with_prefix
from .rope import RopeParams, angles, reposition_segment, rope_apply, rope_strip
from .segment import KvSegment
from .store import LogStore, normalize


def _suite_rope_round_trip() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    xs = rng.standard_normal((10_000, 2)).astype(np.float32)
    thetas = rng.uniform(-50.0, 50.0, 10_000)
    t0 = time.perf_counter()
    worst = 0.0
    for x, theta in zip(xs, thetas):
        back = rope_strip(rope_apply(x, theta), theta)
        worst = max(worst, float(np.abs(back - x).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 1.0
    return ok, f"max abs err {worst:.2e} over 10000 pairs in {elapsed:.2f}s"


def _suite_repositioning() -> tuple[bool, str]:
    cfg = ModelConfig(num_layers=2, num_heads=4, num_kv_heads=2, head_dim=8,
                      vocab_size=64, weight_seed=3, max_positions=256)
    model = build_model(cfg)
    rng = np.random.default_rng(5)
    seg, _ = encode(model, rng.integers(0, 64, 12).tolist(), 4)
    params = RopeParams(cfg.head_dim, cfg.rope_base)
    new_pos = np.arange(40, 52)
    moved = reposition_segment(seg, new_pos, params)

    worst = 0.0
    for l in range(seg.num_layers):
        for h in range(seg.num_kv_heads):
            for t in range(seg.span_len):
                th_old = angles(params, int(seg.positions[t]))
                th_new = angles(params, int(new_pos[t]))
                for i in range(cfg.head_dim // 2):
                    pair = seg.keys[l][h, t, 2 * i : 2 * i + 2]
                    expect = rope_apply(rope_strip(pair, th_old[i]), th_new[i])
                    got = moved.keys[l][h, t, 2 * i : 2 * i + 2]
                    worst = max(worst, float(np.abs(expect - got).max()))
    values_ok = all(
        np.array_equal(moved.values[l], seg.values[l]) for l in range(seg.num_layers)
    )
    two_step = reposition_segment(
        reposition_segment(seg, np.arange(100, 112), params), new_pos, params
    )
    comp = max(
        float(np.abs(two_step.keys[l] - moved.keys[l]).max())
        for l in range(seg.num_layers)
    )
    ok = worst <= 1e-6 and values_ok and comp <= 1e-5
    return ok, f"oracle err {worst:.2e}, composition err {comp:.2e}, values intact {values_ok}"


def _suite_kv_injection() -> tuple[bool, str]:
    cfg = ModelConfig(num_layers=3, num_heads=4, num_kv_heads=2, head_dim=8,
                      vocab_size=128, weight_seed=1, max_positions=128)
    model = build_model(cfg)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n1 = int(rng.integers(1, 32))
        n2 = int(rng.integers(1, 65 - n1))
        t1 = rng.integers(0, 128, n1).tolist()
        t2 = rng.integers(0, 128, n2).tolist()
        prefix, _ = encode(model, t1, 0)
        got, _ = forward_with_prefix(model, prefix, t2, n1)
        full, _ = forward_with_prefix(model, None, t1 + t2, 0)
        worst = max(worst, float(np.abs(got - full[n1:]).max()))
    ok = worst <= 1e-4
    return ok, f"max abs logit diff {worst:.2e} over 50 random pairs"


def _suite_retrieval() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    dim, n, queries, k = 16, 300, 30, 5
    with tempfile.TemporaryDirectory() as tmp:
        store = LogStore(tmp, mode="w")
        for i in range(n):
            vec = normalize(rng.standard_normal(dim).astype(np.float32))
            if i and i % 10 == 0:
                # duplicated embeddings force ties that must resolve by
                # insertion order
                vec = store.get(0).embedding.copy()
            store.put(
                LogEntry(
                    task_text=f"t{i}",
                    retrieval_key_text=f"k{i}",
                    embedding=vec,
                    strategy=SelectionStrategy("last_round_text"),
                    text_payload=f"p{i}",
                )
            )
        agree = True
        for _ in range(queries):
            q = rng.standard_normal(dim).astype(np.float32)
            qn = q.astype(np.float64) / np.linalg.norm(q.astype(np.float64))
            brute = sorted(
                range(n),
                key=lambda i: (
                    -float(store.get(i).embedding.astype(np.float64) @ qn),
                    i,
                ),
            )[:k]
            got = [r.entry_id for r in store.retrieve_topk(q, k)]
            if got != brute:
                agree = False
        store.close()
    return agree, f"{queries} queries over {n} entries, ties included"


def _suite_serialization() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    seg = KvSegment(
        keys=[rng.standard_normal((2, 5, 8)).astype(np.float32) for _ in range(3)],
        values=[rng.standard_normal((2, 5, 8)).astype(np.float32) for _ in range(3)],
        positions=np.arange(10, 15, dtype=np.int64),
        model_fingerprint="ab" * 32,
    )
    entry = LogEntry(
        task_text="t",
        retrieval_key_text="k",
        embedding=normalize(rng.standard_normal(8).astype(np.float32)),
        strategy=SelectionStrategy("last_round"),
        kv=seg,
    )
    blob = serialize(entry)
    round_trip = entry.same_content(deserialize(blob))
    size_ok = seg.payload_nbytes == 5 * 3 * 2 * 2 * 8 * 4

    crc_ok = True
    for pos in range(0, len(blob), max(1, len(blob) // 50)):
        damaged = bytearray(blob)
        damaged[pos] ^= 0xFF
        try:
            deserialize(bytes(damaged))
            crc_ok = False
        except (ChecksumError, FormatError):
            pass
    return round_trip and size_ok and crc_ok, (
        f"round trip {round_trip}, size law {size_ok}, corruption detected {crc_ok}"
    )


SUITES = [
    ("rope-round-trip", _suite_rope_round_trip),
    ("repositioning", _suite_repositioning),
    ("kv-injection-equivalence", _suite_kv_injection),
    ("retrieval-exactness", _suite_retrieval),
    ("serialization", _suite_serialization),
]


def run_selftest(out=print) -> bool:
    all_ok = True
    for name, suite in SUITES:
        ok, detail = suite()
        all_ok = all_ok and ok
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok

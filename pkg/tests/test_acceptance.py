"""Acceptance gate: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; every tolerance is pinned here, not configurable.
"""

import math
import time

import numpy as np
import pytest

from lag.backends import Backends, HashedBagOfWordsEmbedder
from lag.codec import LogEntry, SelectionStrategy, deserialize, encode_log, serialize
from lag.config import ModelConfig
from lag.errors import DegenerateStatisticError, FormatError
from lag.metrics import paired_ttest
from lag.model import build_model, encode, forward_with_prefix
from lag.orchestrator import RunConfig
from lag.rope import angles, reposition_segment, rope_apply, rope_strip
from lag.runner import ingest_tasks, run_tasks
from lag.segment import KvSegment
from lag.store import LogStore, normalize
from lag.synth import FactChainGenerator, build_reuse_suite

from tests.test_codec import transcript
from tests.test_metrics import (
    CHOICE_CASES,
    EM_CASES,
    F1_CASES,
    test_transitions_table_shaped_fixture as check_table_shaped_transitions,
)
from tests.test_orchestrator import (
    test_golden_answer_on_round_one as check_golden_answer_round_one,
    test_golden_cap_exhaustion_knowledge_c8 as check_golden_cap_c8,
    test_golden_cap_exhaustion_reasoning_c3 as check_golden_cap_c3,
    test_golden_keywords_then_answer as check_golden_keywords_answer,
)


def _ok(n, detail):
    print(f"[acceptance] criterion {n:>2}: PASS — {detail}")


def test_criterion_01_rope_round_trip():
    rng = np.random.default_rng(2024)
    xs = rng.standard_normal((10_000, 2)).astype(np.float32)
    thetas = rng.uniform(-100.0, 100.0, 10_000)
    start = time.perf_counter()
    worst = 0.0
    for x, theta in zip(xs, thetas):
        worst = max(worst, float(np.abs(rope_strip(rope_apply(x, theta), theta) - x).max()))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-6
    assert elapsed < 1.0
    _ok(1, f"10000 strip(apply(x)) round trips, max err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_repositioning(small_model, rng):
    params = small_model.rope_params
    seg, _ = encode(small_model, rng.integers(0, 256, 14).tolist(), 9)
    new_positions = np.arange(120, 134)
    moved = reposition_segment(seg, new_positions, params)

    worst = 0.0
    for l in range(seg.num_layers):
        for h in range(seg.num_kv_heads):
            for t in range(seg.span_len):
                theta_old = angles(params, int(seg.positions[t]))
                theta_new = angles(params, int(new_positions[t]))
                for i in range(params.head_dim // 2):
                    pair = seg.keys[l][h, t, 2 * i : 2 * i + 2]
                    want = rope_apply(rope_strip(pair, theta_old[i]), theta_new[i])
                    got = moved.keys[l][h, t, 2 * i : 2 * i + 2]
                    worst = max(worst, float(np.abs(want - got).max()))
    assert worst <= 1e-6
    for l in range(seg.num_layers):
        assert np.array_equal(moved.values[l], seg.values[l])

    q = np.arange(500, 514)
    via_q = reposition_segment(reposition_segment(seg, q, params), new_positions, params)
    comp = max(
        float(np.abs(via_q.keys[l] - moved.keys[l]).max()) for l in range(seg.num_layers)
    )
    assert comp <= 1e-5
    _ok(2, f"longhand oracle err {worst:.2e}, composition err {comp:.2e}, values bit-identical")


def test_criterion_03_kv_injection_equivalence():
    model = build_model(
        ModelConfig(num_layers=3, num_heads=4, num_kv_heads=2, head_dim=8,
                    vocab_size=257, weight_seed=9, max_positions=256)
    )
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(50):
        n1 = int(rng.integers(1, 32))
        n2 = int(rng.integers(1, 65 - n1))
        t1 = rng.integers(0, 256, n1).tolist()
        t2 = rng.integers(0, 256, n2).tolist()
        prefix, _ = encode(model, t1, 0)
        injected, _ = forward_with_prefix(model, prefix, t2, n1)
        full, _ = forward_with_prefix(model, None, t1 + t2, 0)
        worst = max(worst, float(np.abs(injected - full[n1:]).max()))
    assert worst <= 1e-4
    _ok(3, f"50 random (t1, t2) pairs <= 64 tokens, max logit err {worst:.2e}")


def test_criterion_04_context_dependence(small_model, embedder):
    two_rounds = transcript(
        "the first round establishes shared context",
        "the second round is what gets stored <ans>ok</ans>",
    )
    full = encode_log(
        small_model, two_rounds, SelectionStrategy("last_round", "full_trace"), embedder
    )
    isolated = encode_log(
        small_model, two_rounds, SelectionStrategy("last_round", "isolated"), embedder
    )
    diff = max(
        float(np.abs(full.kv.keys[l] - isolated.kv.keys[l]).max())
        for l in range(full.kv.num_layers)
    )
    assert diff > 1e-3

    one_round = transcript("a single round transcript <ans>ok</ans>")
    full_1 = encode_log(
        small_model, one_round, SelectionStrategy("last_round", "full_trace"), embedder
    )
    isolated_1 = encode_log(
        small_model, one_round, SelectionStrategy("last_round", "isolated"), embedder
    )
    assert full_1.kv.allclose(isolated_1.kv, atol=0.0)
    assert np.array_equal(full_1.kv.positions, isolated_1.kv.positions)
    _ok(4, f"2-round full vs isolated max key diff {diff:.2e} > 1e-3; 1-round identical")


def test_criterion_05_retrieval_exactness(tmp_path):
    rng = np.random.default_rng(5)
    dim, n_entries, n_queries, k = 16, 1000, 100, 10
    store = LogStore(tmp_path / "store", mode="w")
    vectors = []
    for i in range(n_entries):
        vec = normalize(rng.standard_normal(dim).astype(np.float32))
        if i % 25 == 0 and i:
            vec = vectors[0].copy()  # engineered exact ties
        vectors.append(vec)
        store.put(
            LogEntry(
                task_text=f"t{i}",
                retrieval_key_text=f"k{i}",
                embedding=vec,
                strategy=SelectionStrategy("last_round_text"),
                text_payload=f"p{i}",
            )
        )
    agreements = 0
    for _ in range(n_queries):
        q = rng.standard_normal(dim)
        qn = q / np.linalg.norm(q)
        brute = sorted(
            range(n_entries),
            key=lambda i: (-float(vectors[i].astype(np.float64) @ qn), i),
        )[:k]
        got = [r.entry_id for r in store.retrieve_topk(q, k)]
        agreements += got == brute
    store.close()
    assert agreements == n_queries
    _ok(5, f"{n_queries}/{n_queries} queries over {n_entries} entries match brute force, ties included")


def test_criterion_06_storage_law(small_model, embedder, rng):
    for _ in range(20):
        span = int(rng.integers(1, 16))
        layers = int(rng.integers(1, 5))
        kv_heads = int(rng.integers(1, 5))
        head_dim = 2 * int(rng.integers(1, 9))
        seg = KvSegment(
            keys=[rng.standard_normal((kv_heads, span, head_dim)).astype(np.float32)
                  for _ in range(layers)],
            values=[rng.standard_normal((kv_heads, span, head_dim)).astype(np.float32)
                    for _ in range(layers)],
            positions=np.arange(span, dtype=np.int64),
            model_fingerprint="00" * 32,
        )
        entry = LogEntry(
            task_text="a", retrieval_key_text="b",
            embedding=np.zeros(4, dtype=np.float32),
            strategy=SelectionStrategy("last_round"), kv=seg,
        )
        blob = serialize(entry)
        header = (4 + 2 + 32 + 2 + 16 + 4 * span + 4 + 16 + 4 + 1 + 4 + 1)
        payload = len(blob) - header - 4
        assert payload == span * layers * 2 * kv_heads * head_dim * 4

    fixtures = [
        transcript("one <ans>tiny</ans>"),
        transcript("first round", "second <keywords>find more</keywords>"),
        transcript("alpha", "beta", "gamma <ans>d</ans>"),
        transcript("a", "bb", "ccc", "dddd <subquestion>next step?</subquestion>"),
    ]
    for tr in fixtures:
        sizes = [
            encode_log(small_model, tr, SelectionStrategy(kind), embedder).kv.payload_nbytes
            for kind in ("last_action", "last_round", "last_2_rounds", "last_3_rounds")
        ]
        assert sizes == sorted(sizes)
    _ok(6, "payload bytes = span x layers x 2 x kv_heads x head_dim x 4 for 20 configs; "
           "strategy sizes ordered on all fixtures")


def test_criterion_07_golden_transcripts():
    check_golden_answer_round_one()
    check_golden_keywords_answer()
    check_golden_cap_c8()
    check_golden_cap_c3()
    _ok(7, "byte-for-byte transcripts: round-1 answer, keywords->answer, caps C=8 and C=3")


def test_criterion_08_metric_oracles():
    from lag.metrics import choice_accuracy, exact_match, f1

    n_checked = 0
    for pred, golds, want in EM_CASES:
        assert exact_match(pred, golds) == want
        n_checked += 1
    for pred, golds, want in F1_CASES:
        assert f1(pred, golds) == pytest.approx(want, abs=1e-12)
        n_checked += 1
    for pred, gold, want in CHOICE_CASES:
        assert choice_accuracy(pred, gold) == want
        n_checked += 1
    assert n_checked >= 20
    assert f1("the godfather part ii", ["godfather part"]) == pytest.approx(0.8)
    check_table_shaped_transitions()
    _ok(8, f"{n_checked} hand-computed EM/F1/choice fixtures incl. F1=0.8; "
           "transition fixture totals +20")


def test_criterion_09_behavioral_reuse(tmp_path, small_model):
    seen, unseen = build_reuse_suite()
    backends = Backends(
        generator=FactChainGenerator(),
        embedder=HashedBagOfWordsEmbedder(dimension=256, seed=0),
        model=small_model,
    )
    ingest_tasks(seen, SelectionStrategy("last_round", "full_trace"), backends,
                 tmp_path / "store", max_steps=8, k_docs=1)
    store = LogStore(tmp_path / "store", mode="r")
    standard = run_tasks(unseen, RunConfig(mode="standard", max_steps=8, k_docs=1),
                         backends, None, max_steps=8)
    lag_kv = run_tasks(unseen, RunConfig(mode="lag_kv", max_steps=8, k_docs=1, k_logs=3),
                       backends, store, max_steps=8)
    store.close()
    assert lag_kv.mean_iterations < standard.mean_iterations
    flagship_std = next(r.iterations for r in standard.rows if r.id == "f0-unseen")
    flagship_lag = next(r.iterations for r in lag_kv.rows if r.id == "f0-unseen")
    assert (flagship_std, flagship_lag) == (4, 2)
    _ok(9, f"mean iterations {standard.mean_iterations:.2f} -> {lag_kv.mean_iterations:.2f} "
           f"with logs; flagship 4 -> 2")


def test_criterion_10_paired_ttest():
    a = [1.0, 0.0, 1.0, 1.0, 0.0]
    b = [0.0, 0.0, 1.0, 0.0, 1.0]
    want_t = 0.2 / math.sqrt(0.7 / 5)  # d=[1,0,0,1,-1]: mean .2, var .7
    t, p = paired_ttest(a, b)
    assert abs(t - want_t) <= 1e-9
    assert 0.0 < p < 1.0
    t0, p0 = paired_ttest(a, a)
    assert (t0, p0) == (0.0, 1.0)
    with pytest.raises(DegenerateStatisticError):
        paired_ttest([1.0, 1.0], [0.0, 0.0])
    _ok(10, f"longhand t={want_t:.9f} matched to 1e-9; identical lists -> p=1")


def test_criterion_11_persistence(tmp_path, rng):
    path = tmp_path / "store"
    store = LogStore(path, mode="w")
    entries = []
    for i in range(500):
        span = int(rng.integers(1, 5))
        seg = KvSegment(
            keys=[rng.standard_normal((2, span, 4)).astype(np.float32)],
            values=[rng.standard_normal((2, span, 4)).astype(np.float32)],
            positions=np.arange(span, dtype=np.int64),
            model_fingerprint="cd" * 32,
        )
        entry = LogEntry(
            task_text=f"task {i}",
            retrieval_key_text=f"key {i}",
            embedding=normalize(rng.standard_normal(8).astype(np.float32)),
            strategy=SelectionStrategy("last_round"),
            kv=seg,
        )
        store.put(entry)
        entries.append(entry)
    store.close()

    reopened = LogStore(path, mode="r")
    assert reopened.manifest().count == 500
    for i, entry in enumerate(entries):
        back = reopened.get(i)
        assert back.same_content(entry)
        assert np.array_equal(back.embedding, entry.embedding)
        for l in range(entry.kv.num_layers):
            assert np.array_equal(back.kv.keys[l], entry.kv.keys[l])
            assert np.array_equal(back.kv.values[l], entry.kv.values[l])
    reopened.close()

    blob = serialize(entries[0])
    detected = 0
    for pos in range(len(blob)):
        damaged = bytearray(blob)
        damaged[pos] ^= 0x01
        try:
            deserialize(bytes(damaged))
        except FormatError:
            detected += 1
    assert detected == len(blob)
    _ok(11, f"500 entries reopened bit-exactly; {detected}/{len(blob)} single-byte "
            "corruptions detected")

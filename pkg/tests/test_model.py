import numpy as np
import pytest

from lag.config import ModelConfig
from lag.errors import (
    CapacityError,
    ConfigurationError,
    IncompatibilityError,
    InputError,
    PositionError,
)
from lag.model import ByteTokenizer, build_model, encode, forward_with_prefix, greedy_decode
from tests.conftest import SMALL_CONFIG


def test_build_is_deterministic(small_model):
    again = build_model(SMALL_CONFIG)
    assert np.array_equal(small_model.embedding, again.embedding)
    for a, b in zip(small_model.layers, again.layers):
        for name in a:
            assert np.array_equal(a[name], b[name])


def test_build_rejects_odd_head_dim():
    with pytest.raises(ConfigurationError):
        build_model(ModelConfig(head_dim=15))


def test_build_rejects_zero_layers():
    with pytest.raises(ConfigurationError):
        build_model(ModelConfig(num_layers=0))


def test_build_rejects_indivisible_heads():
    with pytest.raises(ConfigurationError):
        build_model(ModelConfig(num_heads=4, num_kv_heads=3))


def test_seed_changes_weights():
    a = build_model(ModelConfig(weight_seed=1))
    b = build_model(ModelConfig(weight_seed=2))
    assert not np.array_equal(a.embedding, b.embedding)
    assert a.fingerprint != b.fingerprint


def test_encode_single_token(small_model):
    seg, hidden = encode(small_model, [5], 0)
    assert seg.span_len == 1
    assert list(seg.positions) == [0]
    assert seg.num_layers == SMALL_CONFIG.num_layers
    assert hidden.shape == (1, SMALL_CONFIG.hidden_dim)


def test_encode_is_pure(small_model, rng):
    tokens = rng.integers(0, 256, 12).tolist()
    a, _ = encode(small_model, tokens, 3)
    b, _ = encode(small_model, tokens, 3)
    assert a.allclose(b, atol=0.0)


def test_encode_context_changes_keys(small_model, rng):
    # the same span encoded behind different context yields different KV
    t1 = rng.integers(0, 256, 9).tolist()
    t2 = rng.integers(0, 256, 7).tolist()
    full, _ = encode(small_model, t1 + t2, 0)
    tail = full.slice(len(t1), len(t1) + len(t2))
    alone, _ = encode(small_model, t2, len(t1))
    diffs = [np.abs(tail.keys[l] - alone.keys[l]).max() for l in range(tail.num_layers)]
    assert max(diffs) > 1e-3


def test_encode_rejects_bad_token(small_model):
    with pytest.raises(InputError):
        encode(small_model, [SMALL_CONFIG.vocab_size], 0)


def test_encode_rejects_capacity_overflow(small_model):
    with pytest.raises(CapacityError):
        encode(small_model, [1, 2, 3], SMALL_CONFIG.max_positions - 2)


def test_prefix_empty_equals_plain_forward(small_model, rng):
    tokens = rng.integers(0, 256, 8).tolist()
    logits_a, _ = forward_with_prefix(small_model, None, tokens, 0)
    seg, hidden = encode(small_model, tokens, 0)
    logits_b = hidden @ small_model.head
    assert np.array_equal(logits_a, logits_b)
    assert seg.span_len == len(tokens)


@pytest.mark.parametrize("n1,n2", [(1, 1), (5, 9), (20, 20), (31, 33)])
def test_prefix_injection_matches_full_forward(small_model, rng, n1, n2):
    t1 = rng.integers(0, 256, n1).tolist()
    t2 = rng.integers(0, 256, n2).tolist()
    prefix, _ = encode(small_model, t1, 0)
    with_prefix, combined = forward_with_prefix(small_model, prefix, t2, n1)
    full, _ = forward_with_prefix(small_model, None, t1 + t2, 0)
    assert np.abs(with_prefix - full[n1:]).max() <= 1e-4
    assert combined.span_len == n1 + n2
    assert list(combined.positions) == list(range(n1 + n2))


def test_prefix_fingerprint_mismatch(small_model, rng):
    other = build_model(ModelConfig(weight_seed=SMALL_CONFIG.weight_seed + 1))
    seg, _ = encode(other, [1, 2, 3], 0)
    with pytest.raises(IncompatibilityError):
        forward_with_prefix(small_model, seg, [4, 5], 3)


def test_prefix_position_overlap(small_model):
    seg, _ = encode(small_model, [1, 2, 3], 0)
    with pytest.raises(PositionError):
        forward_with_prefix(small_model, seg, [4], 2)


def test_causality(small_model, rng):
    # perturbing token i never changes keys/values at earlier positions
    tokens = rng.integers(0, 256, 10).tolist()
    base, _ = encode(small_model, tokens, 0)
    mutated = list(tokens)
    mutated[6] = (mutated[6] + 1) % 256
    changed, _ = encode(small_model, mutated, 0)
    for l in range(base.num_layers):
        assert np.array_equal(base.keys[l][:, :6], changed.keys[l][:, :6])
        assert np.array_equal(base.values[l][:, :6], changed.values[l][:, :6])


def test_shape_law(small_model, rng):
    tokens = rng.integers(0, 256, 11).tolist()
    seg, _ = encode(small_model, tokens, 0)
    c = SMALL_CONFIG
    assert seg.payload_nbytes == 11 * c.num_layers * 2 * c.num_kv_heads * c.head_dim * 4


def test_greedy_zero_budget(small_model):
    assert greedy_decode(small_model, None, [1, 2], 0) == []


def test_greedy_deterministic(small_model, rng):
    prompt = rng.integers(0, 256, 6).tolist()
    a = greedy_decode(small_model, None, prompt, 12)
    b = greedy_decode(small_model, None, prompt, 12)
    assert a == b
    assert len(a) == 12


def test_greedy_stop_id_consumed_and_excluded(small_model, rng):
    prompt = rng.integers(0, 256, 6).tolist()
    logits, _ = forward_with_prefix(small_model, None, prompt, 0)
    first = int(np.argmax(logits[-1]))
    assert greedy_decode(small_model, None, prompt, 10, stop_ids={first}) == []


def test_greedy_with_prefix_matches_decoding_over_concat(small_model, rng):
    t1 = rng.integers(0, 256, 7).tolist()
    t2 = rng.integers(0, 256, 5).tolist()
    prefix, _ = encode(small_model, t1, 0)
    with_prefix = greedy_decode(small_model, prefix, t2, 8)
    plain = greedy_decode(small_model, None, t1 + t2, 8)
    assert with_prefix == plain


def test_injection_tolerance_is_calibrated_not_slack():
    # fp32 error on the injection suite really is above 1e-9: a tighter gate
    # would reject correct behavior, so 1e-4 is a calibrated bound
    model = build_model(
        ModelConfig(num_layers=3, num_heads=4, num_kv_heads=2, head_dim=8,
                    vocab_size=257, weight_seed=9, max_positions=256)
    )
    gen = np.random.default_rng(31)
    worst = 0.0
    for _ in range(50):
        n1 = int(gen.integers(1, 32))
        n2 = int(gen.integers(1, 65 - n1))
        t1 = gen.integers(0, 256, n1).tolist()
        t2 = gen.integers(0, 256, n2).tolist()
        prefix, _ = encode(model, t1, 0)
        got, _ = forward_with_prefix(model, prefix, t2, n1)
        full, _ = forward_with_prefix(model, None, t1 + t2, 0)
        worst = max(worst, float(np.abs(got - full[n1:]).max()))
    assert 1e-9 < worst <= 1e-4


def test_tokenizer_round_trip():
    tok = ByteTokenizer()
    text = "hello <ans>42</ans>"
    assert tok.decode(tok.encode(text)) == text
    assert all(0 <= i < 256 for i in tok.encode(text))
    assert tok.decode([104, 105, ByteTokenizer.EOS]) == "hi"

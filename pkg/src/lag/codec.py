"""Turning finished transcripts into log entries, and the entry wire format.

The codec is where the encode-vs-store distinction lives: with ``full_trace``
encoding, the whole sequence of assistant messages is pushed through the
model once and only the KV slice of the selected span is kept, so the stored
keys/values have attended to everything the agent said earlier. ``isolated``
encoding feeds the selected span through the model alone, losing that
context on purpose (the ablation baseline). Text strategies skip the model
entirely and store the span as plain text.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .actions import Action, find_last_action_span
from .config import TEXT_FINGERPRINT
from .errors import ChecksumError, FormatError, InputError
from .model import Model, encode
from .segment import KvSegment

KV_KINDS = ("last_action", "last_round", "last_2_rounds", "last_3_rounds")
TEXT_KINDS = ("all_rounds_text", "last_round_text")
KINDS = KV_KINDS + TEXT_KINDS
ENCODINGS = ("full_trace", "isolated")

_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
_CODE_KIND = {i: k for k, i in _KIND_CODE.items()}
_ISOLATED_BIT = 0x08
_FALLBACK_BIT = 0x10

MAGIC = b"LAGE"
FORMAT_VERSION = 1

_ROUNDS_BACK = {"last_action": 1, "last_round": 1, "last_2_rounds": 2, "last_3_rounds": 3}


@dataclass(frozen=True)
class SelectionStrategy:
    """Which span of a transcript is persisted, and under which encoding."""

    kind: str = "last_round"
    encoding: str = "full_trace"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InputError(f"unknown strategy kind {self.kind!r}")
        if self.encoding not in ENCODINGS:
            raise InputError(f"unknown encoding {self.encoding!r}")
        if self.kind in TEXT_KINDS and self.encoding != "full_trace":
            # text storage has no KV encoding; keep a single canonical form
            object.__setattr__(self, "encoding", "full_trace")

    @property
    def is_text(self) -> bool:
        return self.kind in TEXT_KINDS


@dataclass
class AgentTranscript:
    """Ordered (user, assistant) message pairs of one task run."""

    turns: list[tuple[str, str]]
    iterations: int
    final_action: Action = field(default_factory=Action)

    def __post_init__(self) -> None:
        if not self.turns:
            raise InputError("transcript must contain at least one turn")
        if self.iterations != len(self.turns):
            raise InputError("iterations must equal the number of assistant messages")

    @property
    def assistant_messages(self) -> list[str]:
        return [a for _, a in self.turns]


@dataclass(eq=False)
class LogEntry:
    """One stored task artifact: a KV segment or text span plus the text key
    it is retrieved by. ``entry_id``, ``created_at`` and ``answer_extracted``
    are runtime metadata and are not part of the wire format."""

    task_text: str
    retrieval_key_text: str
    embedding: np.ndarray
    strategy: SelectionStrategy
    kv: KvSegment | None = None
    text_payload: str | None = None
    fallback_warning: bool = False
    entry_id: int | None = None
    created_at: float | None = None
    answer_extracted: str | None = None

    @property
    def fingerprint(self) -> str:
        return self.kv.model_fingerprint if self.kv is not None else TEXT_FINGERPRINT

    @property
    def payload_nbytes(self) -> int:
        if self.kv is not None:
            return self.kv.payload_nbytes
        return len((self.text_payload or "").encode("utf-8"))

    def validate(self) -> None:
        if (self.kv is None) == (self.text_payload is None):
            raise InputError("entry must hold exactly one of KV or text payload")
        if self.strategy.is_text != (self.text_payload is not None):
            raise InputError("payload kind does not match strategy")
        if self.kv is not None:
            self.kv.validate()

    def same_content(self, other: "LogEntry") -> bool:
        """Equality over the persisted fields (wire-format content)."""
        if (
            self.task_text != other.task_text
            or self.retrieval_key_text != other.retrieval_key_text
            or self.strategy != other.strategy
            or self.fallback_warning != other.fallback_warning
            or self.text_payload != other.text_payload
            or not np.array_equal(self.embedding, other.embedding)
        ):
            return False
        if (self.kv is None) != (other.kv is None):
            return False
        if self.kv is not None:
            if self.kv.model_fingerprint != other.kv.model_fingerprint:
                return False
            if not self.kv.allclose(other.kv, atol=0.0):
                return False
        return True


def _trace_and_offsets(messages: list[str]) -> tuple[bytes, list[int]]:
    """Newline-joined assistant trace plus the byte offset where each
    message starts. With byte tokenization, byte offsets are token offsets."""
    encoded = [m.encode("utf-8") for m in messages]
    starts = []
    pos = 0
    for i, b in enumerate(encoded):
        starts.append(pos)
        pos += len(b) + (1 if i < len(encoded) - 1 else 0)
    return b"\n".join(encoded), starts


def _select_span(
    messages: list[str], kind: str
) -> tuple[int, int, bool]:
    """Token span [start, end) of the stored content within the full trace.
    Returns (start, end, fallback) where fallback is True when a last_action
    strategy found no tag and fell back to the whole last round."""
    trace, starts = _trace_and_offsets(messages)
    last_start = starts[-1]
    end = len(trace)
    fallback = False
    if kind == "last_action":
        span = find_last_action_span(messages[-1])
        if span is None:
            fallback = True
            return last_start, end, fallback
        c0, c1 = span
        b0 = len(messages[-1][:c0].encode("utf-8"))
        b1 = len(messages[-1][:c1].encode("utf-8"))
        return last_start + b0, last_start + b1, fallback
    rounds = min(_ROUNDS_BACK[kind], len(messages))
    return starts[-rounds], end, fallback


def encode_log(
    model: Model | None,
    transcript: AgentTranscript,
    strategy: SelectionStrategy,
    embedder,
    task_text: str = "",
    created_at: float | None = None,
) -> LogEntry:
    """Build a LogEntry from a finished transcript.

    The encoding context is the concatenation of all assistant messages
    (user prompts and retrieved documents are never encoded). The retrieval
    key is the last assistant message, except for all_rounds_text which is
    keyed by the whole trace.
    """
    messages = transcript.assistant_messages
    trace, _ = _trace_and_offsets(messages)
    answer = (
        transcript.final_action.payload
        if transcript.final_action.kind == "answer"
        else None
    )

    if strategy.is_text:
        if strategy.kind == "all_rounds_text":
            payload = trace.decode("utf-8")
            key_text = payload
        else:
            payload = messages[-1]
            key_text = messages[-1]
        return LogEntry(
            task_text=task_text,
            retrieval_key_text=key_text,
            embedding=np.asarray(embedder.embed(key_text), dtype=np.float32),
            strategy=strategy,
            text_payload=payload,
            created_at=created_at,
            answer_extracted=answer,
        )

    if model is None:
        raise InputError("KV strategies need a model to encode with")
    start, end, fallback = _select_span(messages, strategy.kind)
    if strategy.encoding == "isolated":
        span_tokens = list(trace[start:end])
        segment, _ = encode(model, span_tokens, 0)
    else:
        full_segment, _ = encode(model, list(trace), 0)
        segment = full_segment.slice(start, end)
    key_text = messages[-1]
    return LogEntry(
        task_text=task_text,
        retrieval_key_text=key_text,
        embedding=np.asarray(embedder.embed(key_text), dtype=np.float32),
        strategy=strategy,
        kv=segment,
        fallback_warning=fallback,
        created_at=created_at,
        answer_extracted=answer,
    )


# -- wire format -------------------------------------------------------------
#
# magic "LAGE" | u16 version | fingerprint (32 bytes) | strategy byte |
# payload_kind byte | u32 span_len | u32 layers | u32 kv_heads | u32 head_dim |
# u32 positions[span_len] | u32 dim + f32 embedding[dim] |
# u32 len + task_text | u32 len + retrieval_key_text |
# payload (f32 arrays layer-major, keys then values; or UTF-8 text) |
# u32 CRC32 over all prior bytes. All integers little-endian.


def _strategy_byte(entry: LogEntry) -> int:
    b = _KIND_CODE[entry.strategy.kind]
    if entry.strategy.encoding == "isolated":
        b |= _ISOLATED_BIT
    if entry.fallback_warning:
        b |= _FALLBACK_BIT
    return b


def serialize(entry: LogEntry) -> bytes:
    """Deterministic binary form of an entry."""
    entry.validate()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += bytes.fromhex(entry.fingerprint)
    kv = entry.kv
    is_text = kv is None
    out += struct.pack("<BB", _strategy_byte(entry), 1 if is_text else 0)
    if is_text:
        out += struct.pack("<IIII", 0, 0, 0, 0)
    else:
        out += struct.pack(
            "<IIII", kv.span_len, kv.num_layers, kv.num_kv_heads, kv.head_dim
        )
        out += np.asarray(kv.positions, dtype="<u4").tobytes()
    emb = np.asarray(entry.embedding, dtype="<f4")
    out += struct.pack("<I", emb.shape[0])
    out += emb.tobytes()
    for text in (entry.task_text, entry.retrieval_key_text):
        raw = text.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
    if is_text:
        out += (entry.text_payload or "").encode("utf-8")
    else:
        for l in range(kv.num_layers):
            out += np.ascontiguousarray(kv.keys[l], dtype="<f4").tobytes()
            out += np.ascontiguousarray(kv.values[l], dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated log entry")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def deserialize(buf: bytes) -> LogEntry:
    """Decode exactly one serialized entry; raises FormatError on structural
    damage and ChecksumError when the trailing CRC does not match."""
    if len(buf) < len(MAGIC) + 2 + 32 + 2 + 16 + 4 + 4:
        raise FormatError("buffer too short for a log entry")
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic")
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError("CRC mismatch")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version = r.u16()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    fingerprint = r.take(32).hex()
    strategy_byte, payload_kind = struct.unpack("<BB", r.take(2))
    kind = _CODE_KIND.get(strategy_byte & 0x07)
    if kind is None:
        raise FormatError("unknown strategy code")
    strategy = SelectionStrategy(
        kind, "isolated" if strategy_byte & _ISOLATED_BIT else "full_trace"
    )
    fallback = bool(strategy_byte & _FALLBACK_BIT)
    span_len, layers, kv_heads, head_dim = struct.unpack("<IIII", r.take(16))
    positions = np.frombuffer(r.take(4 * span_len), dtype="<u4").astype(np.int64)
    dim = r.u32()
    embedding = np.frombuffer(r.take(4 * dim), dtype="<f4").astype(np.float32)
    task_text = r.take(r.u32()).decode("utf-8")
    key_text = r.take(r.u32()).decode("utf-8")
    if payload_kind == 1:
        text_payload = r.buf[r.pos :].decode("utf-8")
        return LogEntry(
            task_text=task_text,
            retrieval_key_text=key_text,
            embedding=embedding,
            strategy=strategy,
            text_payload=text_payload,
            fallback_warning=fallback,
        )
    if payload_kind != 0:
        raise FormatError(f"unknown payload kind {payload_kind}")
    per_array = kv_heads * span_len * head_dim
    keys, values = [], []
    for _ in range(layers):
        keys.append(
            np.frombuffer(r.take(4 * per_array), dtype="<f4")
            .astype(np.float32)
            .reshape(kv_heads, span_len, head_dim)
        )
        values.append(
            np.frombuffer(r.take(4 * per_array), dtype="<f4")
            .astype(np.float32)
            .reshape(kv_heads, span_len, head_dim)
        )
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after KV payload")
    kv = KvSegment(
        keys=keys,
        values=values,
        positions=positions,
        model_fingerprint=fingerprint,
    )
    return LogEntry(
        task_text=task_text,
        retrieval_key_text=key_text,
        embedding=embedding,
        strategy=strategy,
        kv=kv,
        fallback_warning=fallback,
    )

"""Generator, embedder, and document-retriever backends for the agent loop.

The in-process reference model is the only generator that can consume an
injected KV prefix. The HTTP generator speaks a minimal JSON contract for
external text-mode models. The scripted generator replays canned responses
and exists for deterministic end-to-end runs and tests.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import BackendError, InputError
from .model import ByteTokenizer, Model, greedy_decode
from .segment import KvSegment
from .store import normalize


class GeneratorBackend:
    """Interface: generate(messages, kv_prefix=..., log_entries=...) -> text.

    ``log_entries`` carries the retrieved logs (the loop hands the generator
    both the prompt and the logs); model-backed generators read the logs via
    the KV prefix and ignore the entry list.
    """

    accepts_kv_prefix = False

    def generate(self, messages, kv_prefix=None, log_entries=None) -> str:
        raise NotImplementedError


class ReferenceModelGenerator(GeneratorBackend):
    """Greedy decoding on the in-process reference model."""

    accepts_kv_prefix = True

    def __init__(self, model: Model, max_new: int = 64):
        self.model = model
        self.max_new = max_new
        self.tokenizer = ByteTokenizer()

    def generate(self, messages, kv_prefix: KvSegment | None = None, log_entries=None) -> str:
        text = "\n".join(m["content"] for m in messages)
        tokens = self.tokenizer.encode(text)
        start = 0
        if kv_prefix is not None and kv_prefix.span_len:
            start = int(kv_prefix.positions.max()) + 1
        budget = self.model.config.max_positions - start - self.max_new
        if budget <= 0:
            raise BackendError("KV prefix leaves no room for the prompt")
        if len(tokens) > budget:
            tokens = tokens[-budget:]  # keep the most recent context
        out = greedy_decode(
            self.model,
            kv_prefix,
            tokens,
            self.max_new,
            stop_ids={ByteTokenizer.EOS},
        )
        return self.tokenizer.decode(out)


_QUESTION_RE = re.compile(
    r"Here is the user question:\n(.*?)(?:\n\nHere are the multiple-choice answers:|\Z)",
    re.DOTALL,
)


def question_of_prompt(content: str) -> str:
    """The question a rendered prompt asks (used to key scripted replies)."""
    m = _QUESTION_RE.search(content)
    return m.group(1).strip() if m else content.strip()


class ScriptedGenerator(GeneratorBackend):
    """Replays canned responses keyed by the question in the prompt; the i-th
    call for a question returns the i-th response. Runs past the end of a
    script repeat its last response."""

    accepts_kv_prefix = True

    def __init__(self, scripts: dict[str, list[str]], default: list[str] | None = None):
        self.scripts = dict(scripts)
        self.default = list(default) if default else ["no idea"]
        self._cursor: dict[str, int] = {}

    @classmethod
    def from_file(cls, path: str) -> "ScriptedGenerator":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data.get("scripts", {}), data.get("default"))

    def generate(self, messages, kv_prefix=None, log_entries=None) -> str:
        question = question_of_prompt(messages[-1]["content"])
        script = self.scripts.get(question, self.default)
        i = self._cursor.get(question, 0)
        self._cursor[question] = i + 1
        return script[min(i, len(script) - 1)]


class HttpGeneratorBackend(GeneratorBackend):
    """POSTs {"messages": [...], "max_tokens": n, "temperature": 0} and
    expects {"text": "..."} back. Credentials come from LAG_API_KEY (sent as
    a bearer token), never from flags."""

    accepts_kv_prefix = False

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 2,
                 max_tokens: int = 512):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.max_tokens = max_tokens
        self.api_key = os.environ.get("LAG_API_KEY")

    def generate(self, messages, kv_prefix=None, log_entries=None) -> str:
        if kv_prefix is not None:
            raise BackendError("HTTP generator cannot accept a KV prefix")
        body = json.dumps(
            {"messages": messages, "max_tokens": self.max_tokens, "temperature": 0}
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_err: Exception | None = None
        for _ in range(self.retries + 1):
            req = urllib.request.Request(self.endpoint, data=body, headers=headers)
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                if "text" not in payload:
                    raise BackendError("generator response carries no 'text' field")
                return payload["text"]
            except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as err:
                last_err = err
                time.sleep(0.05)
        raise BackendError(f"generator endpoint failed: {last_err}")


class HashedBagOfWordsEmbedder:
    """Deterministic reference embedder: tokens are hashed into a fixed
    number of signed buckets and the result is L2-normalized."""

    def __init__(self, dimension: int = 256, seed: int = 0):
        if dimension <= 0:
            raise InputError("embedding dimension must be positive")
        self.dimension = dimension
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in re.findall(r"[a-z0-9]+", (text or "").lower()):
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=8, salt=str(self.seed).encode()[:16]
            ).digest()
            h = int.from_bytes(digest, "little")
            idx = h % self.dimension
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[idx] += sign
        return normalize(vec.astype(np.float32))


class CosineDocRetriever:
    """Exact cosine retrieval over an embedded passage list; ties keep the
    corpus order."""

    def __init__(self, passages: list[tuple[str, str]], embedder):
        self.passages = list(passages)
        self.embedder = embedder
        if self.passages:
            self._matrix = np.stack(
                [
                    np.asarray(embedder.embed(f"{title}\n{text}"), dtype=np.float64)
                    for title, text in self.passages
                ]
            )
        else:
            self._matrix = None

    def retrieve(self, query: str, k: int) -> list[tuple[str, str]]:
        if k <= 0 or not self.passages:
            return []
        q = np.asarray(self.embedder.embed(query), dtype=np.float64)
        sims = self._matrix @ q
        order = np.argsort(-sims, kind="stable")[:k]
        return [self.passages[int(i)] for i in order]


class NullDocRetriever:
    def retrieve(self, query: str, k: int) -> list[tuple[str, str]]:
        return []


@dataclass
class Backends:
    """Everything a task run needs besides the store: the generator, the
    text embedder, optionally a document retriever (defaults to per-task
    corpora), and the model used to assemble KV prefixes."""

    generator: GeneratorBackend
    embedder: HashedBagOfWordsEmbedder
    doc_retriever: object | None = None
    model: Model | None = None

    def retriever_for(self, task) -> object:
        if self.doc_retriever is not None:
            return self.doc_retriever
        corpus = getattr(task, "corpus", None)
        if corpus:
            return CosineDocRetriever(corpus, self.embedder)
        return NullDocRetriever()

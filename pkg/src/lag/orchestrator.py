"""The agentic loop: iterative generation with document retrieval, log
retrieval, prompt assembly, and KV-prefix injection.

One run executes at most ``max_steps`` generations. Each round retrieves
documents and logs for the current action text (initially the task itself),
folds the accumulated documents into the prompt, injects accumulated logs
(as a repositioned KV prefix or as prepended text depending on mode), and
extracts the next action from the model's response. The loop stops on an
answer action or when the step cap is hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import ANSWER, Action, extract_action
from .backends import Backends
from .codec import AgentTranscript, LogEntry, SelectionStrategy
from .datasets import KNOWLEDGE, TaskRecord
from .errors import BackendError, ConfigurationError, IncompatibilityError, InputError
from .model import Model
from .prompts import assemble_prompt
from .rope import reposition_segment
from .segment import KvSegment
from .store import LogStore

STANDARD = "standard"
LAG_KV = "lag_kv"
LAG_TEXT_ALL = "lag_text_all"
LAG_TEXT_LAST = "lag_text_last"
KV_ISOLATED = "kv_isolated"

MODES = (STANDARD, LAG_KV, LAG_TEXT_ALL, LAG_TEXT_LAST, KV_ISOLATED)
KV_MODES = (LAG_KV, KV_ISOLATED)
TEXT_MODES = (LAG_TEXT_ALL, LAG_TEXT_LAST)

# step caps from the evaluation protocol: multi-hop tasks get 8, reasoning 3
DEFAULT_MAX_STEPS = {KNOWLEDGE: 8, "reasoning": 3}


def default_strategy(mode: str) -> SelectionStrategy:
    if mode == LAG_TEXT_ALL:
        return SelectionStrategy("all_rounds_text")
    if mode == LAG_TEXT_LAST:
        return SelectionStrategy("last_round_text")
    if mode == KV_ISOLATED:
        return SelectionStrategy("last_round", "isolated")
    return SelectionStrategy("last_round", "full_trace")


@dataclass
class RunConfig:
    mode: str = STANDARD
    max_steps: int = 8
    k_logs: int = 3
    k_docs: int = 2
    strategy: SelectionStrategy = field(default_factory=SelectionStrategy)
    gen_max_new: int = 64

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if self.k_logs < 0 or self.k_docs < 0:
            raise ConfigurationError("k_logs and k_docs must be >= 0")
        if self.mode == STANDARD:
            self.k_logs = 0


class TaskError(BackendError):
    """Backend failure mid-run; carries the partial transcript."""

    def __init__(self, message: str, transcript: AgentTranscript | None):
        super().__init__(message)
        self.partial_transcript = transcript


def assemble_kv_prefix(
    entries: list[LogEntry], model: Model
) -> KvSegment | None:
    """Reposition and concatenate KV log payloads into one prefix.

    Entries are injected in the given order (callers order them by
    descending retrieval similarity, ties by id). The concatenation occupies
    positions 0..total_span, so the prompt that follows starts at
    total_span.
    """
    for e in entries:
        if e.kv is None:
            raise InputError("text log entries cannot join a KV prefix")
        if e.kv.model_fingerprint != model.fingerprint:
            raise IncompatibilityError("log entry KV belongs to a different model")
    entries = [e for e in entries if e.kv.span_len > 0]
    if not entries:
        return None
    parts = []
    offset = 0
    for e in entries:
        span = e.kv.span_len
        new_positions = np.arange(offset, offset + span, dtype=np.int64)
        parts.append(reposition_segment(e.kv, new_positions, model.rope_params))
        offset += span
    return KvSegment.concat(parts)


def run_task(
    task: TaskRecord,
    cfg: RunConfig,
    backends: Backends,
    log_store: LogStore | None = None,
) -> tuple[Action, AgentTranscript, list[int]]:
    """Execute one task; returns (final action, transcript, retrieved ids)."""
    if cfg.mode in KV_MODES:
        if not backends.generator.accepts_kv_prefix:
            raise ConfigurationError(f"mode {cfg.mode} needs a KV-capable generator")
        if backends.model is None:
            raise ConfigurationError(f"mode {cfg.mode} needs a model for the prefix")
        if log_store is not None and log_store.count:
            store_fp = log_store.manifest().fingerprint
            if store_fp != backends.model.fingerprint:
                raise IncompatibilityError(
                    "log store fingerprint does not match the generation model"
                )

    retriever = backends.retriever_for(task)
    uses_logs = cfg.mode != STANDARD and cfg.k_logs > 0 and log_store is not None

    action_text = task.question
    previous_response = ""
    docs: list[tuple[str, str]] = []
    seen_docs: set[tuple[str, str]] = set()
    log_ids: list[int] = []
    log_entries: dict[int, LogEntry] = {}
    log_sims: dict[int, float] = {}
    turns: list[tuple[str, str]] = []
    final_action = Action()
    iterations = 0

    while iterations < cfg.max_steps:
        if cfg.k_docs > 0:
            for doc in retriever.retrieve(action_text, cfg.k_docs):
                if doc not in seen_docs:
                    seen_docs.add(doc)
                    docs.append(doc)
        if uses_logs and log_store.count:
            query = backends.embedder.embed(action_text)
            for res in log_store.retrieve_topk(query, cfg.k_logs):
                log_sims[res.entry_id] = res.similarity
                if res.entry_id not in log_entries:
                    log_ids.append(res.entry_id)
                    log_entries[res.entry_id] = log_store.get(res.entry_id)
        ordered = sorted(
            log_entries.values(),
            key=lambda e: (-log_sims[e.entry_id], e.entry_id),
        )

        kv_prefix = None
        text_logs: list[str] = []
        if cfg.mode in KV_MODES and ordered:
            kv_prefix = assemble_kv_prefix(ordered, backends.model)
        elif cfg.mode in TEXT_MODES:
            text_logs = [e.text_payload or "" for e in ordered]

        messages = assemble_prompt(task, docs, text_logs, cfg.mode, previous_response)
        try:
            response = backends.generator.generate(
                messages, kv_prefix=kv_prefix, log_entries=ordered
            )
        except Exception as err:
            partial = (
                AgentTranscript(turns, iterations, final_action) if turns else None
            )
            raise TaskError(f"generator failed on task {task.id}: {err}", partial) from err

        turns.append((messages[-1]["content"], response))
        iterations += 1
        act = extract_action(response)
        previous_response = response
        final_action = act
        if act.kind == ANSWER:
            break
        if act.payload:
            action_text = act.payload
        # kind 'none': the action text is unchanged and the loop continues

    transcript = AgentTranscript(turns, iterations, final_action)
    return final_action, transcript, log_ids

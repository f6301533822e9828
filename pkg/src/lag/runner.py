"""Batch execution: build a log store from tasks, run tasks into a report."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .actions import ANSWER
from .backends import Backends
from .codec import SelectionStrategy, encode_log
from .datasets import REASONING, TaskRecord
from .metrics import EvalReport, TaskRow, choice_accuracy, exact_match, f1
from .orchestrator import (
    DEFAULT_MAX_STEPS,
    STANDARD,
    RunConfig,
    TaskError,
    run_task,
)
from .store import LogStore


def steps_for(task: TaskRecord, max_steps: int | None) -> int:
    """Explicit cap if given, otherwise the family default (8 multi-hop,
    3 reasoning)."""
    return max_steps if max_steps is not None else DEFAULT_MAX_STEPS[task.family]


def _score(task: TaskRecord, predicted: str | None) -> tuple[int, float]:
    if predicted is None:
        return 0, 0.0
    if task.family == REASONING:
        em = choice_accuracy(predicted, task.answers[0])
        return em, float(em)
    return exact_match(predicted, task.answers), f1(predicted, task.answers)


def run_one(
    task: TaskRecord,
    cfg: RunConfig,
    backends: Backends,
    store: LogStore | None,
) -> TaskRow:
    try:
        final, transcript, _ = run_task(task, cfg, backends, store)
        answered = final.kind == ANSWER
        predicted = final.payload if answered else None
        iterations = transcript.iterations
    except TaskError as err:
        answered, predicted = False, None
        partial = err.partial_transcript
        iterations = partial.iterations if partial is not None else 0
    em, score_f1 = _score(task, predicted)
    return TaskRow(
        id=task.id,
        predicted=predicted,
        gold=task.answers,
        em=em,
        f1=score_f1,
        iterations=iterations,
        answered=answered,
        mode=cfg.mode,
        strategy=cfg.strategy.kind,
    )


def run_tasks(
    tasks: list[TaskRecord],
    cfg: RunConfig,
    backends: Backends,
    store: LogStore | None,
    max_steps: int | None = None,
    jobs: int = 1,
    label: str = "",
) -> EvalReport:
    """Run every task (optionally in parallel) and collect a report in task
    order. Per-task backend failures become unanswered rows."""

    def one(task: TaskRecord) -> TaskRow:
        task_cfg = replace(cfg, max_steps=steps_for(task, max_steps))
        return run_one(task, task_cfg, backends, store)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, tasks))
    else:
        rows = [one(task) for task in tasks]
    return EvalReport(mode=cfg.mode, strategy=cfg.strategy.kind, rows=rows, label=label)


def ingest_tasks(
    tasks: list[TaskRecord],
    strategy: SelectionStrategy,
    backends: Backends,
    store_path,
    max_steps: int | None = None,
    gen_max_new: int = 64,
    k_docs: int = 2,
) -> LogStore:
    """Run tasks without log access (the store is being built), encode each
    transcript under the strategy, and append it to the store. Entries are
    stored for every completed task, right or wrong."""
    store = LogStore(store_path, mode="w")
    try:
        for task in tasks:
            cfg = RunConfig(
                mode=STANDARD,
                max_steps=steps_for(task, max_steps),
                k_docs=k_docs,
                strategy=strategy,
                gen_max_new=gen_max_new,
            )
            _, transcript, _ = run_task(task, cfg, backends, None)
            entry = encode_log(
                backends.model,
                transcript,
                strategy,
                backends.embedder,
                task_text=task.question,
                created_at=time.time(),
            )
            store.put(entry)
    finally:
        store.close()
    return store

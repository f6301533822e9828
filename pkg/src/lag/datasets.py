"""Task records and the JSON Lines dataset format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError

KNOWLEDGE = "knowledge"
REASONING = "reasoning"


@dataclass
class TaskRecord:
    id: str
    question: str
    answers: list[str]
    choices: list[str] | None = None
    corpus: list[tuple[str, str]] | None = None

    @property
    def family(self) -> str:
        """Multiple-choice tasks follow the reasoning protocol; everything
        else is treated as open-domain QA."""
        return REASONING if self.choices else KNOWLEDGE


def task_from_json(data: dict) -> TaskRecord:
    try:
        corpus = data.get("corpus")
        return TaskRecord(
            id=str(data["id"]),
            question=str(data["question"]),
            answers=[str(a) for a in data["answers"]],
            choices=[str(c) for c in data["choices"]] if data.get("choices") else None,
            corpus=[(str(d["title"]), str(d["text"])) for d in corpus] if corpus else None,
        )
    except (KeyError, TypeError) as err:
        raise InputError(f"malformed task record: {err}") from err


def task_to_json(task: TaskRecord) -> dict:
    data: dict = {"id": task.id, "question": task.question, "answers": task.answers}
    if task.choices:
        data["choices"] = task.choices
    if task.corpus:
        data["corpus"] = [{"title": t, "text": x} for t, x in task.corpus]
    return data


def load_tasks(path: str | Path) -> list[TaskRecord]:
    tasks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as err:
                raise InputError(f"{path}:{line_no}: invalid JSON: {err}") from err
            tasks.append(task_from_json(data))
    return tasks


def save_tasks(tasks: list[TaskRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task_to_json(task)) + "\n")

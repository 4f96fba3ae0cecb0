"""Cumulative triplet-label universe maintained across tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .core import SceneGraph, TripletLabel, Vocabulary, triplets_of


@dataclass(frozen=True)
class TripletUniverse:
    """Triplet labels with cumulative frequencies and first-seen task.

    Grows monotonically: labels are never removed and counts only
    accumulate.
    """

    counts: Mapping[TripletLabel, int] = field(default_factory=dict)
    first_task: Mapping[TripletLabel, int] = field(default_factory=dict)

    def __post_init__(self):
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("universe frequencies must be >= 1")

    def __len__(self) -> int:
        return len(self.counts)

    def labels(self) -> tuple[TripletLabel, ...]:
        return tuple(self.counts)

    def frequency(self, label: TripletLabel) -> int:
        return self.counts[label]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def update_universe(
    u: TripletUniverse, task_graphs: Iterable[SceneGraph], task_index: int = 0
) -> TripletUniverse:
    """Accumulate the triplet labels of a finished task into the universe."""
    counts = dict(u.counts)
    first = dict(u.first_task)
    for label, n in triplets_of(task_graphs).items():
        counts[label] = counts.get(label, 0) + n
        first.setdefault(label, task_index)
    return TripletUniverse(counts=counts, first_task=first)


def universe_to_records(
    u: TripletUniverse, objects: Vocabulary, predicates: Vocabulary
) -> list[dict]:
    # insertion order is kept: it is deterministic and downstream prompt
    # composition preserves it
    return [
        {
            "subject": objects.name_of(label.subject_class),
            "predicate": predicates.name_of(label.predicate_class),
            "object": objects.name_of(label.object_class),
            "count": u.counts[label],
            "first_task": u.first_task.get(label, 0),
        }
        for label in u.counts
    ]


def universe_from_records(
    records: Iterable[dict], objects: Vocabulary, predicates: Vocabulary
) -> TripletUniverse:
    counts: dict[TripletLabel, int] = {}
    first: dict[TripletLabel, int] = {}
    for rec in records:
        label = TripletLabel(
            subject_class=objects.id_of(rec["subject"]),
            predicate_class=predicates.id_of(rec["predicate"]),
            object_class=objects.id_of(rec["object"]),
        )
        counts[label] = counts.get(label, 0) + int(rec["count"])
        if "first_task" in rec:
            first.setdefault(label, int(rec["first_task"]))
    return TripletUniverse(counts=counts, first_task=first)


def save_universe(
    u: TripletUniverse, objects: Vocabulary, predicates: Vocabulary, path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in universe_to_records(u, objects, predicates):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_universe(path: str | Path, objects: Vocabulary, predicates: Vocabulary) -> TripletUniverse:
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return universe_from_records(records, objects, predicates)

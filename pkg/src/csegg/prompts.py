"""Prompt composition and its vocabulary-aware inverse parser."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .core import TripletLabel, Vocabulary

PROMPT_PREFIX = "Realistic Image of"


@dataclass(frozen=True)
class Prompt:
    text: str
    source_labels: tuple[TripletLabel, ...]

    def __post_init__(self):
        if not self.text.startswith(PROMPT_PREFIX):
            raise ValueError(f"prompt must start with {PROMPT_PREFIX!r}")


def compose_prompt(
    labels: Sequence[TripletLabel], objects: Vocabulary, predicates: Vocabulary
) -> Prompt:
    """Join the labels' phrases with "and", keeping label order."""
    if not labels:
        raise ValueError("need at least one triplet label")
    phrases = [label.phrase(objects, predicates) for label in labels]
    return Prompt(
        text=f"{PROMPT_PREFIX} " + " and ".join(phrases),
        source_labels=tuple(labels),
    )


def _token_table(names: tuple[str, ...]) -> dict[tuple[str, ...], int]:
    return {tuple(name.split()): i for i, name in enumerate(names)}


@lru_cache(maxsize=32)
def _tables(object_names: tuple[str, ...], predicate_names: tuple[str, ...]):
    objects = _token_table(object_names)
    predicates = _token_table(predicate_names)
    max_obj = max((len(k) for k in objects), default=1)
    max_pred = max((len(k) for k in predicates), default=1)
    return objects, predicates, max_obj, max_pred


def parse_prompt(
    text: str, objects: Vocabulary, predicates: Vocabulary
) -> list[TripletLabel]:
    """Recover the exact triplet-phrase sequence from a composed prompt.

    Token-level backtracking handles class names containing spaces (or
    even the word "and"); raises ValueError when no consistent parse
    exists.
    """
    if not text.startswith(PROMPT_PREFIX):
        raise ValueError(f"prompt must start with {PROMPT_PREFIX!r}")
    tokens = tuple(text[len(PROMPT_PREFIX):].split())
    obj_table, pred_table, max_obj, max_pred = _tables(objects.names, predicates.names)

    def parse_name(table, max_len, pos):
        for length in range(min(max_len, len(tokens) - pos), 0, -1):
            key = tokens[pos: pos + length]
            if key in table:
                yield table[key], pos + length

    def parse_from(pos) -> list[TripletLabel] | None:
        for s_id, p1 in parse_name(obj_table, max_obj, pos):
            for p_id, p2 in parse_name(pred_table, max_pred, p1):
                for o_id, p3 in parse_name(obj_table, max_obj, p2):
                    label = TripletLabel(s_id, p_id, o_id)
                    if p3 == len(tokens):
                        return [label]
                    if tokens[p3] == "and":
                        rest = parse_from(p3 + 1)
                        if rest is not None:
                            return [label, *rest]
        return None

    if not tokens:
        raise ValueError("empty prompt body")
    result = parse_from(0)
    if result is None:
        raise ValueError(f"prompt does not parse against the vocabularies: {text!r}")
    return result

"""Long-tailed rebalancing: triplet-level dropout, image-level repeat
factors, and bi-level image/instance resampling.

The dropout rate of a triplet label is its frequency share scaled by
``alpha``: ``d_k = f_k / sum(f) * alpha``; head triplets are dropped more
often, so the surviving subset is flatter than the source distribution.

The repeat-factor and bi-level rules follow the standard formulations of
the cited image-level and instance-level resamplers: repeat factor
``r(I) = max_c max(1, sqrt(t / f_c))`` over the categories of an image,
and an instance drop probability ``clamp(gamma_d * (f_c / f_median - 1),
0, p_max)`` for classes above the median frequency.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .core import RelationEdge, SceneGraph, TripletLabel
from .errors import EmptyBuffer, EmptyUniverse
from .scenarios import TaskDataset
from .universe import TripletUniverse


@dataclass(frozen=True)
class LtdConfig:
    alpha: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class DropoutTable:
    rates: Mapping[TripletLabel, float]

    def of(self, label: TripletLabel) -> float:
        return self.rates[label]

    @property
    def total(self) -> float:
        return sum(self.rates.values())


def ltd_rates(u: TripletUniverse, cfg: LtdConfig = LtdConfig()) -> DropoutTable:
    """Per-label dropout rates, proportional to frequency share."""
    if len(u) == 0:
        raise EmptyUniverse("cannot compute dropout rates on an empty universe")
    total = u.total
    return DropoutTable(
        rates={label: f / total * cfg.alpha for label, f in u.counts.items()}
    )


def ltd_sample(
    u: TripletUniverse, rates: DropoutTable, rng: random.Random
) -> list[TripletLabel]:
    """Independently retain each label with probability ``1 - d_k``."""
    kept = []
    for label in u.counts:
        d = rates.of(label)
        if rng.random() >= d:
            kept.append(label)
    return kept


# --- image-level repeat factors -----------------------------------------------------


def _image_class_sets(graphs: Sequence[SceneGraph], kind: str) -> list[set[int]]:
    if kind == "objects":
        return [{o.class_id for o in g.objects} for g in graphs]
    if kind == "predicates":
        return [{r.predicate_id for r in g.relations} for g in graphs]
    raise ValueError(f"kind must be objects|predicates, got {kind!r}")


def repeat_factors(
    graphs: Sequence[SceneGraph], threshold: float, kind: str = "predicates"
) -> list[float]:
    """Per-image repeat factor over the given category axis."""
    class_sets = _image_class_sets(graphs, kind)
    n = len(graphs)
    image_count: dict[int, int] = {}
    for present in class_sets:
        for c in present:
            image_count[c] = image_count.get(c, 0) + 1
    class_factor = {
        c: max(1.0, math.sqrt(threshold / (count / n))) for c, count in image_count.items()
    }
    return [
        max((class_factor[c] for c in present), default=1.0) for present in class_sets
    ]


def lvis_repeat_factors(
    td: TaskDataset, threshold: float, kind: str = "predicates"
) -> dict[str, float]:
    """Repeat factor of every train image of a task dataset."""
    return {
        g.image_id: f
        for g, f in zip(td.train, repeat_factors(td.train, threshold, kind))
    }


def _stochastic_round(factor: float, rng: random.Random) -> int:
    whole = int(factor)
    return whole + (1 if rng.random() < factor - whole else 0)


@dataclass(frozen=True)
class BlsParams:
    repeat_threshold: float = 0.001
    gamma_d: float = 0.05
    p_max: float = 0.7
    kind: str = "predicates"


def _drop_probabilities(graphs: Sequence[SceneGraph], params: BlsParams) -> dict[int, float]:
    counts: dict[int, int] = {}
    for g in graphs:
        for r in g.relations:
            counts[r.predicate_id] = counts.get(r.predicate_id, 0) + 1
    if not counts:
        return {}
    ordered = sorted(counts.values())
    median = ordered[len(ordered) // 2] if len(ordered) % 2 else (
        (ordered[len(ordered) // 2 - 1] + ordered[len(ordered) // 2]) / 2
    )
    probs = {}
    for c, f in counts.items():
        if f > median:
            probs[c] = min(max(params.gamma_d * (f / median - 1.0), 0.0), params.p_max)
        else:
            probs[c] = 0.0
    return probs


def _drop_head_edges(g: SceneGraph, probs: Mapping[int, float], rng: random.Random) -> SceneGraph | None:
    kept: list[RelationEdge] = []
    for r in g.relations:
        p = probs.get(r.predicate_id, 0.0)
        if p > 0.0 and rng.random() < p:
            continue
        kept.append(r)
    if not kept:
        return None
    if len(kept) == len(g.relations):
        return g
    return SceneGraph(g.image_id, g.width, g.height, g.objects, tuple(kept))


def bls_sample(td: TaskDataset, params: BlsParams, rng: random.Random) -> TaskDataset:
    """Bi-level resample of a task's train set: image-level oversampling of
    tail images, instance-level undersampling of head predicates."""
    factors = repeat_factors(td.train, params.repeat_threshold, params.kind)
    probs = _drop_probabilities(td.train, params)
    out: list[SceneGraph] = []
    for g, f in zip(td.train, factors):
        for _ in range(_stochastic_round(f, rng)):
            dropped = _drop_head_edges(g, probs, rng)
            if dropped is not None:
                out.append(dropped)
    return replace(td, train=tuple(out))


def lvis_sample(td: TaskDataset, params: BlsParams, rng: random.Random) -> TaskDataset:
    """Image-level oversampling only."""
    factors = repeat_factors(td.train, params.repeat_threshold, params.kind)
    out: list[SceneGraph] = []
    for g, f in zip(td.train, factors):
        out.extend([g] * _stochastic_round(f, rng))
    return replace(td, train=tuple(out))


def head_drop_probability(freq: float, median: float, params: BlsParams) -> float:
    """The documented instance-drop rule, exposed for direct checks."""
    if freq <= median:
        return 0.0
    return min(max(params.gamma_d * (freq / median - 1.0), 0.0), params.p_max)


def apply_to_buffer(exemplars, method: str, params: BlsParams, rng: random.Random):
    """Resample a replay buffer with the buffer itself as the population.

    Works on any dataclass carrying ``items`` where each item exposes a
    ``graph`` attribute (exemplar sets and replay buffers both do).
    """
    items = list(exemplars.items)
    if not items:
        raise EmptyBuffer("cannot resample an empty buffer")
    graphs = [it.graph for it in items]
    factors = repeat_factors(graphs, params.repeat_threshold, params.kind)
    if method == "lvis":
        out = []
        for it, f in zip(items, factors):
            out.extend([it] * _stochastic_round(f, rng))
        return replace(exemplars, items=tuple(out))
    if method == "bls":
        probs = _drop_probabilities(graphs, params)
        out = []
        for it, f in zip(items, factors):
            for _ in range(_stochastic_round(f, rng)):
                dropped = _drop_head_edges(it.graph, probs, rng)
                if dropped is None:
                    continue
                out.append(it if dropped is it.graph else replace(it, graph=dropped))
        return replace(exemplars, items=tuple(out))
    raise ValueError(f"method must be lvis|bls, got {method!r}")

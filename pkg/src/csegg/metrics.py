"""Evaluation mathematics: triplet matching, recall variants, forgetting
and transfer aggregates, and class-agnostic generalization metrics.

Matching rule: a greedy descending-score pass over the top-K predictions;
a prediction matches an unmatched ground-truth edge iff all three class
labels are equal and both the subject and object boxes overlap their
ground-truth counterparts with IoU >= the localization threshold (0.5 by
default, the usual detection-style convention). Each prediction and each
ground-truth edge participate in at most one match; when several edges
qualify, the one with the larger min(subject IoU, object IoU) wins.

Recall percentages are per-image (images with no ground-truth edges are
skipped) and averaged over the test set in a fixed image order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .core import BBox, SceneGraph, iou
from .errors import (
    EmptyTestSet,
    MissingBaseline,
    MissingCell,
    NoLocalizedBoxes,
)
from .ingest import Bucket, BucketAssignment

DEFAULT_K = 20
DEFAULT_IOU = 0.5
GEN_IOU_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class PredictedTriplet:
    subject_class: int
    predicate_class: int
    object_class: int
    subject_box: BBox
    object_box: BBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score {self.score!r}")


@dataclass(frozen=True)
class PredictionSet:
    """Score-ordered predictions for one image.

    Producers must emit a deterministic order; ties keep producer order.
    """

    image_id: str
    triplets: tuple[PredictedTriplet, ...]

    def __post_init__(self):
        object.__setattr__(self, "triplets", tuple(self.triplets))
        scores = [t.score for t in self.triplets]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"image {self.image_id}: predictions not score-descending")

    def top(self, k: int) -> tuple[PredictedTriplet, ...]:
        return self.triplets[:k]


EvalPair = tuple[PredictionSet, SceneGraph]


@dataclass(frozen=True)
class _GtEdge:
    subject_class: int
    predicate_class: int
    object_class: int
    subject_box: BBox
    object_box: BBox
    subject_node: int
    object_node: int


def _gt_edges(gt: SceneGraph) -> list[_GtEdge]:
    nodes = gt.nodes_by_id
    out = []
    for r in gt.relations:
        s, o = nodes[r.subject_id], nodes[r.object_id]
        out.append(
            _GtEdge(s.class_id, r.predicate_id, o.class_id, s.box, o.box, s.node_id, o.node_id)
        )
    return out


def match_triplets(
    preds: PredictionSet,
    gt: SceneGraph,
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
) -> set[int]:
    """Indices of ground-truth edges matched by the top-k predictions."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    edges = _gt_edges(gt)
    matched: set[int] = set()
    for p in preds.top(k):
        best_j = -1
        best_q = -1.0
        for j, e in enumerate(edges):
            if j in matched:
                continue
            if (
                p.subject_class != e.subject_class
                or p.predicate_class != e.predicate_class
                or p.object_class != e.object_class
            ):
                continue
            qs = iou(p.subject_box, e.subject_box)
            if qs < iou_thresh:
                continue
            qo = iou(p.object_box, e.object_box)
            if qo < iou_thresh:
                continue
            q = min(qs, qo)
            if q > best_q:
                best_q, best_j = q, j
        if best_j >= 0:
            matched.add(best_j)
    return matched


def recall_at_k(
    pairs: Iterable[EvalPair],
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
) -> float:
    """Image-averaged triplet recall of the top-k predictions, in percent."""
    vals = []
    for preds, gt in pairs:
        n = len(gt.relations)
        if n == 0:
            continue
        vals.append(len(match_triplets(preds, gt, k, iou_thresh)) / n)
    if not vals:
        raise EmptyTestSet("no image with ground-truth edges")
    return 100.0 * sum(vals) / len(vals)


@dataclass(frozen=True)
class MeanRecallResult:
    mean: float
    per_predicate: Mapping[int, float]
    per_bucket: Mapping[str, float | None]


def mean_recall_at_k(
    pairs: Iterable[EvalPair],
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
    buckets: BucketAssignment | None = None,
) -> MeanRecallResult:
    """Unweighted mean over per-predicate recalls (predicates absent from
    the ground truth are excluded), with an optional head/body/tail
    breakdown."""
    total: dict[int, int] = {}
    hit: dict[int, int] = {}
    seen_any = False
    for preds, gt in pairs:
        edges = _gt_edges(gt)
        if not edges:
            continue
        seen_any = True
        matched = match_triplets(preds, gt, k, iou_thresh)
        for j, e in enumerate(edges):
            total[e.predicate_class] = total.get(e.predicate_class, 0) + 1
            if j in matched:
                hit[e.predicate_class] = hit.get(e.predicate_class, 0) + 1
    if not seen_any:
        raise EmptyTestSet("no image with ground-truth edges")
    per_pred = {p: 100.0 * hit.get(p, 0) / n for p, n in sorted(total.items())}
    mean = sum(per_pred.values()) / len(per_pred)
    per_bucket: dict[str, float | None] = {}
    if buckets is not None:
        for b in Bucket:
            vals = [v for p, v in per_pred.items() if buckets.of(p) is b]
            per_bucket[b.value] = sum(vals) / len(vals) if vals else None
    return MeanRecallResult(mean=mean, per_predicate=per_pred, per_bucket=per_bucket)


# --- recall matrix and continual aggregates -----------------------------------------


class RecallMatrix:
    """T x T grid of recall values; cell (i, j) holds the score of the
    model trained after task i evaluated on test set j (1-based)."""

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")
        self.n_tasks = n_tasks
        self._cells: dict[tuple[int, int], float] = {}

    def _check(self, i: int, j: int) -> None:
        if not (1 <= i <= self.n_tasks and 1 <= j <= self.n_tasks):
            raise IndexError(f"cell ({i},{j}) outside 1..{self.n_tasks}")

    def set(self, i: int, j: int, value: float) -> None:
        self._check(i, j)
        if not (0.0 <= value <= 100.0):
            raise ValueError(f"recall {value} outside [0, 100]")
        self._cells[(i, j)] = float(value)

    def get(self, i: int, j: int) -> float:
        self._check(i, j)
        try:
            return self._cells[(i, j)]
        except KeyError:
            raise MissingCell(f"cell ({i},{j}) not populated")

    def has(self, i: int, j: int) -> bool:
        return (i, j) in self._cells

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RecallMatrix)
            and other.n_tasks == self.n_tasks
            and other._cells == self._cells
        )

    def to_dict(self) -> dict:
        return {
            "n_tasks": self.n_tasks,
            "cells": {f"{i},{j}": v for (i, j), v in sorted(self._cells.items())},
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "RecallMatrix":
        m = cls(int(rec["n_tasks"]))
        for key, v in rec["cells"].items():
            i, j = (int(p) for p in key.split(","))
            m.set(i, j, float(v))
        return m


def forgetting(m: RecallMatrix, t: int) -> float:
    """Difference between the first-task score after task t and after
    task 1; negative values mean forgetting."""
    return m.get(t, 1) - m.get(1, 1)


def avg_recall(m: RecallMatrix, t: int) -> float:
    """Mean score of the task-t model over test sets 1..t."""
    return sum(m.get(t, i) for i in range(1, t + 1)) / t


def bwt(m: RecallMatrix) -> float:
    """Backward transfer: mean last-row-minus-diagonal over tasks 1..T-1."""
    t_total = m.n_tasks
    if t_total < 2:
        raise MissingCell("BWT needs at least two tasks")
    return sum(m.get(t_total, i) - m.get(i, i) for i in range(1, t_total)) / (t_total - 1)


def fwt(m: RecallMatrix, baselines: Mapping[int, float]) -> float:
    """Forward transfer: mean diagonal-minus-scratch-baseline over tasks
    2..T; ``baselines[i]`` is the score of an independently initialized
    model trained only on task i."""
    t_total = m.n_tasks
    if t_total < 2:
        raise MissingCell("FWT needs at least two tasks")
    acc = 0.0
    for i in range(2, t_total + 1):
        if i not in baselines:
            raise MissingBaseline(f"no scratch baseline for task {i}")
        acc += m.get(i, i) - baselines[i]
    return acc / (t_total - 1)


# --- class-agnostic generalization metrics ---------------------------------------------


def _candidate_boxes(preds: PredictionSet, k: int) -> list[BBox]:
    boxes: list[BBox] = []
    seen: set[tuple[float, float, float, float]] = set()
    for t in preds.top(k):
        for b in (t.subject_box, t.object_box):
            key = (b.x, b.y, b.w, b.h)
            if key not in seen:
                seen.add(key)
                boxes.append(b)
    return boxes


def match_boxes_class_agnostic(
    preds: PredictionSet,
    gt: SceneGraph,
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
) -> set[int]:
    """Node ids of ground-truth boxes localized by the deduplicated top-k
    predicted boxes; one-to-one, class labels ignored. A predicted box
    overlapping several ground-truth boxes above threshold yields a single
    true positive."""
    matched: set[int] = set()
    gt_nodes = list(gt.objects)
    for box in _candidate_boxes(preds, k):
        best_node = None
        best_q = -1.0
        for o in gt_nodes:
            if o.node_id in matched:
                continue
            q = iou(box, o.box)
            if q >= iou_thresh and q > best_q:
                best_q, best_node = q, o.node_id
        if best_node is not None:
            matched.add(best_node)
    return matched


def gen_recall_bbox(
    pairs: Iterable[EvalPair],
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
) -> float:
    """Class-agnostic box recall (percent), image-averaged."""
    vals = []
    for preds, gt in pairs:
        if not gt.objects:
            continue
        matched = match_boxes_class_agnostic(preds, gt, k, iou_thresh)
        vals.append(len(matched) / len(gt.objects))
    if not vals:
        raise EmptyTestSet("no image with ground-truth boxes")
    return 100.0 * sum(vals) / len(vals)


def gen_recall_rel_image(
    preds: PredictionSet,
    gt: SceneGraph,
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
) -> float:
    """Predicate recall over the ground-truth edges whose endpoint boxes
    were both localized class-agnostically; classes are ignored
    throughout. Raises NoLocalizedBoxes when no edge qualifies."""
    localized = match_boxes_class_agnostic(preds, gt, k, iou_thresh)
    edges = [e for e in _gt_edges(gt) if e.subject_node in localized and e.object_node in localized]
    if not edges:
        raise NoLocalizedBoxes(f"image {gt.image_id}: no fully localized edge")
    top = preds.top(k)
    hits = 0
    for e in edges:
        for p in top:
            if (
                p.predicate_class == e.predicate_class
                and iou(p.subject_box, e.subject_box) >= iou_thresh
                and iou(p.object_box, e.object_box) >= iou_thresh
            ):
                hits += 1
                break
    return 100.0 * hits / len(edges)


def gen_recall_rel(
    pairs: Iterable[EvalPair],
    k: int = DEFAULT_K,
    iou_thresh: float = DEFAULT_IOU,
) -> float:
    """Image-averaged predicate recall on localized boxes; images without
    any localized edge are skipped."""
    vals = []
    for preds, gt in pairs:
        try:
            vals.append(gen_recall_rel_image(preds, gt, k, iou_thresh))
        except NoLocalizedBoxes:
            continue
    if not vals:
        raise EmptyTestSet("no image with a localized ground-truth edge")
    return sum(vals) / len(vals)


# --- report assembly ----------------------------------------------------------------


@dataclass(frozen=True)
class TaskMetrics:
    task: int
    recall: float
    avg_recall: float
    forgetting: float | None
    mean_recall: float | None = None
    mean_forgetting: float | None = None
    bucket_recall: Mapping[str, float | None] = field(default_factory=dict)


@dataclass(frozen=True)
class GenMetrics:
    task: int
    iou_thresh: float
    recall_bbox: float
    recall_rel: float | None


@dataclass(frozen=True)
class MetricsReport:
    k: int
    iou_thresh: float
    tasks: tuple[TaskMetrics, ...]
    bwt: float | None
    fwt: float | None
    generalization: tuple[GenMetrics, ...] = ()

    @classmethod
    def from_matrices(
        cls,
        k: int,
        iou_thresh: float,
        recall: RecallMatrix,
        mean_recall: RecallMatrix | None = None,
        baselines: Mapping[int, float] | None = None,
        bucket_recall: Mapping[int, Mapping[str, float | None]] | None = None,
        generalization: Sequence[GenMetrics] = (),
    ) -> "MetricsReport":
        tasks = []
        for t in range(1, recall.n_tasks + 1):
            mr = mean_recall.get(t, t) if mean_recall is not None else None
            mf = (
                mean_recall.get(t, 1) - mean_recall.get(1, 1)
                if mean_recall is not None
                else None
            )
            tasks.append(
                TaskMetrics(
                    task=t,
                    recall=recall.get(t, t),
                    avg_recall=avg_recall(recall, t),
                    forgetting=forgetting(recall, t),
                    mean_recall=mr,
                    mean_forgetting=mf,
                    bucket_recall=dict((bucket_recall or {}).get(t, {})),
                )
            )
        report_bwt = bwt(recall) if recall.n_tasks >= 2 else None
        report_fwt = fwt(recall, baselines) if baselines else None
        return cls(
            k=k,
            iou_thresh=iou_thresh,
            tasks=tuple(tasks),
            bwt=report_bwt,
            fwt=report_fwt,
            generalization=tuple(generalization),
        )

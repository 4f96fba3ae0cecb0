"""Scenario construction: task sequences, class visibility, masking.

Three scenario kinds are supported:

* ``S1`` -- predicate-incremental: fixed object vocabulary, a fresh group
  of predicate classes per task.
* ``S2`` -- scene-incremental: frequent object/predicate classes first,
  the infrequent remainder second.
* ``S3`` -- object-incremental with a fixed predicate set, plus a
  standalone generalization test set of never-taught object classes.

Classes incremented by a scenario are drawn uniformly across the
head/body/tail buckets, splitting each task's quota as evenly as possible
over the three buckets and rotating the extra slots from task to task.
Only classes with train-split instances are drawable; a task cannot teach
a class that has no training data.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .core import SceneGraph, Vocabulary
from .errors import EmptyGeneralizationSet, InsufficientClasses
from .ingest import Bucket, BucketAssignment, Dataset, class_frequencies

KINDS = ("S1", "S2", "S3")


@dataclass(frozen=True)
class TaskSpec:
    """One task: newly visible classes plus its participating images."""

    task_index: int  # 1-based
    visible_object_classes: frozenset[int]
    visible_predicate_classes: frozenset[int]
    train_image_ids: tuple[str, ...]
    test_image_ids: tuple[str, ...]


@dataclass(frozen=True)
class Scenario:
    kind: str
    seed: int
    tasks: tuple[TaskSpec, ...]
    generalization_test: TaskSpec | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def task(self, t: int) -> TaskSpec:
        if not 1 <= t <= self.n_tasks:
            raise ValueError(f"task index {t} out of range 1..{self.n_tasks}")
        return self.tasks[t - 1]

    def cumulative_visible(self, t: int) -> tuple[frozenset[int], frozenset[int]]:
        objs: frozenset[int] = frozenset()
        preds: frozenset[int] = frozenset()
        for spec in self.tasks[:t]:
            objs |= spec.visible_object_classes
            preds |= spec.visible_predicate_classes
        return objs, preds


@dataclass(frozen=True)
class TaskDataset:
    """Masked annotations for one task (train) and its test set."""

    task_index: int
    cumulative: bool
    train: tuple[SceneGraph, ...]
    test: tuple[SceneGraph, ...]
    train_visible_objects: frozenset[int]
    train_visible_predicates: frozenset[int]
    test_visible_objects: frozenset[int]
    test_visible_predicates: frozenset[int]


# --- masking -------------------------------------------------------------------


def mask_graph(
    g: SceneGraph,
    visible_objects: frozenset[int],
    visible_predicates: frozenset[int],
) -> SceneGraph | None:
    """Filter annotations to visible classes; None when no edge survives.

    Nodes of invisible classes are removed; surviving edges must use a
    visible predicate and visible classes on both endpoints. Nodes of
    visible classes are kept even when unconnected (they remain valid
    detection targets).
    """
    nodes = tuple(o for o in g.objects if o.class_id in visible_objects)
    alive = {o.node_id for o in nodes}
    edges = tuple(
        r
        for r in g.relations
        if r.predicate_id in visible_predicates
        and r.subject_id in alive
        and r.object_id in alive
    )
    if not edges:
        return None
    if len(nodes) == len(g.objects) and len(edges) == len(g.relations):
        return g
    return SceneGraph(g.image_id, g.width, g.height, nodes, edges)


def _member_ids(
    graphs: list[SceneGraph],
    visible_objects: frozenset[int],
    visible_predicates: frozenset[int],
) -> tuple[str, ...]:
    return tuple(
        sorted(
            g.image_id
            for g in graphs
            if mask_graph(g, visible_objects, visible_predicates) is not None
        )
    )


def mask_task(d: Dataset, s: Scenario, t: int, cumulative: bool = False) -> TaskDataset:
    """Masked train/test data of task ``t``.

    Train annotations always use exactly task ``t``'s newly visible
    classes. Test annotations use the union of classes from tasks 1..t
    when ``cumulative`` is set, else task ``t``'s classes only; the test
    image list is task ``t``'s either way.
    """
    spec = s.task(t)
    train_objs, train_preds = spec.visible_object_classes, spec.visible_predicate_classes
    if cumulative:
        test_objs, test_preds = s.cumulative_visible(t)
    else:
        test_objs, test_preds = train_objs, train_preds
    graphs = d.graphs
    train = tuple(
        m
        for i in spec.train_image_ids
        if (m := mask_graph(graphs[i], train_objs, train_preds)) is not None
    )
    test = tuple(
        m
        for i in spec.test_image_ids
        if (m := mask_graph(graphs[i], test_objs, test_preds)) is not None
    )
    return TaskDataset(
        task_index=t,
        cumulative=cumulative,
        train=train,
        test=test,
        train_visible_objects=train_objs,
        train_visible_predicates=train_preds,
        test_visible_objects=test_objs,
        test_visible_predicates=test_preds,
    )


def generalization_dataset(d: Dataset, s: Scenario) -> TaskDataset:
    """Masked standalone generalization test set (S3)."""
    spec = s.generalization_test
    if spec is None:
        raise ValueError(f"scenario {s.kind} has no generalization test set")
    test = tuple(
        m
        for i in spec.test_image_ids
        if (m := mask_graph(d.graphs[i], spec.visible_object_classes,
                            spec.visible_predicate_classes)) is not None
    )
    return TaskDataset(
        task_index=0,
        cumulative=False,
        train=(),
        test=test,
        train_visible_objects=frozenset(),
        train_visible_predicates=frozenset(),
        test_visible_objects=spec.visible_object_classes,
        test_visible_predicates=spec.visible_predicate_classes,
    )


# --- balanced class draws ---------------------------------------------------------


_BUCKET_ORDER = (Bucket.HEAD, Bucket.BODY, Bucket.TAIL)


def _draw_tasks_balanced(
    rng: random.Random,
    buckets: BucketAssignment,
    drawable: set[int],
    n_tasks: int,
    per_task: int,
    what: str,
) -> list[frozenset[int]]:
    """Partition-style draw: per task, quotas split 'as evenly as possible'
    over head/body/tail, extra slots rotating with the task index; draws are
    without replacement globally, falling back to whatever buckets still
    have classes when one runs dry."""
    if len(drawable) < n_tasks * per_task:
        raise InsufficientClasses(
            f"need {n_tasks * per_task} drawable {what} classes, have {len(drawable)}"
        )
    pools = {
        b: sorted(c for c in buckets.classes_in(b) if c in drawable) for b in _BUCKET_ORDER
    }
    base, extra = divmod(per_task, len(_BUCKET_ORDER))
    out: list[frozenset[int]] = []
    for t in range(n_tasks):
        quotas = {b: base for b in _BUCKET_ORDER}
        for j in range(extra):
            quotas[_BUCKET_ORDER[(t + j) % len(_BUCKET_ORDER)]] += 1
        picked: list[int] = []
        for b in _BUCKET_ORDER:
            take = min(quotas[b], len(pools[b]))
            chosen = rng.sample(pools[b], take)
            picked.extend(chosen)
            pools[b] = [c for c in pools[b] if c not in chosen]
        shortfall = per_task - len(picked)
        if shortfall:
            remaining = sorted(c for pool in pools.values() for c in pool)
            chosen = rng.sample(remaining, shortfall)
            picked.extend(chosen)
            for b in _BUCKET_ORDER:
                pools[b] = [c for c in pools[b] if c not in chosen]
        out.append(frozenset(picked))
    return out


def _trainable(d: Dataset, kind: str) -> set[int]:
    freqs = class_frequencies(d, kind)
    return {i for i, c in enumerate(freqs.counts) if c > 0}


# --- builders --------------------------------------------------------------------


def build_s1(
    d: Dataset,
    buckets: BucketAssignment,
    seed: int,
    n_tasks: int = 5,
    classes_per_task: int = 10,
) -> Scenario:
    """Predicate-incremental scenario: every object class visible in every
    task, a fresh uniformly-bucketed group of predicates per task; images
    are shared across tasks and participate wherever they carry a visible
    edge."""
    if buckets.kind != "predicates":
        raise ValueError("S1 draws predicate classes; pass predicate buckets")
    if len(d.predicate_vocab) < n_tasks * classes_per_task:
        raise InsufficientClasses(
            f"S1 needs {n_tasks * classes_per_task} predicate classes, "
            f"vocabulary has {len(d.predicate_vocab)}"
        )
    rng = random.Random(seed)
    groups = _draw_tasks_balanced(
        rng, buckets, _trainable(d, "predicates"), n_tasks, classes_per_task, "predicate"
    )
    all_objects = frozenset(range(len(d.object_vocab)))
    train_graphs = d.split_graphs("train")
    test_graphs = d.split_graphs("test")
    tasks = []
    for t, preds in enumerate(groups, start=1):
        tasks.append(
            TaskSpec(
                task_index=t,
                visible_object_classes=all_objects,
                visible_predicate_classes=preds,
                train_image_ids=_member_ids(train_graphs, all_objects, preds),
                test_image_ids=_member_ids(test_graphs, all_objects, preds),
            )
        )
    return Scenario(kind="S1", seed=seed, tasks=tuple(tasks))


def build_s2(
    d: Dataset,
    task1_objects: int = 100,
    task1_predicates: int = 40,
    task2_objects: int = 25,
    task2_predicates: int = 5,
) -> Scenario:
    """Scene-incremental scenario: the most frequent classes form task 1,
    the next block of less frequent classes task 2 (rank by train
    frequency, ties by vocabulary index)."""
    need_obj = task1_objects + task2_objects
    need_pred = task1_predicates + task2_predicates
    if len(d.object_vocab) < need_obj:
        raise InsufficientClasses(
            f"S2 needs {need_obj} object classes, vocabulary has {len(d.object_vocab)}"
        )
    if len(d.predicate_vocab) < need_pred:
        raise InsufficientClasses(
            f"S2 needs {need_pred} predicate classes, vocabulary has {len(d.predicate_vocab)}"
        )

    def by_rank(kind: str) -> list[int]:
        freqs = class_frequencies(d, kind)
        return sorted(range(len(freqs.counts)), key=lambda i: (-freqs.counts[i], i))

    obj_rank = by_rank("objects")
    pred_rank = by_rank("predicates")
    groups = [
        (frozenset(obj_rank[:task1_objects]), frozenset(pred_rank[:task1_predicates])),
        (
            frozenset(obj_rank[task1_objects:need_obj]),
            frozenset(pred_rank[task1_predicates:need_pred]),
        ),
    ]
    train_graphs = d.split_graphs("train")
    test_graphs = d.split_graphs("test")
    tasks = []
    for t, (objs, preds) in enumerate(groups, start=1):
        tasks.append(
            TaskSpec(
                task_index=t,
                visible_object_classes=objs,
                visible_predicate_classes=preds,
                train_image_ids=_member_ids(train_graphs, objs, preds),
                test_image_ids=_member_ids(test_graphs, objs, preds),
            )
        )
    return Scenario(kind="S2", seed=0, tasks=tuple(tasks))


def build_s3(
    d: Dataset,
    object_buckets: BucketAssignment,
    predicate_buckets: BucketAssignment,
    seed: int,
    n_tasks: int = 4,
    objects_per_task: int = 30,
    n_shared_predicates: int = 35,
) -> Scenario:
    """Object-incremental scenario with a fixed predicate set and a
    standalone generalization test set of never-taught object classes."""
    if object_buckets.kind != "objects" or predicate_buckets.kind != "predicates":
        raise ValueError("pass object buckets and predicate buckets, in that order")
    if len(d.object_vocab) < n_tasks * objects_per_task + 1:
        raise InsufficientClasses(
            f"S3 needs {n_tasks * objects_per_task} object classes plus at least one "
            f"reserved unknown class, vocabulary has {len(d.object_vocab)}"
        )
    if len(d.predicate_vocab) < n_shared_predicates:
        raise InsufficientClasses(
            f"S3 needs {n_shared_predicates} predicate classes, "
            f"vocabulary has {len(d.predicate_vocab)}"
        )
    rng = random.Random(seed)
    shared_preds = _draw_tasks_balanced(
        rng, predicate_buckets, _trainable(d, "predicates"), 1, n_shared_predicates, "predicate"
    )[0]
    groups = _draw_tasks_balanced(
        rng, object_buckets, _trainable(d, "objects"), n_tasks, objects_per_task, "object"
    )
    train_graphs = d.split_graphs("train")
    test_graphs = d.split_graphs("test")
    tasks = []
    for t, objs in enumerate(groups, start=1):
        tasks.append(
            TaskSpec(
                task_index=t,
                visible_object_classes=objs,
                visible_predicate_classes=shared_preds,
                train_image_ids=_member_ids(train_graphs, objs, shared_preds),
                test_image_ids=_member_ids(test_graphs, objs, shared_preds),
            )
        )

    assigned = frozenset().union(*groups)
    unknown = frozenset(range(len(d.object_vocab))) - assigned
    gen_ids = tuple(
        g.image_id
        for g in test_graphs
        if g.objects
        and all(o.class_id in unknown for o in g.objects)
        and any(r.predicate_id in shared_preds for r in g.relations)
    )
    if not gen_ids:
        raise EmptyGeneralizationSet(
            "no test image consists purely of never-assigned object classes"
        )
    gen = TaskSpec(
        task_index=0,
        visible_object_classes=unknown,
        visible_predicate_classes=shared_preds,
        train_image_ids=(),
        test_image_ids=tuple(sorted(gen_ids)),
    )
    return Scenario(kind="S3", seed=seed, tasks=tuple(tasks), generalization_test=gen)


def permute_tasks(s: Scenario, order: list[int]) -> Scenario:
    """Reorder tasks (1-based permutation) for curriculum-order studies."""
    if sorted(order) != list(range(1, s.n_tasks + 1)):
        raise ValueError(f"order must be a permutation of 1..{s.n_tasks}, got {order}")
    tasks = tuple(
        replace(s.tasks[src - 1], task_index=dst)
        for dst, src in enumerate(order, start=1)
    )
    return replace(s, tasks=tasks)


# --- manifests -----------------------------------------------------------------------


def _spec_to_dict(spec: TaskSpec, objects: Vocabulary, predicates: Vocabulary) -> dict:
    return {
        "index": spec.task_index,
        "objects": sorted(objects.name_of(i) for i in spec.visible_object_classes),
        "predicates": sorted(predicates.name_of(i) for i in spec.visible_predicate_classes),
        "train_images": sorted(spec.train_image_ids),
        "test_images": sorted(spec.test_image_ids),
    }


def _spec_from_dict(rec: dict, objects: Vocabulary, predicates: Vocabulary) -> TaskSpec:
    return TaskSpec(
        task_index=int(rec["index"]),
        visible_object_classes=frozenset(objects.id_of(n) for n in rec["objects"]),
        visible_predicate_classes=frozenset(predicates.id_of(n) for n in rec["predicates"]),
        train_image_ids=tuple(rec["train_images"]),
        test_image_ids=tuple(rec["test_images"]),
    )


def scenario_to_manifest(s: Scenario, d: Dataset) -> dict:
    gen = s.generalization_test
    return {
        "kind": s.kind,
        "seed": s.seed,
        "tasks": [_spec_to_dict(t, d.object_vocab, d.predicate_vocab) for t in s.tasks],
        "generalization_test": (
            _spec_to_dict(gen, d.object_vocab, d.predicate_vocab) if gen else None
        ),
    }


def scenario_from_manifest(manifest: dict, d: Dataset) -> Scenario:
    gen = manifest.get("generalization_test")
    return Scenario(
        kind=manifest["kind"],
        seed=int(manifest["seed"]),
        tasks=tuple(
            _spec_from_dict(rec, d.object_vocab, d.predicate_vocab)
            for rec in sorted(manifest["tasks"], key=lambda r: r["index"])
        ),
        generalization_test=(
            _spec_from_dict(gen, d.object_vocab, d.predicate_vocab) if gen else None
        ),
    )


def save_manifest(s: Scenario, d: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_manifest(s, d), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path, d: Dataset) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_manifest(json.load(fh), d)

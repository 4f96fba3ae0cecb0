"""Scene-graph data model: boxes, nodes, edges, vocabularies, triplets.

All types are immutable after construction and safe to share across
threads; the operations in this module are pure functions.

Boxes are stored as ``(x, y, w, h)`` floats in pixel space (Visual-Genome
convention); formats using corner pairs are converted at ingest.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import GraphUnrepairable


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner plus positive width/height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"bbox {name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox must have positive area, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # float rounding may nudge inter past the union for near-identical boxes
    return min(1.0, inter / (a.area + b.area - inter))


@dataclass(frozen=True)
class Vocabulary:
    """Dense ordered class vocabulary with a name->index map."""

    names: tuple[str, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            dupes = [n for n, c in Counter(self.names).items() if c > 1]
            raise ValueError(f"duplicate class names: {dupes}")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def name_of(self, class_id: int) -> str:
        return self.names[class_id]

    def id_of(self, name: str) -> int:
        return self.index[name]


@dataclass(frozen=True)
class ObjectNode:
    """Object instance: local id, class index and box."""

    node_id: int
    class_id: int
    box: BBox


@dataclass(frozen=True)
class RelationEdge:
    """Directed predicate edge between two distinct nodes of one graph."""

    subject_id: int
    predicate_id: int
    object_id: int

    def __post_init__(self):
        if self.subject_id == self.object_id:
            raise ValueError(f"self-relation on node {self.subject_id} is not allowed")


@dataclass(frozen=True)
class TripletLabel:
    """Class-level (subject, predicate, object) label."""

    subject_class: int
    predicate_class: int
    object_class: int

    def phrase(self, objects: Vocabulary, predicates: Vocabulary) -> str:
        """Render as the plain phrase ``subject predicate object``."""
        return " ".join(
            (
                objects.name_of(self.subject_class),
                predicates.name_of(self.predicate_class),
                objects.name_of(self.object_class),
            )
        )


@dataclass(frozen=True)
class SceneGraph:
    """Per-image graph: object nodes plus predicate edges.

    Construction checks referential integrity (unique node ids, edges
    pointing at existing nodes, no duplicate edges). Box-in-bounds is
    established by :func:`clamp_graph`, not here, so raw parses can be
    represented before repair.
    """

    image_id: str
    width: int
    height: int
    objects: tuple[ObjectNode, ...]
    relations: tuple[RelationEdge, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id}: non-positive dimensions")
        ids = [o.node_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"image {self.image_id}: duplicate node ids")
        known = set(ids)
        seen: set[tuple[int, int, int]] = set()
        for r in self.relations:
            if r.subject_id not in known or r.object_id not in known:
                raise ValueError(
                    f"image {self.image_id}: edge ({r.subject_id},{r.predicate_id},{r.object_id}) "
                    "references a missing node"
                )
            key = (r.subject_id, r.predicate_id, r.object_id)
            if key in seen:
                raise ValueError(f"image {self.image_id}: duplicate edge {key}")
            seen.add(key)

    def node(self, node_id: int) -> ObjectNode:
        for o in self.objects:
            if o.node_id == node_id:
                return o
        raise KeyError(node_id)

    @property
    def nodes_by_id(self) -> dict[int, ObjectNode]:
        return {o.node_id: o for o in self.objects}


def extract_triplet_labels(g: SceneGraph) -> Counter[TripletLabel]:
    """Class-level triplet multiset of a graph; one entry per edge."""
    nodes = g.nodes_by_id
    out: Counter[TripletLabel] = Counter()
    for r in g.relations:
        out[
            TripletLabel(
                subject_class=nodes[r.subject_id].class_id,
                predicate_class=r.predicate_id,
                object_class=nodes[r.object_id].class_id,
            )
        ] += 1
    return out


@dataclass(frozen=True)
class RepairReport:
    """What :func:`clamp_graph` changed on one graph."""

    image_id: str
    boxes_clamped: int = 0
    objects_dropped: int = 0
    edges_dropped: int = 0

    @property
    def untouched(self) -> bool:
        return self.boxes_clamped == 0 and self.objects_dropped == 0 and self.edges_dropped == 0


def clamp_graph(g: SceneGraph) -> tuple[SceneGraph, RepairReport]:
    """Clip boxes to the image rectangle and drop what cannot be saved.

    Objects whose boxes have zero area after clipping are removed along
    with every edge touching them. Raises :class:`GraphUnrepairable` when
    no valid object remains.
    """
    kept: list[ObjectNode] = []
    clamped = 0
    dropped = 0
    for o in g.objects:
        x1 = min(max(o.box.x, 0.0), float(g.width))
        y1 = min(max(o.box.y, 0.0), float(g.height))
        x2 = min(max(o.box.x2, 0.0), float(g.width))
        y2 = min(max(o.box.y2, 0.0), float(g.height))
        if x2 - x1 <= 0 or y2 - y1 <= 0:
            dropped += 1
            continue
        box = BBox(x1, y1, x2 - x1, y2 - y1)
        if box != o.box:
            clamped += 1
            o = ObjectNode(o.node_id, o.class_id, box)
        kept.append(o)
    if not kept:
        raise GraphUnrepairable(f"image {g.image_id}: no valid objects after clamping")
    alive = {o.node_id for o in kept}
    relations = tuple(
        r for r in g.relations if r.subject_id in alive and r.object_id in alive
    )
    report = RepairReport(
        image_id=g.image_id,
        boxes_clamped=clamped,
        objects_dropped=dropped,
        edges_dropped=len(g.relations) - len(relations),
    )
    if report.untouched:
        return g, report
    return SceneGraph(g.image_id, g.width, g.height, tuple(kept), relations), report


def graph_to_dict(g: SceneGraph, objects: Vocabulary, predicates: Vocabulary) -> dict:
    """Serialize a graph to the graphs.jsonl record shape (names, not ids)."""
    return {
        "image_id": g.image_id,
        "width": g.width,
        "height": g.height,
        "objects": [
            {
                "id": o.node_id,
                "class": objects.name_of(o.class_id),
                "bbox": [o.box.x, o.box.y, o.box.w, o.box.h],
            }
            for o in g.objects
        ],
        "relations": [
            {
                "subject": r.subject_id,
                "predicate": predicates.name_of(r.predicate_id),
                "object": r.object_id,
            }
            for r in g.relations
        ],
    }


def edge_triplet(g: SceneGraph, r: RelationEdge) -> TripletLabel:
    nodes = g.nodes_by_id
    return TripletLabel(
        subject_class=nodes[r.subject_id].class_id,
        predicate_class=r.predicate_id,
        object_class=nodes[r.object_id].class_id,
    )


def triplets_of(graphs: Iterable[SceneGraph]) -> Counter[TripletLabel]:
    """Accumulated triplet multiset over several graphs."""
    total: Counter[TripletLabel] = Counter()
    for g in graphs:
        total.update(extract_triplet_labels(g))
    return total

"""Dataset loading, class statistics and head/body/tail bucketing.

On-disk layout (all UTF-8 JSON):

* ``vocab.json``   -- ``{"objects": [...], "predicates": [...]}``
* ``graphs.jsonl`` -- one graph per line, boxes as ``[x, y, w, h]``
* ``splits.json``  -- ``{"train": [...], "val": [...], "test": [...]}``

``convert_raw_vg`` maps raw Visual-Genome release files
(``image_data.json``, ``objects.json``, ``relationships.json``) into this
layout, keeping the most frequent classes only (150 objects / 50
predicates by default, mirroring the filtering conventions of the
standard splits).
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .core import (
    BBox,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    Vocabulary,
    clamp_graph,
    graph_to_dict,
)
from .errors import EmptyDataset, FormatError, GraphUnrepairable, VocabError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class Bucket(str, Enum):
    """Frequency bucket of a class; ordered head < body < tail."""

    HEAD = "head"
    BODY = "body"
    TAIL = "tail"

    @property
    def rank(self) -> int:
        return ("head", "body", "tail").index(self.value)


@dataclass(frozen=True)
class Dataset:
    object_vocab: Vocabulary
    predicate_vocab: Vocabulary
    graphs: Mapping[str, SceneGraph]
    splits: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        covered: set[str] = set()
        for name in SPLITS:
            ids = self.splits.get(name, ())
            overlap = covered.intersection(ids)
            if overlap:
                raise ValueError(f"image ids in multiple splits: {sorted(overlap)[:5]}")
            covered.update(ids)
        missing = set(self.graphs) - covered
        if missing:
            raise ValueError(f"images missing a split: {sorted(missing)[:5]}")

    def split_graphs(self, split: str) -> list[SceneGraph]:
        return [self.graphs[i] for i in self.splits[split] if i in self.graphs]

    @property
    def train_graphs(self) -> list[SceneGraph]:
        return self.split_graphs("train")


@dataclass(frozen=True)
class FrequencyTable:
    """Per-class instance counts over the train split."""

    kind: str  # "objects" | "predicates"
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("negative count")

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class BucketAssignment:
    """Bucket of every class of one vocabulary."""

    kind: str
    buckets: tuple[Bucket, ...]

    def of(self, class_id: int) -> Bucket:
        return self.buckets[class_id]

    def classes_in(self, bucket: Bucket) -> list[int]:
        return [i for i, b in enumerate(self.buckets) if b is bucket]


# --- loading -----------------------------------------------------------------


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FormatError("file not found", path=str(path))
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", path=str(path), line=e.lineno)


def parse_graph_record(rec: dict, objects: Vocabulary, predicates: Vocabulary,
                       path: str | None = None, line: int | None = None) -> tuple[SceneGraph, int]:
    """Build a SceneGraph from one graphs.jsonl record.

    Duplicate (subject, predicate, object) edges are dropped here with a
    count returned, so recall denominators are not inflated downstream.
    """
    try:
        image_id = str(rec["image_id"])
        width = int(rec["width"])
        height = int(rec["height"])
        nodes = []
        for o in rec["objects"]:
            cls = o["class"]
            if cls not in objects:
                raise VocabError(f"unknown object class {cls!r} in image {image_id}")
            x, y, w, h = (float(v) for v in o["bbox"])
            nodes.append(ObjectNode(int(o["id"]), objects.id_of(cls), BBox(x, y, w, h)))
        edges = []
        seen: set[tuple[int, int, int]] = set()
        dupes = 0
        for r in rec["relations"]:
            pred = r["predicate"]
            if pred not in predicates:
                raise VocabError(f"unknown predicate {pred!r} in image {image_id}")
            key = (int(r["subject"]), predicates.id_of(pred), int(r["object"]))
            if key in seen:
                dupes += 1
                continue
            seen.add(key)
            edges.append(RelationEdge(*key))
        return SceneGraph(image_id, width, height, tuple(nodes), tuple(edges)), dupes
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad graph record: {e}", path=path, line=line)


def load_dataset(root_path: str | Path, format_version: int = 1) -> Dataset:
    """Load and fully validate a dataset directory."""
    if format_version != 1:
        raise FormatError(f"unsupported format_version {format_version}")
    root = Path(root_path)
    vocab = _read_json(root / "vocab.json")
    try:
        objects = Vocabulary(tuple(vocab["objects"]))
        predicates = Vocabulary(tuple(vocab["predicates"]))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad vocab.json: {e}", path=str(root / "vocab.json"))

    graphs: dict[str, SceneGraph] = {}
    dupes = 0
    dropped_unrepairable = 0
    graphs_path = root / "graphs.jsonl"
    if not graphs_path.exists():
        raise FormatError("file not found", path=str(graphs_path))
    with open(graphs_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise FormatError(f"invalid JSON: {e.msg}", path=str(graphs_path), line=lineno)
            g, d = parse_graph_record(rec, objects, predicates, path=str(graphs_path), line=lineno)
            dupes += d
            try:
                g, report = clamp_graph(g)
            except GraphUnrepairable:
                dropped_unrepairable += 1
                continue
            if not report.untouched:
                log.debug("repaired %s: %s", g.image_id, report)
            if g.image_id in graphs:
                raise FormatError(
                    f"duplicate image_id {g.image_id}", path=str(graphs_path), line=lineno
                )
            graphs[g.image_id] = g
    if not graphs:
        raise EmptyDataset(f"no usable graphs in {graphs_path}")
    if dupes:
        log.warning("dropped %d duplicate relation edges at ingest", dupes)
    if dropped_unrepairable:
        log.warning("dropped %d unrepairable graphs at ingest", dropped_unrepairable)

    splits_raw = _read_json(root / "splits.json")
    try:
        splits = {
            name: tuple(str(i) for i in splits_raw.get(name, []) if str(i) in graphs)
            for name in SPLITS
        }
    except (TypeError, AttributeError) as e:
        raise FormatError(f"bad splits.json: {e}", path=str(root / "splits.json"))
    assigned = set().union(*(splits[s] for s in SPLITS))
    unassigned = sorted(set(graphs) - assigned)
    if unassigned:
        raise FormatError(
            f"{len(unassigned)} images missing a split (first: {unassigned[0]})",
            path=str(root / "splits.json"),
        )
    return Dataset(objects, predicates, graphs, splits)


def save_dataset(d: Dataset, out_dir: str | Path) -> None:
    """Write a dataset back out in the documented layout (byte-stable)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"objects": list(d.object_vocab.names), "predicates": list(d.predicate_vocab.names)},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    with open(out / "graphs.jsonl", "w", encoding="utf-8") as fh:
        for image_id in sorted(d.graphs):
            rec = graph_to_dict(d.graphs[image_id], d.object_vocab, d.predicate_vocab)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "splits.json", "w", encoding="utf-8") as fh:
        json.dump({s: sorted(d.splits[s]) for s in SPLITS}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- statistics ---------------------------------------------------------------


def class_frequencies(d: Dataset, kind: str) -> FrequencyTable:
    """Instance counts per class over the train split only."""
    if kind not in ("objects", "predicates"):
        raise ValueError(f"kind must be objects|predicates, got {kind!r}")
    n = len(d.object_vocab) if kind == "objects" else len(d.predicate_vocab)
    counts = [0] * n
    for g in d.train_graphs:
        if kind == "objects":
            for o in g.objects:
                counts[o.class_id] += 1
        else:
            for r in g.relations:
                counts[r.predicate_id] += 1
    return FrequencyTable(kind=kind, counts=tuple(counts))


def image_frequencies(graphs: Iterable[SceneGraph], kind: str, n_classes: int) -> tuple[int, ...]:
    """Number of images containing at least one instance of each class."""
    counts = [0] * n_classes
    for g in graphs:
        if kind == "objects":
            present = {o.class_id for o in g.objects}
        else:
            present = {r.predicate_id for r in g.relations}
        for c in present:
            counts[c] += 1
    return tuple(counts)


@dataclass(frozen=True)
class CountThresholds:
    """Bucket policy: head when count >= head_min, body when >= body_min."""

    head_min: int = 10000
    body_min: int = 500


@dataclass(frozen=True)
class RankTertiles:
    """Bucket policy: split classes into thirds by frequency rank.

    Head takes the top ceil(N/3) ranks, body the next ceil(2N/3)-ceil(N/3),
    tail the rest; ties broken by ascending vocabulary index.
    """


BucketPolicy = CountThresholds | RankTertiles


def bucketize(f: FrequencyTable, policy: BucketPolicy) -> BucketAssignment:
    """Deterministically assign each class to head/body/tail."""
    n = len(f.counts)
    if n == 0:
        raise ValueError("empty frequency table")
    buckets: list[Bucket]
    if isinstance(policy, CountThresholds):
        buckets = []
        for c in f.counts:
            if c >= policy.head_min:
                buckets.append(Bucket.HEAD)
            elif c >= policy.body_min:
                buckets.append(Bucket.BODY)
            else:
                buckets.append(Bucket.TAIL)
    elif isinstance(policy, RankTertiles):
        order = sorted(range(n), key=lambda i: (-f.counts[i], i))
        head_end = -(-n // 3)
        body_end = -(-2 * n // 3)
        buckets = [Bucket.TAIL] * n
        for rank, cls in enumerate(order):
            if rank < head_end:
                buckets[cls] = Bucket.HEAD
            elif rank < body_end:
                buckets[cls] = Bucket.BODY
    else:
        raise TypeError(f"unknown bucket policy {policy!r}")
    return BucketAssignment(kind=f.kind, buckets=tuple(buckets))


# --- raw Visual Genome conversion ----------------------------------------------


def _object_name(obj: dict) -> str | None:
    names = obj.get("names") or ([obj["name"]] if "name" in obj else [])
    if not names:
        return None
    return str(names[0]).strip().lower()


def convert_raw_vg(
    raw_dir: str | Path,
    out_dir: str | Path,
    max_objects: int = 150,
    max_predicates: int = 50,
    train_frac: float = 0.7,
    val_frac: float = 0.05,
) -> dict:
    """Convert raw VG release JSON into the documented dataset layout.

    Keeps the ``max_objects`` / ``max_predicates`` most frequent classes,
    drops annotations outside them, and assigns deterministic splits by
    sorted image-id order. Returns a summary dict; reruns are
    byte-identical.
    """
    raw = Path(raw_dir)
    images = {int(rec["image_id"]): rec for rec in _read_json(raw / "image_data.json")}
    objects_raw = _read_json(raw / "objects.json")
    relations_raw = _read_json(raw / "relationships.json")

    obj_counter: Counter[str] = Counter()
    for rec in objects_raw:
        for obj in rec.get("objects", []):
            name = _object_name(obj)
            if name:
                obj_counter[name] += 1
    pred_counter: Counter[str] = Counter()
    for rec in relations_raw:
        for rel in rec.get("relationships", []):
            pred = str(rel.get("predicate", "")).strip().lower()
            if pred:
                pred_counter[pred] += 1
    if not obj_counter or not pred_counter:
        raise EmptyDataset("raw VG files contain no usable annotations")

    def top(counter: Counter[str], k: int) -> list[str]:
        return sorted(sorted(counter), key=lambda n: (-counter[n], n))[:k]

    object_names = top(obj_counter, max_objects)
    predicate_names = top(pred_counter, max_predicates)
    objects = Vocabulary(tuple(object_names))
    predicates = Vocabulary(tuple(predicate_names))

    rels_by_image: dict[int, list] = {}
    for rec in relations_raw:
        rels_by_image[int(rec["image_id"])] = rec.get("relationships", [])

    graphs: dict[str, dict] = {}
    for rec in objects_raw:
        image_id = int(rec["image_id"])
        meta = images.get(image_id)
        if meta is None:
            continue
        width, height = int(meta["width"]), int(meta["height"])
        nodes = []
        node_ids = set()
        for obj in rec.get("objects", []):
            name = _object_name(obj)
            if name is None or name not in objects:
                continue
            try:
                box = BBox(float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"]))
            except (KeyError, ValueError):
                continue
            nodes.append(ObjectNode(int(obj["object_id"]), objects.id_of(name), box))
            node_ids.add(int(obj["object_id"]))
        edges = []
        seen: set[tuple[int, int, int]] = set()
        for rel in rels_by_image.get(image_id, []):
            pred = str(rel.get("predicate", "")).strip().lower()
            if pred not in predicates:
                continue
            try:
                s = int(rel["subject"]["object_id"])
                o = int(rel["object"]["object_id"])
            except (KeyError, TypeError):
                continue
            if s not in node_ids or o not in node_ids or s == o:
                continue
            key = (s, predicates.id_of(pred), o)
            if key in seen:
                continue
            seen.add(key)
            edges.append(RelationEdge(*key))
        if not nodes:
            continue
        try:
            g, _ = clamp_graph(SceneGraph(str(image_id), width, height, tuple(nodes), tuple(edges)))
        except GraphUnrepairable:
            continue
        graphs[g.image_id] = graph_to_dict(g, objects, predicates)

    if not graphs:
        raise EmptyDataset("no convertible graphs in raw VG directory")

    ids = sorted(graphs, key=lambda s: (len(s), s))
    n_train = int(len(ids) * train_frac)
    n_val = int(len(ids) * val_frac)
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump({"objects": object_names, "predicates": predicate_names},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "graphs.jsonl", "w", encoding="utf-8") as fh:
        for image_id in sorted(graphs):
            fh.write(json.dumps(graphs[image_id], sort_keys=True) + "\n")
    with open(out / "splits.json", "w", encoding="utf-8") as fh:
        json.dump(splits, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "images": len(graphs),
        "objects": len(object_names),
        "predicates": len(predicate_names),
        "splits": {k: len(v) for k, v in splits.items()},
    }

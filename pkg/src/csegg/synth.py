"""Deterministic synthetic scene-graph datasets for tests and smoke runs.

The generator reserves a block of object classes that only ever appear in
dedicated test-split images; those images are the raw material for the
standalone generalization test set of the object-incremental scenario.
"""

from __future__ import annotations

import random
from pathlib import Path

from .core import BBox, ObjectNode, RelationEdge, SceneGraph, Vocabulary
from .ingest import Dataset


def _random_box(rng: random.Random, width: int, height: int) -> BBox:
    w = rng.uniform(20, width / 2)
    h = rng.uniform(20, height / 2)
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return BBox(round(x, 2), round(y, 2), round(w, 2), round(h, 2))


def _weights(n: int, skew: float) -> list[float]:
    # skew 0 -> uniform; larger -> steeper long tail
    return [1.0 / (i + 1) ** skew for i in range(n)]


def make_synthetic_dataset(
    seed: int = 0,
    n_objects: int = 160,
    n_predicates: int = 56,
    n_unknown_objects: int = 24,
    n_images: int = 240,
    n_generalization_images: int = 24,
    objects_per_image: tuple[int, int] = (5, 8),
    edges_per_image: tuple[int, int] = (8, 14),
    train_frac: float = 0.65,
    val_frac: float = 0.05,
    object_skew: float = 0.6,
    predicate_skew: float = 0.0,
    image_size: tuple[int, int] = (640, 480),
) -> Dataset:
    """Build an in-memory dataset with known, controllable statistics.

    The last ``n_unknown_objects`` object classes appear only in the
    ``n_generalization_images`` test-split images (and nowhere in train),
    so scenario builders that restrict themselves to trainable classes
    never assign them to a task.
    """
    if n_unknown_objects >= n_objects:
        raise ValueError("reserved unknown block must be smaller than the vocabulary")
    rng = random.Random(seed)
    objects = Vocabulary(tuple(f"obj_{i:03d}" for i in range(n_objects)))
    predicates = Vocabulary(tuple(f"rel_{i:02d}" for i in range(n_predicates)))
    n_known = n_objects - n_unknown_objects
    width, height = image_size

    obj_weights = _weights(n_known, object_skew)
    pred_weights = _weights(n_predicates, predicate_skew)
    known_ids = list(range(n_known))
    unknown_ids = list(range(n_known, n_objects))
    pred_ids = list(range(n_predicates))

    def build_image(class_pool: list[int], weights: list[float] | None):
        n_objs = rng.randint(*objects_per_image)
        nodes = []
        for node_id in range(n_objs):
            if weights is None:
                cls = rng.choice(class_pool)
            else:
                cls = rng.choices(class_pool, weights=weights, k=1)[0]
            nodes.append((node_id, cls))
        n_edges = rng.randint(*edges_per_image)
        edges: list[tuple[int, int, int]] = []
        seen: set[tuple[int, int, int]] = set()
        attempts = 0
        while len(edges) < n_edges and attempts < n_edges * 30:
            attempts += 1
            s, o = rng.sample(range(n_objs), 2)
            p = rng.choices(pred_ids, weights=pred_weights, k=1)[0]
            if (s, p, o) in seen:
                continue
            seen.add((s, p, o))
            edges.append((s, p, o))
        return nodes, edges

    raw: dict[str, tuple[list, list]] = {}
    for i in range(n_images):
        raw[f"im_{i:05d}"] = build_image(known_ids, obj_weights)
    gen_ids = []
    for i in range(n_generalization_images):
        image_id = f"gen_{i:05d}"
        raw[image_id] = build_image(unknown_ids, None)
        gen_ids.append(image_id)

    regular = [f"im_{i:05d}" for i in range(n_images)]
    n_train = int(n_images * train_frac)
    n_val = int(n_images * val_frac)
    train_ids = regular[:n_train]

    # coverage pass: every known object class and every predicate gets at
    # least one train instance, so scenario builders never hit starved pools
    seen_objs = {cls for i in train_ids for _, cls in raw[i][0]}
    for slot, cls in enumerate(c for c in known_ids if c not in seen_objs):
        nodes, _ = raw[train_ids[slot % len(train_ids)]]
        nodes.append((len(nodes), cls))
    seen_preds = {p for i in train_ids for _, p, _ in raw[i][1]}
    for slot, p in enumerate(p for p in pred_ids if p not in seen_preds):
        nodes, edges = raw[train_ids[(slot * 7 + 3) % len(train_ids)]]
        used = {(s, q, o) for s, q, o in edges}
        pair = next(
            (s, o)
            for s in range(len(nodes))
            for o in range(len(nodes))
            if s != o and (s, p, o) not in used
        )
        edges.append((pair[0], p, pair[1]))

    graphs: dict[str, SceneGraph] = {}
    for image_id, (nodes, edges) in raw.items():
        graphs[image_id] = SceneGraph(
            image_id,
            width,
            height,
            tuple(ObjectNode(nid, cls, _random_box(rng, width, height)) for nid, cls in nodes),
            tuple(RelationEdge(s, p, o) for s, p, o in edges),
        )

    splits = {
        "train": tuple(train_ids),
        "val": tuple(regular[n_train:n_train + n_val]),
        "test": tuple(regular[n_train + n_val:]) + tuple(gen_ids),
    }
    return Dataset(objects, predicates, graphs, splits)


def write_image_corpus(out_dir: str | Path, image_ids, min_bytes: int = 51200) -> int:
    """Write one deterministic placeholder raster (binary PPM) per image id.

    Returns the total byte count. Used for storage-accounting checks that
    compare replay buffers of real image files against symbolic state.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # smallest square raster clearing min_bytes
    side = 1
    while side * side * 3 + 32 < min_bytes:
        side += 1
    total = 0
    for image_id in image_ids:
        header = f"P6\n{side} {side}\n255\n".encode()
        rng = random.Random(image_id)
        payload = bytes(rng.randrange(256) for _ in range(64))
        body = (payload * ((side * side * 3) // len(payload) + 1))[: side * side * 3]
        data = header + body
        (out / f"{image_id}.ppm").write_bytes(data)
        total += len(data)
    return total

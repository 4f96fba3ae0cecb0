"""Symbolic replay pipeline: rebuild replay exemplars from stored triplet
labels instead of stored images.

A run directory separates what must persist from what can be regenerated:

* ``state/`` -- triplet universe, pipeline config, frozen-checkpoint
  reference. This is the symbolic store whose byte size the storage
  accounting reports.
* ``cache/`` -- generated images, pseudo annotations, item manifest and
  resume marker. Everything here is reproducible from ``state/`` plus the
  providers, and is accounted separately.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .clustering import (
    ContextCluster,
    TripletEmbedding,
    cluster_triplets,
    fallback_clusters,
    select_prompt_clusters,
)
from .core import (
    BBox,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    TripletLabel,
    Vocabulary,
    clamp_graph,
    graph_to_dict,
    triplets_of,
)
from .errors import (
    DimensionMismatch,
    GraphUnrepairable,
    PartialGeneration,
    ProviderUnavailable,
)
from .ingest import parse_graph_record
from .metrics import PredictionSet
from .prompts import Prompt, compose_prompt, parse_prompt
from .providers import EmbeddingProvider, ImageGenerator, Providers, expand_hash
from .sampling import LtdConfig, ltd_rates, ltd_sample
from .universe import TripletUniverse, save_universe


@dataclass(frozen=True)
class RasConfig:
    alpha: float = 0.7
    cluster_threshold: float = 0.6
    min_cluster_size_exclusive: int = 3
    gamma: int = 10
    k_keep: int = 20
    score_floor: float = 0.3
    node_merge_iou: float = 0.9
    seed: int = 0
    embed_endpoint: str | None = None
    generate_endpoint: str | None = None

    def __post_init__(self):
        if self.cluster_threshold <= 0:
            raise ValueError("cluster_threshold must be > 0")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "cluster_threshold": self.cluster_threshold,
            "min_cluster_size_exclusive": self.min_cluster_size_exclusive,
            "gamma": self.gamma,
            "k_keep": self.k_keep,
            "score_floor": self.score_floor,
            "node_merge_iou": self.node_merge_iou,
            "seed": self.seed,
            "embed_endpoint": self.embed_endpoint,
            "generate_endpoint": self.generate_endpoint,
        }


@dataclass(frozen=True)
class ImageRecord:
    """A persisted generated image, handed to the pseudo-labeler."""

    path: str
    rel_path: str
    width: int
    height: int
    prompt_text: str
    seed: int


# predict hook of a frozen checkpoint applied to generated images
PseudoLabeler = Callable[[Sequence[ImageRecord]], Sequence[PredictionSet]]


@dataclass(frozen=True)
class ExemplarItem:
    image_ref: str  # run-dir-relative path
    graph: SceneGraph
    prompt_text: str
    source_labels: tuple[TripletLabel, ...]
    generator_seed: int
    checkpoint_id: str | None
    low_confidence: bool = False


@dataclass(frozen=True)
class ExemplarSet:
    items: tuple[ExemplarItem, ...] = ()
    state_bytes: int = 0
    cache_bytes: int = 0

    def __len__(self) -> int:
        return len(self.items)


# --- pipeline stages ----------------------------------------------------------------


def embed_triplets(
    labels: Sequence[TripletLabel],
    provider: EmbeddingProvider,
    objects: Vocabulary,
    predicates: Vocabulary,
) -> list[TripletEmbedding]:
    """Embed each label's ``subject predicate object`` phrase."""
    texts = [label.phrase(objects, predicates) for label in labels]
    vectors = provider.embed(texts)
    if len(vectors) != len(texts):
        raise DimensionMismatch(f"provider returned {len(vectors)} vectors for {len(texts)} texts")
    dims = {len(v) for v in vectors}
    if len(dims) > 1:
        raise DimensionMismatch(f"inconsistent embedding dimensions {sorted(dims)}")
    return [TripletEmbedding(label, tuple(v)) for label, v in zip(labels, vectors)]


def request_images(
    prompt: Prompt,
    gamma: int,
    generator: ImageGenerator,
    run_dir: Path,
    base_seed: int,
    name_prefix: str,
) -> list[ImageRecord]:
    """Generate and persist exactly ``gamma`` images for one prompt."""
    (run_dir / "cache" / "images").mkdir(parents=True, exist_ok=True)
    generated = generator.generate(prompt.text, gamma, base_seed)
    records = []
    for i, img in enumerate(generated[:gamma]):
        rel = f"cache/images/{name_prefix}_{i:02d}.{img.format}"
        path = run_dir / rel
        path.write_bytes(img.data)
        records.append(
            ImageRecord(
                path=str(path),
                rel_path=rel,
                width=img.width,
                height=img.height,
                prompt_text=prompt.text,
                seed=img.seed,
            )
        )
    if len(records) < gamma:
        raise PartialGeneration(
            f"generator produced {len(records)}/{gamma} images for prompt {name_prefix}",
            produced=records,
        )
    return records


@dataclass(frozen=True)
class PseudoAnnotation:
    graph: SceneGraph
    low_confidence: bool


def graph_from_predictions(
    preds: PredictionSet,
    width: int,
    height: int,
    k_keep: int,
    score_floor: float,
    merge_iou: float = 0.9,
) -> PseudoAnnotation:
    """Rebuild a scene graph from predicted triplets.

    Endpoint boxes merge into one node when they share a class and overlap
    with IoU >= ``merge_iou``; degenerate edges (merged endpoints,
    duplicates) are dropped. An all-below-floor prediction set yields an
    empty graph flagged low-confidence.
    """
    from .core import iou as _iou

    kept = [t for t in preds.top(k_keep) if t.score >= score_floor]
    if not kept:
        return PseudoAnnotation(
            SceneGraph(preds.image_id, width, height, (), ()), low_confidence=True
        )
    nodes: list[ObjectNode] = []

    def node_for(class_id: int, box: BBox) -> int:
        for existing in nodes:
            if existing.class_id == class_id and _iou(existing.box, box) >= merge_iou:
                return existing.node_id
        node = ObjectNode(len(nodes), class_id, box)
        nodes.append(node)
        return node.node_id

    edges: list[RelationEdge] = []
    seen: set[tuple[int, int, int]] = set()
    for t in kept:
        s = node_for(t.subject_class, t.subject_box)
        o = node_for(t.object_class, t.object_box)
        if s == o or (s, t.predicate_class, o) in seen:
            continue
        seen.add((s, t.predicate_class, o))
        edges.append(RelationEdge(s, t.predicate_class, o))
    graph = SceneGraph(preds.image_id, width, height, tuple(nodes), tuple(edges))
    try:
        graph, _ = clamp_graph(graph)
    except GraphUnrepairable:
        return PseudoAnnotation(
            SceneGraph(preds.image_id, width, height, (), ()), low_confidence=True
        )
    return PseudoAnnotation(graph, low_confidence=False)


def pseudo_label(
    images: Sequence[ImageRecord],
    labeler: PseudoLabeler,
    k_keep: int = 20,
    score_floor: float = 0.3,
    merge_iou: float = 0.9,
) -> list[PseudoAnnotation]:
    """Annotate generated images with the frozen checkpoint's predictions."""
    prediction_sets = labeler(images)
    if len(prediction_sets) != len(images):
        raise ValueError(
            f"labeler returned {len(prediction_sets)} sets for {len(images)} images"
        )
    return [
        graph_from_predictions(p, rec.width, rec.height, k_keep, score_floor, merge_iou)
        for p, rec in zip(prediction_sets, images)
    ]


class PromptOracleLabeler:
    """Deterministic stand-in for a frozen checkpoint on generated images.

    Parses the prompt back into triplet labels and emits one triplet per
    phrase with hash-derived boxes; every distinct object name in a prompt
    keeps one box, so repeated mentions share nodes after reconstruction.
    """

    def __init__(self, objects: Vocabulary, predicates: Vocabulary, seed: int = 0):
        self.objects = objects
        self.predicates = predicates
        self.seed = seed

    def _box(self, image: ImageRecord, class_id: int) -> BBox:
        raw = expand_hash(
            self.seed.to_bytes(8, "little")
            + image.prompt_text.encode()
            + class_id.to_bytes(4, "little"),
            16,
        )
        vals = [int.from_bytes(raw[4 * i: 4 * i + 4], "little") for i in range(4)]
        w = 8 + vals[2] % max(1, image.width // 2)
        h = 8 + vals[3] % max(1, image.height // 2)
        x = vals[0] % max(1, image.width - w)
        y = vals[1] % max(1, image.height - h)
        return BBox(float(x), float(y), float(w), float(h))

    def __call__(self, images: Sequence[ImageRecord]) -> list[PredictionSet]:
        from .metrics import PredictedTriplet

        out = []
        for rec in images:
            labels = parse_prompt(rec.prompt_text, self.objects, self.predicates)
            triplets = tuple(
                PredictedTriplet(
                    label.subject_class,
                    label.predicate_class,
                    label.object_class,
                    self._box(rec, label.subject_class),
                    self._box(rec, label.object_class),
                    score=1.0,
                )
                for label in labels
            )
            out.append(PredictionSet(Path(rec.rel_path).stem, triplets))
        return out


# --- run directory bookkeeping ---------------------------------------------------------


def _state_digest(run_dir: Path) -> str:
    h = hashlib.sha256()
    state = run_dir / "state"
    for path in sorted(state.glob("*")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _write_state(
    run_dir: Path,
    u: TripletUniverse | None,
    cfg: RasConfig,
    checkpoint_id: str | None,
    objects: Vocabulary,
    predicates: Vocabulary,
) -> None:
    state = run_dir / "state"
    state.mkdir(parents=True, exist_ok=True)
    if u is not None:
        save_universe(u, objects, predicates, state / "universe.jsonl")
    with open(state / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(state / "checkpoint.json", "w", encoding="utf-8") as fh:
        json.dump({"checkpoint_id": checkpoint_id}, fh, sort_keys=True)
        fh.write("\n")


def persisted_state_bytes(run_dir: str | Path) -> int:
    """Exact byte count of the symbolic store (``state/`` only)."""
    state = Path(run_dir) / "state"
    if not state.exists():
        return 0
    return sum(p.stat().st_size for p in state.rglob("*") if p.is_file())


def cache_bytes(run_dir: str | Path) -> int:
    """Byte count of the regenerable cache (images, manifest, marker)."""
    cache = Path(run_dir) / "cache"
    if not cache.exists():
        return 0
    return sum(p.stat().st_size for p in cache.rglob("*") if p.is_file())


def _item_to_record(item: ExemplarItem, objects: Vocabulary, predicates: Vocabulary) -> dict:
    return {
        "image": item.image_ref,
        "graph": graph_to_dict(item.graph, objects, predicates),
        "prompt": item.prompt_text,
        "source_labels": [
            [objects.name_of(l.subject_class), predicates.name_of(l.predicate_class),
             objects.name_of(l.object_class)]
            for l in item.source_labels
        ],
        "generator_seed": item.generator_seed,
        "checkpoint": item.checkpoint_id,
        "low_confidence": item.low_confidence,
    }


def _item_from_record(rec: dict, objects: Vocabulary, predicates: Vocabulary) -> ExemplarItem:
    graph, _ = parse_graph_record(rec["graph"], objects, predicates)
    return ExemplarItem(
        image_ref=rec["image"],
        graph=graph,
        prompt_text=rec["prompt"],
        source_labels=tuple(
            TripletLabel(objects.id_of(s), predicates.id_of(p), objects.id_of(o))
            for s, p, o in rec["source_labels"]
        ),
        generator_seed=int(rec["generator_seed"]),
        checkpoint_id=rec.get("checkpoint"),
        low_confidence=bool(rec.get("low_confidence", False)),
    )


def load_exemplar_manifest(
    run_dir: str | Path, objects: Vocabulary, predicates: Vocabulary
) -> ExemplarSet:
    run = Path(run_dir)
    manifest = run / "cache" / "manifest.jsonl"
    items: list[ExemplarItem] = []
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    items.append(_item_from_record(json.loads(line), objects, predicates))
    return ExemplarSet(
        items=tuple(items),
        state_bytes=persisted_state_bytes(run),
        cache_bytes=cache_bytes(run),
    )


# --- end-to-end builders -----------------------------------------------------------------


def _select_clusters(
    embeddings: list[TripletEmbedding], cfg: RasConfig
) -> list[ContextCluster]:
    from .errors import NoEligibleClusters

    clusters = cluster_triplets(embeddings, cfg.cluster_threshold)
    try:
        return select_prompt_clusters(clusters, cfg.min_cluster_size_exclusive)
    except NoEligibleClusters:
        return fallback_clusters(embeddings, cfg.min_cluster_size_exclusive)


def plan_prompts(
    u: TripletUniverse,
    cfg: RasConfig,
    embedder: EmbeddingProvider,
    objects: Vocabulary,
    predicates: Vocabulary,
    rng: random.Random | None = None,
) -> list[Prompt]:
    """The symbolic half of the pipeline: dropout-sample the universe,
    embed, cluster, and compose one prompt per eligible cluster."""
    rng = rng or random.Random(cfg.seed)
    labels = ltd_sample(u, ltd_rates(u, LtdConfig(cfg.alpha)), rng)
    if not labels:
        labels = list(u.counts)
    embeddings = embed_triplets(labels, embedder, objects, predicates)
    clusters = _select_clusters(embeddings, cfg)
    return [compose_prompt(c.members, objects, predicates) for c in clusters]


def _append_manifest(run_dir: Path, items: Sequence[ExemplarItem],
                     objects: Vocabulary, predicates: Vocabulary) -> None:
    manifest = run_dir / "cache" / "manifest.jsonl"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest, "a", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(_item_to_record(item, objects, predicates), sort_keys=True) + "\n")


def _read_progress(run_dir: Path) -> dict | None:
    marker = run_dir / "cache" / "progress.json"
    if not marker.exists():
        return None
    with open(marker, encoding="utf-8") as fh:
        return json.load(fh)


def _write_progress(run_dir: Path, completed_prompts: int, digest: str) -> None:
    marker = run_dir / "cache" / "progress.json"
    marker.parent.mkdir(parents=True, exist_ok=True)
    with open(marker, "w", encoding="utf-8") as fh:
        json.dump({"completed_prompts": completed_prompts, "state_digest": digest}, fh,
                  sort_keys=True)
        fh.write("\n")


def _generate_for_prompts(
    prompts: Sequence[Prompt],
    cfg: RasConfig,
    providers: Providers,
    labeler: PseudoLabeler | None,
    run_dir: Path,
    objects: Vocabulary,
    predicates: Vocabulary,
    checkpoint_id: str | None,
    budget_items: int | None,
    budget_bytes: int | None,
    gt_annotations: Sequence[SceneGraph] | None = None,
) -> ExemplarSet:
    """Shared generation loop; resumable at prompt granularity."""
    digest = _state_digest(run_dir)
    progress = _read_progress(run_dir)
    items: list[ExemplarItem] = []
    start = 0
    if progress is not None and progress.get("state_digest") == digest:
        start = int(progress.get("completed_prompts", 0))
        items = list(load_exemplar_manifest(run_dir, objects, predicates).items)
    else:
        for stale in ("manifest.jsonl", "progress.json"):
            path = run_dir / "cache" / stale
            if path.exists():
                path.unlink()
        _write_progress(run_dir, 0, digest)

    def budget_reached() -> bool:
        if budget_items is not None and len(items) >= budget_items:
            return True
        if budget_bytes is not None and cache_bytes(run_dir) >= budget_bytes:
            return True
        return False

    for p_idx in range(start, len(prompts)):
        if budget_reached():
            break
        prompt = prompts[p_idx]
        try:
            records = request_images(
                prompt,
                cfg.gamma,
                providers.generator,
                run_dir,
                base_seed=cfg.seed + 10_000 * (p_idx + 1),
                name_prefix=f"p{p_idx:04d}",
            )
            if gt_annotations is not None:
                annotations = [
                    PseudoAnnotation(gt_annotations[p_idx], low_confidence=False)
                    for _ in records
                ]
            else:
                assert labeler is not None
                annotations = pseudo_label(
                    records, labeler, cfg.k_keep, cfg.score_floor, cfg.node_merge_iou
                )
        except ProviderUnavailable:
            _write_progress(run_dir, p_idx, digest)
            raise
        new_items = []
        for rec, ann in zip(records, annotations):
            if budget_items is not None and len(items) + len(new_items) >= budget_items:
                break
            new_items.append(
                ExemplarItem(
                    image_ref=rec.rel_path,
                    graph=ann.graph,
                    prompt_text=prompt.text,
                    source_labels=prompt.source_labels,
                    generator_seed=rec.seed,
                    checkpoint_id=checkpoint_id,
                    low_confidence=ann.low_confidence,
                )
            )
        _append_manifest(run_dir, new_items, objects, predicates)
        items.extend(new_items)
        _write_progress(run_dir, p_idx + 1, digest)
    return ExemplarSet(
        items=tuple(items),
        state_bytes=persisted_state_bytes(run_dir),
        cache_bytes=cache_bytes(run_dir),
    )


def build_exemplar_set(
    u: TripletUniverse,
    cfg: RasConfig,
    providers: Providers,
    labeler: PseudoLabeler,
    run_dir: str | Path,
    objects: Vocabulary,
    predicates: Vocabulary,
    checkpoint_id: str | None = None,
    budget_items: int | None = None,
    budget_bytes: int | None = None,
) -> ExemplarSet:
    """Full replay pipeline over a stored triplet universe."""
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    _write_state(run, u, cfg, checkpoint_id, objects, predicates)
    if budget_items == 0:
        return ExemplarSet(state_bytes=persisted_state_bytes(run), cache_bytes=cache_bytes(run))
    if len(u) == 0:
        raise ValueError("cannot build exemplars from an empty universe")
    prompts = plan_prompts(u, cfg, providers.embedder, objects, predicates)
    return _generate_for_prompts(
        prompts, cfg, providers, labeler, run, objects, predicates,
        checkpoint_id, budget_items, budget_bytes,
    )


def build_exemplar_set_gt(
    task_graphs: Sequence[SceneGraph],
    cfg: RasConfig,
    providers: Providers,
    run_dir: str | Path,
    objects: Vocabulary,
    predicates: Vocabulary,
    budget_items: int | None = None,
    budget_bytes: int | None = None,
) -> ExemplarSet:
    """Ground-truth variant: one prompt per retained graph, composed from
    its full triplet multiset, annotated with the graph itself."""
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    graphs = [g for g in task_graphs if g.relations]
    universe = TripletUniverse(counts=dict(triplets_of(graphs))) if graphs else None
    _write_state(run, universe, cfg, None, objects, predicates)
    if budget_items == 0 or not graphs:
        return ExemplarSet(state_bytes=persisted_state_bytes(run), cache_bytes=cache_bytes(run))
    prompts = []
    for g in graphs:
        labels = []
        nodes = g.nodes_by_id
        for r in g.relations:
            labels.append(
                TripletLabel(
                    nodes[r.subject_id].class_id, r.predicate_id, nodes[r.object_id].class_id
                )
            )
        prompts.append(compose_prompt(labels, objects, predicates))
    return _generate_for_prompts(
        prompts, cfg, providers, None, run, objects, predicates,
        None, budget_items, budget_bytes, gt_annotations=graphs,
    )

"""Predictor contract: built-in reference predictors plus adapters for
out-of-process trainers.

The contract is file-based: ``train(payload_manifest) -> checkpoint_id``
and ``predict(checkpoint_id, image_list) -> predictions`` keyed by image.
Built-ins run in-process against the loaded dataset (they exist to
calibrate the harness, not to model anything); external trainers are
reached through a subprocess command or an HTTP service and exchange the
documented JSON/JSONL formats. Predictors must be deterministic given
(checkpoint, input).
"""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .core import BBox, SceneGraph, Vocabulary
from .errors import PredictorFailure, UnknownPredictor
from .ingest import Dataset
from .metrics import PredictedTriplet, PredictionSet


@dataclass(frozen=True)
class EvalImage:
    """What a predictor is shown at evaluation time."""

    image_id: str
    width: int
    height: int
    path: str | None = None  # pixel source, for external predictors


@dataclass
class TrainPayload:
    """One task's training manifest (in-memory form)."""

    task_index: int
    strategy: str
    train_graphs: tuple[SceneGraph, ...]
    new_object_classes: frozenset[int]
    new_predicate_classes: frozenset[int]
    replay_graphs: tuple[SceneGraph, ...] = ()
    manifest_path: str | None = None
    metadata: dict = field(default_factory=dict)
    seed: int = 0


class Predictor(Protocol):
    name: str

    def train(self, payload: TrainPayload) -> str: ...

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]: ...


# --- predictions file format -------------------------------------------------------------


def prediction_to_record(p: PredictionSet, objects: Vocabulary, predicates: Vocabulary) -> dict:
    return {
        "image_id": p.image_id,
        "triplets": [
            {
                "s_class": objects.name_of(t.subject_class),
                "p_class": predicates.name_of(t.predicate_class),
                "o_class": objects.name_of(t.object_class),
                "s_box": [t.subject_box.x, t.subject_box.y, t.subject_box.w, t.subject_box.h],
                "o_box": [t.object_box.x, t.object_box.y, t.object_box.w, t.object_box.h],
                "score": t.score,
            }
            for t in p.triplets
        ],
    }


def prediction_from_record(rec: dict, objects: Vocabulary, predicates: Vocabulary) -> PredictionSet:
    triplets = []
    for t in rec.get("triplets", []):
        triplets.append(
            PredictedTriplet(
                subject_class=objects.id_of(t["s_class"]),
                predicate_class=predicates.id_of(t["p_class"]),
                object_class=objects.id_of(t["o_class"]),
                subject_box=BBox(*(float(v) for v in t["s_box"])),
                object_box=BBox(*(float(v) for v in t["o_box"])),
                score=float(t["score"]),
            )
        )
    triplets.sort(key=lambda t: -t.score)
    return PredictionSet(str(rec["image_id"]), tuple(triplets))


def dump_predictions_jsonl(
    predictions: Sequence[PredictionSet], objects: Vocabulary, predicates: Vocabulary,
    path: str | Path,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(prediction_to_record(p, objects, predicates), sort_keys=True) + "\n")


def load_predictions_jsonl(
    path: str | Path, objects: Vocabulary, predicates: Vocabulary
) -> dict[str, PredictionSet]:
    out: dict[str, PredictionSet] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            p = prediction_from_record(json.loads(line), objects, predicates)
            out[p.image_id] = p
    return out


# --- built-in predictors -----------------------------------------------------------------


def _stable_u64(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


class _BuiltinBase:
    """Keeps a frozen snapshot per checkpoint so old checkpoints stay
    queryable after later tasks (the runner freezes one per task)."""

    name = "builtin"

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._snapshots: dict[str, dict] = {}
        self._tasks_trained = 0

    def _register(self, state: dict) -> str:
        self._tasks_trained += 1
        digest = hashlib.sha256(
            json.dumps(state, sort_keys=True, default=str).encode()
        ).hexdigest()[:12]
        ckpt = f"{self.name}-t{self._tasks_trained}-{digest}"
        self._snapshots[ckpt] = {"task": self._tasks_trained, **state}
        return ckpt

    def _snapshot(self, checkpoint_id: str) -> dict:
        try:
            return self._snapshots[checkpoint_id]
        except KeyError:
            raise PredictorFailure(f"unknown checkpoint {checkpoint_id!r}")

    def _gt(self, image_id: str) -> SceneGraph:
        return self.dataset.graphs[image_id]


class OraclePredictor(_BuiltinBase):
    """Emits every ground-truth edge with score 1.0."""

    name = "oracle"

    def train(self, payload: TrainPayload) -> str:
        return self._register({})

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]:
        self._snapshot(checkpoint_id)
        out = []
        for image in images:
            g = self._gt(image.image_id)
            nodes = g.nodes_by_id
            triplets = tuple(
                PredictedTriplet(
                    nodes[r.subject_id].class_id, r.predicate_id, nodes[r.object_id].class_id,
                    nodes[r.subject_id].box, nodes[r.object_id].box, 1.0,
                )
                for r in g.relations
            )
            out.append(PredictionSet(image.image_id, triplets))
        return out


class EmptyPredictor(_BuiltinBase):
    """Emits nothing; the floor of every metric."""

    name = "empty"

    def train(self, payload: TrainPayload) -> str:
        return self._register({})

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]:
        self._snapshot(checkpoint_id)
        return [PredictionSet(image.image_id, ()) for image in images]


class DecayOraclePredictor(_BuiltinBase):
    """Oracle with geometric forgetting: an edge whose classes were
    introduced at task s survives evaluation after task t with probability
    (1 - rho)^(t - s). Deterministic given (checkpoint, image)."""

    name = "decay_oracle"

    def __init__(self, dataset: Dataset, rho: float, seed: int = 0):
        super().__init__(dataset)
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {rho}")
        self.rho = rho
        self.seed = seed
        self._intro_obj: dict[int, int] = {}
        self._intro_pred: dict[int, int] = {}

    def train(self, payload: TrainPayload) -> str:
        t = self._tasks_trained + 1
        for c in payload.new_object_classes:
            self._intro_obj.setdefault(c, t)
        for c in payload.new_predicate_classes:
            self._intro_pred.setdefault(c, t)
        return self._register(
            {
                "rho": self.rho,
                "intro_obj": dict(sorted(self._intro_obj.items())),
                "intro_pred": dict(sorted(self._intro_pred.items())),
            }
        )

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]:
        snap = self._snapshot(checkpoint_id)
        t = snap["task"]
        intro_obj = snap["intro_obj"]
        intro_pred = snap["intro_pred"]
        out = []
        for image in images:
            g = self._gt(image.image_id)
            nodes = g.nodes_by_id
            triplets = []
            for idx, r in enumerate(g.relations):
                s_cls = nodes[r.subject_id].class_id
                o_cls = nodes[r.object_id].class_id
                intros = (
                    intro_obj.get(s_cls), intro_pred.get(r.predicate_id), intro_obj.get(o_cls)
                )
                if any(v is None for v in intros):
                    continue  # never taught
                s = max(intros)
                keep_p = (1.0 - self.rho) ** max(0, t - s)
                draw = _stable_u64(checkpoint_id, str(self.seed), image.image_id, str(idx))
                if draw / 2**64 < keep_p:
                    triplets.append(
                        PredictedTriplet(
                            s_cls, r.predicate_id, o_cls,
                            nodes[r.subject_id].box, nodes[r.object_id].box, 1.0,
                        )
                    )
            out.append(PredictionSet(image.image_id, tuple(triplets)))
        return out


class FreqBaselinePredictor(_BuiltinBase):
    """Predicts, for every ordered ground-truth object pair, the most
    frequent training predicate of that class pair."""

    name = "freq_baseline"

    def __init__(self, dataset: Dataset):
        super().__init__(dataset)
        self._pair_counts: dict[tuple[int, int], dict[int, int]] = {}

    def train(self, payload: TrainPayload) -> str:
        for g in (*payload.train_graphs, *payload.replay_graphs):
            nodes = g.nodes_by_id
            for r in g.relations:
                key = (nodes[r.subject_id].class_id, nodes[r.object_id].class_id)
                by_pred = self._pair_counts.setdefault(key, {})
                by_pred[r.predicate_id] = by_pred.get(r.predicate_id, 0) + 1
        table = {}
        for key, by_pred in self._pair_counts.items():
            total = sum(by_pred.values())
            best = min((p for p in by_pred if by_pred[p] == max(by_pred.values())))
            table[f"{key[0]},{key[1]}"] = (best, by_pred[best] / total)
        return self._register({"table": dict(sorted(table.items()))})

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]:
        snap = self._snapshot(checkpoint_id)
        table: dict[str, tuple[int, float]] = snap["table"]
        out = []
        for image in images:
            g = self._gt(image.image_id)
            triplets = []
            for a in g.objects:
                for b in g.objects:
                    if a.node_id == b.node_id:
                        continue
                    hit = table.get(f"{a.class_id},{b.class_id}")
                    if hit is None:
                        continue
                    pred_id, score = hit
                    triplets.append(
                        PredictedTriplet(a.class_id, pred_id, b.class_id, a.box, b.box, score)
                    )
            triplets.sort(key=lambda t: -t.score)
            out.append(PredictionSet(image.image_id, tuple(triplets)))
        return out


_BUILTIN_PATTERN = re.compile(r"^(?P<name>[a-z_]+)(?:\((?P<arg>[-0-9.]+)\))?$")


def builtin_predictor(spec: str, dataset: Dataset, seed: int = 0) -> Predictor:
    """Resolve ``oracle`` / ``decay_oracle(0.3)`` / ``freq_baseline`` /
    ``empty`` into a predictor instance."""
    m = _BUILTIN_PATTERN.match(spec.strip())
    if not m:
        raise UnknownPredictor(f"bad predictor spec {spec!r}")
    name, arg = m.group("name"), m.group("arg")
    if name == "oracle" and arg is None:
        return OraclePredictor(dataset)
    if name == "empty" and arg is None:
        return EmptyPredictor(dataset)
    if name == "decay_oracle" and arg is not None:
        return DecayOraclePredictor(dataset, rho=float(arg), seed=seed)
    if name == "freq_baseline" and arg is None:
        return FreqBaselinePredictor(dataset)
    raise UnknownPredictor(f"no built-in predictor {spec!r}")


# --- external adapters ------------------------------------------------------------------


def payload_to_manifest(payload: TrainPayload, objects: Vocabulary,
                        predicates: Vocabulary) -> dict:
    from .core import graph_to_dict

    return {
        "task_index": payload.task_index,
        "strategy": payload.strategy,
        "seed": payload.seed,
        "new_objects": sorted(objects.name_of(c) for c in payload.new_object_classes),
        "new_predicates": sorted(predicates.name_of(c) for c in payload.new_predicate_classes),
        "train_graphs": [graph_to_dict(g, objects, predicates) for g in payload.train_graphs],
        "replay_graphs": [graph_to_dict(g, objects, predicates) for g in payload.replay_graphs],
        "metadata": payload.metadata,
    }


class ExternalCommandPredictor:
    """Subprocess adapter: ``<cmd> train <payload.json>`` prints the
    checkpoint id on the last stdout line; ``<cmd> predict <ckpt>
    <images.json> <out.jsonl>`` writes predictions."""

    name = "external"

    def __init__(self, command: Sequence[str], workdir: str | Path,
                 objects: Vocabulary, predicates: Vocabulary):
        self.command = list(command)
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.objects = objects
        self.predicates = predicates
        self._counter = 0

    def _run(self, args: list[str]) -> str:
        proc = subprocess.run(
            [*self.command, *args], capture_output=True, text=True, cwd=self.workdir
        )
        if proc.returncode != 0:
            raise PredictorFailure(
                f"{self.command} {args[0]} failed with rc={proc.returncode}: "
                f"{proc.stderr.strip()[-500:]}"
            )
        return proc.stdout

    def train(self, payload: TrainPayload) -> str:
        self._counter += 1
        manifest = payload_to_manifest(payload, self.objects, self.predicates)
        path = self.workdir / f"payload_{self._counter:03d}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True)
        stdout = self._run(["train", str(path)])
        lines = [l for l in stdout.splitlines() if l.strip()]
        if not lines:
            raise PredictorFailure("trainer printed no checkpoint id")
        return lines[-1].strip()

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]:
        self._counter += 1
        img_path = self.workdir / f"images_{self._counter:03d}.json"
        out_path = self.workdir / f"predictions_{self._counter:03d}.jsonl"
        with open(img_path, "w", encoding="utf-8") as fh:
            json.dump(
                [
                    {"image_id": i.image_id, "width": i.width, "height": i.height,
                     "path": i.path}
                    for i in images
                ],
                fh,
            )
        self._run(["predict", checkpoint_id, str(img_path), str(out_path)])
        by_id = load_predictions_jsonl(out_path, self.objects, self.predicates)
        return [by_id.get(i.image_id, PredictionSet(i.image_id, ())) for i in images]


class HttpPredictor:
    """Service adapter: ``POST /train`` with the payload manifest returns
    ``{"checkpoint_id": ...}``; ``POST /predict`` returns prediction
    records keyed by image."""

    name = "http"

    def __init__(self, base_url: str, objects: Vocabulary, predicates: Vocabulary,
                 timeout: float = 300.0):
        self.base_url = base_url.rstrip("/")
        self.objects = objects
        self.predicates = predicates
        self.timeout = timeout

    def _post(self, route: str, payload: dict) -> dict:
        try:
            resp = httpx.post(f"{self.base_url}{route}", json=payload, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except httpx.HTTPError as e:
            raise PredictorFailure(f"{route} failed: {e}") from e

    def train(self, payload: TrainPayload) -> str:
        body = self._post("/train", payload_to_manifest(payload, self.objects, self.predicates))
        return str(body["checkpoint_id"])

    def predict(self, checkpoint_id: str, images: Sequence[EvalImage]) -> list[PredictionSet]:
        body = self._post(
            "/predict",
            {
                "checkpoint_id": checkpoint_id,
                "images": [
                    {"image_id": i.image_id, "width": i.width, "height": i.height,
                     "path": i.path}
                    for i in images
                ],
            },
        )
        by_id = {
            rec["image_id"]: prediction_from_record(rec, self.objects, self.predicates)
            for rec in body["predictions"]
        }
        return [by_id.get(i.image_id, PredictionSet(i.image_id, ())) for i in images]


def resolve_predictor(spec: str, dataset: Dataset, workdir: str | Path, seed: int = 0) -> Predictor:
    """Map a config string to a predictor: ``http(s)://`` URLs become
    service adapters, ``cmd:<shell-words>`` become subprocess adapters,
    anything else must be a built-in name."""
    if spec.startswith(("http://", "https://")):
        return HttpPredictor(spec, dataset.object_vocab, dataset.predicate_vocab)
    if spec.startswith("cmd:"):
        import shlex

        return ExternalCommandPredictor(
            shlex.split(spec[4:]), Path(workdir) / "predictor",
            dataset.object_vocab, dataset.predicate_vocab,
        )
    return builtin_predictor(spec, dataset, seed=seed)

"""Experiment orchestration: iterate tasks, train/evaluate a predictor
through the neutral contract, and populate the recall matrices.

A run directory is an append-only record: ``journal.jsonl`` holds one
event per completed step, payload manifests and buffer/exemplar manifests
are persisted next to it, and the final matrices/report are regenerated
from the journal at the end of every (re)run. Re-invoking a killed run
replays the journal, rebuilds deterministic state (buffers, universes,
checkpoints) without re-evaluating finished rows, and continues.

Wall-clock timings go to ``timing.json``, kept out of the deterministic
record on purpose.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .baselines import (
    PruneMask,
    ReplayBuffer,
    buffer_capacity,
    buffer_to_manifest,
    fisher_diag,
    merge_buffers,
    packnet_prune,
    read_param_vector,
    select_replay,
    write_param_vector,
)
from .errors import ConfigError, EmptyTestSet, MissingCell
from .ingest import (
    CountThresholds,
    Dataset,
    RankTertiles,
    bucketize,
    class_frequencies,
    load_dataset,
)
from .metrics import (
    GenMetrics,
    MetricsReport,
    RecallMatrix,
    gen_recall_bbox,
    gen_recall_rel,
    mean_recall_at_k,
    recall_at_k,
)
from .predictors import EvalImage, Predictor, TrainPayload, payload_to_manifest, resolve_predictor
from .providers import Providers
from .ras import (
    ExemplarSet,
    PromptOracleLabeler,
    RasConfig,
    build_exemplar_set,
    build_exemplar_set_gt,
)
from .sampling import BlsParams, apply_to_buffer, bls_sample, lvis_sample
from .scenarios import (
    Scenario,
    TaskDataset,
    generalization_dataset,
    load_manifest,
    mask_graph,
    mask_task,
    permute_tasks,
)
from .universe import TripletUniverse, update_universe

STRATEGIES = ("naive", "replay", "ras", "ras_gt", "ewc", "packnet", "joint")
SAMPLERS = (None, "lvis", "bls", "lvis@replay", "bls@replay")


@dataclass(frozen=True)
class RunConfig:
    dataset_dir: str
    scenario: str
    out_dir: str
    strategy: str = "naive"
    predictor: str = "oracle"
    replay_m: float | None = None
    sampler: str | None = None
    sampler_threshold: float = 0.001
    sampler_gamma_d: float = 0.05
    sampler_p_max: float = 0.7
    metric_ks: tuple[int, ...] = (20,)
    iou_thresh: float = 0.5
    gen_iou_thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    seed: int = 0
    cumulative_eval: bool = True
    compute_fwt: bool = False
    task_order: tuple[int, ...] | None = None
    bucket_policy: str = "rank_tertiles"
    packnet_keep_fraction: float = 0.5
    ras_alpha: float = 0.7
    ras_cluster_threshold: float = 0.6
    ras_min_cluster_size_exclusive: int = 3
    ras_gamma: int = 10
    ras_k_keep: int = 20
    ras_score_floor: float = 0.3
    ras_budget_items: int | None = None
    ras_budget_bytes: int | None = None
    sidecar_url: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        problems = []
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy: must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "replay" and self.replay_m is None:
            problems.append("replay_m: required when strategy is replay")
        if self.replay_m is not None and not 0 < self.replay_m <= 100:
            problems.append(f"replay_m: must be in (0, 100], got {self.replay_m}")
        if self.sampler not in SAMPLERS:
            problems.append(f"sampler: must be one of {SAMPLERS}, got {self.sampler!r}")
        if not self.metric_ks or any(k < 1 for k in self.metric_ks):
            problems.append(f"metric_ks: need positive values, got {self.metric_ks}")
        if not 0 < self.iou_thresh <= 1:
            problems.append(f"iou_thresh: must be in (0, 1], got {self.iou_thresh}")
        if self.ras_gamma < 1:
            problems.append(f"ras_gamma: must be >= 1, got {self.ras_gamma}")
        if self.jobs < 1:
            problems.append(f"jobs: must be >= 1, got {self.jobs}")
        if problems:
            raise ConfigError("invalid run config: " + "; ".join(problems))

    def ras_config(self) -> RasConfig:
        return RasConfig(
            alpha=self.ras_alpha,
            cluster_threshold=self.ras_cluster_threshold,
            min_cluster_size_exclusive=self.ras_min_cluster_size_exclusive,
            gamma=self.ras_gamma,
            k_keep=self.ras_k_keep,
            score_floor=self.ras_score_floor,
            seed=self.seed,
            embed_endpoint=self.sidecar_url,
            generate_endpoint=self.sidecar_url,
        )

    def to_dict(self) -> dict:
        out = {}
        for name, value in self.__dict__.items():
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, rec: Mapping) -> "RunConfig":
        kwargs = dict(rec)
        if "strategy" in kwargs and isinstance(kwargs["strategy"], str) and "@" in kwargs["strategy"]:
            name, m = kwargs["strategy"].split("@", 1)
            kwargs["strategy"] = name
            kwargs["replay_m"] = float(m.rstrip("%"))
        for key in ("metric_ks", "gen_iou_thresholds", "task_order"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        required = ("dataset_dir", "scenario", "out_dir")
        missing = [f for f in required if f not in kwargs]
        if missing:
            raise ConfigError(f"missing config fields: {missing}")
        return cls(**kwargs)


@dataclass
class RunRecord:
    run_dir: Path
    config: RunConfig
    n_tasks: int
    checkpoints: dict[int, str] = field(default_factory=dict)
    matrices: dict[int, RecallMatrix] = field(default_factory=dict)
    mean_matrices: dict[int, RecallMatrix] = field(default_factory=dict)
    bucket_recall: dict[int, dict[int, dict[str, float | None]]] = field(default_factory=dict)
    gen_results: dict[int, dict[int, dict[str, dict[str, float | None]]]] = field(default_factory=dict)
    fwt_baselines: dict[int, dict[int, float]] = field(default_factory=dict)
    reports: dict[int, MetricsReport] = field(default_factory=dict)

    def matrix(self, k: int) -> RecallMatrix:
        if k not in self.matrices:
            self.matrices[k] = RecallMatrix(self.n_tasks)
            self.mean_matrices[k] = RecallMatrix(self.n_tasks)
        return self.matrices[k]


class _Journal:
    def __init__(self, path: Path):
        self.path = path
        self.events: list[dict] = []
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                self.events = [json.loads(line) for line in fh if line.strip()]

    def append(self, event: dict) -> None:
        self.events.append(event)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def completed_tasks(self) -> dict[int, dict]:
        return {e["task"]: e for e in self.events if e.get("event") == "task_done"}

    def fwt_event(self) -> dict | None:
        for e in self.events:
            if e.get("event") == "fwt_done":
                return e
        return None


def _bucket_policy(spec: str):
    if spec == "rank_tertiles":
        return RankTertiles()
    if spec.startswith("count_thresholds:"):
        head, body = (int(v) for v in spec.split(":", 1)[1].split(","))
        return CountThresholds(head, body)
    raise ConfigError(f"unknown bucket policy {spec!r}")


class ScenarioRunner:
    """Runs one configured experiment; reentrant for resume."""

    def __init__(self, cfg: RunConfig, dataset: Dataset | None = None,
                 scenario: Scenario | None = None, predictor: Predictor | None = None,
                 providers: Providers | None = None):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = Path(cfg.out_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.dataset = dataset if dataset is not None else load_dataset(cfg.dataset_dir)
        scenario = scenario if scenario is not None else load_manifest(cfg.scenario, self.dataset)
        if cfg.task_order:
            scenario = permute_tasks(scenario, list(cfg.task_order))
        self.scenario = scenario
        self.predictor = predictor if predictor is not None else resolve_predictor(
            cfg.predictor, self.dataset, self.run_dir, cfg.seed
        )
        self.providers = providers if providers is not None else (
            Providers.http(cfg.sidecar_url) if cfg.sidecar_url else Providers.mock(cfg.seed)
        )
        self.pred_buckets = bucketize(
            class_frequencies(self.dataset, "predicates"), _bucket_policy(cfg.bucket_policy)
        )
        self.journal = _Journal(self.run_dir / "journal.jsonl")
        self.record = RunRecord(run_dir=self.run_dir, config=cfg, n_tasks=scenario.n_tasks)
        self._rng = random.Random(cfg.seed)
        self._buffers: list[ReplayBuffer] = []
        self._universe = TripletUniverse()
        self._exemplars: ExemplarSet | None = None
        self._gt_graph_store: list = []
        self._prune_mask: PruneMask | None = None
        self._ewc_meta: dict = {}
        self._test_cache: dict[int, TaskDataset] = {}

    # --- masked data access ---------------------------------------------------------

    def _train_data(self, t: int) -> TaskDataset:
        return mask_task(self.dataset, self.scenario, t, cumulative=False)

    def _test_pairs_source(self, j: int) -> TaskDataset:
        if j not in self._test_cache:
            self._test_cache[j] = mask_task(
                self.dataset, self.scenario, j, cumulative=self.cfg.cumulative_eval
            )
        return self._test_cache[j]

    def _joint_train_graphs(self) -> tuple:
        objs, preds = self.scenario.cumulative_visible(self.scenario.n_tasks)
        graphs = []
        for g in self.dataset.split_graphs("train"):
            m = mask_graph(g, objs, preds)
            if m is not None:
                graphs.append(m)
        return tuple(graphs)

    # --- payload construction ----------------------------------------------------------

    def _sampler_params(self) -> BlsParams:
        return BlsParams(
            repeat_threshold=self.cfg.sampler_threshold,
            gamma_d=self.cfg.sampler_gamma_d,
            p_max=self.cfg.sampler_p_max,
        )

    def _apply_train_sampler(self, td: TaskDataset) -> TaskDataset:
        if not self.cfg.sampler:
            return td
        base = self.cfg.sampler.split("@", 1)[0]
        rng = random.Random(self.cfg.seed * 1009 + td.task_index)
        if base == "lvis":
            return lvis_sample(td, self._sampler_params(), rng)
        return bls_sample(td, self._sampler_params(), rng)

    def _replay_graphs(self, t: int) -> tuple:
        """Strategy-provided rehearsal annotations for task t's payload."""
        if t == 1:
            return ()
        strategy = self.cfg.strategy
        if strategy == "replay":
            capacity = buffer_capacity(
                self.cfg.replay_m, len(self.dataset.splits["train"])
            )
            buf = merge_buffers(self._buffers, capacity, random.Random(self.cfg.seed + t))
            if self.cfg.sampler and self.cfg.sampler.endswith("@replay") and len(buf):
                buf = apply_to_buffer(
                    buf, self.cfg.sampler.split("@", 1)[0], self._sampler_params(),
                    random.Random(self.cfg.seed * 31 + t),
                )
            manifest = buffer_to_manifest(
                buf, self.dataset.object_vocab, self.dataset.predicate_vocab
            )
            path = self.run_dir / "buffers" / f"task_{t:03d}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, sort_keys=True)
            return tuple(it.graph for it in buf.items)
        if strategy in ("ras", "ras_gt") and self._exemplars is not None:
            exemplars = self._exemplars
            if self.cfg.sampler and self.cfg.sampler.endswith("@replay") and len(exemplars):
                exemplars = apply_to_buffer(
                    exemplars, self.cfg.sampler.split("@", 1)[0], self._sampler_params(),
                    random.Random(self.cfg.seed * 37 + t),
                )
            return tuple(it.graph for it in exemplars.items if it.graph.relations)
        return ()

    def _payload(self, t: int) -> TrainPayload:
        if self.cfg.strategy == "joint":
            spec_objs, spec_preds = self.scenario.cumulative_visible(self.scenario.n_tasks)
            train_graphs = self._joint_train_graphs()
        else:
            td = self._apply_train_sampler(self._train_data(t))
            spec = self.scenario.task(t)
            spec_objs, spec_preds = spec.visible_object_classes, spec.visible_predicate_classes
            train_graphs = td.train
        payload = TrainPayload(
            task_index=t,
            strategy=self.cfg.strategy,
            train_graphs=train_graphs,
            new_object_classes=frozenset(spec_objs),
            new_predicate_classes=frozenset(spec_preds),
            replay_graphs=self._replay_graphs(t),
            metadata=self._strategy_metadata(t),
            seed=self.cfg.seed,
        )
        manifest = payload_to_manifest(
            payload, self.dataset.object_vocab, self.dataset.predicate_vocab
        )
        path = self.run_dir / "payloads" / f"task_{t:03d}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True)
        payload.manifest_path = str(path)
        return payload

    def _strategy_metadata(self, t: int) -> dict:
        meta: dict = {"artifacts_dir": str(self.run_dir / "checkpoints" / f"task_{t:03d}")}
        if self.cfg.strategy == "ewc" and self._ewc_meta:
            meta.update(self._ewc_meta)
        if self.cfg.strategy == "packnet" and self._prune_mask is not None:
            meta["prune_mask"] = str(self.run_dir / "checkpoints" / f"task_{t - 1:03d}" / "mask.vec")
        return meta

    # --- strategy post-task updates --------------------------------------------------------

    def _post_task(self, t: int, checkpoint_id: str) -> None:
        strategy = self.cfg.strategy
        td = self._train_data(t)
        if strategy == "replay":
            self._buffers.append(
                select_replay(td, self.cfg.replay_m, random.Random(self.cfg.seed * 101 + t))
            )
        elif strategy == "ras":
            self._universe = update_universe(self._universe, td.train, task_index=t)
            labeler = self._labeler(checkpoint_id)
            self._exemplars = build_exemplar_set(
                self._universe,
                self.cfg.ras_config(),
                self.providers,
                labeler,
                self.run_dir / "exemplars" / f"task_{t:03d}",
                self.dataset.object_vocab,
                self.dataset.predicate_vocab,
                checkpoint_id=checkpoint_id,
                budget_items=self.cfg.ras_budget_items,
                budget_bytes=self.cfg.ras_budget_bytes,
            )
        elif strategy == "ras_gt":
            self._gt_graph_store.extend(td.train)
            self._exemplars = build_exemplar_set_gt(
                tuple(self._gt_graph_store),
                self.cfg.ras_config(),
                self.providers,
                self.run_dir / "exemplars" / f"task_{t:03d}",
                self.dataset.object_vocab,
                self.dataset.predicate_vocab,
                budget_items=self.cfg.ras_budget_items,
                budget_bytes=self.cfg.ras_budget_bytes,
            )
        elif strategy in ("ewc", "packnet"):
            self._weight_space_update(t)

    def _labeler(self, checkpoint_id: str):
        """Pseudo-labeling hook of the frozen checkpoint.

        External predictors label generated images through their predict
        route; built-ins have no pixel pathway, so the vocabulary-aware
        prompt oracle stands in for them.
        """
        predictor = self.predictor
        if predictor.name in ("external", "http"):
            objects, predicates = self.dataset.object_vocab, self.dataset.predicate_vocab

            def labeler(records):
                images = [
                    EvalImage(image_id=Path(r.rel_path).stem, width=r.width, height=r.height,
                              path=r.path)
                    for r in records
                ]
                return predictor.predict(checkpoint_id, images)

            return labeler
        return PromptOracleLabeler(
            self.dataset.object_vocab, self.dataset.predicate_vocab, seed=self.cfg.seed
        )

    def _weight_space_update(self, t: int) -> None:
        """EWC/PackNet bookkeeping from trainer-written artifacts."""
        artifacts = self.run_dir / "checkpoints" / f"task_{t:03d}"
        params_path = artifacts / "params.vec"
        if not params_path.exists():
            return  # trainer exposes no weights; nothing to anchor
        params = read_param_vector(params_path)
        if self.cfg.strategy == "ewc":
            grads = sorted(artifacts.glob("grad_*.vec"))
            if grads:
                fisher = fisher_diag([read_param_vector(p) for p in grads])
                write_param_vector(fisher, artifacts / "fisher.vec")
                self._ewc_meta = {
                    "ewc_anchor": str(params_path),
                    "ewc_fisher": str(artifacts / "fisher.vec"),
                }
        else:
            mask = self._prune_mask if self._prune_mask is not None else PruneMask.empty(params.size)
            mask = packnet_prune(params, mask, self.cfg.packnet_keep_fraction)
            self._prune_mask = mask
            write_param_vector(mask.owners.astype(float), artifacts / "mask.vec")

    # --- evaluation --------------------------------------------------------------------------

    def _eval_images(self, td: TaskDataset) -> list[EvalImage]:
        images_dir = Path(self.cfg.dataset_dir) / "images" if self.cfg.dataset_dir else None
        out = []
        for g in td.test:
            path = None
            if images_dir is not None:
                candidate = images_dir / f"{g.image_id}.ppm"
                path = str(candidate) if candidate.exists() else None
            out.append(EvalImage(image_id=g.image_id, width=g.width, height=g.height, path=path))
        return out

    def _evaluate_row(self, t: int, checkpoint_id: str) -> dict:
        """Evaluate checkpoint t on test sets 1..t (plus the standalone
        generalization set for object-incremental scenarios). Test sets
        may be evaluated concurrently; results keep task order."""
        rows: dict = {"rows": {}, "mean_rows": {}, "bucket": {}, "gen": {}}
        for k in self.cfg.metric_ks:
            rows["rows"][str(k)] = {}
            rows["mean_rows"][str(k)] = {}
            rows["bucket"][str(k)] = {}

        def eval_one(j: int):
            td = self._test_pairs_source(j)
            if not td.test:
                return j, None
            predictions = self.predictor.predict(checkpoint_id, self._eval_images(td))
            return j, list(zip(predictions, td.test))

        if self.cfg.jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
                evaluated = list(pool.map(eval_one, range(1, t + 1)))
        else:
            evaluated = [eval_one(j) for j in range(1, t + 1)]
        for j, pairs in evaluated:
            if pairs is None:
                continue
            for k in self.cfg.metric_ks:
                rows["rows"][str(k)][str(j)] = recall_at_k(pairs, k, self.cfg.iou_thresh)
                mres = mean_recall_at_k(pairs, k, self.cfg.iou_thresh, self.pred_buckets)
                rows["mean_rows"][str(k)][str(j)] = mres.mean
                if j == t:
                    rows["bucket"][str(k)] = dict(mres.per_bucket)
        if self.scenario.generalization_test is not None:
            gen_td = generalization_dataset(self.dataset, self.scenario)
            predictions = self.predictor.predict(checkpoint_id, self._eval_images(gen_td))
            pairs = list(zip(predictions, gen_td.test))
            for k in self.cfg.metric_ks:
                rows["gen"][str(k)] = {}
                for thresh in self.cfg.gen_iou_thresholds:
                    bbox = gen_recall_bbox(pairs, k, thresh)
                    try:
                        rel = gen_recall_rel(pairs, k, thresh)
                    except EmptyTestSet:
                        rel = None  # nothing localized anywhere at this threshold
                    rows["gen"][str(k)][f"{thresh:.1f}"] = {"bbox": bbox, "rel": rel}
        return rows

    def _absorb_row(self, t: int, event: dict) -> None:
        self.record.checkpoints[t] = event["checkpoint"]
        for k in self.cfg.metric_ks:
            matrix = self.record.matrix(k)
            for j_str, value in event["rows"][str(k)].items():
                matrix.set(t, int(j_str), value)
            for j_str, value in event["mean_rows"][str(k)].items():
                self.record.mean_matrices[k].set(t, int(j_str), value)
            self.record.bucket_recall.setdefault(k, {})[t] = event["bucket"][str(k)]
            if event.get("gen"):
                self.record.gen_results.setdefault(k, {})[t] = event["gen"][str(k)]

    # --- main loop ------------------------------------------------------------------------------

    def run(self) -> RunRecord:
        started = time.time()
        with open(self.run_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(self.cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        completed = self.journal.completed_tasks()
        tasks = (
            [self.scenario.n_tasks]
            if self.cfg.strategy == "joint"
            else list(range(1, self.scenario.n_tasks + 1))
        )
        for t in tasks:
            payload = self._payload(t)
            checkpoint_id = self.predictor.train(payload)
            if t in completed:
                event = completed[t]
                if event["checkpoint"] != checkpoint_id:
                    raise ConfigError(
                        f"resume mismatch at task {t}: journal has {event['checkpoint']}, "
                        f"rebuild produced {checkpoint_id}; the run directory belongs to a "
                        "different configuration"
                    )
            else:
                event = {"event": "task_done", "task": t, "checkpoint": checkpoint_id,
                         **self._evaluate_row(t, checkpoint_id)}
                self.journal.append(event)
            self._absorb_row(t, event)
            self._post_task(t, checkpoint_id)
        if self.cfg.compute_fwt and self.cfg.strategy != "joint":
            self._compute_fwt_baselines()
        self._finalize()
        with open(self.run_dir / "timing.json", "w", encoding="utf-8") as fh:
            json.dump({"wall_clock_s": time.time() - started}, fh)
            fh.write("\n")
        return self.record

    def _compute_fwt_baselines(self) -> None:
        event = self.journal.fwt_event()
        if event is None:
            baselines: dict = {str(k): {} for k in self.cfg.metric_ks}
            for i in range(2, self.scenario.n_tasks + 1):
                scratch = resolve_predictor(
                    self.cfg.predictor, self.dataset, self.run_dir / f"fwt_{i}", self.cfg.seed + i
                )
                td = self._train_data(i)
                payload = TrainPayload(
                    task_index=i,
                    strategy="naive",
                    train_graphs=td.train,
                    new_object_classes=self.scenario.task(i).visible_object_classes,
                    new_predicate_classes=self.scenario.task(i).visible_predicate_classes,
                    seed=self.cfg.seed + i,
                )
                ckpt = scratch.train(payload)
                test_td = self._test_pairs_source(i)
                predictions = scratch.predict(ckpt, self._eval_images(test_td))
                pairs = list(zip(predictions, test_td.test))
                for k in self.cfg.metric_ks:
                    baselines[str(k)][str(i)] = recall_at_k(pairs, k, self.cfg.iou_thresh)
            event = {"event": "fwt_done", "baselines": baselines}
            self.journal.append(event)
        self.record.fwt_baselines = {
            k: {int(i): v for i, v in event["baselines"][str(k)].items()}
            for k in self.cfg.metric_ks
        }

    def _finalize(self) -> None:
        for k in self.cfg.metric_ks:
            matrix = self.record.matrix(k)
            with open(self.run_dir / f"matrix_k{k}.json", "w", encoding="utf-8") as fh:
                json.dump(matrix.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            with open(self.run_dir / f"mean_matrix_k{k}.json", "w", encoding="utf-8") as fh:
                json.dump(self.record.mean_matrices[k].to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            gen_metrics = []
            for t, per_thresh in sorted(self.record.gen_results.get(k, {}).items()):
                for thresh_str, vals in sorted(per_thresh.items()):
                    gen_metrics.append(
                        GenMetrics(task=t, iou_thresh=float(thresh_str),
                                   recall_bbox=vals["bbox"], recall_rel=vals["rel"])
                    )
            self.record.reports[k] = _report_for(
                k,
                self.cfg.iou_thresh,
                matrix,
                self.record.mean_matrices[k],
                self.record.fwt_baselines.get(k),
                self.record.bucket_recall.get(k, {}),
                gen_metrics,
            )


def _report_for(
    k: int,
    iou_thresh: float,
    matrix: RecallMatrix,
    mean_matrix: RecallMatrix,
    baselines: Mapping[int, float] | None,
    bucket_recall: Mapping[int, Mapping[str, float | None]],
    gen_metrics: Sequence[GenMetrics],
) -> MetricsReport:
    """Report assembly tolerant of partially populated matrices (joint
    training fills the last row only)."""
    from .metrics import TaskMetrics, avg_recall, bwt, forgetting, fwt

    tasks = []
    for t in range(1, matrix.n_tasks + 1):
        try:
            recall = matrix.get(t, t)
        except MissingCell:
            continue
        try:
            f_val = forgetting(matrix, t)
        except MissingCell:
            f_val = None
        try:
            mr = mean_matrix.get(t, t)
            mf = mean_matrix.get(t, 1) - mean_matrix.get(1, 1)
        except MissingCell:
            mr, mf = None, None
        tasks.append(
            TaskMetrics(
                task=t,
                recall=recall,
                avg_recall=avg_recall(matrix, t),
                forgetting=f_val,
                mean_recall=mr,
                mean_forgetting=mf,
                bucket_recall=dict(bucket_recall.get(t, {})),
            )
        )
    try:
        bwt_val = bwt(matrix)
    except MissingCell:
        bwt_val = None
    fwt_val = None
    if baselines:
        try:
            fwt_val = fwt(matrix, baselines)
        except MissingCell:
            fwt_val = None
    return MetricsReport(
        k=k,
        iou_thresh=iou_thresh,
        tasks=tuple(tasks),
        bwt=bwt_val,
        fwt=fwt_val,
        generalization=tuple(gen_metrics),
    )


def run_scenario(cfg: RunConfig, dataset: Dataset | None = None,
                 scenario: Scenario | None = None, predictor: Predictor | None = None,
                 providers: Providers | None = None) -> RunRecord:
    """Run (or resume) one experiment end to end."""
    return ScenarioRunner(cfg, dataset=dataset, scenario=scenario, predictor=predictor,
                          providers=providers).run()


def evaluate_checkpoint(
    predictor: Predictor,
    checkpoint_id: str,
    test_sets: Sequence[TaskDataset],
    dataset_dir: str | None,
    k: int = 20,
    iou_thresh: float = 0.5,
) -> list[float]:
    """One matrix row: the checkpoint's recall on each given test set."""
    out = []
    for td in test_sets:
        images = [
            EvalImage(image_id=g.image_id, width=g.width, height=g.height) for g in td.test
        ]
        predictions = predictor.predict(checkpoint_id, images)
        out.append(recall_at_k(list(zip(predictions, td.test)), k, iou_thresh))
    return out

"""Command-line surface.

Subcommands: convert, split, run, report, ras-dryrun, stats. Every
command exits nonzero on error and prints ``error-code: <Code>`` as the
last stderr line, where the code is the exception class name.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

from . import __version__
from .errors import CseggError
from .ingest import (
    CountThresholds,
    RankTertiles,
    bucketize,
    class_frequencies,
    convert_raw_vg,
    load_dataset,
)
from .providers import Providers
from .ras import RasConfig, plan_prompts
from .reporting import write_report_bundle
from .runner import RunConfig, run_scenario
from .scenarios import build_s1, build_s2, build_s3, save_manifest
from .universe import load_universe

log = logging.getLogger("csegg")

SIDECAR_ENV = "CSEGG_SIDE_CAR_URL"


def _bucket_policy(spec: str):
    if spec == "rank_tertiles":
        return RankTertiles()
    if spec.startswith("count_thresholds"):
        parts = spec.split(":", 1)
        if len(parts) == 2:
            head, body = (int(v) for v in parts[1].split(","))
            return CountThresholds(head, body)
        return CountThresholds()
    raise CseggError(f"unknown bucket policy {spec!r}")


def cmd_convert(args) -> int:
    summary = convert_raw_vg(
        args.raw_dir, args.out_dir,
        max_objects=args.max_objects, max_predicates=args.max_predicates,
    )
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_split(args) -> int:
    d = load_dataset(args.dataset_dir)
    policy = _bucket_policy(args.bucket_policy)
    pred_buckets = bucketize(class_frequencies(d, "predicates"), policy)
    if args.scenario == "S1":
        scenario = build_s1(d, pred_buckets, seed=args.seed)
    elif args.scenario == "S2":
        scenario = build_s2(d)
    elif args.scenario == "S3":
        obj_buckets = bucketize(class_frequencies(d, "objects"), policy)
        scenario = build_s3(d, obj_buckets, pred_buckets, seed=args.seed)
    else:
        raise CseggError(f"unknown scenario {args.scenario!r}")
    save_manifest(scenario, d, args.out_manifest)
    print(f"wrote {args.out_manifest} ({scenario.kind}, {scenario.n_tasks} tasks)")
    return 0


def _load_config_file(path: str) -> dict:
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def cmd_run(args) -> int:
    rec: dict = {}
    if args.config:
        rec.update(_load_config_file(args.config))
    for key in ("dataset_dir", "scenario", "out_dir", "strategy", "predictor"):
        value = getattr(args, key, None)
        if value is not None:
            rec[key] = value
    if args.replay_m is not None:
        rec["replay_m"] = args.replay_m
    if args.sampler is not None:
        rec["sampler"] = args.sampler
    if args.fwt:
        rec["compute_fwt"] = True
    if args.task_order:
        rec["task_order"] = [int(v) for v in args.task_order.split(",")]
    if args.ks:
        rec["metric_ks"] = [int(v) for v in args.ks.split(",")]
    sidecar = os.environ.get(SIDECAR_ENV)
    if sidecar and not rec.get("sidecar_url"):
        rec["sidecar_url"] = sidecar
    if args.jobs > 1:
        rec["jobs"] = args.jobs
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    base_out = rec.get("out_dir")
    if base_out is None:
        raise CseggError("out_dir is required (flag or config)")
    multi = len(seeds) > 1
    for seed in seeds:
        run_rec = dict(rec)
        run_rec["seed"] = seed
        if multi:
            run_rec["out_dir"] = str(Path(base_out) / f"seed_{seed}")
        cfg = RunConfig.from_dict(run_rec)
        record = run_scenario(cfg)
        for k in cfg.metric_ks:
            final = record.reports[k].tasks[-1]
            print(f"seed {seed} K={k}: R={final.recall:.2f} Avg.R={final.avg_recall:.2f}")
    for k in RunConfig.from_dict({**rec, "seed": seeds[0]}).metric_ks:
        bundle = write_report_bundle(base_out, k=k)
        print(f"report: {bundle.table_csv}")
    return 0


def cmd_report(args) -> int:
    for k in (int(v) for v in args.ks.split(",")):
        bundle = write_report_bundle(args.run_dir, k=k, out_dir=args.out_dir)
        print(f"K={k}: {bundle.table_csv} {bundle.curves_csv} {bundle.summary_txt}")
    return 0


def cmd_ras_dryrun(args) -> int:
    d = load_dataset(args.dataset_dir)
    universe = load_universe(args.universe, d.object_vocab, d.predicate_vocab)
    cfg = RasConfig(
        alpha=args.alpha,
        cluster_threshold=args.threshold,
        min_cluster_size_exclusive=args.min_cluster_size,
        gamma=args.gamma,
        seed=args.seed,
    )
    sidecar = os.environ.get(SIDECAR_ENV)
    providers = Providers.http(sidecar) if sidecar else Providers.mock(args.seed)
    prompts = plan_prompts(universe, cfg, providers.embedder, d.object_vocab,
                           d.predicate_vocab, rng=random.Random(args.seed))
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(p.text + "\n")
    print(f"wrote {len(prompts)} prompts to {out}")
    return 0


def cmd_stats(args) -> int:
    d = load_dataset(args.dataset_dir)
    policy = _bucket_policy(args.bucket_policy)
    out = {
        "images": len(d.graphs),
        "splits": {s: len(d.splits[s]) for s in ("train", "val", "test")},
        "objects": len(d.object_vocab),
        "predicates": len(d.predicate_vocab),
    }
    for kind in ("objects", "predicates"):
        freqs = class_frequencies(d, kind)
        buckets = bucketize(freqs, policy)
        vocab = d.object_vocab if kind == "objects" else d.predicate_vocab
        ranked = sorted(range(len(freqs.counts)), key=lambda i: -freqs.counts[i])
        out[f"{kind}_total_instances"] = freqs.total
        out[f"{kind}_top5"] = [
            {"name": vocab.name_of(i), "count": freqs.counts[i]} for i in ranked[:5]
        ]
        out[f"{kind}_bucket_sizes"] = {
            b.value: len(buckets.classes_in(b)) for b in type(buckets.of(0))
        }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csegg",
        description="Continual scene graph generation benchmark harness",
    )
    parser.add_argument("--version", action="version", version=f"csegg {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker threads for per-test-set evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert raw Visual Genome JSON to the dataset layout")
    p.add_argument("raw_dir")
    p.add_argument("out_dir")
    p.add_argument("--max-objects", type=int, default=150)
    p.add_argument("--max-predicates", type=int, default=50)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("split", help="build a scenario manifest from a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("scenario", choices=["S1", "S2", "S3"])
    p.add_argument("out_manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bucket-policy", default="rank_tertiles",
                   help="rank_tertiles | count_thresholds[:HEAD,BODY]")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("run", help="run (or resume) a continual experiment")
    p.add_argument("--config", help="TOML or JSON run config; flags override")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--scenario")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--strategy")
    p.add_argument("--predictor")
    p.add_argument("--replay-m", dest="replay_m", type=float)
    p.add_argument("--sampler")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="comma-separated seeds for multi-seed runs")
    p.add_argument("--ks", help="comma-separated recall cutoffs (default 20)")
    p.add_argument("--fwt", action="store_true",
                   help="train per-task scratch baselines for forward transfer")
    p.add_argument("--task-order", help="comma-separated 1-based task permutation")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="regenerate report bundle from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--ks", default="20")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ras-dryrun", help="compose prompts from a stored universe, no generation")
    p.add_argument("universe")
    p.add_argument("--dataset-dir", dest="dataset_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--min-cluster-size", type=int, default=3)
    p.add_argument("--gamma", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ras_dryrun)

    p = sub.add_parser("stats", help="dataset statistics and bucket breakdown")
    p.add_argument("dataset_dir")
    p.add_argument("--bucket-policy", default="rank_tertiles")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    try:
        return args.func(args)
    except CseggError as e:
        print(f"error: {e}", file=sys.stderr)
        print(f"error-code: {e.code}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        print(f"error-code: {type(e).__name__}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

import json
from pathlib import Path

import pytest

from csegg.core import BBox, ObjectNode, RelationEdge, SceneGraph, Vocabulary
from csegg.ingest import Dataset
from csegg.synth import make_synthetic_dataset


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: exit-criteria suite")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in getattr(rep, "nodeid", ""):
                name = rep.nodeid.split("::", 1)[1]
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{outcome:>6}  {name}")


@pytest.fixture(scope="session")
def tiny_dataset() -> Dataset:
    """Two handcrafted train graphs plus one test graph for exact counts."""
    objects = Vocabulary(("man", "horse", "house"))
    predicates = Vocabulary(("on", "behind"))
    g1 = SceneGraph(
        "a", 100, 100,
        (ObjectNode(0, 0, BBox(0, 0, 10, 10)), ObjectNode(1, 1, BBox(20, 20, 10, 10))),
        (RelationEdge(0, 0, 1),),
    )
    g2 = SceneGraph(
        "b", 100, 100,
        (
            ObjectNode(0, 0, BBox(0, 0, 10, 10)),
            ObjectNode(1, 1, BBox(20, 20, 10, 10)),
            ObjectNode(2, 2, BBox(40, 40, 20, 20)),
        ),
        (RelationEdge(0, 0, 1), RelationEdge(2, 1, 1)),
    )
    g3 = SceneGraph(
        "c", 100, 100,
        (ObjectNode(0, 2, BBox(0, 0, 30, 30)), ObjectNode(1, 1, BBox(50, 50, 20, 20))),
        (RelationEdge(0, 1, 1),),
    )
    return Dataset(
        objects, predicates,
        {"a": g1, "b": g2, "c": g3},
        {"train": ("a", "b"), "val": (), "test": ("c",)},
    )


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    """Synthetic dataset large enough for every scenario builder."""
    return make_synthetic_dataset(seed=7, n_images=240)


def write_dataset_dir(tmp: Path, vocab: dict, graphs: list[dict], splits: dict) -> Path:
    tmp.mkdir(parents=True, exist_ok=True)
    (tmp / "vocab.json").write_text(json.dumps(vocab))
    (tmp / "graphs.jsonl").write_text("\n".join(json.dumps(g) for g in graphs) + "\n")
    (tmp / "splits.json").write_text(json.dumps(splits))
    return tmp

import json

import pytest

from csegg.errors import EmptyDataset, FormatError, VocabError
from csegg.ingest import (
    CountThresholds,
    FrequencyTable,
    RankTertiles,
    bucketize,
    class_frequencies,
    convert_raw_vg,
    load_dataset,
    save_dataset,
)

from conftest import write_dataset_dir

VOCAB = {"objects": ["man", "horse"], "predicates": ["on"]}


def graph_rec(image_id, relations=True):
    return {
        "image_id": image_id,
        "width": 100,
        "height": 100,
        "objects": [
            {"id": 0, "class": "man", "bbox": [0, 0, 10, 10]},
            {"id": 1, "class": "horse", "bbox": [20, 20, 10, 10]},
        ],
        "relations": [{"subject": 0, "predicate": "on", "object": 1}] if relations else [],
    }


class TestLoadDataset:
    def test_fixture_round_trip(self, tmp_path):
        n = 20
        root = write_dataset_dir(
            tmp_path / "ds",
            VOCAB,
            [graph_rec(f"im{i}") for i in range(n)],
            {"train": [f"im{i}" for i in range(15)], "val": [], "test": [f"im{i}" for i in range(15, n)]},
        )
        d = load_dataset(root)
        assert len(d.graphs) == n
        assert len(d.train_graphs) == 15
        assert d.object_vocab.names == ("man", "horse")

    def test_unknown_predicate(self, tmp_path):
        rec = graph_rec("im0")
        rec["relations"][0]["predicate"] = "rides"
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [rec], {"train": ["im0"], "val": [], "test": []})
        with pytest.raises(VocabError, match="rides"):
            load_dataset(root)

    def test_unknown_object_class(self, tmp_path):
        rec = graph_rec("im0")
        rec["objects"][0]["class"] = "dragon"
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [rec], {"train": ["im0"], "val": [], "test": []})
        with pytest.raises(VocabError, match="dragon"):
            load_dataset(root)

    def test_empty_graphs_file(self, tmp_path):
        root = tmp_path / "ds"
        root.mkdir()
        (root / "vocab.json").write_text(json.dumps(VOCAB))
        (root / "graphs.jsonl").write_text("")
        (root / "splits.json").write_text(json.dumps({"train": [], "val": [], "test": []}))
        with pytest.raises(EmptyDataset):
            load_dataset(root)

    def test_malformed_line_reports_position(self, tmp_path):
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [graph_rec("im0")],
                                 {"train": ["im0"], "val": [], "test": []})
        with open(root / "graphs.jsonl", "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(FormatError, match="graphs.jsonl:2"):
            load_dataset(root)

    def test_unassigned_image_rejected(self, tmp_path):
        root = write_dataset_dir(tmp_path / "ds", VOCAB,
                                 [graph_rec("im0"), graph_rec("im1")],
                                 {"train": ["im0"], "val": [], "test": []})
        with pytest.raises(FormatError, match="missing a split"):
            load_dataset(root)

    def test_duplicate_edges_deduplicated(self, tmp_path):
        rec = graph_rec("im0")
        rec["relations"].append({"subject": 0, "predicate": "on", "object": 1})
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [rec], {"train": ["im0"], "val": [], "test": []})
        d = load_dataset(root)
        assert len(d.graphs["im0"].relations) == 1

    def test_out_of_bounds_boxes_clamped(self, tmp_path):
        rec = graph_rec("im0")
        rec["objects"][0]["bbox"] = [-5, 0, 20, 10]
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [rec], {"train": ["im0"], "val": [], "test": []})
        d = load_dataset(root)
        box = d.graphs["im0"].objects[0].box
        assert (box.x, box.y, box.w, box.h) == (0, 0, 15, 10)

    def test_save_load_round_trip(self, tmp_path, tiny_dataset):
        save_dataset(tiny_dataset, tmp_path / "out")
        again = load_dataset(tmp_path / "out")
        assert set(again.graphs) == set(tiny_dataset.graphs)
        assert again.graphs["b"].relations == tiny_dataset.graphs["b"].relations
        save_dataset(again, tmp_path / "out2")
        assert (tmp_path / "out" / "graphs.jsonl").read_bytes() == \
               (tmp_path / "out2" / "graphs.jsonl").read_bytes()


class TestClassFrequencies:
    def test_single_graph(self, tmp_path):
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [graph_rec("im0")],
                                 {"train": ["im0"], "val": [], "test": []})
        d = load_dataset(root)
        assert class_frequencies(d, "objects").counts == (1, 1)
        assert class_frequencies(d, "predicates").counts == (1,)

    def test_counts_sum_over_train_only(self, tiny_dataset):
        objs = class_frequencies(tiny_dataset, "objects")
        # train graphs a+b: man x2, horse x2, house x1; test graph c not counted
        assert objs.counts == (2, 2, 1)
        preds = class_frequencies(tiny_dataset, "predicates")
        assert preds.counts == (2, 1)
        assert preds.total == 3

    def test_empty_train_split_all_zero(self, tmp_path):
        root = write_dataset_dir(tmp_path / "ds", VOCAB, [graph_rec("im0")],
                                 {"train": [], "val": [], "test": ["im0"]})
        d = load_dataset(root)
        assert class_frequencies(d, "objects").counts == (0, 0)

    def test_order_invariance(self, small_dataset):
        a = class_frequencies(small_dataset, "predicates")
        b = class_frequencies(small_dataset, "predicates")
        assert a == b


class TestBucketize:
    def test_count_thresholds(self):
        f = FrequencyTable("objects", (12000, 9999, 500, 499))
        b = bucketize(f, CountThresholds(10000, 500))
        assert [x.value for x in b.buckets] == ["head", "body", "body", "tail"]

    def test_rank_tertiles_nine_classes(self):
        f = FrequencyTable("predicates", (90, 80, 70, 60, 50, 40, 30, 20, 10))
        b = bucketize(f, RankTertiles())
        assert [x.value for x in b.buckets] == ["head"] * 3 + ["body"] * 3 + ["tail"] * 3

    def test_rank_tertile_ties_broken_by_index(self):
        f = FrequencyTable("predicates", (5, 5, 5, 5, 5, 5, 5, 5, 5))
        b = bucketize(f, RankTertiles())
        assert [x.value for x in b.buckets] == ["head"] * 3 + ["body"] * 3 + ["tail"] * 3

    def test_deterministic(self, small_dataset):
        f = class_frequencies(small_dataset, "predicates")
        assert bucketize(f, RankTertiles()) == bucketize(f, RankTertiles())

    def test_threshold_monotone_in_frequency(self):
        f = FrequencyTable("objects", tuple(range(0, 20000, 123)))
        b = bucketize(f, CountThresholds(10000, 500))
        # higher frequency never lands in a later bucket (head < body < tail)
        by_freq = sorted(zip(f.counts, [x.rank for x in b.buckets]))
        for (_, ra), (_, rb) in zip(by_freq, by_freq[1:]):
            assert rb <= ra


class TestConvertRawVg:
    def _raw_dir(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        (raw / "image_data.json").write_text(json.dumps(
            [{"image_id": i, "width": 100, "height": 100} for i in range(4)]
        ))
        (raw / "objects.json").write_text(json.dumps([
            {
                "image_id": i,
                "objects": [
                    {"object_id": 10 * i + 1, "names": ["Man "], "x": 1, "y": 1, "w": 10, "h": 10},
                    {"object_id": 10 * i + 2, "names": ["horse"], "x": 30, "y": 30, "w": 10, "h": 10},
                ],
            }
            for i in range(4)
        ]))
        (raw / "relationships.json").write_text(json.dumps([
            {
                "image_id": i,
                "relationships": [
                    {
                        "predicate": "ON",
                        "subject": {"object_id": 10 * i + 1},
                        "object": {"object_id": 10 * i + 2},
                    }
                ],
            }
            for i in range(4)
        ]))
        return raw

    def test_produces_documented_layout(self, tmp_path):
        raw = self._raw_dir(tmp_path)
        summary = convert_raw_vg(raw, tmp_path / "out", train_frac=0.5, val_frac=0.25)
        assert summary["images"] == 4
        d = load_dataset(tmp_path / "out")
        assert set(d.object_vocab.names) == {"man", "horse"}
        assert d.predicate_vocab.names == ("on",)
        assert sum(len(d.splits[s]) for s in ("train", "val", "test")) == 4

    def test_rerun_identical_bytes(self, tmp_path):
        raw = self._raw_dir(tmp_path)
        convert_raw_vg(raw, tmp_path / "o1")
        convert_raw_vg(raw, tmp_path / "o2")
        for name in ("vocab.json", "graphs.jsonl", "splits.json"):
            assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()

    def test_missing_file_reports_name(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        with pytest.raises(FormatError, match="image_data.json"):
            convert_raw_vg(raw, tmp_path / "out")

import json

import pytest

from csegg.core import BBox, ObjectNode, RelationEdge, SceneGraph, Vocabulary
from csegg.errors import EmptyGeneralizationSet, InsufficientClasses
from csegg.ingest import RankTertiles, bucketize, class_frequencies
from csegg.scenarios import (
    build_s1,
    build_s2,
    build_s3,
    generalization_dataset,
    load_manifest,
    mask_graph,
    mask_task,
    permute_tasks,
    save_manifest,
    scenario_from_manifest,
    scenario_to_manifest,
)
from csegg.synth import make_synthetic_dataset


@pytest.fixture(scope="module")
def ds(small_dataset):
    return small_dataset


@pytest.fixture(scope="module")
def pred_buckets(ds):
    return bucketize(class_frequencies(ds, "predicates"), RankTertiles())


@pytest.fixture(scope="module")
def obj_buckets(ds):
    return bucketize(class_frequencies(ds, "objects"), RankTertiles())


class TestBuildS1:
    def test_table_contract(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=11)
        assert s.kind == "S1" and s.n_tasks == 5
        union = set()
        for spec in s.tasks:
            assert len(spec.visible_predicate_classes) == 10
            assert spec.visible_object_classes == frozenset(range(len(ds.object_vocab)))
            union |= spec.visible_predicate_classes
        assert len(union) == 50

    def test_disjoint_across_tasks(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=11)
        for a in range(5):
            for b in range(a + 1, 5):
                assert not (
                    s.tasks[a].visible_predicate_classes & s.tasks[b].visible_predicate_classes
                )

    def test_quota_spread_over_buckets(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=3)
        for spec in s.tasks:
            per_bucket = {"head": 0, "body": 0, "tail": 0}
            for p in spec.visible_predicate_classes:
                per_bucket[pred_buckets.of(p).value] += 1
            # 10 over three buckets: as even as the pools allow
            assert max(per_bucket.values()) - min(per_bucket.values()) <= 1

    def test_deterministic_under_seed(self, ds, pred_buckets):
        assert build_s1(ds, pred_buckets, seed=5) == build_s1(ds, pred_buckets, seed=5)
        assert build_s1(ds, pred_buckets, seed=5) != build_s1(ds, pred_buckets, seed=6)

    def test_insufficient_classes(self, pred_buckets):
        tiny = make_synthetic_dataset(seed=1, n_objects=30, n_unknown_objects=4,
                                      n_predicates=12, n_images=40, n_generalization_images=4)
        buckets = bucketize(class_frequencies(tiny, "predicates"), RankTertiles())
        with pytest.raises(InsufficientClasses):
            build_s1(tiny, buckets, seed=0)

    def test_membership_requires_visible_edge(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=11)
        spec = s.tasks[0]
        train_ids = set(ds.splits["train"])
        for i in spec.train_image_ids:
            assert i in train_ids
            g = ds.graphs[i]
            assert any(r.predicate_id in spec.visible_predicate_classes for r in g.relations)
        # and no train image with a visible edge is left out
        for i in train_ids:
            g = ds.graphs[i]
            if any(r.predicate_id in spec.visible_predicate_classes for r in g.relations):
                assert i in spec.train_image_ids

    def test_images_shared_across_tasks(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=11)
        first = set(s.tasks[0].train_image_ids)
        second = set(s.tasks[1].train_image_ids)
        assert first & second  # same pool of images participates repeatedly


class TestBuildS2:
    def test_table_contract(self, ds):
        s = build_s2(ds)
        assert s.kind == "S2" and s.n_tasks == 2
        assert len(s.tasks[0].visible_object_classes) == 100
        assert len(s.tasks[0].visible_predicate_classes) == 40
        assert len(s.tasks[1].visible_object_classes) == 25
        assert len(s.tasks[1].visible_predicate_classes) == 5
        assert not (s.tasks[0].visible_object_classes & s.tasks[1].visible_object_classes)

    def test_head_classes_first(self, ds):
        s = build_s2(ds)
        freqs = class_frequencies(ds, "objects").counts
        t1_min = min(freqs[c] for c in s.tasks[0].visible_object_classes)
        t2_max = max(freqs[c] for c in s.tasks[1].visible_object_classes)
        assert t1_min >= t2_max

    def test_insufficient_objects(self):
        tiny = make_synthetic_dataset(seed=1, n_objects=90, n_unknown_objects=4,
                                      n_predicates=50, n_images=40, n_generalization_images=4)
        with pytest.raises(InsufficientClasses):
            build_s2(tiny)


class TestBuildS3:
    def test_table_contract(self, ds, obj_buckets, pred_buckets):
        s = build_s3(ds, obj_buckets, pred_buckets, seed=2)
        assert s.kind == "S3" and s.n_tasks == 4
        shared = s.tasks[0].visible_predicate_classes
        assert len(shared) == 35
        union = set()
        for spec in s.tasks:
            assert len(spec.visible_object_classes) == 30
            assert spec.visible_predicate_classes == shared
            union |= spec.visible_object_classes
        assert len(union) == 120
        assert s.generalization_test is not None

    def test_generalization_disjoint_from_tasks(self, ds, obj_buckets, pred_buckets):
        s = build_s3(ds, obj_buckets, pred_buckets, seed=2)
        task_union = set()
        for spec in s.tasks:
            task_union |= spec.visible_object_classes
        gen = s.generalization_test
        assert not (gen.visible_object_classes & task_union)
        assert gen.visible_predicate_classes <= s.tasks[0].visible_predicate_classes
        for i in gen.test_image_ids:
            g = ds.graphs[i]
            assert all(o.class_id in gen.visible_object_classes for o in g.objects)

    def test_deterministic(self, ds, obj_buckets, pred_buckets):
        assert build_s3(ds, obj_buckets, pred_buckets, seed=4) == \
               build_s3(ds, obj_buckets, pred_buckets, seed=4)

    def test_empty_generalization_set(self, obj_buckets, pred_buckets):
        # no reserved unknown-only images -> every test image touches task classes
        ds2 = make_synthetic_dataset(seed=3, n_objects=150, n_unknown_objects=29,
                                     n_predicates=40, n_images=160,
                                     n_generalization_images=0)
        from csegg.ingest import RankTertiles, bucketize, class_frequencies
        ob = bucketize(class_frequencies(ds2, "objects"), RankTertiles())
        pb = bucketize(class_frequencies(ds2, "predicates"), RankTertiles())
        with pytest.raises(EmptyGeneralizationSet):
            build_s3(ds2, ob, pb, seed=0)


class TestMaskTask:
    def _mini(self):
        objects = Vocabulary(("plate", "food", "woman", "hair"))
        predicates = Vocabulary(("on", "has"))
        g = SceneGraph(
            "x", 100, 100,
            (
                ObjectNode(0, 0, BBox(0, 0, 10, 10)),
                ObjectNode(1, 1, BBox(5, 5, 10, 10)),
                ObjectNode(2, 2, BBox(30, 30, 20, 20)),
                ObjectNode(3, 3, BBox(32, 30, 10, 10)),
            ),
            (RelationEdge(1, 0, 0), RelationEdge(0, 1, 1), RelationEdge(2, 1, 3)),
        )
        return objects, predicates, g

    def test_train_mask_keeps_only_new_predicates(self):
        objects, predicates, g = self._mini()
        # task 2 teaches "has" only
        masked = mask_graph(g, frozenset(range(4)), frozenset({predicates.id_of("has")}))
        assert masked is not None
        assert all(r.predicate_id == predicates.id_of("has") for r in masked.relations)
        assert len(masked.relations) == 2

    def test_no_visible_edges_excluded(self):
        objects, predicates, g = self._mini()
        assert mask_graph(g, frozenset({0}), frozenset({1})) is None

    def test_object_masking_drops_nodes_and_edges(self):
        objects, predicates, g = self._mini()
        masked = mask_graph(g, frozenset({0, 1}), frozenset({0, 1}))
        assert {o.class_id for o in masked.objects} == {0, 1}
        # edge woman-has-hair lost its endpoints
        assert len(masked.relations) == 2

    def test_cumulative_final_task_equals_joint(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=11)
        full = mask_task(ds, s, 5, cumulative=True)
        union = set()
        for spec in s.tasks:
            union |= spec.visible_predicate_classes
        assert full.test_visible_predicates == frozenset(union)

    def test_never_emits_invisible_edge(self, ds, obj_buckets, pred_buckets):
        s = build_s3(ds, obj_buckets, pred_buckets, seed=2)
        td = mask_task(ds, s, 2, cumulative=False)
        for g in td.train:
            classes = {o.node_id: o.class_id for o in g.objects}
            for r in g.relations:
                assert r.predicate_id in td.train_visible_predicates
                assert classes[r.subject_id] in td.train_visible_objects
                assert classes[r.object_id] in td.train_visible_objects

    def test_generalization_dataset_masks_predicates(self, ds, obj_buckets, pred_buckets):
        s = build_s3(ds, obj_buckets, pred_buckets, seed=2)
        gen = generalization_dataset(ds, s)
        assert gen.test
        for g in gen.test:
            for r in g.relations:
                assert r.predicate_id in s.tasks[0].visible_predicate_classes


class TestManifest:
    def test_round_trip(self, ds, pred_buckets, tmp_path):
        s = build_s1(ds, pred_buckets, seed=11)
        save_manifest(s, ds, tmp_path / "m.json")
        assert load_manifest(tmp_path / "m.json", ds) == s

    def test_byte_identical_across_runs(self, ds, pred_buckets, tmp_path):
        for name in ("m1.json", "m2.json"):
            save_manifest(build_s1(ds, pred_buckets, seed=11), ds, tmp_path / name)
        assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_s3_manifest_keeps_generalization(self, ds, obj_buckets, pred_buckets):
        s = build_s3(ds, obj_buckets, pred_buckets, seed=2)
        m = scenario_to_manifest(s, ds)
        assert m["generalization_test"] is not None
        assert scenario_from_manifest(json.loads(json.dumps(m)), ds) == s

    def test_permute_tasks(self, ds, pred_buckets):
        s = build_s1(ds, pred_buckets, seed=11)
        p = permute_tasks(s, [3, 1, 2, 5, 4])
        assert p.tasks[0].visible_predicate_classes == s.tasks[2].visible_predicate_classes
        assert [t.task_index for t in p.tasks] == [1, 2, 3, 4, 5]
        with pytest.raises(ValueError):
            permute_tasks(s, [1, 1, 2, 3, 4])

import random

import numpy as np
import pytest

from csegg.baselines import (
    PruneMask,
    ReplayBuffer,
    buffer_to_manifest,
    ewc_penalty,
    fisher_diag,
    merge_buffers,
    packnet_prune,
    read_param_vector,
    select_replay,
    write_param_vector,
)
from csegg.errors import LengthMismatch, NoFreeParameters
from csegg.ingest import RankTertiles, bucketize, class_frequencies
from csegg.scenarios import build_s1, mask_task


@pytest.fixture(scope="module")
def task(small_dataset):
    buckets = bucketize(class_frequencies(small_dataset, "predicates"), RankTertiles())
    scenario = build_s1(small_dataset, buckets, seed=11)
    return mask_task(small_dataset, scenario, 1)


class TestSelectReplay:
    def test_m100_returns_everything(self, task):
        buf = select_replay(task, 100, random.Random(0))
        assert len(buf) == len(task.train)
        assert set(buf.image_ids()) == {g.image_id for g in task.train}

    def test_m10_of_1000(self):
        from csegg.core import BBox, ObjectNode, RelationEdge, SceneGraph
        from csegg.scenarios import TaskDataset

        graphs = tuple(
            SceneGraph(
                f"im{i}", 100, 100,
                (ObjectNode(0, 0, BBox(0, 0, 5, 5)), ObjectNode(1, 1, BBox(20, 20, 5, 5))),
                (RelationEdge(0, 0, 1),),
            )
            for i in range(1000)
        )
        td = TaskDataset(1, False, graphs, (), frozenset({0, 1}), frozenset({0}),
                         frozenset({0, 1}), frozenset({0}))
        buf = select_replay(td, 10, random.Random(1))
        assert len(buf) == 100

    def test_deterministic_under_seed(self, task):
        a = select_replay(task, 20, random.Random(5))
        b = select_replay(task, 20, random.Random(5))
        assert a.image_ids() == b.image_ids()

    def test_annotations_are_masked(self, task):
        buf = select_replay(task, 10, random.Random(2))
        for it in buf.items:
            assert all(r.predicate_id in task.train_visible_predicates for r in it.graph.relations)

    def test_merge_dedups_and_caps(self, task):
        a = select_replay(task, 10, random.Random(1))
        b = select_replay(task, 10, random.Random(2))
        merged = merge_buffers([a, b], capacity=5, rng=random.Random(3))
        assert len(merged) == 5
        assert len(set(merged.image_ids())) == 5

    def test_capacity_invariant(self):
        from csegg.baselines import BufferItem

        with pytest.raises(ValueError):
            ReplayBuffer(m_percent=10, capacity=0, items=(
                BufferItem("x", _tiny_graph(), 1),
            ))

    def test_manifest_shape(self, task, small_dataset):
        buf = select_replay(task, 10, random.Random(2))
        m = buffer_to_manifest(buf, small_dataset.object_vocab, small_dataset.predicate_vocab)
        assert m["m_percent"] == 10
        assert len(m["items"]) == len(buf)
        assert {"image", "task", "graph"} <= set(m["items"][0])


def _tiny_graph():
    from csegg.core import BBox, ObjectNode, SceneGraph

    return SceneGraph("t", 10, 10, (ObjectNode(0, 0, BBox(0, 0, 5, 5)),), ())


class TestParamVectorIO:
    def test_round_trip(self, tmp_path):
        v = np.array([1.5, -2.25, 0.0, 1e300])
        write_param_vector(v, tmp_path / "w.vec")
        assert np.array_equal(read_param_vector(tmp_path / "w.vec"), v)

    def test_header_is_length(self, tmp_path):
        write_param_vector(np.zeros(7), tmp_path / "w.vec")
        raw = (tmp_path / "w.vec").read_bytes()
        assert len(raw) == 8 + 7 * 8
        assert int.from_bytes(raw[:8], "little") == 7

    def test_truncated_rejected(self, tmp_path):
        write_param_vector(np.zeros(7), tmp_path / "w.vec")
        raw = (tmp_path / "w.vec").read_bytes()
        (tmp_path / "bad.vec").write_bytes(raw[:-8])
        with pytest.raises(ValueError):
            read_param_vector(tmp_path / "bad.vec")


class TestFisherDiag:
    def test_single_sample_squares(self):
        g = np.array([1.0, -3.0, 2.0])
        assert np.allclose(fisher_diag([g]), g * g)

    def test_sign_invariance(self):
        g = np.array([0.5, -1.5])
        assert np.allclose(fisher_diag([g, -g]), g * g)

    def test_hand_value(self):
        a = np.array([1.0, 3.0])
        b = np.array([3.0, 1.0])
        assert np.allclose(fisher_diag([a, b]), [5.0, 5.0])

    def test_order_invariant_nonnegative(self):
        rng = np.random.default_rng(0)
        samples = [rng.normal(size=16) for _ in range(5)]
        f1 = fisher_diag(samples)
        f2 = fisher_diag(list(reversed(samples)))
        assert np.allclose(f1, f2)
        assert (f1 >= 0).all()

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            fisher_diag([np.zeros(3), np.zeros(4)])


class TestEwcPenalty:
    def test_zero_at_anchor(self):
        w = np.array([1.0, 2.0])
        assert ewc_penalty(w, w, np.array([5.0, 5.0])) == 0.0

    def test_hand_value(self):
        assert ewc_penalty(np.array([1.0, 1.0]), np.array([0.0, 0.0]),
                           np.array([1.0, 2.0])) == 3.0

    def test_linear_in_fisher(self):
        w = np.array([2.0, -1.0, 0.5])
        w0 = np.zeros(3)
        f = np.array([1.0, 0.5, 3.0])
        assert ewc_penalty(w, w0, 4 * f) == pytest.approx(4 * ewc_penalty(w, w0, f))

    def test_nonnegative_and_zero_iff_on_support(self):
        f = np.array([1.0, 0.0])
        assert ewc_penalty(np.array([0.0, 9.0]), np.zeros(2), f) == 0.0
        assert ewc_penalty(np.array([0.1, 0.0]), np.zeros(2), f) > 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ewc_penalty(np.zeros(2), np.zeros(3), np.zeros(2))


class TestPackNet:
    def test_keep_half_distinct_magnitudes(self):
        w = np.array([0.9, -0.1, 0.5, -0.7, 0.3])
        mask = packnet_prune(w, PruneMask.empty(5), 0.5)
        owned = mask.owned_by(1)
        assert owned.size == 3  # ceil(5/2)
        assert set(owned.tolist()) == {0, 3, 2}

    def test_owned_parameters_untouched(self):
        w1 = np.array([0.9, 0.1, 0.5, 0.7])
        m1 = packnet_prune(w1, PruneMask.empty(4), 0.5)
        # task 2 sees huge magnitudes on owned slots; they must stay task-1 owned
        w2 = np.array([99.0, 0.2, 99.0, 0.1])
        m2 = packnet_prune(w2, m1, 0.5)
        assert np.array_equal(m2.owners[m1.owners == 1], m1.owners[m1.owners == 1])
        assert m2.owned_by(2).size == 1  # ceil(0.5 * 2 free)

    def test_repeated_pruning_free_counts(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=8)
        mask = PruneMask.empty(8)
        frees = []
        for _ in range(3):
            mask = packnet_prune(w, mask, 0.5)
            frees.append(mask.n_free)
        assert frees == [4, 2, 1]

    def test_monotone_ownership(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=32)
        mask = PruneMask.empty(32)
        for _ in range(4):
            prev = mask.owners.copy()
            mask = packnet_prune(w, mask, 0.5)
            assert np.array_equal(mask.owners[prev > 0], prev[prev > 0])

    def test_no_free_parameters(self):
        mask = PruneMask(np.ones(4, dtype=np.int32))
        with pytest.raises(NoFreeParameters):
            packnet_prune(np.zeros(4), mask, 0.5)

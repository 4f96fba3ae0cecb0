import random
from collections import Counter

import pytest

from csegg.core import BBox, ObjectNode, RelationEdge, SceneGraph, TripletLabel
from csegg.errors import EmptyUniverse
from csegg.ingest import RankTertiles, bucketize, class_frequencies
from csegg.sampling import (
    BlsParams,
    LtdConfig,
    bls_sample,
    head_drop_probability,
    ltd_rates,
    ltd_sample,
    lvis_repeat_factors,
    lvis_sample,
    repeat_factors,
)
from csegg.scenarios import build_s1, mask_task
from csegg.universe import TripletUniverse


def universe(freqs: dict[tuple[int, int, int], int]) -> TripletUniverse:
    return TripletUniverse(counts={TripletLabel(*k): v for k, v in freqs.items()})


class TestLtdRates:
    def test_single_triplet(self):
        u = universe({(0, 0, 1): 37})
        table = ltd_rates(u, LtdConfig(alpha=0.7))
        assert table.of(TripletLabel(0, 0, 1)) == pytest.approx(0.7, abs=1e-12)

    def test_ninety_ten_split(self):
        u = universe({(0, 0, 1): 90, (1, 1, 0): 10})
        table = ltd_rates(u, LtdConfig(alpha=0.7))
        assert table.of(TripletLabel(0, 0, 1)) == pytest.approx(0.63, abs=1e-12)
        assert table.of(TripletLabel(1, 1, 0)) == pytest.approx(0.07, abs=1e-12)

    def test_equal_frequencies_symmetric(self):
        n = 8
        u = universe({(i, 0, i + 1): 5 for i in range(n)})
        table = ltd_rates(u)
        for rate in table.rates.values():
            assert rate == pytest.approx(0.7 / n, abs=1e-12)

    def test_rates_sum_to_alpha(self):
        rng = random.Random(0)
        u = universe({(i, i % 3, i + 1): rng.randint(1, 500) for i in range(40)})
        table = ltd_rates(u, LtdConfig(alpha=0.7))
        assert table.total == pytest.approx(0.7, abs=1e-9)

    def test_monotone_in_frequency(self):
        u = universe({(0, 0, 1): 5, (1, 0, 2): 50, (2, 0, 3): 500})
        table = ltd_rates(u)
        r = [table.of(TripletLabel(i, 0, i + 1)) for i in range(3)]
        assert r[0] < r[1] < r[2]

    def test_empty_universe(self):
        with pytest.raises(EmptyUniverse):
            ltd_rates(TripletUniverse())


class TestLtdSample:
    def test_zero_rates_keep_everything(self):
        u = universe({(i, 0, i + 1): 3 for i in range(10)})
        table = ltd_rates(u, LtdConfig(alpha=0.0))
        assert ltd_sample(u, table, random.Random(0)) == list(u.counts)

    def test_retention_matches_analytic_rates(self):
        u = universe({(0, 0, 1): 90, (1, 1, 0): 10})
        table = ltd_rates(u, LtdConfig(alpha=0.7))
        rng = random.Random(123)
        n = 10000
        kept = Counter()
        for _ in range(n):
            for label in ltd_sample(u, table, rng):
                kept[label] += 1
        assert kept[TripletLabel(0, 0, 1)] / n == pytest.approx(0.37, abs=0.02)
        assert kept[TripletLabel(1, 1, 0)] / n == pytest.approx(0.93, abs=0.02)

    def test_deterministic_under_seed(self):
        u = universe({(i, i % 2, i + 1): i + 1 for i in range(30)})
        table = ltd_rates(u)
        assert ltd_sample(u, table, random.Random(7)) == ltd_sample(u, table, random.Random(7))

    def test_flattens_head_tail_ratio(self):
        u = universe({(0, 0, 1): 900, (1, 1, 0): 100})
        table = ltd_rates(u)
        rng = random.Random(5)
        head = tail = 0
        for _ in range(20000):
            kept = ltd_sample(u, table, rng)
            head += TripletLabel(0, 0, 1) in kept
            tail += TripletLabel(1, 1, 0) in kept
        # pre-sampling ratio 9:1; post-sampling expected (1-0.63):(1-0.07)
        assert head / tail < 9.0
        assert head / tail == pytest.approx(0.37 / 0.93, rel=0.1)


def _graph_with_predicates(image_id, preds, n_nodes=None):
    n = n_nodes or (len(preds) + 1)
    nodes = [ObjectNode(i, 0, BBox(i * 20.0, 0, 10, 10)) for i in range(n)]
    edges = [RelationEdge(i, p, i + 1) for i, p in enumerate(preds)]
    return SceneGraph(image_id, 1000, 1000, tuple(nodes), tuple(edges))


class TestRepeatFactors:
    def test_all_above_threshold(self):
        graphs = [_graph_with_predicates(f"i{k}", [0]) for k in range(4)]
        assert repeat_factors(graphs, threshold=0.5) == [1.0] * 4

    def test_quarter_threshold_doubles(self):
        # rare class in 1 of 16 images -> f_c = 1/16 = t/4 with t = 0.25,
        # while the common class sits above the threshold
        graphs = [_graph_with_predicates(f"i{k}", [0]) for k in range(15)]
        graphs.append(_graph_with_predicates("rare", [1]))
        factors = repeat_factors(graphs, threshold=0.25)
        assert factors[:15] == [1.0] * 15
        assert factors[15] == pytest.approx(2.0)

    def test_never_below_one(self):
        rng = random.Random(3)
        graphs = [
            _graph_with_predicates(f"i{k}", [rng.randrange(5) for _ in range(3)])
            for k in range(30)
        ]
        assert all(f >= 1.0 for f in repeat_factors(graphs, threshold=0.2))

    def test_task_dataset_wrapper_keys_by_image(self):
        from csegg.scenarios import TaskDataset

        graphs = [_graph_with_predicates(f"i{k}", [0]) for k in range(15)]
        graphs.append(_graph_with_predicates("rare", [1]))
        td = TaskDataset(1, False, tuple(graphs), (), frozenset({0}), frozenset({0, 1}),
                         frozenset({0}), frozenset({0, 1}))
        factors = lvis_repeat_factors(td, threshold=0.25)
        assert set(factors) == {g.image_id for g in graphs}
        assert factors["rare"] == pytest.approx(2.0)
        assert factors["i0"] == 1.0

    def test_stochastic_rounding_mean(self):
        # single image with factor 2.5: average multiplicity over many draws
        graphs = [_graph_with_predicates(f"i{k}", [0]) for k in range(15)]
        graphs.append(_graph_with_predicates("rare", [1]))
        t = 6.25 / 16  # f_c = 1/16, sqrt(t/f_c) = 2.5
        factors = repeat_factors(graphs, threshold=t)
        assert factors[-1] == pytest.approx(2.5)
        rng = random.Random(11)
        from csegg.sampling import _stochastic_round

        n = 20000
        total = sum(_stochastic_round(factors[-1], rng) for _ in range(n))
        assert total / n == pytest.approx(2.5, abs=0.1)


class TestBls:
    def _task(self, small_dataset):
        buckets = bucketize(class_frequencies(small_dataset, "predicates"), RankTertiles())
        scenario = build_s1(small_dataset, buckets, seed=11)
        return mask_task(small_dataset, scenario, 1)

    def test_uniform_distribution_identity(self):
        graphs = [_graph_with_predicates(f"i{k}", [k % 4]) for k in range(16)]
        from csegg.scenarios import TaskDataset

        td = TaskDataset(1, False, tuple(graphs), (), frozenset({0}), frozenset(range(4)),
                         frozenset({0}), frozenset(range(4)))
        out = bls_sample(td, BlsParams(repeat_threshold=0.2), random.Random(0))
        assert [g.image_id for g in out.train] == [g.image_id for g in td.train]
        assert all(a.relations == b.relations for a, b in zip(out.train, td.train))

    def test_head_drop_probability_rule(self):
        p = head_drop_probability(freq=10.0, median=1.0, params=BlsParams(gamma_d=0.05, p_max=0.7))
        assert p == pytest.approx(0.45, abs=1e-12)
        assert head_drop_probability(1.0, 1.0, BlsParams()) == 0.0
        assert head_drop_probability(1000.0, 1.0, BlsParams(p_max=0.7)) == 0.7

    def test_deterministic_under_seed(self, small_dataset):
        td = self._task(small_dataset)
        params = BlsParams(repeat_threshold=0.3)
        a = bls_sample(td, params, random.Random(9))
        b = bls_sample(td, params, random.Random(9))
        assert [g.image_id for g in a.train] == [g.image_id for g in b.train]
        assert all(x.relations == y.relations for x, y in zip(a.train, b.train))

    def test_lvis_sample_oversamples_tail_images(self):
        graphs = [_graph_with_predicates(f"i{k}", [0]) for k in range(15)]
        graphs.append(_graph_with_predicates("rare", [1]))
        from csegg.scenarios import TaskDataset

        td = TaskDataset(1, False, tuple(graphs), (), frozenset({0}), frozenset({0, 1}),
                         frozenset({0}), frozenset({0, 1}))
        out = lvis_sample(td, BlsParams(repeat_threshold=6.25 / 16), random.Random(2))
        ids = Counter(g.image_id for g in out.train)
        assert ids["rare"] >= 2
        assert all(ids[f"i{k}"] == 1 for k in range(15))

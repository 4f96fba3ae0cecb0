import numpy as np
import pytest

from csegg.clustering import (
    ContextCluster,
    TripletEmbedding,
    cluster_triplets,
    fallback_clusters,
    select_prompt_clusters,
)
from csegg.core import TripletLabel
from csegg.errors import NoEligibleClusters


def emb(i, vector):
    return TripletEmbedding(TripletLabel(i, 0, i + 1), tuple(vector))


def orthogonal_groups(sizes, dim=8, jitter=0.0, seed=0):
    """Groups spread over orthogonal axes; cosine distance 1 across groups."""
    rng = np.random.default_rng(seed)
    out = []
    idx = 0
    for axis, size in enumerate(sizes):
        for _ in range(size):
            v = np.zeros(dim)
            v[axis] = 1.0
            if jitter:
                v[axis + len(sizes):] = jitter * rng.random(dim - axis - len(sizes))
            out.append(emb(idx, v))
            idx += 1
    return out


class TestClusterTriplets:
    def test_identical_vectors_single_cluster(self):
        embeddings = [emb(i, [1.0, 0.0, 0.0]) for i in range(5)]
        clusters = cluster_triplets(embeddings, threshold=0.6)
        assert len(clusters) == 1
        assert len(clusters[0]) == 5

    def test_two_orthogonal_groups(self):
        embeddings = orthogonal_groups([3, 4])
        clusters = cluster_triplets(embeddings, threshold=0.6)
        assert sorted(len(c) for c in clusters) == [3, 4]

    def test_threshold_zero_all_singletons(self):
        embeddings = orthogonal_groups([2, 2, 2])
        clusters = cluster_triplets(embeddings, threshold=0.0)
        assert all(len(c) == 1 for c in clusters)

    def test_single_embedding(self):
        clusters = cluster_triplets([emb(0, [0.3, 0.7])], threshold=0.6)
        assert len(clusters) == 1 and clusters[0].max_internal_linkage == 0.0

    def test_internal_linkage_below_threshold(self):
        rng = np.random.default_rng(3)
        embeddings = [emb(i, rng.normal(size=16)) for i in range(40)]
        for c in cluster_triplets(embeddings, threshold=0.6):
            assert c.max_internal_linkage <= 0.6 + 1e-12

    def test_input_order_preserved(self):
        embeddings = orthogonal_groups([2, 3])
        clusters = cluster_triplets(embeddings, threshold=0.6)
        assert clusters[0].members[0] == embeddings[0].label
        flat = [l for c in clusters for l in c.members]
        assert set(flat) == {e.label for e in embeddings}


class TestSelectPromptClusters:
    def _sized(self, sizes):
        out = []
        idx = 0
        for s in sizes:
            members = []
            for _ in range(s):
                members.append(TripletLabel(idx, 0, idx + 1))
                idx += 1
            out.append(ContextCluster(tuple(members), 0.1))
        return out

    def test_more_than_three_semantics(self):
        kept = select_prompt_clusters(self._sized([2, 3, 4, 7]))
        assert sorted(len(c) for c in kept) == [4, 7]

    def test_exactly_four_kept_three_rejected(self):
        kept = select_prompt_clusters(self._sized([3, 4]))
        assert [len(c) for c in kept] == [4]

    def test_all_singletons_raises(self):
        with pytest.raises(NoEligibleClusters):
            select_prompt_clusters(self._sized([1, 1, 1]))


class TestFallbackClusters:
    def test_fewer_than_four_labels_one_group(self):
        embeddings = orthogonal_groups([1, 1, 1])
        groups = fallback_clusters(embeddings)
        assert len(groups) == 1
        assert len(groups[0]) == 3

    def test_merges_until_group_of_four_exists(self):
        # nearby pairs on distinct axes: threshold clustering yields pairs,
        # the fallback must keep merging to reach size >= 4
        rng = np.random.default_rng(1)
        embeddings = []
        idx = 0
        for axis in range(3):
            base = np.zeros(8)
            base[axis] = 1.0
            for _ in range(2):
                v = base + 0.05 * rng.random(8)
                embeddings.append(emb(idx, v))
                idx += 1
        groups = fallback_clusters(embeddings)
        assert max(len(g) for g in groups) >= 4

    def test_cosine_math_on_shared_words(self):
        # sanity anchor for the mock embedding downstream: vectors built
        # from shared tokens land closer than disjoint ones
        from csegg.providers import mock_embedding

        a = np.array(mock_embedding("man on horse"))
        b = np.array(mock_embedding("house behind horse"))
        c = np.array(mock_embedding("laptop under keyboard"))
        d_ab = 1 - float(a @ b)
        d_ac = 1 - float(a @ c)
        assert d_ab < d_ac
        assert d_ab > 0.0

"""Context clustering of triplet-label embeddings.

Agglomerative clustering with average linkage on cosine distance; merging
stops once the smallest inter-cluster linkage distance exceeds the
threshold (0.6 by default). Clusters with more than three members are
eligible for prompt composition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist, squareform

from .core import TripletLabel
from .errors import NoEligibleClusters

DEFAULT_THRESHOLD = 0.6
DEFAULT_MIN_SIZE_EXCLUSIVE = 3


@dataclass(frozen=True)
class TripletEmbedding:
    label: TripletLabel
    vector: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))
        if not all(np.isfinite(self.vector)):
            raise ValueError(f"non-finite embedding for {self.label}")


@dataclass(frozen=True)
class ContextCluster:
    members: tuple[TripletLabel, ...]
    max_internal_linkage: float

    def __len__(self) -> int:
        return len(self.members)


def _cosine_condensed(vectors: np.ndarray) -> np.ndarray:
    d = pdist(vectors, metric="cosine")
    return np.clip(np.nan_to_num(d, nan=1.0), 0.0, 2.0)


def cluster_triplets(
    embeddings: Sequence[TripletEmbedding],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[ContextCluster]:
    """Partition embeddings into context clusters.

    Returned clusters preserve input order (first-member order), and each
    records the largest linkage height merged inside it.
    """
    if not embeddings:
        raise ValueError("need at least one embedding")
    if threshold <= 0 and len(embeddings) > 1:
        # degenerate cut: nothing merges
        return [ContextCluster((e.label,), 0.0) for e in embeddings]
    if len(embeddings) == 1:
        return [ContextCluster((embeddings[0].label,), 0.0)]
    vectors = np.asarray([e.vector for e in embeddings], dtype=float)
    z = linkage(_cosine_condensed(vectors), method="average")
    flat = fcluster(z, t=threshold, criterion="distance")
    return _clusters_from_flat(embeddings, flat, z)


def _clusters_from_flat(
    embeddings: Sequence[TripletEmbedding], flat: np.ndarray, z: np.ndarray
) -> list[ContextCluster]:
    from scipy.cluster.hierarchy import cophenet

    coph = squareform(cophenet(z))
    groups: dict[int, list[int]] = {}
    for idx, cid in enumerate(flat):
        groups.setdefault(int(cid), []).append(idx)
    clusters = []
    for _, idxs in sorted(groups.items(), key=lambda kv: min(kv[1])):
        height = 0.0
        for a_pos, a in enumerate(idxs):
            for b in idxs[a_pos + 1:]:
                height = max(height, float(coph[a, b]))
        clusters.append(
            ContextCluster(tuple(embeddings[i].label for i in idxs), height)
        )
    return clusters


def select_prompt_clusters(
    clusters: Sequence[ContextCluster],
    min_size_exclusive: int = DEFAULT_MIN_SIZE_EXCLUSIVE,
) -> list[ContextCluster]:
    """Keep clusters with strictly more members than the cutoff."""
    eligible = [c for c in clusters if len(c) > min_size_exclusive]
    if not eligible:
        raise NoEligibleClusters(
            f"no cluster with more than {min_size_exclusive} members "
            f"(sizes: {sorted((len(c) for c in clusters), reverse=True)[:10]})"
        )
    return eligible


def fallback_clusters(
    embeddings: Sequence[TripletEmbedding],
    min_size_exclusive: int = DEFAULT_MIN_SIZE_EXCLUSIVE,
) -> list[ContextCluster]:
    """Small-run fallback when no cluster clears the size filter.

    Keeps merging nearest groups (the dendrogram's own order) until one
    group exceeds the cutoff; with too few labels overall, everything goes
    into a single group.
    """
    need = min_size_exclusive + 1
    if len(embeddings) < need:
        return [ContextCluster(tuple(e.label for e in embeddings), 2.0)]
    vectors = np.asarray([e.vector for e in embeddings], dtype=float)
    z = linkage(_cosine_condensed(vectors), method="average")
    for height in sorted(set(z[:, 2])):
        flat = fcluster(z, t=float(height), criterion="distance")
        counts = np.bincount(flat)
        if counts.max() >= need:
            clusters = _clusters_from_flat(embeddings, flat, z)
            return [c for c in clusters if len(c) >= need]
    return [ContextCluster(tuple(e.label for e in embeddings), float(z[-1, 2]))]

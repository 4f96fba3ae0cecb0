"""Replay-buffer selection and the weight-space baseline math (Fisher
diagonal, quadratic anchoring penalty, magnitude pruning masks).

The harness never runs gradient descent itself; external trainers exchange
parameter vectors through a small binary format (8-byte little-endian
length header followed by float64 values) and consume these utilities via
files referenced from the payload manifest.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SceneGraph, Vocabulary, graph_to_dict
from .errors import LengthMismatch, NoFreeParameters
from .scenarios import TaskDataset


# --- replay buffers ------------------------------------------------------------------


@dataclass(frozen=True)
class BufferItem:
    image_id: str
    graph: SceneGraph  # masked annotation as taught in its task
    task_index: int

    @property
    def annotation_bytes(self) -> int:
        return len(json.dumps(graph_to_dict_cached(self.graph)).encode())


def graph_to_dict_cached(g: SceneGraph) -> dict:
    # id-based serialization used only for size accounting
    return {
        "image_id": g.image_id,
        "objects": [[o.node_id, o.class_id, o.box.x, o.box.y, o.box.w, o.box.h] for o in g.objects],
        "relations": [[r.subject_id, r.predicate_id, r.object_id] for r in g.relations],
    }


@dataclass(frozen=True)
class ReplayBuffer:
    m_percent: float
    capacity: int
    items: tuple[BufferItem, ...] = ()

    def __post_init__(self):
        if len(self.items) > self.capacity:
            raise ValueError(f"buffer holds {len(self.items)} items, capacity {self.capacity}")

    def __len__(self) -> int:
        return len(self.items)

    def image_ids(self) -> list[str]:
        return [it.image_id for it in self.items]


def buffer_capacity(m_percent: float, total_images: int) -> int:
    return int(total_images * m_percent / 100.0)


def select_replay(
    td: TaskDataset, m_percent: float, rng: random.Random, task_total_images: int | None = None
) -> ReplayBuffer:
    """Uniform sample without replacement of ``m_percent`` of the task's
    train images together with their masked annotations."""
    if not 0 < m_percent <= 100:
        raise ValueError(f"M must be in (0, 100], got {m_percent}")
    population = list(td.train)
    n_total = task_total_images if task_total_images is not None else len(population)
    take = buffer_capacity(m_percent, n_total)
    if m_percent == 100:
        chosen = population
    else:
        take = min(take, len(population))
        chosen = rng.sample(population, take)
    items = tuple(
        BufferItem(image_id=g.image_id, graph=g, task_index=td.task_index) for g in chosen
    )
    return ReplayBuffer(m_percent=m_percent, capacity=max(len(items), take), items=items)


def merge_buffers(buffers: Sequence[ReplayBuffer], capacity: int,
                  rng: random.Random) -> ReplayBuffer:
    """Union of per-task buffers, deduplicated by image id; uniformly
    subsampled when the joint capacity is exceeded."""
    seen: set[str] = set()
    merged: list[BufferItem] = []
    for buf in buffers:
        for it in buf.items:
            if it.image_id not in seen:
                seen.add(it.image_id)
                merged.append(it)
    if len(merged) > capacity:
        merged = rng.sample(merged, capacity)
    m = buffers[0].m_percent if buffers else 0.0
    return ReplayBuffer(m_percent=m, capacity=max(capacity, len(merged)), items=tuple(merged))


def buffer_to_manifest(buf: ReplayBuffer, objects: Vocabulary, predicates: Vocabulary) -> dict:
    return {
        "m_percent": buf.m_percent,
        "capacity": buf.capacity,
        "items": [
            {
                "image": it.image_id,
                "task": it.task_index,
                "graph": graph_to_dict(it.graph, objects, predicates),
            }
            for it in buf.items
        ],
    }


# --- parameter vectors ------------------------------------------------------------------


def write_param_vector(values: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", arr.size))
        fh.write(arr.tobytes())


def read_param_vector(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", header)
        data = fh.read(8 * n)
        if len(data) != 8 * n:
            raise ValueError(f"{path}: expected {n} float64 values")
        return np.frombuffer(data, dtype="<f8").copy()


# --- EWC ---------------------------------------------------------------------------------


def fisher_diag(grad_samples: Sequence[np.ndarray]) -> np.ndarray:
    """Diagonal empirical Fisher approximation: mean elementwise squared
    gradient over the samples."""
    if not len(grad_samples):
        raise ValueError("need at least one gradient sample")
    first = np.asarray(grad_samples[0], dtype=float)
    acc = np.zeros_like(first)
    for g in grad_samples:
        g = np.asarray(g, dtype=float)
        if g.shape != first.shape:
            raise LengthMismatch(f"gradient shapes differ: {g.shape} vs {first.shape}")
        acc += g * g
    return acc / len(grad_samples)


def ewc_penalty(w: np.ndarray, w_star: np.ndarray, fisher: np.ndarray) -> float:
    """Quadratic anchoring penalty sum(F * (W - W*)^2)."""
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    fisher = np.asarray(fisher, dtype=float)
    if not (w.shape == w_star.shape == fisher.shape):
        raise LengthMismatch(
            f"shapes differ: W {w.shape}, W* {w_star.shape}, F {fisher.shape}"
        )
    delta = w - w_star
    return float(np.sum(fisher * delta * delta))


# --- PackNet -------------------------------------------------------------------------------


FREE = 0


@dataclass(frozen=True)
class PruneMask:
    """Per-parameter ownership: 0 = free, i > 0 = owned by task i."""

    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    def __post_init__(self):
        owners = np.asarray(self.owners, dtype=np.int32)
        if (owners < 0).any():
            raise ValueError("owner ids must be >= 0")
        object.__setattr__(self, "owners", owners)

    @classmethod
    def empty(cls, n: int) -> "PruneMask":
        return cls(np.zeros(n, dtype=np.int32))

    @property
    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(self.owners == FREE)

    def owned_by(self, task: int) -> np.ndarray:
        return np.flatnonzero(self.owners == task)

    @property
    def n_free(self) -> int:
        return int((self.owners == FREE).sum())


def packnet_prune(w: np.ndarray, mask: PruneMask, keep_fraction: float) -> PruneMask:
    """Assign the top ``keep_fraction`` of free parameters (by magnitude)
    to the next task; previously owned parameters are never touched."""
    if not 0 < keep_fraction < 1:
        raise ValueError(f"keep_fraction must be in (0, 1), got {keep_fraction}")
    w = np.asarray(w, dtype=float)
    if w.shape != mask.owners.shape:
        raise LengthMismatch(f"weights {w.shape} vs mask {mask.owners.shape}")
    free = mask.free_indices
    if free.size == 0:
        raise NoFreeParameters("every parameter is already owned")
    n_keep = int(np.ceil(keep_fraction * free.size))
    # stable tie-break: larger |w| first, lower index wins on equality
    order = sorted(free.tolist(), key=lambda i: (-abs(w[i]), i))
    new_task = int(mask.owners.max()) + 1
    owners = mask.owners.copy()
    owners[order[:n_keep]] = new_task
    return PruneMask(owners)

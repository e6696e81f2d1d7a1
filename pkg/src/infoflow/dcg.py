"""Multi-scale ultrametric clustering trees and synergistic feature groups.

Trees are built by average-linkage agglomeration; the tree levels are the
partitions sitting just below the ``scale_count`` largest jumps in merge
height, plus the all-singletons and the single-cluster levels. With
``scale_count=None`` every merge defines a level (the full dendrogram).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AsymmetricInput, KTooLarge, NegativeDistance, TreeError

DEFAULT_SCALE_COUNT = 3
DEFAULT_CE_THRESHOLD = 0.5


@dataclass(frozen=True)
class ClusteringComposition:
    """A partition of leaves. Cluster ids run 0..k-1 in tree-layout order."""

    leaves: tuple
    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "leaves", tuple(self.leaves))
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        if len(self.leaves) != len(self.labels):
            raise TreeError("leaves and labels differ in length")
        if len(set(self.leaves)) != len(self.leaves):
            raise TreeError("leaf ids must be unique")
        if self.labels and sorted(set(self.labels)) != list(range(max(self.labels) + 1)):
            raise TreeError("cluster ids must be contiguous from 0")

    @property
    def k(self) -> int:
        return len(set(self.labels))

    @property
    def n(self) -> int:
        return len(self.leaves)

    @property
    def assignment(self) -> dict:
        return dict(zip(self.leaves, self.labels))

    def clusters(self) -> list[tuple]:
        out = [[] for _ in range(self.k)]
        for leaf, lab in zip(self.leaves, self.labels):
            out[lab].append(leaf)
        return [tuple(c) for c in out]

    def sizes(self) -> np.ndarray:
        return np.bincount(np.asarray(self.labels), minlength=self.k)

    def labels_for(self, leaves: Sequence) -> np.ndarray:
        a = self.assignment
        return np.array([a[s] for s in leaves], dtype=np.intp)

    @classmethod
    def from_assignment(cls, assignment: dict, leaf_order: Sequence | None = None) -> "ClusteringComposition":
        """Relabel an arbitrary assignment so ids follow first appearance along ``leaf_order``."""
        order = list(assignment) if leaf_order is None else list(leaf_order)
        remap: dict = {}
        labels = [remap.setdefault(assignment[leaf], len(remap)) for leaf in order]
        return cls(tuple(order), tuple(labels))


class UltrametricTree:
    """Nested clusterings of ``ids`` from finest (singletons) to coarsest (one cluster).

    ``order`` is the leaf layout: a permutation of positions in ``ids`` under
    which every cluster of every level is contiguous.
    """

    def __init__(self, ids: Sequence, level_labels: Sequence, heights: Sequence[float], order: Sequence[int]):
        self.ids = tuple(ids)
        self.order = np.asarray(order, dtype=np.intp)
        self.level_labels = [np.asarray(lab, dtype=np.intp) for lab in level_labels]
        self.heights = tuple(float(h) for h in heights)
        n = len(self.ids)
        if sorted(self.order.tolist()) != list(range(n)):
            raise TreeError("order is not a permutation of the leaves")
        if len(self.level_labels) != len(self.heights) or not self.level_labels:
            raise TreeError("need one height per level and at least one level")
        if any(b < a for a, b in zip(self.heights, self.heights[1:])):
            raise TreeError("level heights must be nondecreasing")
        for lab in self.level_labels:
            if lab.size != n:
                raise TreeError("level assignment has wrong length")
        for fine, coarse in zip(self.level_labels, self.level_labels[1:]):
            if not _refines(fine, coarse):
                raise TreeError("levels do not form a refinement chain")
        if not self.is_contiguous(self.order):
            raise TreeError("leaf layout splits a cluster")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def leaves(self) -> tuple:
        return tuple(self.ids[i] for i in self.order)

    @property
    def merge_heights(self) -> tuple[float, ...]:
        return self.heights

    def level(self, j: int) -> ClusteringComposition:
        lab = self.level_labels[j]
        return ClusteringComposition.from_assignment(
            {self.ids[i]: int(lab[i]) for i in range(self.n)}, self.leaves
        )

    @property
    def levels(self) -> list[ClusteringComposition]:
        return [self.level(j) for j in range(len(self.level_labels))]

    def level_sizes(self) -> list[int]:
        return [len(np.unique(lab)) for lab in self.level_labels]

    def is_contiguous(self, order) -> bool:
        for lab in self.level_labels:
            seq = lab[np.asarray(order)]
            starts = np.concatenate([[True], seq[1:] != seq[:-1]])
            if np.unique(seq[starts]).size != starts.sum():
                return False
        return True

    def with_order(self, order) -> "UltrametricTree":
        return UltrametricTree(self.ids, self.level_labels, self.heights, order)

    def tree_distance(self) -> np.ndarray:
        """d(i, j) = height of the finest level where i and j share a cluster (input order)."""
        n = self.n
        d = np.full((n, n), np.nan)
        for lab, h in zip(self.level_labels, self.heights):
            same = (lab[:, None] == lab[None, :]) & np.isnan(d)
            d[same] = h
        np.fill_diagonal(d, 0.0)
        return d

    def to_dict(self) -> dict:
        return {
            "leaves": list(self.leaves),
            "levels": [
                {"height": h, "k": comp.k, "assignment": list(comp.labels)}
                for h, comp in zip(self.heights, self.levels)
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "UltrametricTree":
        ids = tuple(d["leaves"])
        levels = d["levels"]
        return cls(ids, [lv["assignment"] for lv in levels], [lv["height"] for lv in levels], range(len(ids)))

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "UltrametricTree":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _refines(fine: np.ndarray, coarse: np.ndarray) -> bool:
    # every fine cluster must sit inside one coarse cluster
    pairs = np.unique(np.stack([fine, coarse]), axis=1)
    return np.unique(pairs[0]).size == pairs.shape[1]


def _validate_distance(dist) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise AsymmetricInput(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise TreeError("distance matrix has non-finite entries")
    scale = max(1.0, float(np.abs(d).max()) if d.size else 1.0)
    if not np.allclose(d, d.T, rtol=0, atol=1e-12 * scale):
        raise AsymmetricInput("distance matrix is not symmetric")
    if np.any(d < 0):
        raise NegativeDistance("distance matrix has negative entries")
    if np.any(np.abs(np.diag(d)) > 1e-12 * scale):
        raise TreeError("distance matrix must have a zero diagonal")
    return (d + d.T) / 2


def average_linkage(dist) -> list[tuple[int, int, float]]:
    """UPGMA merges as ``(slot_a, slot_b, height)`` with ``slot_a < slot_b``.

    A merged cluster keeps the smaller slot, so slots equal the smallest leaf
    index of each cluster; among equal-distance candidates the
    lexicographically smallest slot pair merges first.
    """
    d = _validate_distance(dist).copy()
    n = d.shape[0]
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    np.fill_diagonal(d, np.inf)
    merges = []
    for _ in range(n - 1):
        masked = np.where(active[:, None] & active[None, :], d, np.inf)
        flat = int(np.argmin(masked))
        a, b = divmod(flat, n)
        if a > b:
            a, b = b, a
        h = float(d[a, b])
        merges.append((a, b, h))
        new = (size[a] * d[a] + size[b] * d[b]) / (size[a] + size[b])
        d[a, :] = new
        d[:, a] = new
        d[a, a] = np.inf
        size[a] += size[b]
        active[b] = False
        d[b, :] = np.inf
        d[:, b] = np.inf
    # argmin over the full symmetric matrix scans row-major, which already
    # returns the smallest (a, b) among ties
    return merges


def _dendrogram_order(n: int, merges) -> list[int]:
    members = {i: [i] for i in range(n)}
    for a, b, _ in merges:
        members[a] = members[a] + members.pop(b)
    return members[0] if n else []


def build_ultrametric_tree(
    dist,
    scale_count: int | None = DEFAULT_SCALE_COUNT,
    seed: int = 0,
    ids: Sequence | None = None,
    extra_levels: Sequence[int] = (),
) -> UltrametricTree:
    """Build a multi-scale tree over the items of a distance matrix.

    Levels are the singletons, the partitions just below the ``scale_count``
    largest jumps in merge height, and the root; ``scale_count=None`` keeps
    every merge. ``extra_levels`` adds partitions with those exact cluster
    counts. ``seed`` is accepted so that stochastic tree builders can share
    this signature; the average-linkage builder is deterministic and ignores it.
    """
    d = _validate_distance(dist)
    n = d.shape[0]
    ids = tuple(range(n)) if ids is None else tuple(ids)
    if len(ids) != n:
        raise TreeError("ids length does not match the distance matrix")
    if n == 0:
        raise TreeError("cannot build a tree with no leaves")
    if scale_count is not None and scale_count < 1:
        raise ValueError("scale_count must be >= 1")
    if n == 1:
        return UltrametricTree(ids, [[0]], [0.0], [0])

    merges = average_linkage(d)
    heights = np.maximum.accumulate([h for _, _, h in merges])
    # after t merges there are n - t clusters; the jump after merge t is heights[t] - heights[t-1]
    if scale_count is None or scale_count >= n - 2:
        chosen = set(range(1, n - 1))
    else:
        jumps = [(heights[t] - heights[t - 1], t) for t in range(1, n - 1)]
        ranked = sorted((j for j in jumps if j[0] > 0), key=lambda j: (-j[0], j[1]))
        chosen = {t for _, t in ranked[:scale_count]}
    for k in extra_levels:
        if not 1 <= k <= n:
            raise KTooLarge(f"requested level with {k} clusters but the tree has {n} leaves")
        if 1 < k < n:
            chosen.add(n - k)

    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    level_labels = [np.arange(n)]
    level_heights = [0.0]
    for t, (a, b, _) in enumerate(merges, start=1):
        ra, rb = find(a), find(b)
        parent[max(ra, rb)] = min(ra, rb)
        if t in chosen or t == n - 1:
            level_labels.append(np.array([find(i) for i in range(n)]))
            level_heights.append(float(heights[t - 1]))
    order = _dendrogram_order(n, merges)
    return UltrametricTree(ids, level_labels, level_heights, order)


def composition_at(tree: UltrametricTree, k: int) -> ClusteringComposition:
    """Level with exactly ``k`` clusters, else the finest level with fewer than ``k``."""
    if k > tree.n:
        raise KTooLarge(f"k={k} exceeds the {tree.n} leaves of the tree")
    if k < 1:
        raise ValueError("k must be >= 1")
    for j, size in enumerate(tree.level_sizes()):
        if size <= k:
            return tree.level(j)
    return tree.level(len(tree.level_labels) - 1)


def l1_distances(rows) -> np.ndarray:
    """Pairwise L1 distances between the rows of a matrix."""
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.abs(x[:, None, :] - x[None, :, :]).sum(axis=2)


@dataclass(frozen=True)
class FeatureGroup:
    members: tuple[str, ...]
    group_id: int
    max_internal_ce: float

    def to_dict(self) -> dict:
        return {"group_id": self.group_id, "members": list(self.members), "max_internal_ce": self.max_internal_ce}


def feature_tree(xi, scale_count: int | None = DEFAULT_SCALE_COUNT) -> UltrametricTree:
    return build_ultrametric_tree(xi.values, scale_count, ids=xi.feature_names)


def synergistic_groups(xi, tree: UltrametricTree, ce_threshold: float = DEFAULT_CE_THRESHOLD) -> list[FeatureGroup]:
    """Clusters of the coarsest level whose members are pairwise within ``ce_threshold``.

    Groups are numbered from 1 in tree-layout order.
    """
    if set(tree.ids) != set(xi.feature_names):
        raise TreeError("tree leaves do not match the entropy matrix features")
    index = {name: i for i, name in enumerate(xi.feature_names)}

    def max_internal(members):
        idx = [index[m] for m in members]
        if len(idx) < 2:
            return 0.0
        return float(xi.values[np.ix_(idx, idx)].max())

    for j in reversed(range(len(tree.level_labels))):
        clusters = tree.level(j).clusters()
        internal = [max_internal(c) for c in clusters]
        if all(v <= ce_threshold for v in internal):
            return [FeatureGroup(tuple(c), g, v) for g, (c, v) in enumerate(zip(clusters, internal), start=1)]
    raise TreeError("tree has no singleton level")  # unreachable for trees from build_ultrametric_tree

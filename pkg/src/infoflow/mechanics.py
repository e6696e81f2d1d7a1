"""Data Mechanics: alternating row/column trees that seriate a coded matrix.

The lattice energy of a matrix is its 4-neighbour L1 total variation. It
splits into a row part (sum of L1 distances between vertically adjacent rows)
and a column part, so for fixed trees the row and column layouts can be
optimized independently: each is a shortest Hamiltonian path over the raw L1
distances, restricted to layouts that keep every tree cluster contiguous.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations, product
from math import factorial
from typing import Sequence

import numpy as np

from .dcg import (
    DEFAULT_SCALE_COUNT,
    UltrametricTree,
    build_ultrametric_tree,
    composition_at,
    l1_distances,
)
from .entropy import entropy_from_counts
from .errors import DimensionTooSmall

DEFAULT_MAX_ITER = 10
# trees admitting at most this many layouts are ordered by exhaustive search
EXACT_LAYOUT_LIMIT = 5040


def lattice_energy(matrix) -> float:
    """Sum of |a - b| over horizontally and vertically adjacent cells."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.size == 0:
        raise DimensionTooSmall("energy of an empty matrix is undefined")
    return float(np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum())


def path_length(dist: np.ndarray, order) -> float:
    o = np.asarray(order)
    return float(dist[o[:-1], o[1:]].sum())


def _hierarchy(tree: UltrametricTree):
    """Nested lists of children; plain ints are leaf positions (input order)."""
    labels = tree.level_labels

    def build(j, members):
        if j == 0:
            if len(np.unique(labels[0][members])) == members.size:
                return [int(i) for i in members] if members.size > 1 else int(members[0])
            j = 0
        sub = labels[j - 1][members] if j > 0 else labels[0][members]
        if j == 0:
            return [int(i) for i in members]
        keys = []
        for g in np.unique(sub):
            part = members[sub == g]
            keys.append((int(part.min()), part))
        children = [build(j - 1, part) for _, part in sorted(keys, key=lambda kv: kv[0])]
        return children[0] if len(children) == 1 else children

    top = len(labels) - 1
    return build(top, np.arange(tree.n))


def _layout_count(node) -> int:
    if isinstance(node, int):
        return 1
    total = factorial(len(node))
    for child in node:
        total *= _layout_count(child)
        if total > 10**9:
            return total
    return total


def _layouts(node):
    if isinstance(node, int):
        yield (node,)
        return
    child_layouts = [list(_layouts(c)) for c in node]
    for perm in permutations(range(len(node))):
        for combo in product(*(child_layouts[p] for p in perm)):
            yield tuple(i for part in combo for i in part)


def _two_opt(order: np.ndarray, dist: np.ndarray, level_labels) -> np.ndarray:
    """Segment reversals that keep every level's clusters contiguous, until none improves."""
    order = order.copy()
    n = order.size
    eps = 1e-9 * max(1.0, float(dist.max()))
    improved = True
    while improved:
        improved = False
        seqs = [lab[order] for lab in level_labels]
        starts = [np.concatenate([[True], s[1:] != s[:-1]]) for s in seqs]
        ends = [np.concatenate([s[1:] != s[:-1], [True]]) for s in seqs]
        for i in range(n - 1):
            js = np.arange(i + 1, n)
            valid = np.ones(js.size, dtype=bool)
            for s, st, en in zip(seqs, starts, ends):
                valid &= (s[js] == s[i]) | (st[i] & en[js])
            if not valid.any():
                continue
            gain = np.zeros(js.size)
            if i > 0:
                gain += dist[order[i - 1], order[i]] - dist[order[i - 1], order[js]]
            inner = js < n - 1
            jj = js[inner]
            gain[inner] += dist[order[jj], order[jj + 1]] - dist[order[i], order[jj + 1]]
            gain[~valid] = 0.0
            best = int(np.argmax(gain))
            if gain[best] > eps:
                j = int(js[best])
                order[i : j + 1] = order[i : j + 1][::-1]
                improved = True
                break
    return order


def order_leaves(tree: UltrametricTree, dist) -> UltrametricTree:
    """Re-lay out ``tree`` to minimize the path length of adjacent leaves under ``dist``.

    Small trees are solved exactly (ties go to the lexicographically smallest
    layout); larger ones start from the dendrogram layout and apply
    constrained 2-opt reversals.
    """
    d = np.asarray(dist, dtype=float)
    if tree.n <= 2:
        return tree.with_order(np.arange(tree.n))
    root = _hierarchy(tree)
    if _layout_count(root) <= EXACT_LAYOUT_LIMIT:
        best = min(_layouts(root), key=lambda o: (round(path_length(d, o), 9), o))
        return tree.with_order(best)
    return tree.with_order(_two_opt(np.asarray(tree.order), d, tree.level_labels))


def conditioned_distances(vectors: np.ndarray, tree: UltrametricTree | None) -> np.ndarray:
    """L1 distances between the rows of ``vectors`` after averaging their entries over clusters.

    Entries are grouped by the finest non-trivial level of ``tree`` (which
    indexes the columns of ``vectors``); each cluster contributes
    ``size * |mean difference|``, so singleton clusters reduce to plain L1.
    """
    v = np.asarray(vectors, dtype=float)
    if tree is None:
        return l1_distances(v)
    sizes = tree.level_sizes()
    level = 0
    for j, k in enumerate(sizes):
        if 1 < k < tree.n:
            level = j
            break
    labels = tree.level_labels[level]
    groups = np.unique(labels)
    means = np.column_stack([v[:, labels == g].mean(axis=1) for g in groups])
    weights = np.array([(labels == g).sum() for g in groups], dtype=float)
    return (np.abs(means[:, None, :] - means[None, :, :]) * weights).sum(axis=2)


@dataclass
class CouplingGeometry:
    matrix: np.ndarray
    row_order: np.ndarray
    col_order: np.ndarray
    row_tree: UltrametricTree
    col_tree: UltrametricTree
    energy_trace: list[float]
    iterations: int
    row_ids: tuple = ()
    col_ids: tuple = ()

    @property
    def energy(self) -> float:
        return self.energy_trace[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def to_dict(self) -> dict:
        return {
            "row_order": [self.row_ids[i] for i in self.row_order],
            "col_order": [self.col_ids[j] for j in self.col_order],
            "energy_trace": list(self.energy_trace),
            "iterations": self.iterations,
            "row_tree": self.row_tree.to_dict(),
            "col_tree": self.col_tree.to_dict(),
            "matrix": self.matrix.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d) -> "CouplingGeometry":
        row_tree = UltrametricTree.from_dict(d["row_tree"])
        col_tree = UltrametricTree.from_dict(d["col_tree"])
        # trees were exported in layout order, which is the seriated order
        return cls(
            matrix=np.asarray(d["matrix"], dtype=float),
            row_order=np.arange(row_tree.n),
            col_order=np.arange(col_tree.n),
            row_tree=row_tree,
            col_tree=col_tree,
            energy_trace=list(d["energy_trace"]),
            iterations=int(d["iterations"]),
            row_ids=tuple(d["row_order"]),
            col_ids=tuple(d["col_order"]),
        )

    @classmethod
    def from_json(cls, path) -> "CouplingGeometry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _better_layout(conditioned: UltrametricTree, plain: UltrametricTree, dist: np.ndarray) -> UltrametricTree:
    """The tree whose layout has the shorter path; the conditioned tree wins ties."""
    eps = 1e-9 * max(1.0, float(dist.max()))
    if path_length(dist, plain.order) < path_length(dist, conditioned.order) - eps:
        return plain
    return conditioned


def data_mechanics(
    matrix,
    max_iter: int = DEFAULT_MAX_ITER,
    scale_count: int | None = DEFAULT_SCALE_COUNT,
    seed: int = 0,
    row_ids: Sequence | None = None,
    col_ids: Sequence | None = None,
    row_levels: Sequence[int] = (),
    col_levels: Sequence[int] = (),
) -> CouplingGeometry:
    """Seriate ``matrix`` by alternately building column and row trees.

    The first column tree uses plain L1 distances between columns; after that
    each axis is clustered on distances averaged over the clusters of the
    other axis's current tree. The tree built on plain L1 distances is kept
    as a fallback candidate, and whichever of the two lays its axis out with
    the shorter path is used. Layouts minimize the raw lattice energy. An
    iteration that would raise the energy is discarded and the run stops, so
    ``energy_trace`` never increases. ``row_levels``/``col_levels`` request
    tree levels with those exact cluster counts in addition to the detected
    scales.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise DimensionTooSmall(f"need at least 2 rows and 1 column, got shape {x.shape}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    n, m = x.shape
    row_ids = tuple(range(n)) if row_ids is None else tuple(row_ids)
    col_ids = tuple(range(m)) if col_ids is None else tuple(col_ids)
    raw_row = l1_distances(x)
    raw_col = l1_distances(x.T)

    row_order, col_order = np.arange(n), np.arange(m)
    row_tree = col_tree = None
    # trees on the unconditioned distances stay candidates in every iteration
    plain_col = order_leaves(build_ultrametric_tree(raw_col, scale_count, seed, ids=col_ids, extra_levels=col_levels), raw_col)
    plain_row = order_leaves(build_ultrametric_tree(raw_row, scale_count, seed, ids=row_ids, extra_levels=row_levels), raw_row)
    trace: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        new_col_tree = _better_layout(
            order_leaves(build_ultrametric_tree(
                conditioned_distances(x.T, row_tree), scale_count, seed, ids=col_ids, extra_levels=col_levels
            ), raw_col),
            plain_col, raw_col,
        )
        new_row_tree = _better_layout(
            order_leaves(build_ultrametric_tree(
                conditioned_distances(x, new_col_tree), scale_count, seed, ids=row_ids, extra_levels=row_levels
            ), raw_row),
            plain_row, raw_row,
        )
        energy = lattice_energy(x[np.ix_(new_row_tree.order, new_col_tree.order)])
        if trace and energy > trace[-1]:
            break
        iterations += 1
        trace.append(energy)
        unchanged = np.array_equal(new_row_tree.order, row_order) and np.array_equal(new_col_tree.order, col_order)
        row_tree, col_tree = new_row_tree, new_col_tree
        row_order, col_order = row_tree.order.copy(), col_tree.order.copy()
        if unchanged:
            break

    return CouplingGeometry(
        matrix=x[np.ix_(row_order, col_order)],
        row_order=row_order,
        col_order=col_order,
        row_tree=row_tree,
        col_tree=col_tree,
        energy_trace=trace,
        iterations=iterations,
        row_ids=row_ids,
        col_ids=col_ids,
    )


@dataclass
class Block:
    row_cluster: int
    col_cluster: int
    rows: tuple
    cols: tuple
    cells: np.ndarray = field(repr=False)
    mean_code: float = 0.0
    code_entropy: float = 0.0


def block_partition(geom: CouplingGeometry, row_k: int, col_k: int, log_base: str = "natural") -> list[Block]:
    """Tile the seriated matrix into row-cluster x column-cluster blocks."""
    row_comp = composition_at(geom.row_tree, row_k)
    col_comp = composition_at(geom.col_tree, col_k)
    row_pos = {rid: p for p, rid in enumerate(geom.row_tree.leaves)}
    col_pos = {cid: p for p, cid in enumerate(geom.col_tree.leaves)}
    blocks = []
    for r, rows in enumerate(row_comp.clusters()):
        ri = [row_pos[i] for i in rows]
        for c, cols in enumerate(col_comp.clusters()):
            ci = [col_pos[j] for j in cols]
            cells = geom.matrix[np.ix_(ri, ci)]
            _, counts = np.unique(cells, return_counts=True)
            blocks.append(
                Block(r, c, rows, cols, cells, float(cells.mean()), entropy_from_counts(counts, log_base))
            )
    return blocks

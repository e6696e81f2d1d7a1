import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from infoflow.dcg import build_ultrametric_tree, l1_distances
from infoflow.errors import DimensionTooSmall
from infoflow.mechanics import (
    CouplingGeometry,
    block_partition,
    conditioned_distances,
    data_mechanics,
    lattice_energy,
    order_leaves,
    path_length,
)

small = st.tuples(st.integers(2, 6), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.int64, s, elements=st.integers(0, 9))
)


def planted(seed, n_rows=(6, 5), n_cols=(4, 7), values=((0, 9), (7, 2))):
    rng = np.random.default_rng(seed)
    blocks = [[np.full((r, c), values[i][j]) for j, c in enumerate(n_cols)] for i, r in enumerate(n_rows)]
    x = np.block(blocks)
    return x[np.ix_(rng.permutation(x.shape[0]), rng.permutation(x.shape[1]))]


@given(small)
def test_energy_matches_oracle(x):
    assert lattice_energy(x) == pytest.approx(oracles.energy(x))


@given(small)
def test_energy_splits_into_row_and_column_paths(x):
    n, m = x.shape
    rows = l1_distances(x)
    cols = l1_distances(x.T)
    assert lattice_energy(x) == pytest.approx(path_length(rows, range(n)) + path_length(cols, range(m)))


def test_small_example():
    x = np.array([[0, 1, 0, 1], [0, 1, 0, 1]])
    assert lattice_energy(x) == 6
    geom = data_mechanics(x)
    assert geom.energy == 2
    assert geom.energy == oracles.min_energy_joint(x)


def test_degenerate_inputs():
    with pytest.raises(DimensionTooSmall):
        lattice_energy(np.zeros((0, 3)))
    with pytest.raises(DimensionTooSmall):
        data_mechanics(np.zeros((1, 4)))


@settings(max_examples=40)
@given(small)
def test_geometry_invariants(x):
    geom = data_mechanics(x)
    assert all(b <= a for a, b in zip(geom.energy_trace, geom.energy_trace[1:]))
    assert geom.energy == pytest.approx(geom.energy_trace[-1])
    assert geom.energy <= lattice_energy(x)
    assert np.array_equal(geom.matrix, x[np.ix_(geom.row_order, geom.col_order)])
    assert geom.row_tree.is_contiguous(geom.row_order)
    assert geom.col_tree.is_contiguous(geom.col_order)
    assert geom.energy >= oracles.min_energy(x) - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_planted_blocks_reach_optimum(seed):
    x = planted(seed)
    geom = data_mechanics(x)
    # two distinct rows and two distinct columns: the unshuffled layout needs
    # one transition per axis, which is optimal
    unshuffled = np.block([
        [np.full((6, 4), 0), np.full((6, 7), 9)],
        [np.full((5, 4), 7), np.full((5, 7), 2)],
    ])
    assert geom.energy == lattice_energy(unshuffled) == 156
    blocks = block_partition(geom, 2, 2)
    assert len(blocks) == 4
    assert all(b.code_entropy == 0.0 for b in blocks)
    assert sorted(b.cells.size for b in blocks) == sorted([24, 42, 20, 35])


def test_rerun_is_idempotent():
    x = planted(11) + np.random.default_rng(0).integers(0, 2, (11, 11))
    first = data_mechanics(x)
    second = data_mechanics(first.matrix)
    assert second.energy <= first.energy
    again = data_mechanics(x)
    assert np.array_equal(again.row_order, first.row_order)
    assert np.array_equal(again.col_order, first.col_order)


def test_row_permutation_keeps_energy_on_planted_input():
    x = planted(3)
    perm = np.random.default_rng(9).permutation(x.shape[0])
    assert data_mechanics(x[perm]).energy == data_mechanics(x).energy


def test_order_leaves_minimizes_path_within_tree():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(6, 2))
    d = l1_distances(pts)
    tree = order_leaves(build_ultrametric_tree(d, scale_count=None), d)
    assert path_length(d, tree.order) <= path_length(d, build_ultrametric_tree(d, scale_count=None).order) + 1e-12


def test_conditioned_distances_without_tree_are_l1():
    x = np.arange(12).reshape(3, 4) % 5
    assert np.allclose(conditioned_distances(x, None), l1_distances(x))


def test_block_partition_tiles_matrix():
    geom = data_mechanics(planted(2) + np.random.default_rng(2).integers(0, 3, (11, 11)))
    blocks = block_partition(geom, 2, 3)
    assert sum(b.cells.size for b in blocks) == geom.matrix.size
    assert sorted({r for b in blocks for r in b.rows}) == sorted(geom.row_ids)


def test_geometry_json_round_trip(tmp_path):
    x = planted(1)
    geom = data_mechanics(x, row_ids=[f"s{i}" for i in range(11)], col_ids=[f"f{j}" for j in range(11)])
    path = tmp_path / "geom.json"
    geom.to_json(path)
    back = CouplingGeometry.from_json(path)
    assert np.array_equal(back.matrix, geom.matrix)
    assert back.energy_trace == geom.energy_trace
    assert back.row_tree.leaves == geom.row_tree.leaves
    assert back.col_tree.leaves == geom.col_tree.leaves
    assert back.energy == geom.energy

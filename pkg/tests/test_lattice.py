import numpy as np
import pytest

from dartrhombus.lattice import (
    CELL_AREA, CELL_BONDS, E1, E1_STAR, E2, E2_STAR, OPPOSITE_DART, Activities, Bond, CellCoord,
    ScattererWeights, TileKind, VertexId, bond_of_tile, build_torus, parse_graph_dump,
    reciprocal_basis, scatterer_position, single_cell_graph, tile_of_bond,
)


def test_dual_basis():
    B = np.array([E1, E2])
    D = np.array([E1_STAR, E2_STAR])
    assert np.allclose(B @ D.T, np.eye(2))
    assert np.allclose(np.array(reciprocal_basis()), D)
    assert CELL_AREA == pytest.approx(abs(np.linalg.det(B)))


def test_bonds_and_tiles_are_a_bijection():
    tiles = [tile_of_bond(b) for b in CELL_BONDS]
    assert sorted(tiles) == list(TileKind)
    for t in TileKind:
        assert tile_of_bond(bond_of_tile(t)) is t


def test_unit_bonds_are_the_rhombi():
    for b in CELL_BONDS:
        assert (b.weight_label == "unit") == b.tile.is_rhombus


def test_opposite_darts_share_activity():
    for a, b in OPPOSITE_DART.items():
        assert bond_of_tile(a).weight_label == bond_of_tile(b).weight_label


@pytest.mark.parametrize("m,n", [(2, 2), (3, 4), (5, 3)])
def test_torus_is_cubic(m, n):
    g = build_torus(m, n)
    assert g.num_vertices == 6 * m * n
    assert g.num_edges == 9 * m * n
    assert np.all(g.degrees() == 3)
    nbr, eid = g.neighbor_tables()
    # no multi-edges for m, n >= 2
    assert all(len(set(row)) == 3 for row in nbr)


def test_small_torus_rejected():
    with pytest.raises(ValueError):
        build_torus(1, 3)


def test_single_cell_graph_has_nine_edges():
    g = single_cell_graph()
    assert g.num_vertices == 6 and g.num_edges == 9


def test_kasteleyn_matrix_antisymmetric():
    g = build_torus(2, 3)
    A = g.kasteleyn_matrix((1.2, 0.7, 1.9), twist=(1, 0))
    assert np.allclose(A, -A.T)
    assert np.count_nonzero(A) == 2 * g.num_edges


def test_twist_flips_only_seam_bonds():
    g = build_torus(3, 3)
    z = (1.1, 1.2, 1.3)
    diff = g.kasteleyn_matrix(z) - g.kasteleyn_matrix(z, twist=(0, 1))
    flipped = np.flatnonzero(diff[g.u, g.v])
    assert set(flipped) == set(np.flatnonzero(g.wraps_y))


def test_dump_round_trip():
    g = build_torus(2, 2)
    rows = parse_graph_dump(g.dump())
    assert len(rows) == g.num_edges
    cx, cy, s1, s2, dx, dy, label, sign, tile = rows[7]
    assert (s1, s2, dx, sign, tile) == (1, 5, -1, -1, TileKind.RHO2)


def test_activity_validation():
    with pytest.raises(ValueError):
        Activities(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        Activities(1.0, float("nan"), 1.0)
    assert Activities.of((1, 2, 3)).weight("z2") == 2.0


def test_vertex_site_range():
    with pytest.raises(ValueError):
        VertexId(CellCoord(0, 0), 7)


def test_bond_endpoints_follow_offset():
    b = Bond(CellCoord(2, 1), CELL_BONDS[8])
    u, v = b.endpoints
    assert (u.cell, u.site) == (CellCoord(2, 1), 2)
    assert (v.cell, v.site) == (CellCoord(2, 0), 6)


def test_scatterer_positions_on_grid_and_distinct():
    pts = np.array([scatterer_position(t, (0, 0)) for t in TileKind])
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    assert d[np.triu_indices(9, 1)].min() == pytest.approx(0.5)
    shifted = scatterer_position(TileKind.SIGMA2, (1, -1))
    assert np.allclose(shifted - scatterer_position(TileKind.SIGMA2, (0, 0)), E1 - E2)


def test_scatterer_weights_pairing():
    h = ScattererWeights.of([1, 2, 3, 4, 5, 6])
    per = h.per_tile()
    for a, b in OPPOSITE_DART.items():
        assert per[a] == per[b]
    with pytest.raises(ValueError):
        ScattererWeights.of([1, 2])

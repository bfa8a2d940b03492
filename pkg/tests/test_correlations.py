import csv
import io
import math

import numpy as np
import pytest

from dartrhombus.correlations import (
    TileDensities, autocorrelation_coefficient, bond_probabilities, correlation_table, kagome_frac,
    pair_probability, shares_vertex, tile_densities, write_correlation_csv,
)
from dartrhombus.lattice import CELL_BONDS, E1, E2, Bond, CellCoord, ScattererWeights, TileKind
from dartrhombus.spectral import CriticalActivityError, predict_decay_rates

from conftest import random_generic_z


def test_max_entropy_bond_probabilities():
    p = bond_probabilities((1, 1, 1))
    for b, v in zip(CELL_BONDS, p):
        assert v == pytest.approx(0.5 if b.weight_label == "unit" else 0.25, abs=1e-12)


def test_max_entropy_tile_densities():
    d = tile_densities((1, 1, 1))
    assert np.allclose(d.rho, 1 / 6, atol=1e-8)
    assert np.allclose(d.sigma, 1 / 12, atol=1e-8)
    assert d.rhombus_fraction == pytest.approx(0.5)
    assert d.dart_fraction == pytest.approx(0.5)


def test_three_dimers_per_cell(rng):
    for z in random_generic_z(rng, 5):
        assert bond_probabilities(z).sum() == pytest.approx(3.0, abs=1e-10)


def test_density_constraints_random(rng):
    for z in random_generic_z(rng, 20):
        d = tile_densities(z, check=False)
        assert max(d.violations().values()) <= 1e-8


def test_opposite_darts_equal_but_pairs_differ():
    d = tile_densities((1.1, 1, 1))
    assert d.sigma[0] == pytest.approx(d.sigma[4], abs=1e-8)
    assert abs(d.sigma[0] - d.sigma[1]) > 1e-3


def test_tile_densities_reject_critical():
    with pytest.raises(CriticalActivityError):
        tile_densities((math.sqrt(3), 1, 1))


def test_invalid_densities_detected():
    bad = TileDensities((0.2, 0.2, 0.2), (0.1, 0.05, 0.05, 0.05, 0.1, 0.05))
    with pytest.raises(ValueError):
        bad.check()


def test_shared_vertex_pairs_vanish(rng):
    for z in random_generic_z(rng, 4):
        for a in CELL_BONDS:
            for b in CELL_BONDS:
                for off in [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)]:
                    if shares_vertex(a, b, off) and not (a.index == b.index and off == (0, 0)):
                        assert abs(pair_probability(z, a, b, off).value) <= 1e-12


def test_coincident_bond_returns_single_probability():
    z = (1.2, 1, 1)
    b = CELL_BONDS[4]
    assert pair_probability(z, b, b, (0, 0)).value == pytest.approx(bond_probabilities(z)[4])


def test_pair_symmetry():
    z = (1.3, 0.8, 1.0)
    for a, b, off in [(0, 5, (1, 2)), (3, 8, (-2, 1)), (7, 7, (0, 3))]:
        ab = pair_probability(z, CELL_BONDS[a], CELL_BONDS[b], off).value
        ba = pair_probability(z, CELL_BONDS[b], CELL_BONDS[a], (-off[0], -off[1])).value
        assert ab == pytest.approx(ba, abs=1e-13)
        assert 0 <= ab <= 1


def test_pair_clusters_at_large_distance():
    z = (1.2, 1, 1)
    t1 = predict_decay_rates(z).t1
    for a in (0, 3, 7):
        for b in (2, 8):
            r = pair_probability(z, CELL_BONDS[a], CELL_BONDS[b], (8, 0))
            assert abs(r.fluctuation) <= 10 * math.exp(-8 * t1)


def test_pair_accepts_bond_objects():
    a = Bond(CellCoord(0, 0), CELL_BONDS[3])
    assert pair_probability((1, 1, 1), a, CELL_BONDS[3], CellCoord(2, 0)).fluctuation == pytest.approx(0, abs=1e-14)


def test_autocorrelation_origin_is_scatterer_density():
    v = autocorrelation_coefficient((1.3, 0.8, 1.0), ScattererWeights.uniform(), (0.0, 0.0))
    assert v.value == pytest.approx(2 / math.sqrt(3), abs=1e-12)


def test_autocorrelation_hermitian():
    h = ScattererWeights((1, 0.5j, 2), (1 - 1j, 0.3, 1))
    z = (1.2, 0.9, 1.0)
    for frac in [(1, 2), (3, -1), (-4, 6)]:
        try:
            a = autocorrelation_coefficient(z, h, None, frac=frac).value
        except ValueError:
            continue
        b = autocorrelation_coefficient(z, h, None, frac=(-frac[0], -frac[1])).value
        assert a == pytest.approx(np.conj(b), abs=1e-13)


def test_autocorrelation_far_away_is_product_at_symmetric_point():
    h = ScattererWeights.uniform()
    delta = (10 * E1 + 7 * E2) + (np.array(TileKind.SIGMA2.position) - TileKind.RHO1.position)
    v = autocorrelation_coefficient((1, 1, 1), h, delta, quad_order=64).value
    # all nine tile densities pair with every other: (1/A) sum_ab d_a d_b * 9 restricted to pairs at delta
    frac = kagome_frac(delta)
    from dartrhombus.correlations import _pair_offsets
    d = tile_densities((1, 1, 1)).vector() * 3
    expect = sum(d[a] * d[b] for a, b, _, _ in _pair_offsets(frac)) / (1.5 * math.sqrt(3))
    assert v == pytest.approx(expect, abs=1e-13)


def test_off_grid_delta_rejected():
    with pytest.raises(ValueError):
        kagome_frac((0.1234, 0.0))


def test_correlation_csv_round_trip():
    rows = correlation_table((1.2, 1, 1), cutoff=1)
    buf = io.StringIO()
    write_correlation_csv(rows, buf)
    back = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert len(back) == len(rows) == 9 * 81
    assert float(back[5]["P_joint"]) == rows[5]["P_joint"]

import json
import math
from pathlib import Path

import numpy as np
import pytest

from dartrhombus.correlations import bond_probabilities
from dartrhombus.lattice import build_torus, single_cell_graph
from dartrhombus.oracle import (
    PFAFFIAN_SIGNS, EdgeGraph, SizeBoundError, enumerate_matchings, finite_torus_Z, fixture,
    log_finite_torus_Z, pfaffian, read_fixture, write_fixture,
)
from dartrhombus.spectral import predict_decay_rates

FIXTURES = Path(__file__).parent / "fixtures"


def test_single_cell_four_matchings():
    z = (1.1, 1.2, 1.3)
    r = enumerate_matchings(single_cell_graph(), z, keep_matchings=True)
    assert r.count == 4
    assert r.Z == pytest.approx(1 + 1.1 ** 2 + 1.2 ** 2 + 1.3 ** 2)
    # edge indices follow the cell-bond order (1,2) (1,3) (2,3) (3,4) (4,5) (4,6) (5,6) (1,5) (2,6)
    assert sorted(map(sorted, r.matchings)) == [[0, 3, 6], [1, 4, 8], [2, 5, 7], [3, 7, 8]]


def test_odd_subgraph_has_no_matching():
    g = EdgeGraph.from_torus(build_torus(2, 2)).induced(range(7))
    r = enumerate_matchings(g, (1, 1, 1))
    assert (r.Z, r.count) == (0.0, 0)


def test_size_bound():
    with pytest.raises(SizeBoundError):
        enumerate_matchings(build_torus(3, 4), (1, 1, 1))


def test_two_by_two_symmetric_point_fixture():
    fx = read_fixture(FIXTURES / "torus_2x2_symmetric.json")
    r = enumerate_matchings(build_torus(2, 2), (1, 1, 1))
    assert r.count == fx["count"] == 32
    assert r.Z == fx["Z"] == r.count
    assert finite_torus_Z(2, 2, (1, 1, 1)) == pytest.approx(r.Z, rel=1e-9)


def test_three_by_three_fixture():
    fx = read_fixture(FIXTURES / "torus_3x3_asym.json")
    r = enumerate_matchings(build_torus(3, 3), fx["z"])
    assert r.Z == pytest.approx(fx["Z"], rel=1e-12)
    assert np.allclose(r.bond_marginals, fx["marginals"], atol=1e-12)
    assert finite_torus_Z(3, 3, fx["z"]) == pytest.approx(r.Z, rel=1e-9)


@pytest.mark.parametrize("m,n", [(2, 3), (3, 2), (2, 4), (4, 2)])
def test_pfaffian_signs_hold_beyond_calibration(m, n):
    z = (0.8, 1.4, 1.1)
    assert finite_torus_Z(m, n, z) == pytest.approx(enumerate_matchings(build_torus(m, n), z).Z, rel=1e-9)


def test_symmetric_point_counts_power_of_two():
    for m, n in [(3, 4), (4, 4), (5, 6)]:
        assert log_finite_torus_Z(m, n, (1, 1, 1)) == pytest.approx((m * n + 1) * math.log(2), rel=1e-12)


def test_free_energy_limit_monotone():
    gaps = [abs(log_finite_torus_Z(L, L, (1, 1, 1)) / L ** 2 - math.log(2)) for L in (4, 8, 16)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_sign_table_shape():
    for signs in PFAFFIAN_SIGNS.values():
        assert sorted(signs) == [-1, 1, 1, 1]


def test_pfaffian_squares_to_determinant(rng):
    for n in (2, 6, 10):
        A = rng.normal(size=(n, n))
        A = A - A.T
        assert pfaffian(A) ** 2 == pytest.approx(np.linalg.det(A), rel=1e-9)
    assert pfaffian(np.array([[0.0, 2.5], [-2.5, 0.0]])) == 2.5


@pytest.mark.parametrize("m,n", [(2, 2), (3, 3)])
def test_derivative_identity(m, n):
    z = np.array([1.3, 0.8, 1.0])
    g = build_torus(m, n)
    r = enumerate_matchings(g, z)
    for i in range(3):
        h = 1e-6 * z[i]
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        d = (math.log(enumerate_matchings(g, zp).Z) - math.log(enumerate_matchings(g, zm).Z)) / (2 * h)
        assert z[i] * d == pytest.approx(r.bond_marginals[g.label == i + 1].sum(), abs=1e-6)


def test_pair_marginal_identities():
    g = build_torus(2, 2)
    r = enumerate_matchings(g, (1.3, 0.8, 1.0))
    P = r.pair_marginals
    assert np.allclose(np.diag(P), r.bond_marginals)
    off = P.sum(axis=1) - np.diag(P)
    assert np.allclose(off, (3 * 4 - 1) * r.bond_marginals)
    assert np.all(P <= np.minimum.outer(r.bond_marginals, r.bond_marginals) + 1e-15)


def test_enumeration_near_infinite_volume():
    z = (1.3, 0.8, 1.0)
    r = enumerate_matchings(build_torus(3, 3), z)
    t = min(predict_decay_rates(z).t1, predict_decay_rates(z).t2)
    bound = max(0.01, 10 * math.exp(-3 * t))
    assert np.abs(r.bond_marginals.reshape(9, 9) - bond_probabilities(z)).max() < bound


def test_fixture_write_read(tmp_path):
    fx = fixture(2, 2, (1.1, 0.9, 1.0))
    write_fixture(fx, tmp_path / "f.json")
    assert read_fixture(tmp_path / "f.json") == json.loads(json.dumps(fx))

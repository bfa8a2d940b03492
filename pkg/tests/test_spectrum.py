import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dartrhombus.correlations import TileDensities, tile_densities
from dartrhombus.lattice import CELL_AREA, E1_STAR, E2_STAR, ScattererWeights
from dartrhombus.spectral import CriticalActivityError
from dartrhombus.spectrum import (
    bragg_intensity, bragg_peaks, diffuse_grid, diffuse_intensity, read_peaks_csv,
    structure_factor_bragg, write_diffuse_csv, write_peaks_csv,
)

ONE = ScattererWeights.uniform()


@st.composite
def valid_densities(draw):
    s = [draw(st.floats(0, 1 / 9)) for _ in range(3)]
    c = 1 / 3 - sum(s)
    return TileDensities(tuple(x + c for x in s), (s[0], s[1], s[2], s[2], s[0], s[1]))


@settings(max_examples=200, deadline=None)
@given(valid_densities())
def test_central_peak_is_four_thirds(d):
    assert max(d.violations().values()) < 1e-12
    assert bragg_intensity(0, 0, d, ONE) == pytest.approx(4 / 3, abs=1e-12)


def test_max_entropy_weak_peak():
    assert bragg_intensity(1, 1, TileDensities.maximum_entropy(), ONE) == pytest.approx(1 / 108, abs=1e-15)


def test_zero_strengths_give_no_peaks():
    zero = ScattererWeights.uniform(0)
    assert all(p.intensity == 0 for p in bragg_peaks(3, 3, TileDensities.maximum_entropy(), zero))


@settings(max_examples=50, deadline=None)
@given(valid_densities(), st.lists(st.complex_numbers(max_magnitude=3, allow_nan=False), min_size=6, max_size=6),
       st.integers(-7, 7), st.integers(-7, 7))
def test_formula_matches_structure_factor(d, h, k, l):
    h = ScattererWeights.of(h)
    assert bragg_intensity(k, l, d, h) == pytest.approx(structure_factor_bragg(k, l, d, h), rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(valid_densities(), st.integers(-20, 20), st.integers(-20, 20))
def test_coefficient_periodicity(d, k, l):
    h = ScattererWeights.of([1, 0.3, 2, 0.7, 1.5, 0.1])
    base = bragg_intensity(k, l, d, h)
    assert bragg_intensity(k + 6, l + 6, d, h) == pytest.approx(base)
    assert bragg_intensity(k + 2, l + 4, d, h) == pytest.approx(base)


def test_peak_positions():
    peaks = {(p.k, p.l): p for p in bragg_peaks(1, 1, TileDensities.maximum_entropy(), ONE)}
    assert len(peaks) == 9
    assert np.allclose(peaks[(0, 0)].position, 0)
    assert np.allclose(peaks[(1, 0)].position, (1 / math.sqrt(3), -1 / 3))
    assert np.allclose(peaks[(0, 1)].position, (0, 2 / 3))
    with pytest.raises(ValueError):
        bragg_peaks(-1, 0, TileDensities.maximum_entropy(), ONE)


def test_peak_csv_round_trip():
    peaks = bragg_peaks(2, 2, tile_densities((1.2, 1, 1)), ONE)
    buf = io.StringIO()
    write_peaks_csv(peaks, buf)
    back = read_peaks_csv(io.StringIO(buf.getvalue()))
    assert [(p.k, p.l, p.intensity) for p in back] == [(p.k, p.l, p.intensity) for p in peaks]


# ---------------------------------------------------------------- diffuse

def _qs(rng, n):
    return rng.uniform(-2, 2, size=(n, 2))


def test_symmetric_point_is_trigonometric_polynomial(rng):
    q = _qs(rng, 10)
    a = np.array([s.intensity for s in diffuse_intensity((1, 1, 1), ONE, q, cutoff=1)])
    b = np.array([s.intensity for s in diffuse_intensity((1, 1, 1), ONE, q, cutoff=5)])
    assert np.allclose(a, b, atol=1e-13)


def test_q_zero_regression():
    # brute-force sum of all nonzero fluctuation terms gives 27/64 per cell
    h = ScattererWeights.of([1, 0.5, 0, 0.25, 0, 0])
    v = diffuse_intensity((1, 1, 1), h, (0.0, 0.0), cutoff=3).intensity
    assert v == pytest.approx(27 / 64 / CELL_AREA, abs=1e-13)


def test_uniform_strengths_vanish_at_q_zero():
    v = diffuse_intensity((1.2, 1, 1), ONE, (0.0, 0.0), cutoff=10, quad_order=128)
    assert abs(v.intensity) <= v.error_bound + 1e-12


def test_inversion_symmetry(rng):
    q = _qs(rng, 8)
    a = diffuse_intensity((1.3, 0.8, 1.0), ONE, q)
    b = diffuse_intensity((1.3, 0.8, 1.0), ONE, -q)
    assert np.allclose([s.intensity for s in a], [s.intensity for s in b], atol=1e-13)


def test_nonnegative_up_to_error_bound():
    k = np.linspace(0, 1, 41)
    k1, k2 = np.meshgrid(k, k)
    q = np.outer(k1.ravel(), E1_STAR) + np.outer(k2.ravel(), E2_STAR)
    for s in diffuse_intensity((1.2, 1, 1), ScattererWeights.of([1, 2, 0.5, 1, 0.3, 1]), q):
        assert s.intensity >= -s.error_bound


def test_cutoff_doubling_within_error_bound(rng):
    z = (1.3, 0.8, 1.0)
    q = _qs(rng, 20)
    a = diffuse_intensity(z, ONE, q, cutoff=6, quad_order=128)
    b = diffuse_intensity(z, ONE, q, cutoff=12, quad_order=128)
    for sa, sb in zip(a, b):
        assert abs(sa.intensity - sb.intensity) <= sa.error_bound


def test_continuity_proxy():
    z = (1.2, 1, 1)
    t = np.linspace(0, 1, 401)
    q = np.outer(t, E1_STAR + 0.37 * E2_STAR)
    v = np.array([s.intensity for s in diffuse_intensity(z, ONE, q)])
    fine = np.abs(np.diff(v)).max()
    coarse = np.abs(np.diff(v[::4])).max()
    # refining by 4 shrinks the largest step roughly by 4, as for a smooth function
    assert fine < 0.4 * coarse


def test_early_termination():
    s = diffuse_intensity((1.2, 1, 1), ONE, (0.3, 0.1), cutoff=12, quad_order=128, target=1e-3)
    assert s.truncation_radius < 12
    full = diffuse_intensity((1.2, 1, 1), ONE, (0.3, 0.1), cutoff=12, quad_order=128)
    assert abs(s.intensity - full.intensity) <= s.error_bound


def test_diffuse_rejects_critical():
    with pytest.raises(CriticalActivityError):
        diffuse_intensity((math.sqrt(3), 1, 1), ONE, (0.1, 0.1))
    with pytest.raises(ValueError):
        diffuse_intensity((1, 1, 1), ONE, (0.1, 0.1), cutoff=0)


def test_grid_matches_pointwise():
    z, m = (1.2, 1, 1), 20
    g = diffuse_grid(z, ONE, m, m, cutoff=8)
    for k1, k2 in [(1, 2), (5, 7), (13, 3), (200, 100)]:
        q = (k1 / m) * E1_STAR + (k2 / m) * E2_STAR
        assert g[k1, k2] == pytest.approx(diffuse_intensity(z, ONE, q, cutoff=8).intensity, abs=1e-12)


def test_diffuse_csv_columns():
    buf = io.StringIO()
    write_diffuse_csv(diffuse_intensity((1, 1, 1), ONE, np.zeros((2, 2))), buf)
    assert buf.getvalue().splitlines()[0] == "qx,qy,intensity,error_bound"

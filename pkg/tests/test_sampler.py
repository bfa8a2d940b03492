import numpy as np
import pytest
from scipy import stats

from dartrhombus.lattice import CellCoord, TileKind, build_torus
from dartrhombus.oracle import enumerate_matchings
from dartrhombus.sampler import (
    DimerConfiguration, SamplerConfig, SamplerError, Tiling, WormSampler, crystal_configuration,
    empirical_densities, parse_configuration, sample, sample_statistics, to_tiling,
    worm_transition_matrix,
)


def test_sample_is_perfect_matching():
    c = sample((1.3, 0.8, 1.0), 4, 3, SamplerConfig(steps=5, burn_in=2, seed=3))
    c.validate()
    assert c.occupied.sum() == 36


def test_seed_determinism():
    cfg = SamplerConfig(steps=3, burn_in=1, seed=11)
    a = sample((1, 1, 1), 4, 4, cfg)
    b = sample((1, 1, 1), 4, 4, cfg)
    c = sample((1, 1, 1), 4, 4, SamplerConfig(steps=3, burn_in=1, seed=12))
    assert np.array_equal(a.occupied, b.occupied)
    assert not np.array_equal(a.occupied, c.occupied)


def test_stream_determinism():
    def stream(seed):
        s = WormSampler((1.2, 1, 1), build_torus(3, 3), seed=seed)
        out = []
        for _ in range(5):
            s.sweep(1)
            out.append(s.configuration().occupied.copy())
        return np.array(out)
    assert np.array_equal(stream(5), stream(5))


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(steps=-1)
    with pytest.raises(ValueError):
        SamplerConfig(algorithm="flip")
    with pytest.raises(ValueError):
        sample((1, 1, 1), 1, 4)


def test_step_budget_guard():
    s = WormSampler((1, 1, 1), build_torus(6, 6), seed=0, max_worm_steps=1)
    with pytest.raises(SamplerError):
        s.sweep(1)


@pytest.mark.parametrize("z", [(1, 1, 1), (1.3, 0.8, 1.0), (0.5, 2.0, 1.2)])
def test_exact_kernel_is_gibbs_stationary(z):
    g = build_torus(2, 2)
    pms, T = worm_transition_matrix(g, z)
    assert np.allclose(T.sum(axis=1), 1, atol=1e-12)
    w = g.weights(z)
    pi = np.array([np.prod(w[list(m)]) for m in pms])
    pi /= pi.sum()
    assert 0.5 * np.abs(pi @ T - pi).sum() < 1e-10
    ev, vec = np.linalg.eig(T.T)
    v = np.real(vec[:, np.argmin(np.abs(ev - 1))])
    v /= v.sum()
    assert 0.5 * np.abs(v - pi).sum() < 1e-10


def test_sampled_matching_distribution_on_2x2():
    z = (1.3, 0.8, 1.0)
    g = build_torus(2, 2)
    ref = enumerate_matchings(g, z, keep_matchings=True)
    index = {tuple(sorted(m)): i for i, m in enumerate(ref.matchings)}
    w = g.weights(z)
    pi = np.array([np.prod(w[list(m)]) for m in ref.matchings]) / ref.Z
    s = WormSampler(z, g, seed=7)
    s.sweep(10)
    counts = np.zeros(len(pi))
    for _ in range(20000):
        s.sweep(1)
        counts[index[tuple(np.flatnonzero(s.configuration().occupied))]] += 1
    chi2 = stats.chisquare(counts, pi * counts.sum())
    assert chi2.pvalue > 1e-3


def test_symmetric_point_frequencies_3x3():
    st = sample_statistics((1, 1, 1), 3, 3, SamplerConfig(steps=20000, burn_in=100, seed=1))
    mean, err = st.cell_bond_mean()
    expect = np.array([0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5, 0.5])
    assert np.all(np.abs(mean - expect) < 3 * err + 1e-12)


def test_winding_sectors_change():
    s = WormSampler((1, 1, 1), build_torus(4, 4), seed=2)
    seen = set()
    for _ in range(200):
        s.sweep(1)
        seen.add(s.configuration().winding_sector())
    assert len(seen) >= 2


def test_crystal_tiling_is_all_rhombi():
    t = to_tiling(crystal_configuration(build_torus(3, 4)))
    assert len(t.tiles) == 36
    d = empirical_densities(t)
    assert sum(d.rho) == 1 and sum(d.sigma) == 0
    assert np.allclose(d.rho, 1 / 3)


def test_dart_pair_crystal():
    t = to_tiling(crystal_configuration(build_torus(2, 2), bonds=(0, 3, 6)))
    kinds = {k for k, _ in t.tiles}
    assert kinds == {TileKind.RHO1, TileKind.SIGMA1, TileKind.SIGMA5}
    d = empirical_densities(t)
    assert d.rho[0] == d.sigma[0] == d.sigma[4] == pytest.approx(1 / 3)


def test_constraints_hold_per_configuration():
    for seed in range(5):
        c = sample((1.4, 0.7, 1.1), 5, 4, SamplerConfig(steps=2, burn_in=1, seed=seed))
        d = empirical_densities(to_tiling(c))
        v = d.violations()
        assert v["normalization"] < 1e-15
        assert v["opposite_darts"] < 1e-15
        assert v["rhombus_alternation"] < 1e-15
        assert len(to_tiling(c).tiles) == 60


def test_tiling_and_configuration_dumps_round_trip():
    g = build_torus(3, 2)
    c = sample((1, 1, 1), 3, 2, SamplerConfig(steps=2, burn_in=0, seed=4))
    assert np.array_equal(parse_configuration(c.dump(), g).occupied, c.occupied)
    t = to_tiling(c)
    back = Tiling.parse(t.dump(), 3, 2)
    assert back.tiles == t.tiles


def test_invalid_configuration_detected():
    g = build_torus(2, 2)
    occ = np.zeros(g.num_edges, dtype=bool)
    occ[:12] = True
    with pytest.raises(ValueError):
        DimerConfiguration(g, occ).validate()

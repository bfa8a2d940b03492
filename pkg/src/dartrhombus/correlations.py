"""Bond and tile densities, joint bond-occupation probabilities, autocorrelation.

Occupation probabilities follow from the inverse Kasteleyn matrix:
``P(k k') = A[k, k'] Ainv[k', k]`` for a single bond and

    P(a, b) = P(a) P(b) - A_a A_b (Ainv[k_a, k_b] Ainv[k'_a, k'_b]
                                   - Ainv[k_a, k'_b] Ainv[k'_a, k_b])

for two distinct bonds.  Inverse entries come from
:class:`~dartrhombus.spectral.CouplingTable`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .lattice import (
    CELL_AREA,
    CELL_BONDS,
    SUBDIV,
    Activities,
    Bond,
    CellBond,
    CellCoord,
    E1,
    E2,
    ScattererWeights,
    TileKind,
    bond_of_tile,
)
from .spectral import DEFAULT_QUAD_ORDER, CouplingTable, coupling_table

DENSITY_TOL = 1e-8

_S1 = np.array([b.site1 - 1 for b in CELL_BONDS])
_S2 = np.array([b.site2 - 1 for b in CELL_BONDS])
_DX = np.array([b.dx for b in CELL_BONDS])
_DY = np.array([b.dy for b in CELL_BONDS])
# bond ids ordered by tile kind
_BOND_BY_TILE = np.array([bond_of_tile(t).index for t in TileKind])


@dataclass(frozen=True)
class TileDensities:
    """Tile-number fractions; ``rho`` for rhombi, ``sigma`` for darts."""

    rho: tuple[float, float, float]
    sigma: tuple[float, float, float, float, float, float]

    @classmethod
    def from_vector(cls, v) -> "TileDensities":
        v = [float(t) for t in v]
        return cls(tuple(v[:3]), tuple(v[3:]))

    @classmethod
    def maximum_entropy(cls) -> "TileDensities":
        return cls((1 / 6,) * 3, (1 / 12,) * 6)

    def vector(self) -> np.ndarray:
        """Nine densities in TileKind order."""
        return np.array(self.rho + self.sigma)

    def violations(self) -> dict[str, float]:
        r, s = self.rho, self.sigma
        eq2 = [r[i] - s[i] for i in range(3)]
        return {
            "opposite_darts": max(abs(s[0] - s[4]), abs(s[1] - s[5]), abs(s[2] - s[3])),
            "rhombus_alternation": max(eq2) - min(eq2),
            "normalization": abs(sum(r) + sum(s) - 1.0),
            "min_rhombus": max(0.0, 1 / 3 - sum(r)),
        }

    def check(self, tol: float = DENSITY_TOL) -> None:
        bad = {k: v for k, v in self.violations().items() if v > tol}
        if bad:
            raise ValueError(f"tile densities violate constraints: {bad}")

    @property
    def rhombus_fraction(self) -> float:
        return sum(self.rho)

    @property
    def dart_fraction(self) -> float:
        return sum(self.sigma)


# ------------------------------------------------------------- single bonds

def _table(z, quad_order) -> CouplingTable:
    return coupling_table(z, quad_order)


def _bond_weights(z: Activities) -> np.ndarray:
    return np.array([b.sign * z.weight(b.weight_label) for b in CELL_BONDS])


def bond_probabilities(z, quad_order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    """Occupation probabilities of the nine cell bonds, in CELL_BONDS order."""
    z = Activities.of(z)
    tab = _table(z, quad_order)
    out = np.empty(9)
    for k, b in enumerate(CELL_BONDS):
        inv = tab.block(-b.dx, -b.dy)[b.site2 - 1, b.site1 - 1]
        out[k] = b.sign * z.weight(b.weight_label) * inv
    return out


def bond_probability(z, bond: CellBond | Bond, quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    cb = bond.cell_bond if isinstance(bond, Bond) else bond
    return float(bond_probabilities(z, quad_order)[cb.index])


def tile_densities(z, quad_order: int = DEFAULT_QUAD_ORDER, check: bool = True) -> TileDensities:
    p = bond_probabilities(z, quad_order)
    dens = TileDensities.from_vector(p[_BOND_BY_TILE] / 3.0)
    if check:
        dens.check()
    return dens


# ------------------------------------------------------------- bond pairs

@dataclass(frozen=True)
class PairProbability:
    bond_a: CellBond
    bond_b: CellBond
    offset: CellCoord
    value: float
    product: float

    @property
    def fluctuation(self) -> float:
        return self.value - self.product


def _shares_vertex(a: CellBond, b: CellBond, off: tuple[int, int]) -> bool:
    ends_a = {(a.site1, 0, 0), (a.site2, a.dx, a.dy)}
    ends_b = {(b.site1, off[0], off[1]), (b.site2, off[0] + b.dx, off[1] + b.dy)}
    return bool(ends_a & ends_b)


def pair_fluctuations(tab: CouplingTable, z: Activities, dx, dy) -> np.ndarray:
    """``P_joint - P_a P_b`` for all 9x9 bond pairs at cell offsets (dx, dy).

    ``dx``, ``dy`` are integer arrays of equal shape S; the result has shape
    ``S + (9, 9)``.  Coincident bonds (offset 0, a == b) get ``P - P^2``.
    """
    dx = np.asarray(dx, dtype=np.int64)[..., None, None]
    dy = np.asarray(dy, dtype=np.int64)[..., None, None]
    n = tab.quad_order
    lim = tab.max_offset
    if np.abs(dx).max(initial=0) + 1 > lim or np.abs(dy).max(initial=0) + 1 > lim:
        raise ValueError(f"offsets exceed the coupling range {lim}; raise quad_order")
    V = tab.values
    s1a, s2a = _S1[:, None], _S2[:, None]
    s1b, s2b = _S1[None, :], _S2[None, :]
    dxa, dya = _DX[:, None], _DY[:, None]
    dxb, dyb = _DX[None, :], _DY[None, :]

    def inv(ox, oy, p, q):
        return V[ox % n, oy % n, p, q]

    ik = inv(dx, dy, s1a, s1b)
    jl = inv(dx + dxb - dxa, dy + dyb - dya, s2a, s2b)
    il = inv(dx + dxb, dy + dyb, s1a, s2b)
    jk = inv(dx - dxa, dy - dya, s2a, s1b)
    w = _bond_weights(z)
    fl = -(w[:, None] * w[None, :]) * (ik * jl - il * jk)
    p = np.array([w[k] * V[(-_DX[k]) % n, (-_DY[k]) % n, _S2[k], _S1[k]] for k in range(9)])
    at_origin = (dx[..., 0, 0] == 0) & (dy[..., 0, 0] == 0)
    if np.any(at_origin):
        diag = np.diag(p - p * p)
        fl[at_origin] = np.where(np.eye(9, dtype=bool), diag, fl[at_origin])
    return fl


def pair_probability(z, bond_a: CellBond | Bond, bond_b: CellBond | Bond,
                     offset: CellCoord | tuple[int, int] = (0, 0),
                     quad_order: int = DEFAULT_QUAD_ORDER) -> PairProbability:
    """Joint occupation of ``bond_a`` in cell 0 and ``bond_b`` in cell ``offset``."""
    z = Activities.of(z)
    a = bond_a.cell_bond if isinstance(bond_a, Bond) else bond_a
    b = bond_b.cell_bond if isinstance(bond_b, Bond) else bond_b
    off = (offset.x, offset.y) if isinstance(offset, CellCoord) else tuple(offset)
    tab = _table(z, quad_order)
    p = bond_probabilities(z, quad_order)
    prod = float(p[a.index] * p[b.index])
    if off == (0, 0) and a.index == b.index:
        return PairProbability(a, b, CellCoord(*off), float(p[a.index]), prod)
    fl = pair_fluctuations(tab, z, off[0], off[1])[a.index, b.index]
    return PairProbability(a, b, CellCoord(*off), prod + float(fl), prod)


def shares_vertex(bond_a: CellBond, bond_b: CellBond, offset=(0, 0)) -> bool:
    return _shares_vertex(bond_a, bond_b, tuple(offset))


# ------------------------------------------------------------- autocorrelation

@dataclass(frozen=True)
class AutocorrCoefficient:
    difference_vector: np.ndarray
    frac: tuple[int, int]      # in units of 1/6 of the cell basis
    value: complex


def kagome_frac(delta) -> tuple[int, int]:
    """Cartesian vector -> exact sixths of the cell basis; raises off the grid."""
    delta = np.asarray(delta, dtype=float)
    basis = np.column_stack([E1, E2])
    u = np.linalg.solve(basis, delta) * SUBDIV
    r = np.rint(u)
    if np.abs(u - r).max() > 1e-8:
        raise ValueError(f"{delta} is not on the scatterer grid")
    return int(r[0]), int(r[1])


def _tile_frac() -> np.ndarray:
    return np.array([t.frac for t in TileKind])


def _pair_offsets(frac: tuple[int, int]):
    """(tile_from, tile_to, cell offset) with p_to - p_from + offset == delta."""
    f = _tile_frac()
    out = []
    for a in TileKind:
        for b in TileKind:
            dx, dy = frac[0] - (f[b][0] - f[a][0]), frac[1] - (f[b][1] - f[a][1])
            if dx % SUBDIV == 0 and dy % SUBDIV == 0:
                out.append((a, b, dx // SUBDIV, dy // SUBDIV))
    return out


def autocorrelation_coefficient(z, h: ScattererWeights, delta, quad_order: int = DEFAULT_QUAD_ORDER,
                                frac: tuple[int, int] | None = None) -> AutocorrCoefficient:
    """Ensemble autocorrelation coefficient ``nu(delta)``.

    ``nu(delta) = (1/A_cell) sum conj(h_from) h_to P(from @ 0, to @ r)`` over
    tile pairs whose scatterers are separated by ``delta``.  Pass ``frac``
    (sixths of the cell basis) to bypass the Cartesian decomposition.
    """
    z = Activities.of(z)
    h9 = ScattererWeights.of(h).per_tile()
    if frac is None:
        frac = kagome_frac(delta)
    pairs = _pair_offsets(frac)
    if not pairs:
        raise ValueError(f"difference vector {frac} (sixths) is not a scatterer difference")
    tab = _table(z, quad_order)
    p = bond_probabilities(z, quad_order)
    dx = np.array([t[2] for t in pairs])
    dy = np.array([t[3] for t in pairs])
    fl = pair_fluctuations(tab, z, dx, dy)
    total = 0j
    for k, (a, b, _, _) in enumerate(pairs):
        ba, bb = _BOND_BY_TILE[a], _BOND_BY_TILE[b]
        joint = p[ba] * p[bb] + fl[k, ba, bb]
        total += np.conj(h9[a]) * h9[b] * joint
    vec = (frac[0] * E1 + frac[1] * E2) / SUBDIV
    return AutocorrCoefficient(vec, tuple(frac), complex(total / CELL_AREA))


# ------------------------------------------------------------- export

def correlation_table(z, cutoff: int, quad_order: int = DEFAULT_QUAD_ORDER) -> list[dict]:
    """Rows ``(x, y, p1, p2, P_joint, P_product)`` for bond pairs (tile labels p1, p2)."""
    z = Activities.of(z)
    tab = _table(z, quad_order)
    p = bond_probabilities(z, quad_order)
    xs, ys = np.meshgrid(np.arange(-cutoff, cutoff + 1), np.arange(-cutoff, cutoff + 1), indexing="ij")
    fl = pair_fluctuations(tab, z, xs, ys)
    rows = []
    for i, j in np.ndindex(xs.shape):
        for a in range(9):
            for b in range(9):
                prod = p[a] * p[b]
                rows.append({"x": int(xs[i, j]), "y": int(ys[i, j]),
                             "p1": CELL_BONDS[a].tile.label, "p2": CELL_BONDS[b].tile.label,
                             "P_joint": prod + fl[i, j, a, b], "P_product": prod})
    return rows


def write_correlation_csv(rows: list[dict], fh: io.TextIOBase) -> None:
    w = csv.writer(fh)
    w.writerow(["x", "y", "p1", "p2", "P_joint", "P_product"])
    for r in rows:
        w.writerow([r["x"], r["y"], r["p1"], r["p2"], f"{r['P_joint']:.17g}", f"{r['P_product']:.17g}"])

"""Fisher-lattice geometry for the dart-rhombus random tiling.

The elementary cell holds two triangles of sites, (1, 2, 3) and (4, 5, 6),
joined by the bridge bond (3, 4).  Site 1 links to site 5 of the cell at
-e1 and site 2 to site 6 of the cell at -e2.  Each of the nine bonds per
cell carries exactly one tile of the tiling: the three unit bonds are
rhombi, the six triangle edges are darts.

Positions are kept as integer multiples of 1/6 of the cell basis
(``e1 = (sqrt3, 0)``, ``e2 = (sqrt3/2, 3/2)``) so lattice membership tests
are exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

SQRT3 = math.sqrt(3.0)

E1 = np.array([SQRT3, 0.0])
E2 = np.array([SQRT3 / 2.0, 1.5])
E1_STAR = np.array([1.0 / SQRT3, -1.0 / 3.0])
E2_STAR = np.array([0.0, 2.0 / 3.0])

CELL_AREA = 1.5 * SQRT3
TILE_AREA = SQRT3 / 2.0
# three tiles (one scatterer each) per cell
SCATTERER_DENSITY = 3.0 / CELL_AREA

# positions are multiples of 1/SUBDIV of a cell edge
SUBDIV = 6

UNIT, Z1, Z2, Z3 = "unit", "z1", "z2", "z3"
WEIGHT_LABELS = (UNIT, Z1, Z2, Z3)


class TileKind(enum.IntEnum):
    RHO1 = 0
    RHO2 = 1
    RHO3 = 2
    SIGMA1 = 3
    SIGMA2 = 4
    SIGMA3 = 5
    SIGMA4 = 6
    SIGMA5 = 7
    SIGMA6 = 8

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def is_rhombus(self) -> bool:
        return self <= TileKind.RHO3

    @property
    def frac(self) -> tuple[int, int]:
        """Position in the cell basis, in units of 1/6."""
        return _TILE_FRAC[self]

    @property
    def position(self) -> np.ndarray:
        fx, fy = self.frac
        return (fx * E1 + fy * E2) / SUBDIV

    @property
    def area(self) -> float:
        return TILE_AREA

    @classmethod
    def from_label(cls, label: str) -> "TileKind":
        return cls[label.upper()]


# a = (1/6, 1/6), b = (1/3, -1/6) in the cell basis
_TILE_FRAC = {
    TileKind.RHO1: (3, 3),    # 3a
    TileKind.RHO2: (0, 3),    # 2a - b
    TileKind.RHO3: (3, 0),    # a + b
    TileKind.SIGMA1: (1, 1),  # a
    TileKind.SIGMA2: (4, 1),  # 2a + b
    TileKind.SIGMA3: (1, 4),  # 3a - b
    TileKind.SIGMA4: (5, 2),  # 3a + b
    TileKind.SIGMA5: (5, 5),  # 5a
    TileKind.SIGMA6: (2, 5),  # 4a - b
}

# opposite darts share a weight label and a scatterer strength
OPPOSITE_DART = {
    TileKind.SIGMA1: TileKind.SIGMA5,
    TileKind.SIGMA2: TileKind.SIGMA6,
    TileKind.SIGMA3: TileKind.SIGMA4,
}


@dataclass(frozen=True)
class Activities:
    """Bond weights z1, z2, z3; every other activity is fixed to 1."""

    z1: float
    z2: float
    z3: float

    def __post_init__(self):
        for name in ("z1", "z2", "z3"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0.0:
                raise ValueError(f"activity {name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, z) -> "Activities":
        if isinstance(z, Activities):
            return z
        z1, z2, z3 = z
        return cls(z1, z2, z3)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.z1, self.z2, self.z3)

    def weight(self, label: str) -> float:
        if label == UNIT:
            return 1.0
        return getattr(self, label)

    def __iter__(self) -> Iterator[float]:
        return iter(self.as_tuple())


@dataclass(frozen=True)
class CellCoord:
    x: int
    y: int

    def reduce(self, m: int, n: int) -> "CellCoord":
        return CellCoord(self.x % m, self.y % n)

    def __add__(self, other: "CellCoord") -> "CellCoord":
        return CellCoord(self.x + other.x, self.y + other.y)

    def __neg__(self) -> "CellCoord":
        return CellCoord(-self.x, -self.y)


@dataclass(frozen=True)
class VertexId:
    cell: CellCoord
    site: int

    def __post_init__(self):
        if not 1 <= self.site <= 6:
            raise ValueError(f"site must be in 1..6, got {self.site}")


@dataclass(frozen=True)
class CellBond:
    """One of the nine bonds of the elementary cell.

    The bond runs from ``site1`` in the owning cell to ``site2`` in the cell
    displaced by ``(dx, dy)``.  ``sign`` is the Kasteleyn orientation: the
    adjacency entry A[site1, site2] equals ``sign * weight``.
    """

    index: int
    site1: int
    site2: int
    dx: int
    dy: int
    weight_label: str
    sign: int
    tile: TileKind


# read off the nonzero upper-triangle pattern of the momentum-space matrix
CELL_BONDS: tuple[CellBond, ...] = (
    CellBond(0, 1, 2, 0, 0, Z1, +1, TileKind.SIGMA1),
    CellBond(1, 1, 3, 0, 0, Z3, +1, TileKind.SIGMA3),
    CellBond(2, 2, 3, 0, 0, Z2, +1, TileKind.SIGMA2),
    CellBond(3, 3, 4, 0, 0, UNIT, +1, TileKind.RHO1),
    CellBond(4, 4, 5, 0, 0, Z3, +1, TileKind.SIGMA4),
    CellBond(5, 4, 6, 0, 0, Z2, +1, TileKind.SIGMA6),
    CellBond(6, 5, 6, 0, 0, Z1, +1, TileKind.SIGMA5),
    CellBond(7, 1, 5, -1, 0, UNIT, -1, TileKind.RHO2),
    CellBond(8, 2, 6, 0, -1, UNIT, -1, TileKind.RHO3),
)

_BOND_OF_TILE = {b.tile: b for b in CELL_BONDS}


def tile_of_bond(bond: CellBond) -> TileKind:
    return bond.tile


def bond_of_tile(tile: TileKind) -> CellBond:
    return _BOND_OF_TILE[TileKind(tile)]


@dataclass(frozen=True)
class Bond:
    """A concrete bond of a torus, owned by ``cell``."""

    cell: CellCoord
    cell_bond: CellBond

    @property
    def endpoints(self) -> tuple[VertexId, VertexId]:
        cb = self.cell_bond
        return (VertexId(self.cell, cb.site1),
                VertexId(CellCoord(self.cell.x + cb.dx, self.cell.y + cb.dy), cb.site2))

    @property
    def tile(self) -> TileKind:
        return self.cell_bond.tile

    @property
    def weight_label(self) -> str:
        return self.cell_bond.weight_label

    @property
    def sign(self) -> int:
        return self.cell_bond.sign


def scatterer_position(tile: TileKind, cell: CellCoord | tuple[int, int]) -> np.ndarray:
    x, y = (cell.x, cell.y) if isinstance(cell, CellCoord) else cell
    return TileKind(tile).position + x * E1 + y * E2


def reciprocal_basis() -> tuple[np.ndarray, np.ndarray]:
    return E1_STAR.copy(), E2_STAR.copy()


@dataclass(frozen=True)
class TorusGraph:
    """Fisher lattice on an m x n torus.

    Vertex ``6 * (x * n + y) + (site - 1)`` is ``site`` of cell ``(x, y)``.
    Edge ``9 * (x * n + y) + k`` is cell bond ``k`` owned by cell ``(x, y)``.
    """

    m: int
    n: int
    u: np.ndarray          # first endpoint (site1 side)
    v: np.ndarray          # second endpoint
    label: np.ndarray      # index into WEIGHT_LABELS
    sign: np.ndarray
    tile: np.ndarray
    cell_x: np.ndarray
    cell_y: np.ndarray
    wraps_x: np.ndarray    # bond crosses the x seam
    wraps_y: np.ndarray

    @property
    def num_vertices(self) -> int:
        return 6 * self.m * self.n

    @property
    def num_edges(self) -> int:
        return len(self.u)

    def vertex(self, x: int, y: int, site: int) -> int:
        return 6 * ((x % self.m) * self.n + (y % self.n)) + site - 1

    def edge(self, x: int, y: int, k: int) -> int:
        return 9 * ((x % self.m) * self.n + (y % self.n)) + k

    def bond(self, e: int) -> Bond:
        return Bond(CellCoord(int(self.cell_x[e]), int(self.cell_y[e])), CELL_BONDS[e % 9])

    def weights(self, z: Activities) -> np.ndarray:
        z = Activities.of(z)
        table = np.array([1.0, z.z1, z.z2, z.z3])
        return table[self.label]

    def neighbor_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """(V, 3) arrays of neighbor vertices and the connecting edge ids."""
        nv = self.num_vertices
        nbr = np.full((nv, 3), -1, dtype=np.int64)
        eid = np.full((nv, 3), -1, dtype=np.int64)
        fill = np.zeros(nv, dtype=np.int64)
        for e, (a, b) in enumerate(zip(self.u, self.v)):
            for s, t in ((a, b), (b, a)):
                nbr[s, fill[s]] = t
                eid[s, fill[s]] = e
                fill[s] += 1
        if not np.all(fill == 3):
            raise RuntimeError("Fisher lattice vertex with degree != 3")
        return nbr, eid

    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.u, self.v]), minlength=self.num_vertices)

    def kasteleyn_matrix(self, z: Activities, twist: tuple[int, int] = (0, 0)) -> np.ndarray:
        """Real antisymmetric weighted adjacency matrix.

        ``twist`` flips the sign of bonds crossing the x (resp. y) seam,
        i.e. momentum pi in that direction.
        """
        w = self.weights(z) * self.sign
        w = np.where(self.wraps_x & bool(twist[0]), -w, w)
        w = np.where(self.wraps_y & bool(twist[1]), -w, w)
        A = np.zeros((self.num_vertices, self.num_vertices))
        A[self.u, self.v] += w
        A[self.v, self.u] -= w
        return A

    def dump(self) -> str:
        """One bond per line: ``cellx celly site1 site2 dx dy weight_label sign tile``."""
        lines = []
        for e in range(self.num_edges):
            cb = CELL_BONDS[e % 9]
            lines.append(f"{self.cell_x[e]} {self.cell_y[e]} {cb.site1} {cb.site2} "
                         f"{cb.dx} {cb.dy} {cb.weight_label} {cb.sign:+d} {cb.tile.label}")
        return "\n".join(lines) + "\n"


def build_torus(m: int, n: int) -> TorusGraph:
    if m < 2 or n < 2:
        raise ValueError(f"torus must be at least 2x2, got {m}x{n}")
    return _build(m, n)


def single_cell_graph() -> TorusGraph:
    """The 1x1 torus: one cell whose wrap bonds (1,5), (2,6) close on itself."""
    return _build(1, 1)


def _build(m: int, n: int) -> TorusGraph:
    cols = {k: [] for k in ("u", "v", "label", "sign", "tile", "cx", "cy", "wx", "wy")}
    for x in range(m):
        for y in range(n):
            for cb in CELL_BONDS:
                tx, ty = x + cb.dx, y + cb.dy
                cols["u"].append(6 * (x * n + y) + cb.site1 - 1)
                cols["v"].append(6 * ((tx % m) * n + ty % n) + cb.site2 - 1)
                cols["label"].append(WEIGHT_LABELS.index(cb.weight_label))
                cols["sign"].append(cb.sign)
                cols["tile"].append(int(cb.tile))
                cols["cx"].append(x)
                cols["cy"].append(y)
                cols["wx"].append(not 0 <= tx < m)
                cols["wy"].append(not 0 <= ty < n)
    return TorusGraph(
        m=m, n=n,
        u=np.array(cols["u"], dtype=np.int64),
        v=np.array(cols["v"], dtype=np.int64),
        label=np.array(cols["label"], dtype=np.int64),
        sign=np.array(cols["sign"], dtype=np.int64),
        tile=np.array(cols["tile"], dtype=np.int64),
        cell_x=np.array(cols["cx"], dtype=np.int64),
        cell_y=np.array(cols["cy"], dtype=np.int64),
        wraps_x=np.array(cols["wx"], dtype=bool),
        wraps_y=np.array(cols["wy"], dtype=bool),
    )


def parse_graph_dump(text: str) -> list[tuple]:
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        cx, cy, s1, s2, dx, dy, label, sign, tile = line.split()
        rows.append((int(cx), int(cy), int(s1), int(s2), int(dx), int(dy),
                     label, int(sign), TileKind.from_label(tile)))
    return rows


@dataclass(frozen=True)
class ScattererWeights:
    """Complex scattering strengths: one per rhombus orientation, one per opposite-dart pair."""

    h_rho: tuple[complex, complex, complex] = (1.0, 1.0, 1.0)
    h_sigma: tuple[complex, complex, complex] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.h_rho) != 3 or len(self.h_sigma) != 3:
            raise ValueError("need 3 rhombus and 3 dart strengths")
        object.__setattr__(self, "h_rho", tuple(complex(t) for t in self.h_rho))
        object.__setattr__(self, "h_sigma", tuple(complex(t) for t in self.h_sigma))

    @classmethod
    def uniform(cls, value: complex = 1.0) -> "ScattererWeights":
        return cls((value,) * 3, (value,) * 3)

    @classmethod
    def of(cls, h) -> "ScattererWeights":
        if isinstance(h, ScattererWeights):
            return h
        h = list(h)
        if len(h) != 6:
            raise ValueError("expected 6 strengths (3 rho, 3 sigma)")
        return cls(tuple(h[:3]), tuple(h[3:]))

    def per_tile(self) -> np.ndarray:
        """Strength of each of the nine tile kinds, in TileKind order."""
        r, s = self.h_rho, self.h_sigma
        # sigma4 pairs with sigma3, sigma5 with sigma1, sigma6 with sigma2
        return np.array([r[0], r[1], r[2], s[0], s[1], s[2], s[2], s[0], s[1]], dtype=complex)

    @property
    def is_real(self) -> bool:
        return all(t.imag == 0 for t in self.h_rho + self.h_sigma)

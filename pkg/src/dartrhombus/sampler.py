"""Worm Monte Carlo for fully packed dimers on the Fisher torus.

A worm removes one dimer, leaving two monomers (tail and head).  The head
hops to a random neighbour, pushing the dimer found there along, until it
lands back on the tail.  Acceptance ratios are Metropolis in the bond
activities, which keeps the Gibbs weights stationary on the perfect-matching
states; the worm can wind around the torus and so changes topological sector.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numba
import numpy as np

from .correlations import TileDensities
from .lattice import CELL_BONDS, Activities, CellCoord, TileKind, TorusGraph, build_torus

UNIT_BONDS = (3, 7, 8)      # cell-bond indices of (3,4), (1,5), (2,6)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """``steps`` and ``burn_in`` count sweeps of 6mn worm attempts each."""

    steps: int = 1000
    seed: int = 0
    burn_in: int = 100
    algorithm: str = "worm"
    batches: int = 50
    max_worm_steps: int | None = None

    def __post_init__(self):
        if self.steps < 0 or self.burn_in < 0:
            raise ValueError("steps and burn_in must be non-negative")
        if self.algorithm != "worm":
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")


@dataclass
class DimerConfiguration:
    torus: TorusGraph
    occupied: np.ndarray            # bool per edge

    @property
    def partner(self) -> np.ndarray:
        p = np.full(self.torus.num_vertices, -1, dtype=np.int64)
        e = np.flatnonzero(self.occupied)
        p[self.torus.u[e]] = self.torus.v[e]
        p[self.torus.v[e]] = self.torus.u[e]
        return p

    def validate(self) -> None:
        g = self.torus
        e = np.flatnonzero(self.occupied)
        cover = np.bincount(np.concatenate([g.u[e], g.v[e]]), minlength=g.num_vertices)
        if not np.all(cover == 1):
            raise ValueError("occupied bonds do not form a perfect matching")
        if len(e) != 3 * g.m * g.n:
            raise ValueError(f"{len(e)} dimers, expected {3 * g.m * g.n}")

    def winding_sector(self) -> tuple[int, int]:
        """Parities of dimers crossing the x and y seams."""
        g = self.torus
        return (int(np.count_nonzero(self.occupied & g.wraps_x) % 2),
                int(np.count_nonzero(self.occupied & g.wraps_y) % 2))

    def dump(self) -> str:
        """Lattice bond lines with a trailing 0/1 occupation flag."""
        lines = self.torus.dump().splitlines()
        return "\n".join(f"{ln} {int(o)}" for ln, o in zip(lines, self.occupied)) + "\n"


def crystal_configuration(g: TorusGraph, bonds=UNIT_BONDS) -> DimerConfiguration:
    """Every cell carries the same three cell bonds."""
    occ = np.zeros(g.num_edges, dtype=bool)
    occ[np.isin(np.arange(g.num_edges) % 9, bonds)] = True
    cfg = DimerConfiguration(g, occ)
    cfg.validate()
    return cfg


def parse_configuration(text: str, g: TorusGraph) -> DimerConfiguration:
    flags = [int(line.split()[-1]) for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if len(flags) != g.num_edges:
        raise ValueError("configuration dump does not match the torus")
    return DimerConfiguration(g, np.array(flags, dtype=bool))


# --------------------------------------------------------------- numba core

@numba.njit(cache=True)
def _worm_kernel(partner, medge, nbr, eid, w, n_attempts, max_steps, seed, record, rec_every, rec_out):
    """Run ``n_attempts`` worms.  Returns (status, total head moves).

    Every ``rec_every`` attempts, the occupation of each edge is added to
    ``rec_out[k]`` with ``k`` the current batch index (``record`` rows).
    """
    np.random.seed(seed)
    nv = partner.shape[0]
    total = 0
    nrec = 0
    for att in range(n_attempts):
        t = np.random.randint(nv)
        h = partner[t]
        e0 = medge[t]
        if np.random.random() * w[e0] < 1.0:
            partner[t] = -1
            partner[h] = -1
            medge[t] = -1
            medge[h] = -1
            steps = 0
            while True:
                steps += 1
                if steps > max_steps:
                    return 1, total + steps
                j = np.random.randint(3)
                x = nbr[h, j]
                e = eid[h, j]
                if x == t:
                    if np.random.random() < w[e]:
                        partner[h] = t
                        partner[t] = h
                        medge[h] = e
                        medge[t] = e
                        break
                    continue
                f = medge[x]
                if np.random.random() * w[f] < w[e]:
                    y = partner[x]
                    partner[h] = x
                    partner[x] = h
                    medge[h] = e
                    medge[x] = e
                    partner[y] = -1
                    medge[y] = -1
                    h = y
            total += steps
        if record > 0 and (att + 1) % rec_every == 0:
            row = (nrec * record) // (n_attempts // rec_every)
            for v in range(nv):
                if partner[v] > v:
                    rec_out[row, medge[v]] += 1.0
            nrec += 1
    return 0, total


class WormSampler:
    """Single-chain worm sampler owning its configuration and seed stream."""

    def __init__(self, z, torus: TorusGraph, seed: int = 0,
                 initial: DimerConfiguration | None = None, max_worm_steps: int | None = None):
        self.z = Activities.of(z)
        self.torus = torus
        self.nbr, self.eid = torus.neighbor_tables()
        self.w = torus.weights(self.z).astype(np.float64)
        start = initial if initial is not None else crystal_configuration(torus)
        start.validate()
        self.partner = start.partner
        self.medge = np.full(torus.num_vertices, -1, dtype=np.int64)
        e = np.flatnonzero(start.occupied)
        self.medge[torus.u[e]] = e
        self.medge[torus.v[e]] = e
        self.seed = int(seed)
        self.calls = 0
        self.head_moves = 0
        nv = torus.num_vertices
        self.max_steps = int(max_worm_steps) if max_worm_steps else 1000 * nv + 10_000

    @property
    def sweep_size(self) -> int:
        return 6 * self.torus.m * self.torus.n

    def _next_seed(self) -> int:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.calls])
        self.calls += 1
        return int(ss.generate_state(1, np.uint32)[0])

    def _run(self, attempts: int, record: int = 0, every: int = 1) -> np.ndarray:
        out = np.zeros((max(record, 1), self.torus.num_edges))
        status, moves = _worm_kernel(self.partner, self.medge, self.nbr, self.eid, self.w,
                                     attempts, self.max_steps, self._next_seed(),
                                     record, every, out)
        self.head_moves += moves
        if status:
            raise SamplerError(
                f"worm did not close within {self.max_steps} head moves on a "
                f"{self.torus.m}x{self.torus.n} torus at z={self.z.as_tuple()}; "
                "the chain state is no longer a perfect matching")
        return out

    def sweep(self, sweeps: int = 1) -> None:
        self._run(sweeps * self.sweep_size)

    def measure(self, sweeps: int, batches: int = 50) -> "BondStatistics":
        """Edge occupation frequencies, measured once per sweep, in batches."""
        batches = max(1, min(batches, sweeps))
        sweeps -= sweeps % batches
        if sweeps == 0:
            raise ValueError("need at least one measured sweep")
        sums = self._run(sweeps * self.sweep_size, record=batches, every=self.sweep_size)
        return BondStatistics(self.torus, sums / (sweeps // batches), sweeps)

    def configuration(self) -> DimerConfiguration:
        occ = np.zeros(self.torus.num_edges, dtype=bool)
        occ[self.medge[self.medge >= 0]] = True
        return DimerConfiguration(self.torus, occ)


@dataclass
class BondStatistics:
    """Per-batch mean occupations ``batch_means[b, edge]``."""

    torus: TorusGraph
    batch_means: np.ndarray
    sweeps: int

    @property
    def mean(self) -> np.ndarray:
        return self.batch_means.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        b = self.batch_means.shape[0]
        if b < 2:
            return np.full(self.batch_means.shape[1], np.nan)
        return self.batch_means.std(axis=0, ddof=1) / np.sqrt(b)

    def cell_bond_mean(self) -> tuple[np.ndarray, np.ndarray]:
        """Translation-averaged frequency of each of the nine cell bonds."""
        per = self.batch_means.reshape(self.batch_means.shape[0], -1, 9).mean(axis=1)
        b = per.shape[0]
        err = per.std(axis=0, ddof=1) / np.sqrt(b) if b > 1 else np.full(9, np.nan)
        return per.mean(axis=0), err


def sample(z, m: int, n: int, cfg: SamplerConfig = SamplerConfig()) -> DimerConfiguration:
    """A configuration after ``burn_in + steps`` sweeps from the rhombus crystal."""
    if m < 2 or n < 2:
        raise ValueError("sampling needs m, n >= 2")
    s = WormSampler(z, build_torus(m, n), cfg.seed, max_worm_steps=cfg.max_worm_steps)
    s.sweep(cfg.burn_in + cfg.steps)
    return s.configuration()


def sample_statistics(z, m: int, n: int, cfg: SamplerConfig = SamplerConfig()) -> BondStatistics:
    if m < 2 or n < 2:
        raise ValueError("sampling needs m, n >= 2")
    s = WormSampler(z, build_torus(m, n), cfg.seed, max_worm_steps=cfg.max_worm_steps)
    s.sweep(cfg.burn_in)
    return s.measure(cfg.steps, cfg.batches)


# ------------------------------------------------------------------- tiles

@dataclass
class Tiling:
    m: int
    n: int
    tiles: list[tuple[TileKind, CellCoord]] = field(default_factory=list)

    def counts(self) -> np.ndarray:
        return np.bincount([int(t) for t, _ in self.tiles], minlength=9)

    def dump(self) -> str:
        return "".join(f"{c.x} {c.y} {t.label}\n" for t, c in self.tiles)

    @classmethod
    def parse(cls, text: str, m: int, n: int) -> "Tiling":
        tiles = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            x, y, kind = line.split()
            tiles.append((TileKind.from_label(kind), CellCoord(int(x), int(y))))
        return cls(m, n, tiles)


def to_tiling(config: DimerConfiguration) -> Tiling:
    g = config.torus
    e = np.flatnonzero(config.occupied)
    tiles = [(TileKind(int(g.tile[k])), CellCoord(int(g.cell_x[k]), int(g.cell_y[k]))) for k in e]
    return Tiling(g.m, g.n, tiles)


def empirical_densities(t: Tiling) -> TileDensities:
    c = t.counts()
    return TileDensities.from_vector(c / c.sum() if c.sum() else c.astype(float))


# ------------------------------------------------------- exact worm kernel

def worm_transition_matrix(g, z) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Exact transition matrix of the worm chain between perfect matchings.

    Follows the same open / move / close rules as the compiled kernel, with
    the worm phase resolved as an absorbing Markov chain.  Only practical for
    tiny graphs.  Returns (matchings as sorted edge tuples, T) with rows
    summing to one.
    """
    from .oracle import EdgeGraph, enumerate_matchings

    eg = EdgeGraph.from_torus(g) if isinstance(g, TorusGraph) else g
    w = eg.weights(z)
    nv = eg.num_vertices
    nbr: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
    for e, (a, b) in enumerate(zip(eg.u, eg.v)):
        nbr[int(a)].append((int(b), e))
        nbr[int(b)].append((int(a), e))
    deg = len(nbr[0])
    if any(len(x) != deg for x in nbr):
        raise ValueError("worm kernel needs a regular graph")

    pms = [tuple(sorted(m)) for m in enumerate_matchings(eg, z, keep_matchings=True).matchings]
    pm_index = {m: i for i, m in enumerate(pms)}
    ends = {e: (int(eg.u[e]), int(eg.v[e])) for e in range(len(eg.u))}

    worm_index: dict[tuple, int] = {}
    rows: list[dict[tuple[str, int], float]] = []

    def worm_state(t, h, edges: frozenset) -> int:
        key = (t, h, edges)
        if key in worm_index:
            return worm_index[key]
        worm_index[key] = len(rows)
        rows.append({})
        stack.append(key)
        return worm_index[key]

    def partner_edge(edges, x):
        for e in edges:
            if x in ends[e]:
                return e
        raise AssertionError

    stack: list[tuple] = []
    entry: dict[tuple[int, int], tuple[int, float]] = {}
    for i, m in enumerate(pms):
        for e in m:
            a, b = ends[e]
            for t, h in ((a, b), (b, a)):
                entry[(i, t)] = (worm_state(t, h, frozenset(m) - {e}), min(1.0, 1.0 / w[e]))
    while stack:
        t, h, edges = stack.pop()
        r = rows[worm_index[(t, h, edges)]]
        for x, e in nbr[h]:
            p = 1.0 / deg
            if x == t:
                acc = min(1.0, w[e])
                key = ("pm", pm_index[tuple(sorted(edges | {e}))])
            else:
                f = partner_edge(edges, x)
                acc = min(1.0, w[e] / w[f])
                y = ends[f][0] if ends[f][1] == x else ends[f][1]
                key = ("worm", worm_state(t, y, (edges - {f}) | {e}))
            r[key] = r.get(key, 0.0) + p * acc
            stay = ("worm", worm_index[(t, h, edges)])
            r[stay] = r.get(stay, 0.0) + p * (1 - acc)

    nw, npm = len(rows), len(pms)
    Q = np.zeros((nw, nw))
    R = np.zeros((nw, npm))
    for i, r in enumerate(rows):
        for (kind, j), p in r.items():
            (Q if kind == "worm" else R)[i, j] += p
    absorb = np.linalg.solve(np.eye(nw) - Q, R)

    T = np.zeros((npm, npm))
    for (i, t), (ws, acc) in entry.items():
        T[i] += acc * absorb[ws] / nv
        T[i, i] += (1 - acc) / nv
    return pms, T

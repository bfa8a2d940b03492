"""Exact results for small tori: brute-force enumeration and Pfaffians."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .lattice import Activities, TorusGraph, build_torus

MAX_ENUM_VERTICES = 60


class SizeBoundError(ValueError):
    pass


class SingularPfaffianError(ArithmeticError):
    pass


@dataclass(frozen=True)
class EdgeGraph:
    """Plain weighted graph; ``label`` indexes (1, z1, z2, z3)."""

    num_vertices: int
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray

    @classmethod
    def from_torus(cls, g: TorusGraph) -> "EdgeGraph":
        return cls(g.num_vertices, g.u, g.v, g.label)

    def weights(self, z: Activities) -> np.ndarray:
        z = Activities.of(z)
        return np.array([1.0, z.z1, z.z2, z.z3])[self.label]

    def induced(self, vertices) -> "EdgeGraph":
        """Subgraph on ``vertices``, relabelled 0..k-1 in the given order."""
        idx = {int(x): i for i, x in enumerate(vertices)}
        keep = [e for e in range(len(self.u)) if int(self.u[e]) in idx and int(self.v[e]) in idx]
        return EdgeGraph(len(idx),
                         np.array([idx[int(self.u[e])] for e in keep], dtype=np.int64),
                         np.array([idx[int(self.v[e])] for e in keep], dtype=np.int64),
                         np.asarray(self.label)[keep])


@dataclass
class EnumerationResult:
    Z: float
    count: int
    bond_marginals: np.ndarray            # per edge index
    pair_marginals: np.ndarray            # (E, E); diagonal equals bond_marginals
    matchings: list[tuple[int, ...]] = field(default_factory=list, repr=False)

    def marginal(self, e: int) -> float:
        return float(self.bond_marginals[e])

    def pair(self, e: int, f: int) -> float:
        return float(self.pair_marginals[e, f])


def enumerate_matchings(graph, z, max_vertices: int = MAX_ENUM_VERTICES,
                        keep_matchings: bool = False) -> EnumerationResult:
    """Every perfect matching of ``graph`` with its activity weight.

    Backtracking always matches the lowest uncovered vertex first.
    """
    if isinstance(graph, TorusGraph):
        graph = EdgeGraph.from_torus(graph)
    nv = graph.num_vertices
    if nv > max_vertices:
        raise SizeBoundError(f"{nv} vertices exceeds enumeration bound {max_vertices}")
    w = graph.weights(z)
    ne = len(graph.u)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
    for e, (a, b) in enumerate(zip(graph.u, graph.v)):
        adj[int(a)].append((int(b), e))
        adj[int(b)].append((int(a), e))

    used = [False] * nv
    chosen: list[int] = []
    found: list[tuple[int, ...]] = []

    def rec(i: int) -> None:
        while i < nv and used[i]:
            i += 1
        if i == nv:
            found.append(tuple(chosen))
            return
        used[i] = True
        for j, e in adj[i]:
            if not used[j]:
                used[j] = True
                chosen.append(e)
                rec(i + 1)
                chosen.pop()
                used[j] = False
        used[i] = False

    if nv % 2 == 0:
        rec(0)

    Z = 0.0
    single = np.zeros(ne)
    pair = np.zeros((ne, ne))
    for mt in found:
        idx = np.array(mt, dtype=np.int64)
        wt = float(np.prod(w[idx]))
        Z += wt
        single[idx] += wt
        pair[np.ix_(idx, idx)] += wt
    if Z > 0:
        single /= Z
        pair /= Z
    return EnumerationResult(Z, len(found), single, pair, found if keep_matchings else [])


# ---------------------------------------------------------------- Pfaffians

@numba.njit(cache=True)
def _pfaffian_ltl(A):
    """In-place Parlett-Reid reduction; returns (sign, log|Pf|)."""
    n = A.shape[0]
    sign, logabs = 1.0, 0.0
    for k in range(0, n - 1, 2):
        kp = k + 1
        big = abs(A[k + 1, k])
        for i in range(k + 2, n):
            if abs(A[i, k]) > big:
                big = abs(A[i, k])
                kp = i
        if kp != k + 1:
            for j in range(n):
                A[k + 1, j], A[kp, j] = A[kp, j], A[k + 1, j]
            for i in range(n):
                A[i, k + 1], A[i, kp] = A[i, kp], A[i, k + 1]
            sign = -sign
        piv = A[k, k + 1]
        if piv == 0.0:
            return 0.0, -np.inf
        if piv < 0:
            sign = -sign
        logabs += np.log(abs(piv))
        for i in range(k + 2, n):
            ti = A[k, i] / piv
            ci = A[i, k + 1]
            if ti == 0.0 and ci == 0.0:
                continue
            for j in range(k + 2, n):
                A[i, j] += ti * A[j, k + 1] - ci * A[k, j] / piv
    return sign, logabs


def pfaffian_slog(A: np.ndarray) -> tuple[float, float]:
    """Sign and log-modulus of the Pfaffian of a real antisymmetric matrix.

    Parlett-Reid tridiagonalisation with partial pivoting.
    """
    A = np.array(A, dtype=np.float64)
    if A.shape[0] % 2:
        return 0.0, -math.inf
    s, la = _pfaffian_ltl(A)
    return float(s), float(la)


def pfaffian(A: np.ndarray) -> float:
    s, la = pfaffian_slog(A)
    return s * math.exp(la)


# Sign of each twisted Pfaffian in Z = (1/2) sum s_theta Pf(A_theta), keyed by
# (m mod 2, n mod 2).  Fixed by enumeration on 2x2, 2x3, 3x2 and 3x3 tori; the
# odd one out is always the twist equal to the parity class.
TWISTS = ((0, 0), (0, 1), (1, 0), (1, 1))
PFAFFIAN_SIGNS = {
    (0, 0): (-1, 1, 1, 1),
    (0, 1): (1, -1, 1, 1),
    (1, 0): (1, 1, -1, 1),
    (1, 1): (1, 1, 1, -1),
}


def log_finite_torus_Z(m: int, n: int, z, max_vertices: int = 4096) -> float:
    if m < 2 or n < 2:
        raise ValueError("torus needs m, n >= 2")
    if 6 * m * n > max_vertices:
        raise SizeBoundError(f"6mn = {6 * m * n} exceeds Pfaffian bound {max_vertices}")
    g = build_torus(m, n)
    signs = PFAFFIAN_SIGNS[(m % 2, n % 2)]
    terms = [pfaffian_slog(g.kasteleyn_matrix(z, t)) for t in TWISTS]
    top = max(la for _, la in terms)
    total = sum(s * sp * math.exp(la - top) for s, (sp, la) in zip(signs, terms))
    if total <= 1e-12 * 4:
        raise SingularPfaffianError(f"Pfaffian combination cancels to {total:.3g} (relative)")
    return top + math.log(total / 2)


def finite_torus_Z(m: int, n: int, z, max_vertices: int = 4096) -> float:
    """Dimer partition function of the m x n torus as a four-Pfaffian combination."""
    return math.exp(log_finite_torus_Z(m, n, z, max_vertices))


# ----------------------------------------------------------------- fixtures

def fixture(m: int, n: int, z) -> dict:
    z = Activities.of(z)
    res = enumerate_matchings(build_torus(m, n), z)
    return {"m": m, "n": n, "z": list(z.as_tuple()), "Z": res.Z, "count": res.count,
            "marginals": res.bond_marginals.tolist()}


def write_fixture(fx: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(fx, fh, indent=1)


def read_fixture(path) -> dict:
    with open(path) as fh:
        return json.load(fh)

"""Bragg peaks and diffuse intensity of the decorated tiling.

Fourier convention: plane waves ``exp(-2 pi i q.x)``, so the Bragg peaks sit
on the dual lattice spanned by ``e1* = (1/sqrt3, -1/3)``, ``e2* = (0, 2/3)``.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass

import numpy as np

from .correlations import TileDensities, _BOND_BY_TILE, pair_fluctuations
from .lattice import (
    CELL_AREA,
    E1,
    E1_STAR,
    E2,
    E2_STAR,
    SUBDIV,
    Activities,
    ScattererWeights,
    TileKind,
)
from .spectral import (
    DEFAULT_QUAD_ORDER,
    CriticalActivityError,
    QuadratureError,
    classify_phase,
    coupling_table,
    predict_decay_rates,
)


@dataclass(frozen=True)
class BraggPeak:
    k: int
    l: int
    position: np.ndarray
    intensity: float


def bragg_intensity(k: int, l: int, d: TileDensities, h: ScattererWeights) -> float:
    """Weight of the Bragg peak at ``k e1* + l e2*``."""
    h = ScattererWeights.of(h)
    r, s = d.rho, d.sigma
    hr, hs = h.h_rho, h.h_sigma
    sk, sl, skl = (-1) ** k, (-1) ** l, (-1) ** (k + l)
    amp = (hr[0] * r[0] + sk * hr[1] * r[1] + sl * hr[2] * r[2]
           + 2 * math.cos(math.pi * (k + l) / 3) * (skl * hs[0] * s[0] + sl * hs[1] * s[1] + sk * hs[2] * s[2]))
    return 4.0 / 3.0 * abs(amp) ** 2


def structure_factor_bragg(k: int, l: int, d: TileDensities, h: ScattererWeights) -> float:
    """The same weight computed directly from the scatterer positions.

    ``(density of cells)^2 |sum_tau 3 tau h_tau exp(-2 pi i q.p_tau)|^2``;
    used to cross-check :func:`bragg_intensity`.
    """
    h9 = ScattererWeights.of(h).per_tile()
    dens = d.vector()
    amp = 0j
    for t in TileKind:
        fx, fy = t.frac
        amp += 3 * dens[t] * h9[t] * np.exp(-2j * np.pi * (k * fx + l * fy) / SUBDIV)
    return float(abs(amp) ** 2 / CELL_AREA ** 2)


def peak_position(k: int, l: int) -> np.ndarray:
    return k * E1_STAR + l * E2_STAR


def bragg_peaks(kmax: int, lmax: int, d: TileDensities, h: ScattererWeights) -> list[BraggPeak]:
    if kmax < 0 or lmax < 0:
        raise ValueError("kmax and lmax must be non-negative")
    return [BraggPeak(k, l, peak_position(k, l), bragg_intensity(k, l, d, h))
            for k in range(-kmax, kmax + 1) for l in range(-lmax, lmax + 1)]


def write_peaks_csv(peaks: list[BraggPeak], fh: io.TextIOBase) -> None:
    w = csv.writer(fh)
    w.writerow(["k", "l", "qx", "qy", "intensity"])
    for p in peaks:
        w.writerow([p.k, p.l, f"{p.position[0]:.17g}", f"{p.position[1]:.17g}", f"{p.intensity:.17g}"])


def read_peaks_csv(fh: io.TextIOBase) -> list[BraggPeak]:
    rows = list(csv.DictReader(l for l in fh if not l.startswith("#")))
    return [BraggPeak(int(r["k"]), int(r["l"]), np.array([float(r["qx"]), float(r["qy"])]),
                      float(r["intensity"])) for r in rows]


# ------------------------------------------------------------- diffuse part

@dataclass(frozen=True)
class DiffuseSample:
    q: np.ndarray
    intensity: float
    truncation_radius: int
    error_bound: float


@functools.lru_cache(maxsize=16)
def _rates(z: tuple) -> float:
    r = predict_decay_rates(z)
    return min(r.t1, r.t2)


def _shell_terms(z: Activities, h9: np.ndarray, cutoff: int, quad_order: int):
    """Correlation terms grouped by shell ``max(|x|, |y|) = k``.

    Returns (coefficients, separations in sixths, shell index) flattened over
    offsets and tile pairs.
    """
    tab = coupling_table(z, quad_order)
    rng = np.arange(-cutoff, cutoff + 1)
    xs, ys = np.meshgrid(rng, rng, indexing="ij")
    fl = pair_fluctuations(tab, z, xs, ys)                 # (R, R, 9 bonds, 9 bonds)
    fl = fl[:, :, _BOND_BY_TILE][:, :, :, _BOND_BY_TILE]   # reorder to tile kinds
    coef = np.conj(h9)[:, None] * h9[None, :] * fl / CELL_AREA
    f = np.array([t.frac for t in TileKind])
    sep_x = SUBDIV * xs[:, :, None, None] + (f[None, None, None, :, 0] - f[None, None, :, None, 0])
    sep_y = SUBDIV * ys[:, :, None, None] + (f[None, None, None, :, 1] - f[None, None, :, None, 1])
    shell = np.broadcast_to(np.maximum(np.abs(xs), np.abs(ys))[:, :, None, None], coef.shape)
    return coef.ravel(), sep_x.ravel(), sep_y.ravel(), shell.ravel()


def _check_generic(z: Activities) -> None:
    if classify_phase(z, grid=64).is_critical:
        raise CriticalActivityError(f"diffuse intensity undefined at critical activities {z.as_tuple()}")


def diffuse_intensity(z, h: ScattererWeights, q, cutoff: int = 8,
                      quad_order: int = DEFAULT_QUAD_ORDER, target: float | None = None,
                      imag_tol: float = 1e-9):
    """Diffuse intensity at reciprocal vector(s) ``q`` (Cartesian, shape (..., 2)).

    Sums the fluctuation part of the pair correlations over cell offsets up to
    ``cutoff``.  With ``target`` set, shells are dropped once their absolute
    contribution is below ``1e-3 * target``.  Returns a :class:`DiffuseSample`
    for a single q, otherwise a list of them.
    """
    z = Activities.of(z)
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    _check_generic(z)
    h9 = ScattererWeights.of(h).per_tile()
    qa = np.atleast_2d(np.asarray(q, dtype=float))
    quad_order = max(quad_order, 4 * (cutoff + 3))
    coef, sx, sy, shell = _shell_terms(z, h9, cutoff, quad_order)

    shell_abs = np.bincount(shell, weights=np.abs(coef), minlength=cutoff + 1)
    used = cutoff
    if target is not None:
        for k in range(1, cutoff + 1):
            if shell_abs[k] < 1e-3 * target:
                used = k - 1
                break
    keep = (shell <= used) & (coef != 0)
    coef, sx, sy = coef[keep], sx[keep], sy[keep]

    # q.(u e1 + v e2) = u (q.e1) + v (q.e2) with (u, v) = sep / 6
    kx = qa @ E1 / SUBDIV
    ky = qa @ E2 / SUBDIV
    out = np.empty(len(qa))
    for lo in range(0, len(qa), 256):
        ph = np.exp(-2j * np.pi * (np.outer(kx[lo:lo + 256], sx) + np.outer(ky[lo:lo + 256], sy)))
        val = ph @ coef
        if np.abs(val.imag).max() > imag_tol * max(1.0, np.abs(val.real).max()):
            raise QuadratureError(f"diffuse sum has imaginary residue {np.abs(val.imag).max():.3g}")
        out[lo:lo + 256] = val.real

    err = _tail_bound(z, shell_abs, used, coef, quad_order)
    samples = [DiffuseSample(qv, float(v), used, err) for qv, v in zip(qa, out)]
    return samples[0] if np.ndim(q) == 1 else samples


def _tail_bound(z: Activities, shell_abs: np.ndarray, used: int, coef, quad_order: int) -> float:
    last = shell_abs[used]
    if last <= 1e-15 * max(shell_abs[0], 1e-300):
        tail = 0.0
    else:
        t = _rates(z.as_tuple())
        # pair correlations are products of two couplings
        ratio = math.exp(-2 * t) if math.isfinite(t) else 0.0
        if used >= 2 and shell_abs[used - 1] > 0:
            ratio = max(ratio, last / shell_abs[used - 1])
        ratio = min(ratio, 0.99)
        tail = sum(last * ratio ** j * (used + j) / used for j in range(1, 400))
    alias = coupling_table(z, quad_order).aliasing_error
    return float(tail + len(coef) * alias / CELL_AREA + 1e-14)


def diffuse_grid(z, h: ScattererWeights, m: int, n: int, subdiv: int = 12,
                 cutoff: int = 8, quad_order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    """Diffuse intensity on the FFT pixel grid of an m x n torus image.

    Pixel ``(k1, k2)`` is ``q = (k1/m) e1* + (k2/n) e2*``.  Separations are
    wrapped onto the torus, so this equals :func:`diffuse_intensity` on the
    grid as long as the correlations within ``cutoff`` fit into half the torus.
    """
    z = Activities.of(z)
    if subdiv % SUBDIV:
        raise ValueError(f"subdiv must be a multiple of {SUBDIV}")
    _check_generic(z)
    h9 = ScattererWeights.of(h).per_tile()
    quad_order = max(quad_order, 4 * (cutoff + 3))
    coef, sx, sy, _ = _shell_terms(z, h9, cutoff, quad_order)
    scale = subdiv // SUBDIV
    N1, N2 = subdiv * m, subdiv * n
    acc = np.zeros((N1, N2), dtype=complex)
    np.add.at(acc, ((sx * scale) % N1, (sy * scale) % N2), coef)
    return np.fft.fft2(acc).real


def write_diffuse_csv(samples: list[DiffuseSample], fh: io.TextIOBase) -> None:
    w = csv.writer(fh)
    w.writerow(["qx", "qy", "intensity", "error_bound"])
    for s in samples:
        w.writerow([f"{s.q[0]:.17g}", f"{s.q[1]:.17g}", f"{s.intensity:.17g}", f"{s.error_bound:.17g}"])

"""Diffraction of sampled tilings by exact on-grid FFT.

Scatterer positions lie on sixths of the cell basis, so binning onto a grid
of 12 subdivisions per cell edge is lossless.  Pixel ``(k1, k2)`` of an
m x n patch sits at ``q = (k1/m) e1* + (k2/n) e2*``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .correlations import AutocorrCoefficient
from .lattice import CELL_AREA, E1, E1_STAR, E2, E2_STAR, SUBDIV, ScattererWeights, TileKind
from .sampler import Tiling
from .spectrum import BraggPeak

DEFAULT_SUPERCELL = 12


@dataclass
class ScattererSet:
    m: int
    n: int
    frac: np.ndarray          # (N, 2) integer sixths, reduced mod (6m, 6n)
    weights: np.ndarray       # (N,) complex
    kinds: np.ndarray         # (N,) TileKind values

    @property
    def positions(self) -> np.ndarray:
        return (self.frac[:, :1] * E1 + self.frac[:, 1:] * E2) / SUBDIV

    @property
    def area(self) -> float:
        return self.m * self.n * CELL_AREA

    def __len__(self) -> int:
        return len(self.weights)

    def present(self) -> np.ndarray:
        """Mask of points with nonzero strength."""
        return self.weights != 0

    def validate(self) -> None:
        keys = self.frac[:, 0] * (SUBDIV * self.n) + self.frac[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise ValueError("two scatterers share a position")
        allowed = {t.frac for t in TileKind}
        mod = {(int(a) % SUBDIV, int(b) % SUBDIV) for a, b in self.frac}
        if not mod <= allowed:
            raise ValueError("scatterer off the tile-centre grid")

    def translated(self, shift: tuple[int, int]) -> "ScattererSet":
        """Shift by a lattice vector given in sixths (any multiple of 6 keeps the grid)."""
        f = (self.frac + np.asarray(shift)) % (SUBDIV * np.array([self.m, self.n]))
        return ScattererSet(self.m, self.n, f, self.weights.copy(), self.kinds.copy())


def scatter_points(t: Tiling, h: ScattererWeights) -> ScattererSet:
    h9 = ScattererWeights.of(h).per_tile()
    kinds = np.array([int(k) for k, _ in t.tiles], dtype=np.int64)
    cells = np.array([(c.x, c.y) for _, c in t.tiles], dtype=np.int64).reshape(-1, 2)
    tf = np.array([TileKind(k).frac for k in kinds], dtype=np.int64).reshape(-1, 2)
    frac = (SUBDIV * cells + tf) % (SUBDIV * np.array([t.m, t.n]))
    return ScattererSet(t.m, t.n, frac, h9[kinds].astype(complex), kinds)


@dataclass
class DiffractionImage:
    m: int
    n: int
    supercell: int
    intensity: np.ndarray        # (N1, N2), |F|^2 / patch area

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity.shape

    @property
    def area(self) -> float:
        return self.m * self.n * CELL_AREA

    @property
    def q_steps(self) -> tuple[np.ndarray, np.ndarray]:
        return E1_STAR / self.m, E2_STAR / self.n

    @property
    def pixel_measure(self) -> float:
        """Reciprocal-space area of one pixel."""
        return 1.0 / self.area

    def q(self, k1, k2) -> np.ndarray:
        s1, s2 = self.q_steps
        return np.multiply.outer(np.asarray(k1), s1) + np.multiply.outer(np.asarray(k2), s2)

    def bragg_mask(self) -> np.ndarray:
        k1 = np.arange(self.shape[0]) % self.m == 0
        k2 = np.arange(self.shape[1]) % self.n == 0
        return np.outer(k1, k2)

    def bragg_pixel(self, k: int, l: int) -> tuple[int, int]:
        return (k * self.m) % self.shape[0], (l * self.n) % self.shape[1]


def _bin(s: ScattererSet, supercell: int) -> np.ndarray:
    if supercell % SUBDIV:
        raise ValueError(f"supercell must be a multiple of {SUBDIV}; positions would be incommensurate")
    scale = supercell // SUBDIV
    grid = np.zeros((supercell * s.m, supercell * s.n), dtype=complex)
    np.add.at(grid, (s.frac[:, 0] * scale, s.frac[:, 1] * scale), s.weights)
    return grid


def fft_diffraction(s: ScattererSet, m: int | None = None, n: int | None = None,
                    supercell: int = DEFAULT_SUPERCELL) -> DiffractionImage:
    m = s.m if m is None else m
    n = s.n if n is None else n
    if (m, n) != (s.m, s.n):
        raise ValueError("scatterer set does not belong to this torus")
    F = np.fft.fft2(_bin(s, supercell))
    return DiffractionImage(m, n, supercell, (F.real ** 2 + F.imag ** 2) / s.area)


def parseval_residual(img: DiffractionImage, s: ScattererSet) -> float:
    """Relative mismatch between mean pixel intensity and sum |w|^2 / area."""
    want = np.sum(np.abs(s.weights) ** 2) / s.area
    got = img.intensity.mean()
    return abs(got - want) / want if want else abs(got)


def average_images(images: list[DiffractionImage]) -> DiffractionImage:
    first = images[0]
    for im in images[1:]:
        if (im.m, im.n, im.supercell) != (first.m, first.n, first.supercell):
            raise ValueError("cannot average images of different grids")
    return DiffractionImage(first.m, first.n, first.supercell,
                            np.mean([im.intensity for im in images], axis=0))


# ----------------------------------------------------------- autocorrelation

def empirical_autocorrelation(s: ScattererSet, max_radius: float) -> list[AutocorrCoefficient]:
    """Torus estimator ``(1/area) sum_y conj(w(y)) w(y + delta)``."""
    diam = min(s.m * np.linalg.norm(E1), s.n * np.linalg.norm(E2))
    if max_radius > diam / 2:
        raise ValueError(f"max_radius {max_radius} exceeds half the patch size {diam / 2:.4g}")
    g = _bin(s, SUBDIV)
    corr = np.fft.ifft2(np.abs(np.fft.fft2(g)) ** 2) / s.area
    N1, N2 = corr.shape
    r1 = int(math.ceil(max_radius / np.linalg.norm(E1) * SUBDIV * 2)) + SUBDIV
    r2 = int(math.ceil(max_radius / np.linalg.norm(E2) * SUBDIV * 2)) + SUBDIV
    out = []
    for a in range(-r1, r1 + 1):
        for b in range(-r2, r2 + 1):
            vec = (a * E1 + b * E2) / SUBDIV
            if np.linalg.norm(vec) > max_radius + 1e-12 or not _is_difference(a, b):
                continue
            out.append(AutocorrCoefficient(vec, (a, b), complex(corr[a % N1, b % N2])))
    return out


_DIFFS = {((fb[0] - fa[0]) % SUBDIV, (fb[1] - fa[1]) % SUBDIV) for fa in (t.frac for t in TileKind)
          for fb in (t.frac for t in TileKind)}


def _is_difference(a: int, b: int) -> bool:
    return (a % SUBDIV, b % SUBDIV) in _DIFFS


# ---------------------------------------------------------------- comparison

@dataclass
class BraggComparison:
    rows: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    max_rel_error: float = 0.0
    background_mean: float = 0.0
    background_max: float = 0.0
    tolerance: float = 0.05
    degenerate: bool = False

    @property
    def passed(self) -> bool:
        return not self.degenerate and self.max_rel_error <= self.tolerance


def compare_bragg(img: DiffractionImage, peaks: list[BraggPeak], tolerance: float = 0.05) -> BraggComparison:
    """Bragg-pixel weights ``I * pixel_measure`` against exact peak intensities.

    Peaks are folded into the image, whose Bragg pixels repeat with period
    ``supercell`` in k and l.
    """
    bg = img.intensity[~img.bragg_mask()]
    rep = BraggComparison(tolerance=tolerance,
                          background_mean=float(bg.mean()) if bg.size else 0.0,
                          background_max=float(bg.max()) if bg.size else 0.0)
    if not np.any(img.intensity):
        rep.degenerate = True
    scale = max((p.intensity for p in peaks), default=0.0)
    for p in peaks:
        if not np.allclose(p.position, p.k * E1_STAR + p.l * E2_STAR, atol=1e-12):
            raise ValueError(f"peak ({p.k},{p.l}) position does not lie on the dual grid")
        i, j = img.bragg_pixel(p.k, p.l)
        got = float(img.intensity[i, j] * img.pixel_measure)
        denom = max(p.intensity, 1e-12 * scale, 1e-300)
        err = abs(got - p.intensity) / denom
        rep.rows.append((p.k, p.l, p.intensity, got, err))
        rep.max_rel_error = max(rep.max_rel_error, err)
    return rep


# -------------------------------------------------------------------- export

PGM_FLOOR = 1e-6


def write_pgm(img: DiffractionImage, path, floor: float = PGM_FLOOR, bits: int = 16,
              central: float | None = None) -> None:
    """Binary graymap of log10 intensity.

    Pixel weights are rescaled so the central peak reads 4/3; gray level 0
    is ``floor`` times that peak and full scale is the peak itself.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    w = img.intensity * img.pixel_measure
    ref = central if central is not None else w[0, 0]
    norm = w * (4.0 / 3.0) / ref if ref > 0 else w
    ceiling = 4.0 / 3.0
    lo, hi = math.log10(floor * ceiling), math.log10(ceiling)
    lv = (np.log10(np.clip(norm, floor * ceiling, ceiling)) - lo) / (hi - lo)
    maxval = 2 ** bits - 1
    pix = np.rint(lv * maxval).astype(">u2" if bits == 16 else "u1")
    # rows run along k2 so the image is shown in the (k1, k2) index frame
    data = np.ascontiguousarray(pix.T[::-1])
    header = (f"P5\n# log10 intensity, central peak 4/3, floor {floor:.3g}\n"
              f"{data.shape[1]} {data.shape[0]}\n{maxval}\n").encode()
    _atomic_write(path, header + data.tobytes())


def read_pgm(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        line_end = raw.index(b"\n", pos)
        line = raw[pos:line_end]
        pos = line_end + 1
        if line.startswith(b"#"):
            continue
        tokens += line.split()
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos:], dtype=dtype).reshape(h, w), maxval


def write_image_csv(img: DiffractionImage, fh: io.TextIOBase) -> None:
    w = csv.writer(fh)
    w.writerow(["qx", "qy", "intensity"])
    k1, k2 = np.meshgrid(np.arange(img.shape[0]), np.arange(img.shape[1]), indexing="ij")
    qs = img.q(k1.ravel(), k2.ravel())
    for (qx, qy), v in zip(qs, img.intensity.ravel()):
        w.writerow([f"{qx:.17g}", f"{qy:.17g}", f"{v:.17g}"])


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)

"""Momentum-space Kasteleyn machinery.

The periodic Kasteleyn matrix block-diagonalises into the 6x6 matrix
``lam(phi1, phi2)``.  Inverse-Kasteleyn entries ("couplings") are Fourier
coefficients of ``inv(lam)`` and are evaluated with the periodic
trapezoidal rule, i.e. one 2D FFT over an N x N momentum grid.

Conventions: ``lam(phi) = sum_r A(cell 0, cell r) exp(i phi.r)`` and the
coupling ``[x, y]_{p q}`` is the inverse-matrix entry between site ``p`` of
cell 0 and site ``q`` of cell ``x e1 + y e2``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .lattice import Activities


class CriticalActivityError(ValueError):
    """Activities lie on (or numerically at) a phase boundary."""


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, estimate: float | None = None):
        super().__init__(message)
        self.estimate = estimate


DEFAULT_QUAD_ORDER = 64
QUAD_TOL = 1e-9
CRITICAL_TOL = 1e-8

# (row, col, weight index) of the constant upper-triangle entries; index 0 is the unit bond
_CONST_ENTRIES = ((0, 1, 1), (0, 2, 3), (1, 2, 2), (2, 3, 0), (3, 4, 3), (3, 5, 2), (4, 5, 1))


def lambda_matrix(z, phi) -> np.ndarray:
    """The 6x6 momentum-space Kasteleyn matrix at ``phi = (phi1, phi2)``."""
    return lambda_grid(z, np.asarray(phi[0], float), np.asarray(phi[1], float))


def lambda_grid(z, phi1, phi2) -> np.ndarray:
    """Broadcast version of :func:`lambda_matrix`; shape ``phi.shape + (6, 6)``."""
    z = Activities.of(z)
    phi1, phi2 = np.broadcast_arrays(np.asarray(phi1, float), np.asarray(phi2, float))
    wts = (1.0, z.z1, z.z2, z.z3)
    lam = np.zeros(phi1.shape + (6, 6), dtype=complex)
    for i, j, k in _CONST_ENTRIES:
        lam[..., i, j] = wts[k]
        lam[..., j, i] = -wts[k]
    lam[..., 0, 4] = -np.exp(-1j * phi1)
    lam[..., 4, 0] = np.exp(1j * phi1)
    lam[..., 1, 5] = -np.exp(-1j * phi2)
    lam[..., 5, 1] = np.exp(1j * phi2)
    return lam


@dataclass(frozen=True)
class DetCoefficients:
    a: float
    b: float
    c: float
    d: float


def det_coefficients(z) -> DetCoefficients:
    z1, z2, z3 = (t * t for t in Activities.of(z))
    return DetCoefficients(
        a=z1 * z1 + z2 * z2 + z3 * z3 + 1.0,
        b=z1 * z2 - z3,
        c=z1 * z3 - z2,
        d=z2 * z3 - z1,
    )


def det_lambda(z, phi):
    """``a + 2b cos phi1 + 2c cos phi2 + 2d cos(phi1 - phi2)``; broadcasts over phi."""
    k = det_coefficients(z)
    p1, p2 = np.asarray(phi[0], float), np.asarray(phi[1], float)
    return k.a + 2 * k.b * np.cos(p1) + 2 * k.c * np.cos(p2) + 2 * k.d * np.cos(p1 - p2)


# ---------------------------------------------------------------- phases

GENERIC = "Generic"
ONSAGER = "OnsagerCritical"
KASTELEYN = "KasteleynCritical"


@dataclass(frozen=True)
class PhaseReport:
    onsager_gap: float
    kasteleyn_gap: float
    classification: str
    min_det: float

    @property
    def is_critical(self) -> bool:
        return self.classification != GENERIC


def phase_gaps(z) -> tuple[float, float]:
    sq = [t * t for t in Activities.of(z)]
    onsager = 2.0 * max(1.0, *sq) - (1.0 + sum(sq))
    kasteleyn = 2.0 * max(sq) - sum(sq)
    return onsager, kasteleyn


def classify_phase(z, tol: float = CRITICAL_TOL, grid: int = 256) -> PhaseReport:
    if tol <= 0:
        raise ValueError("tol must be positive")
    og, kg = phase_gaps(z)
    if abs(og) <= tol:
        cls = ONSAGER
    elif abs(kg) <= tol:
        cls = KASTELEYN
    else:
        cls = GENERIC
    # the grid contains 0 and pi, where the Onsager zeros sit
    ph = 2 * np.pi * np.arange(grid) / grid
    min_det = float(det_lambda(z, np.meshgrid(ph, ph, indexing="ij")).min())
    return PhaseReport(og, kg, cls, min_det)


def require_generic(z, tol: float = CRITICAL_TOL) -> None:
    og, kg = phase_gaps(z)
    if abs(og) <= tol or abs(kg) <= tol:
        raise CriticalActivityError(
            f"activities {Activities.of(z).as_tuple()} lie on a phase boundary "
            f"(onsager_gap={og:.3g}, kasteleyn_gap={kg:.3g})")


# ---------------------------------------------------------------- free energy

def _free_energy_grid(z, n: int) -> float:
    # midpoint-shifted grid never hits phi in {0, pi}
    ph = 2 * np.pi * (np.arange(n) + 0.5) / n
    det = det_lambda(z, np.meshgrid(ph, ph, indexing="ij"))
    return 0.5 * float(np.mean(np.log(det)))


def free_energy(z, quad_order: int = DEFAULT_QUAD_ORDER, tol: float = QUAD_TOL) -> float:
    """Free energy (log partition function) per elementary cell.

    Periodic trapezoidal rule at ``quad_order`` and twice that; raises
    :class:`QuadratureError` when the two differ by more than ``tol``, which
    happens on and near the critical lines.
    """
    if quad_order < 4:
        raise ValueError("quad_order must be >= 4")
    f1 = _free_energy_grid(z, quad_order)
    f2 = _free_energy_grid(z, 2 * quad_order)
    if abs(f2 - f1) > tol:
        raise QuadratureError(
            f"free energy not converged at quad_order={quad_order}: |dF|={abs(f2 - f1):.3g}",
            estimate=f2)
    return f2


def free_energy_line(z, epsabs: float = 1e-13) -> float:
    """Free energy via the closed-form phi1 integral and adaptive phi2 quadrature.

    Writing ``det = alpha + beta cos phi1 + gamma sin phi1`` the inner
    average of the logarithm is ``log((alpha + sqrt(alpha^2 - beta^2 -
    gamma^2)) / 2)``.  The remaining integrand has at most a square-root
    kink, so this route also works on the critical lines.
    """
    k = det_coefficients(z)

    def inner(p2):
        alpha = k.a + 2 * k.c * math.cos(p2)
        beta = 2 * k.b + 2 * k.d * math.cos(p2)
        gamma = 2 * k.d * math.sin(p2)
        disc = max(alpha * alpha - beta * beta - gamma * gamma, 0.0)
        return math.log(0.5 * (alpha + math.sqrt(disc)))

    val, _ = integrate.quad(inner, 0.0, 2 * np.pi, points=[np.pi], limit=400,
                            epsabs=epsabs, epsrel=1e-13)
    return 0.5 * val / (2 * np.pi)


# ---------------------------------------------------------------- couplings

@dataclass(frozen=True)
class CouplingValue:
    x: int
    y: int
    p1: int
    p2: int
    value: float


class CouplingTable:
    """All couplings ``[x, y]_{p q}`` for one activity vector and grid size.

    ``values[x % N, y % N, p - 1, q - 1]``; offsets beyond ``N // 4`` are
    refused because trapezoidal aliasing grows there.
    """

    def __init__(self, z: Activities, quad_order: int, values: np.ndarray,
                 imag_residue: float, shifted: bool):
        self.z = z
        self.quad_order = quad_order
        self.values = values
        self.imag_residue = imag_residue
        self.shifted = shifted
        self.values.setflags(write=False)
        half = quad_order // 2
        shell = np.abs(values[half]).max(), np.abs(values[:, half]).max()
        # contamination from the periodic images is of the order of the far shell
        self.aliasing_error = float(max(shell))

    @property
    def max_offset(self) -> int:
        return self.quad_order // 4

    def block(self, x: int, y: int) -> np.ndarray:
        if abs(x) > self.max_offset or abs(y) > self.max_offset:
            raise ValueError(f"offset ({x},{y}) exceeds quad_order/4 = {self.max_offset}; "
                             "raise quad_order")
        n = self.quad_order
        return self.values[x % n, y % n]

    def __call__(self, x: int, y: int, p1: int, p2: int) -> float:
        return float(self.block(x, y)[p1 - 1, p2 - 1])


@functools.lru_cache(maxsize=32)
def _coupling_table_cached(z: tuple, quad_order: int, shifted: bool) -> CouplingTable:
    n = quad_order
    h = np.pi / n if shifted else 0.0
    ph = 2 * np.pi * np.arange(n) / n + h
    p1, p2 = np.meshgrid(ph, ph, indexing="ij")
    lam = lambda_grid(z, p1, p2)
    det = det_lambda(z, (p1, p2))
    if det.min() <= 1e-12 * det_coefficients(z).a:
        raise CriticalActivityError(
            f"det(lambda) vanishes on the quadrature grid for z={z}; activities are critical")
    inv = np.linalg.inv(lam)
    tab = np.fft.fft2(inv, axes=(0, 1)) / (n * n)
    if shifted:
        r = np.fft.fftfreq(n, 1.0 / n)
        phase = np.exp(-1j * h * (r[:, None] + r[None, :]))
        tab = tab * phase[:, :, None, None]
    imag = float(np.abs(tab.imag).max())
    return CouplingTable(Activities.of(z), n, np.ascontiguousarray(tab.real), imag, shifted)


def coupling_table(z, quad_order: int = DEFAULT_QUAD_ORDER, allow_critical: bool = False,
                   imag_tol: float = QUAD_TOL) -> CouplingTable:
    z = Activities.of(z)
    if quad_order < 4:
        raise ValueError("quad_order must be >= 4")
    if not allow_critical:
        require_generic(z)
    table = _coupling_table_cached(z.as_tuple(), int(quad_order), bool(allow_critical))
    if table.imag_residue > imag_tol:
        raise QuadratureError(f"coupling table has imaginary residue {table.imag_residue:.3g}")
    return table


def coupling(z, x: int, y: int, p1: int, p2: int,
             quad_order: int = DEFAULT_QUAD_ORDER, tol: float = QUAD_TOL) -> CouplingValue:
    table = coupling_table(z, quad_order)
    if table.aliasing_error > tol:
        raise QuadratureError(
            f"couplings not converged at quad_order={quad_order} "
            f"(aliasing estimate {table.aliasing_error:.3g})")
    return CouplingValue(x, y, p1, p2, table(x, y, p1, p2))


def quadrature_convergence(z, quad_order: int, radius: int | None = None) -> float:
    """Max change of the couplings within ``radius`` when quad_order is doubled."""
    t1 = coupling_table(z, quad_order)
    t2 = coupling_table(z, 2 * quad_order)
    r = t1.max_offset if radius is None else radius
    diff = 0.0
    for x in range(-r, r + 1):
        for y in range(-r, r + 1):
            diff = max(diff, float(np.abs(t1.block(x, y) - t2.block(x, y)).max()))
    return diff


# ---------------------------------------------------------------- decay rates

@dataclass(frozen=True)
class DecayRates:
    """Exponential decay rates of the couplings along e1 (t1) and e2 (t2).

    ``circle_t1``/``circle_t2`` are the cruder bounds obtained by keeping
    the second variable on the unit circle.
    """

    t1: float
    t2: float
    critical: bool = False
    circle_t1: float = math.inf
    circle_t2: float = math.inf


def _quadratic_roots(A, B, C):
    """Roots of ``A v^2 + B v + C`` as (small, large); large is inf when A == 0."""
    A, B, C = np.broadcast_arrays(*(np.asarray(t, complex) for t in (A, B, C)))
    D = np.sqrt(B * B - 4 * A * C)
    q1, q2 = -(B + D) / 2, -(B - D) / 2
    q = np.where(np.abs(q1) >= np.abs(q2), q1, q2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_small = np.where(q != 0, C / np.where(q != 0, q, 1), 0)
        r_large = np.where(A != 0, q / np.where(A != 0, A, 1), np.inf)
    s, l = np.abs(r_small), np.abs(r_large)
    return np.minimum(s, l), np.maximum(s, l)


def _v_coefficients(k: DetCoefficients, w):
    # v w det(lambda) = v^2 (b w + d) + v (a w + c (w^2 + 1)) + w (b + d w)
    return k.b * w + k.d, k.a * w + k.c * (w * w + 1), w * (k.b + k.d * w)


def _order(k: DetCoefficients, s1: float, s2: float) -> tuple[int, int]:
    """Numbers of v- and w-roots inside the torus |v| = e^s1, |w| = e^s2."""
    w = np.exp(s2 + 0.731j)
    v = np.exp(s1 + 1.913j)
    kt = DetCoefficients(k.a, k.c, k.b, k.d)
    counts = []
    for coeffs, s in ((_v_coefficients(k, w), s1), (_v_coefficients(kt, v), s2)):
        sm, lg = _quadratic_roots(*coeffs)
        counts.append(int(sm < math.exp(s)) + int(lg < math.exp(s)))
    return counts[0], counts[1]


def _slice_gaps(k: DetCoefficients, s2: np.ndarray, theta: np.ndarray):
    w = np.exp(s2[:, None] + 1j * theta[None, :])
    sm, lg = _quadratic_roots(*_v_coefficients(k, w))
    with np.errstate(divide="ignore"):
        return np.log(sm.max(axis=1)), np.log(lg.min(axis=1)), np.log(sm.min(axis=1)), np.log(lg.max(axis=1))


def _axis_rate(k: DetCoefficients, samples: int, gap_tol: float) -> tuple[float, float, bool]:
    theta = 2 * np.pi * np.arange(samples) / samples
    lo0, hi0, _, _ = _slice_gaps(k, np.array([0.0]), theta)
    circle = float(-lo0[0])
    if not hi0[0] - lo0[0] > gap_tol:
        return 0.0, 0.0, True
    origin = _order(k, 0.0, 0.0)

    def best_on(grid):
        lo, hi, _, _ = _slice_gaps(k, grid, theta)
        best, arg = -math.inf, 0.0
        for s2, l, h in zip(grid, lo, hi):
            if not h - l > gap_tol or h <= best:
                continue
            if _order(k, 0.5 * (l + h), s2) != origin:
                continue
            best, arg = float(h), float(s2)
        return best, arg

    best, arg = best_on(np.linspace(-6.0, 6.0, 2401))
    step = 12.0 / 2400
    fine, _ = best_on(np.linspace(arg - step, arg + step, 401))
    # the convergence domain is symmetric under s -> -s, so the upper edge
    # along s1 equals minus the lower edge
    return max(best, fine), circle, False


def predict_decay_rates(z, samples: int = 2048, gap_tol: float = 1e-7) -> DecayRates:
    """Exact exponential decay rates of the couplings along e1 and e2.

    The couplings are Laurent coefficients of ``1 / det(lam)`` (times a
    polynomial).  For fixed ``|w| = e^s2`` the roots ``v_-`` and ``v_+`` of
    ``v w det = 0`` bound an annulus free of singularities; the rate along
    e1 is the largest ``log min|v_-|`` over the slices that belong to the
    singularity-free region containing the unit torus.  Restricting to
    ``s2 = 0`` gives the cruder circle bound ``-log max|v_+|``.
    """
    z = Activities.of(z)
    k = det_coefficients(z)
    if max(abs(k.b), abs(k.c), abs(k.d)) <= 1e-14 * k.a:
        # det is constant: couplings have finite support
        return DecayRates(math.inf, math.inf, False, math.inf, math.inf)
    t1, c1, crit1 = _axis_rate(k, samples, gap_tol)
    t2, c2, crit2 = _axis_rate(DetCoefficients(k.a, k.c, k.b, k.d), samples, gap_tol)
    return DecayRates(t1, t2, crit1 or crit2, c1, c2)

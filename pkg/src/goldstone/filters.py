"""Smooth spectral window g, annular wavepacket profile f, and filter applies.

The energy window g vanishes outside (epsilon, gamma), equals one on
[2*epsilon, gamma - delta_gamma], and is C-infinity via the standard
exp(-1/s) mollifier.  The time-domain picture is never materialised: every
use reduces to g(H - E0) acting on a vector, realised either exactly through
the dense eigensystem or by a certified Chebyshev expansion.

The wavepacket parameter `p` is the grid momentum magnitude being excited;
the smooth profile lives on the annulus [R/2, R] with R = 4p/3, which puts
|k| = p in the middle of the unit plateau [5R/8, 7R/8].  Grid momenta at the
target magnitude therefore carry weight exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .eigensolver import (DENSE_CAP_DEFAULT, GroundState, SpectralDecomposition,
                          dense_spectrum, extremal_estimates)
from .lattice import Lattice
from .operators import SparseHermitianOperator

__all__ = [
    "FilterSpec",
    "WavepacketSpec",
    "WavepacketWeights",
    "GFilter",
    "smoothstep",
    "build_g",
    "build_f",
    "ChebyshevExpansion",
    "make_chebyshev_expansion",
    "apply_filter",
    "FilterDegreeError",
    "EmptySupportError",
    "DEGREE_CAP_DEFAULT",
    "INTERVAL_INFLATION",
]

DEGREE_CAP_DEFAULT = 32768
INTERVAL_INFLATION = 0.05


class FilterDegreeError(RuntimeError):
    """Requested uniform accuracy unreachable at the degree cap."""


class EmptySupportError(ValueError):
    """No grid momentum receives wavepacket weight on this lattice."""


def smoothstep(s):
    """C-infinity monotone step: 0 for s <= 0, 1 for s >= 1.

    sigma(s) = psi(s) / (psi(s) + psi(1-s)) with psi(s) = exp(-1/s); the
    construction gives sigma(s) + sigma(1-s) = 1 exactly.
    """
    arr = np.asarray(s, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.where(arr >= 1.0, 1.0, 0.0)
    mid = (arr > 0.0) & (arr < 1.0)
    sm = arr[mid]
    a = np.exp(-1.0 / sm)
    b = np.exp(-1.0 / (1.0 - sm))
    out[mid] = a / (a + b)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class FilterSpec:
    """Parameters of the energy window: support (epsilon, gamma), unit
    plateau [2*epsilon, gamma - delta_gamma]."""

    epsilon: float
    gamma: float
    delta_gamma: float

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta_gamma > 0):
            raise ValueError("epsilon and delta_gamma must be positive")
        if not (2 * self.epsilon < self.gamma - self.delta_gamma):
            raise ValueError(
                f"need 2*epsilon < gamma - delta_gamma, got "
                f"2*{self.epsilon} >= {self.gamma} - {self.delta_gamma}")


@dataclass(frozen=True)
class GFilter:
    """Evaluable energy window; values in [0, 1]."""

    spec: FilterSpec

    def __call__(self, E):
        s = self.spec
        return (smoothstep((np.asarray(E, dtype=float) - s.epsilon) / s.epsilon)
                * smoothstep((s.gamma - np.asarray(E, dtype=float)) / s.delta_gamma))

    def sample_table(self, lo: float, hi: float, n: int) -> np.ndarray:
        xs = np.linspace(lo, hi, n)
        return np.column_stack([xs, self(xs)])


def build_g(spec: FilterSpec) -> GFilter:
    return GFilter(spec)


@dataclass(frozen=True)
class WavepacketSpec:
    """Wavepacket request: excite grid momenta of magnitude p (< kappa).

    The profile's annulus outer radius is 4p/3; the cap applies to that
    radius, mirroring the role of kappa as an upper bound on the wavepacket
    momentum scale.
    """

    p: float
    kappa: float = np.pi / 2

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("target momentum magnitude must be positive")
        if not self.annulus_radius < self.kappa:
            raise ValueError(
                f"annulus radius {self.annulus_radius:.6f} = 4p/3 must stay "
                f"below kappa = {self.kappa:.6f}")

    @property
    def annulus_radius(self) -> float:
        return 4.0 * self.p / 3.0

    def profile(self, kmag):
        """Radial weight: smooth bump supported on [R/2, R], = 1 on [5R/8, 7R/8]."""
        r = self.annulus_radius
        kk = np.asarray(kmag, dtype=float)
        return smoothstep((kk - r / 2) / (r / 8)) * smoothstep((r - kk) / (r / 8))


@dataclass(frozen=True, eq=False)
class WavepacketWeights:
    """Wavepacket profile sampled on one lattice's momentum grid."""

    spec: WavepacketSpec
    lattice: Lattice
    weights: dict          # momentum label -> weight > 0
    annulus: tuple         # labels in the closed annulus [R/2, R]

    @property
    def support(self) -> tuple:
        return tuple(self.weights)

    def sample_table(self, n: int = 2001) -> np.ndarray:
        xs = np.linspace(0.0, 1.25 * self.spec.annulus_radius, n)
        return np.column_stack([xs, self.spec.profile(xs)])


def build_f(spec: WavepacketSpec, lattice: Lattice) -> WavepacketWeights:
    r = spec.annulus_radius
    weights = {}
    annulus = []
    for n in lattice.momenta:
        kmag = lattice.kmag(n)
        if r / 2 - 1e-9 <= kmag <= r + 1e-9:
            annulus.append(n)
        w = float(spec.profile(kmag))
        if w > 0.0:
            weights[n] = w
    if not weights:
        raise EmptySupportError(
            f"no grid momentum receives weight for p = {spec.p:.6f} on "
            f"lattice {lattice.spec.extents}")
    return WavepacketWeights(spec, lattice, weights, tuple(annulus))


# -- Chebyshev machinery -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChebyshevExpansion:
    """Certified polynomial approximation of fn on [lo, hi]."""

    coeffs: np.ndarray
    lo: float
    hi: float
    sup_error: float

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def evaluate(self, x):
        t = (2.0 * np.asarray(x, dtype=float) - (self.hi + self.lo)) / (self.hi - self.lo)
        b1 = np.zeros_like(t)
        b2 = np.zeros_like(t)
        for cj in self.coeffs[:0:-1]:
            b1, b2 = 2.0 * t * b1 - b2 + cj, b1
        return t * b1 - b2 + self.coeffs[0]

    def apply(self, H: SparseHermitianOperator, v: np.ndarray) -> np.ndarray:
        """p(H) v by the Clenshaw-style three-term recurrence."""
        al = 2.0 / (self.hi - self.lo)
        be = -(self.hi + self.lo) / (self.hi - self.lo)
        c = self.coeffs
        t0 = v.astype(np.result_type(H.data, v), copy=True)
        w = c[0] * t0
        if len(c) == 1:
            return w
        t1 = al * H.matvec(t0) + be * t0
        w += c[1] * t1
        for j in range(2, len(c)):
            t2 = 2.0 * (al * H.matvec(t1) + be * t1) - t0
            w += c[j] * t2
            t0, t1 = t1, t2
        return w


def _cheb_coeffs(fn, lo: float, hi: float, degree: int) -> np.ndarray:
    j = np.arange(degree + 1)
    nodes = np.cos(np.pi * (j + 0.5) / (degree + 1))
    xs = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    vals = np.asarray(fn(xs), dtype=float)
    c = dct(vals, type=2) / (degree + 1)
    c[0] *= 0.5
    return c


def make_chebyshev_expansion(fn, lo: float, hi: float, tol: float,
                             max_degree: int = DEGREE_CAP_DEFAULT,
                             start_degree: int = 512,
                             check_points: int = 4001) -> ChebyshevExpansion:
    """Smallest-degree Chebyshev interpolant with verified sup error <= tol.

    Degrees double until the measured error on a dense sample grid passes;
    the accepted expansion is then truncated wherever the coefficient tail
    stays below tol/2.
    """
    xs = np.linspace(lo, hi, check_points)
    target = np.asarray(fn(xs), dtype=float)
    degree = start_degree
    while True:
        c = _cheb_coeffs(fn, lo, hi, degree)
        tail = np.cumsum(np.abs(c[::-1]))[::-1]
        keep = np.nonzero(tail > tol / 2)[0]
        n_keep = int(keep[-1]) + 1 if len(keep) else 1
        cand = ChebyshevExpansion(c[:n_keep], lo, hi, np.nan)
        err = float(np.max(np.abs(cand.evaluate(xs) - target)))
        if err <= tol:
            return ChebyshevExpansion(c[:n_keep], lo, hi, err)
        if degree >= max_degree:
            raise FilterDegreeError(
                f"sup error {err:.3e} > tol {tol:.3e} at degree cap "
                f"{max_degree} on [{lo:.4g}, {hi:.4g}]")
        degree = min(2 * degree, max_degree)


def spectral_interval(H: SparseHermitianOperator, gs: GroundState | None = None,
                      inflation: float = INTERVAL_INFLATION) -> tuple[float, float]:
    """Enclosing interval from Lanczos extremal estimates, inflated."""
    lo_est, hi_est = extremal_estimates(H)
    if gs is not None:
        lo_est = min(lo_est, gs.energy)
    width = max(hi_est - lo_est, 1e-12)
    return lo_est - inflation * width, hi_est + inflation * width


def apply_filter(H: SparseHermitianOperator, gs: GroundState, fn, v: np.ndarray,
                 tol: float = 1e-8, *, method: str = "auto",
                 dense_cap: int = DENSE_CAP_DEFAULT,
                 degree_cap: int = DEGREE_CAP_DEFAULT,
                 bounds: tuple[float, float] | None = None,
                 dec: SpectralDecomposition | None = None) -> np.ndarray:
    """w = fn(H - E0) v.

    method "dense" uses the eigensystem oracle (dims up to `dense_cap`);
    "chebyshev" uses a certified expansion over the (inflated) spectral
    interval; "auto" picks dense whenever it is allowed.
    """
    if method == "auto":
        method = "dense" if H.dim <= dense_cap else "chebyshev"
    if method == "dense":
        if dec is None:
            dec = dense_spectrum(H, dense_cap)
        amps = dec.eigenvectors.conj().T @ v
        return dec.eigenvectors @ (fn(dec.eigenvalues - gs.energy) * amps)
    if method != "chebyshev":
        raise ValueError(f"unknown method {method!r}")
    lo, hi = bounds if bounds is not None else spectral_interval(H, gs)
    expansion = make_chebyshev_expansion(
        lambda x: fn(np.asarray(x) - gs.energy), lo, hi, tol, degree_cap)
    return expansion.apply(H, v)

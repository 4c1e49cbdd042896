"""Finite-volume inequality suite and wavepacket excitation energies.

Everything here evaluates expectation values in the original (untransformed)
basis; translation-invariance statements are consequences of the rotated
frame and show up as exact cross-momentum cancellations.  Each inequality is
reported with both sides and the signed margin, never as a bare boolean.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .eigensolver import (DENSE_CAP_DEFAULT, GroundState, SolverError,
                          SolverOptions, SpectralDecomposition, deflated_solve,
                          dense_spectrum, ground_state, ground_state_from_dense)
from .filters import (GFilter, WavepacketSpec, WavepacketWeights, build_f,
                      make_chebyshev_expansion, spectral_interval)
from .lattice import Lattice
from .operators import (build_hamiltonian, fourier_spin, staggered_operator)

__all__ = [
    "Tolerances",
    "BoundEntry",
    "BoundReport",
    "DispersionRecord",
    "SystemContext",
    "EpsilonChoiceError",
    "VanishingDenominatorError",
    "staggered_magnetization",
    "sum_rule_entry",
    "double_commutator_entry",
    "irb_entry",
    "window_entries",
    "bound_report",
    "filtered_moments",
    "choose_epsilon",
    "excitation_energy",
    "qmode_trend",
    "extrapolate_ms",
    "V_MIN_LADDER_DEFAULT",
]

V_MIN_LADDER_DEFAULT = (0.5, 0.25, 0.1, 0.05, 0.025)


class EpsilonChoiceError(RuntimeError):
    """No ladder value gives a positive bracket on the annulus."""


class VanishingDenominatorError(RuntimeError):
    """Filter window captures no weight for this wavepacket."""

    def __init__(self, message, per_momentum):
        super().__init__(message)
        self.per_momentum = per_momentum


@dataclass(frozen=True)
class Tolerances:
    algebraic: float = 1e-10     # operator identities, sum rules
    resolvent: float = 1e-8      # solver- and filter-limited comparisons
    solver: float = 1e-10        # iterative solve relative residual
    chebyshev: float = 1e-8      # uniform filter-approximation error


@dataclass(frozen=True)
class BoundEntry:
    """One verified (in)equality: lhs <= rhs for kind 'upper', lhs == rhs
    for kind 'equality'; margin >= -tolerance iff passed."""

    name: str
    momentum: tuple | None
    axis: int | None
    lhs: float
    rhs: float
    margin: float
    tolerance: float
    passed: bool
    kind: str = "upper"
    note: str = ""


@dataclass
class BoundReport:
    lattice_extents: tuple
    spin: float
    B: float
    entries: list = field(default_factory=list)

    def add(self, entry: BoundEntry) -> None:
        self.entries.append(entry)

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e.passed]


@dataclass
class PerMomentum:
    momentum: tuple
    kvec: tuple
    weight: float
    num_k: float
    den_k: float


@dataclass
class DispersionRecord:
    lattice_extents: tuple
    spin: float
    B: float
    mode: str                   # "zero" (around k = 0) or "staggered" (around Q)
    p_target: float
    annulus_radius: float
    kappa: float
    epsilon: float
    gamma: float
    delta_gamma: float
    v_min: float
    m_B: float
    numerator: float
    denominator: float
    delta_e: float
    per_k: list
    trend: list | None = None            # [(dispersion value, momentum, den)]
    cross_momentum_max: float | None = None
    c0_estimate: float | None = None
    v_max_estimate: float | None = None
    ms_estimate: dict | None = None


def _upper(name, momentum, axis, lhs, rhs, tol, note="") -> BoundEntry:
    margin = rhs - lhs
    return BoundEntry(name, momentum, axis, float(lhs), float(rhs),
                      float(margin), tol, bool(margin >= -tol), "upper", note)


def _equality(name, momentum, axis, lhs, rhs, tol, note="") -> BoundEntry:
    margin = -abs(lhs - rhs)
    return BoundEntry(name, momentum, axis, float(lhs), float(rhs),
                      float(margin), tol, bool(margin >= -tol), "equality", note)


class SystemContext:
    """Shared working set for one (lattice, B): Hamiltonian, ground state,
    dense oracle when the dimension allows, and cached operator-on-ground
    vectors."""

    def __init__(self, lattice: Lattice, B: float, *,
                 dense_cap: int = DENSE_CAP_DEFAULT,
                 tolerances: Tolerances = Tolerances(),
                 solver_opts: SolverOptions = SolverOptions(),
                 hamiltonian=None, ground=None,
                 force_sparse: bool = False):
        self.lattice = lattice
        self.B = B
        self.tol = tolerances
        self.solver_opts = solver_opts
        self.dense_cap = dense_cap
        self.H = hamiltonian if hamiltonian is not None else build_hamiltonian(lattice, B)
        self.dense: SpectralDecomposition | None = None
        if self.H.dim <= dense_cap and not force_sparse:
            self.dense = dense_spectrum(self.H, dense_cap)
        if ground is not None:
            self.gs = ground
        elif self.dense is not None:
            self.gs = ground_state_from_dense(self.dense, lattice, B)
        else:
            self.gs = ground_state(self.H, lattice, B, solver_opts)
        self._sk_cache: OrderedDict = OrderedDict()
        self._interval: tuple[float, float] | None = None
        self._expansions: dict = {}

    # -- vectors ---------------------------------------------------------

    def sk_phi(self, n, axis: int) -> np.ndarray:
        """hat S_n^(axis) |phi0>, cached."""
        key = (tuple(n), axis)
        if key not in self._sk_cache:
            op = fourier_spin(self.lattice, n, axis)
            self._sk_cache[key] = op.matvec(
                self.gs.vector.astype(complex, copy=False))
            while len(self._sk_cache) > 96:
                self._sk_cache.popitem(last=False)
        return self._sk_cache[key]

    def spectral_bounds(self) -> tuple[float, float]:
        if self._interval is None:
            if self.dense is not None:
                lo = float(self.dense.eigenvalues[0])
                hi = float(self.dense.eigenvalues[-1])
                width = max(hi - lo, 1e-12)
                self._interval = (lo - 0.01 * width, hi + 0.01 * width)
            else:
                self._interval = spectral_interval(self.H, self.gs)
        return self._interval

    def filter_expansion(self, g: GFilter):
        key = (g.spec, self.tol.chebyshev)
        if key not in self._expansions:
            lo, hi = self.spectral_bounds()
            e0 = self.gs.energy
            self._expansions[key] = make_chebyshev_expansion(
                lambda x: g(np.asarray(x) - e0), lo, hi, self.tol.chebyshev)
        return self._expansions[key]

    def filtered_vector(self, g: GFilter, v: np.ndarray,
                        method: str = "auto") -> np.ndarray:
        if method == "auto":
            method = "dense" if self.dense is not None else "chebyshev"
        if method == "dense":
            if self.dense is None:
                raise ValueError("dense oracle unavailable at this dimension")
            amps = self.dense.eigenvectors.conj().T @ v
            return self.dense.eigenvectors @ (
                g(self.dense.eigenvalues - self.gs.energy) * amps)
        return self.filter_expansion(g).apply(self.H, v)

    def h_shifted(self, v: np.ndarray) -> np.ndarray:
        """(H - E0) v."""
        return self.H.matvec(v) - self.gs.energy * v


# -- elementary quantities ---------------------------------------------------

def staggered_magnetization(gs: GroundState) -> float:
    """m_B = N^-1 sum_x sigma(x) <phi0| S_x^(1) |phi0>."""
    op = staggered_operator(gs.lattice)
    val = np.vdot(gs.vector, op.matvec(gs.vector))
    if abs(val.imag) > 1e-12:
        raise ArithmeticError(f"staggered magnetization not real: {val}")
    return float(val.real) / gs.lattice.n_sites


def sum_rule_entry(ctx: SystemContext, n) -> BoundEntry:
    """Check m_B = -i <[S2_{-k}, S3_{Q+k}]> at one grid momentum."""
    lat = ctx.lattice
    n = tuple(n)
    nQ = lat.shift_q(n)
    # <phi| S2_{-k} S3_{Q+k} |phi> = <S2_k phi, S3_{Q+k} phi>
    t1 = np.vdot(ctx.sk_phi(n, 2), ctx.sk_phi(nQ, 3))
    # <phi| S3_{Q+k} S2_{-k} |phi> = <S3_{-(Q+k)} phi, S2_{-k} phi>
    t2 = np.vdot(ctx.sk_phi(lat.negate(nQ), 3), ctx.sk_phi(lat.negate(n), 2))
    value = -1j * (t1 - t2)
    m_b = ctx_m_b(ctx)
    note = f"imag={value.imag:.3e}"
    return _equality("sum_rule", n, None, value.real, m_b,
                     ctx.tol.algebraic, note)


def double_commutator_entry(ctx: SystemContext, n, axis: int) -> BoundEntry:
    """<[S_{-k}, [H, S_k]]> <= 4 S^2 E_k + B S on the ground state.

    With E0 the ground energy, the double commutator reduces to
    <u,(H-E0)u> + <w,(H-E0)w> for u = S_k phi0, w = S_{-k} phi0.
    """
    lat = ctx.lattice
    n = tuple(n)
    u = ctx.sk_phi(n, axis)
    w = ctx.sk_phi(lat.negate(n), axis)
    lhs = np.vdot(u, ctx.h_shifted(u)).real + np.vdot(w, ctx.h_shifted(w)).real
    s = ctx.lattice.spec.spin
    rhs = 4 * s * s * lat.dispersion(n) + ctx.B * s
    return _upper("double_commutator", n, axis, lhs, rhs, ctx.tol.algebraic)


def _susceptibility_dense(ctx: SystemContext, v: np.ndarray) -> float:
    dec = ctx.dense
    amps = dec.eigenvectors.conj().T @ v
    de = dec.eigenvalues - dec.eigenvalues[0]
    mask = de > 0
    return float(np.sum(np.abs(amps[mask]) ** 2 / de[mask]))


def irb_entry(ctx: SystemContext, n, axis: int) -> BoundEntry:
    """Infrared bound: <S_{-k} (1-P0)(H-E0)^-1 S_k> <= 1/(2 E_{k+Q})."""
    lat = ctx.lattice
    n = tuple(n)
    if n == lat.q_ordering:
        raise ValueError("infrared bound has no finite right side at k = Q")
    rhs = 1.0 / (2.0 * lat.dispersion(lat.shift_q(n)))
    v = ctx.sk_phi(n, axis)
    note = ""
    if ctx.dense is not None:
        lhs = _susceptibility_dense(ctx, v)
        try:
            x = deflated_solve(ctx.H, ctx.gs, v, tol=ctx.tol.solver)
            lhs_iter = float(np.vdot(v, x).real)
            note = f"dense_vs_solver={abs(lhs - lhs_iter):.3e}"
        except SolverError as exc:
            note = f"solver inconclusive: {exc}"
    else:
        x = deflated_solve(ctx.H, ctx.gs, v, tol=ctx.tol.solver)
        lhs = float(np.vdot(v, x).real)
    return _upper("irb", n, axis, lhs, rhs, ctx.tol.resolvent, note)


def filtered_moments(ctx: SystemContext, g: GFilter, n, axis: int = 2,
                     method: str = "auto") -> tuple[float, float]:
    """(num_k, den_k) for w = g(H - E0) S_k^(axis) phi0:
    den_k = <w, w>, num_k = <w, (H - E0) w>."""
    v = ctx.sk_phi(n, axis)
    w = ctx.filtered_vector(g, v, method)
    den = float(np.vdot(w, w).real)
    num_c = np.vdot(w, ctx.h_shifted(w))
    return float(num_c.real), den


def choose_epsilon(m_b: float, wp: WavepacketSpec, lattice: Lattice,
                   ladder=V_MIN_LADDER_DEFAULT, *,
                   gamma: float | None = None,
                   delta_gamma: float | None = None):
    """Pick v_min as the largest ladder fraction of the annulus scale.

    The scale is the largest velocity keeping the sum-rule bracket
    m_B/2 - v R / sqrt(E_{k+Q} E_k) positive at every grid momentum of the
    closed annulus [R/2, R]; ladder entries are fractions of it.  Returns
    (v_min, epsilon = v_min * R).
    """
    if m_b <= 0:
        raise EpsilonChoiceError(
            f"staggered magnetization {m_b:.3e} is not positive; "
            "the bracket condition is unsatisfiable")
    weights = build_f(wp, lattice)
    if not weights.annulus:
        raise EpsilonChoiceError("no grid momenta in the annulus")
    r = wp.annulus_radius
    scale = min(
        m_b * np.sqrt(lattice.dispersion(lattice.shift_q(n))
                      * lattice.dispersion(n)) / (2.0 * r)
        for n in weights.annulus)
    for frac in sorted(ladder, reverse=True):
        v = frac * scale
        eps = v * r
        bracket_ok = all(
            m_b / 2.0 - v * r / np.sqrt(
                lattice.dispersion(lattice.shift_q(n)) * lattice.dispersion(n)) > 0
            for n in weights.annulus)
        window_ok = True
        if gamma is not None and delta_gamma is not None:
            window_ok = 2 * eps < gamma - delta_gamma
        if bracket_ok and window_ok:
            return v, eps
    raise EpsilonChoiceError(
        f"no ladder value keeps the bracket positive (m_B = {m_b:.3e})")


def _denominator_formula(s: float, B: float, ek: float, ekq: float,
                         bracket: float, gamma: float, dgamma: float) -> float:
    return (np.sqrt(2.0 * ek / (4 * s * s * ekq + B * s)) * bracket ** 2
            - (4 * s * s * ek + B * s) / (gamma - dgamma))


def window_entries(ctx: SystemContext, g: GFilter, v_min: float, r: float,
                   n, den_k: float | None = None) -> list[BoundEntry]:
    """Window-decomposition inequalities at momentum n (not 0 or Q).

    Emits window_small, window_large (dense oracle only) and the final
    denominator lower bound D(k, B) <= den_k.  With no dense oracle only the
    final check runs, and that is recorded in the entry note.
    """
    lat = ctx.lattice
    s = lat.spec.spin
    n = tuple(n)
    eps = g.spec.epsilon
    gamma, dgamma = g.spec.gamma, g.spec.delta_gamma
    ek = lat.dispersion(n)
    ekq = lat.dispersion(lat.shift_q(n))
    if ek <= 1e-12 or ekq <= 1e-12:
        raise ValueError("window bounds need E_k and E_{k+Q} positive")
    entries: list[BoundEntry] = []
    tol = ctx.tol.resolvent

    if den_k is None:
        _, den_k = filtered_moments(ctx, g, n, 2)

    if ctx.dense is not None:
        dec = ctx.dense
        e0 = ctx.gs.energy
        amps2 = dec.eigenvectors.conj().T @ ctx.sk_phi(n, 2)
        amps3 = dec.eigenvectors.conj().T @ ctx.sk_phi(lat.shift_q(n), 3)
        small = dec.window_mask(0.0, 2 * eps, lo_open=True, hi_open=False)
        lhs_small = abs(np.sum(np.conj(amps2[small]) * amps3[small]))
        rhs_small = eps / np.sqrt(ekq * ek)
        entries.append(_upper("window_small", n, None, lhs_small, rhs_small, tol))

        excited = (dec.eigenvalues - e0) > 1e-12
        lhs_large = abs(np.sum(np.conj(amps2[excited]) * amps3[excited]))
        rhs_large = rhs_small + ((4 * s * s * ekq + ctx.B * s) / (2 * ek)) ** 0.25 \
            * np.sqrt(den_k + (4 * s * s * ek + ctx.B * s) / (gamma - dgamma))
        entries.append(_upper("window_large", n, None, lhs_large, rhs_large, tol))

    bracket = ctx_m_b(ctx) / 2.0 - v_min * r / np.sqrt(ekq * ek)
    d_val = _denominator_formula(s, ctx.B, ek, ekq, bracket, gamma, dgamma)
    note = "" if ctx.dense is not None else "window pieces skipped (no dense oracle)"
    if bracket < 0:
        note = (note + "; " if note else "") + "bound not binding (bracket < 0)"
        entry = _upper("denominator_lower_bound", n, None, d_val, den_k, tol, note)
        entry = BoundEntry(entry.name, entry.momentum, entry.axis, entry.lhs,
                           entry.rhs, entry.margin, entry.tolerance, True,
                           entry.kind, entry.note)
        entries.append(entry)
    else:
        entries.append(_upper("denominator_lower_bound", n, None, d_val,
                              den_k, tol, note))
    return entries


def ctx_m_b(ctx: SystemContext) -> float:
    if not hasattr(ctx, "_m_b"):
        ctx._m_b = staggered_magnetization(ctx.gs)
    return ctx._m_b


def bound_report(ctx: SystemContext, g: GFilter, v_min: float, r: float,
                 axes=(2, 3)) -> BoundReport:
    """Full inequality suite over every grid momentum at one (lattice, B).

    Because the grid is closed under the Q-shift, this also certifies the
    staggered-mode chain: its sum rule, window pieces and denominator bound
    at momentum k coincide entry for entry with the zero-mode chain at k+Q.
    """
    lat = ctx.lattice
    report = BoundReport(lat.spec.extents, lat.spec.spin, ctx.B)
    q = lat.q_ordering
    zero = tuple(0 for _ in q)
    for n in lat.momenta:
        report.add(sum_rule_entry(ctx, n))
        for axis in axes:
            report.add(double_commutator_entry(ctx, n, axis))
            if n != q:
                report.add(irb_entry(ctx, n, axis))
        if n not in (zero, q):
            report.entries.extend(window_entries(ctx, g, v_min, r, n))
    return report


def excitation_energy(ctx: SystemContext, wp: WavepacketWeights, g: GFilter,
                      v_min: float, mode: str = "zero",
                      method: str = "auto",
                      den_threshold: float = 1e-12) -> DispersionRecord:
    """Wavepacket excitation energy Delta E = num / den.

    mode "zero" uses hat S_k^(2) at the wavepacket momenta (excitation near
    momentum zero); mode "staggered" shifts every operator momentum by Q.
    Cross-momentum matrix elements are measured on the dense path and carried
    in the record; they vanish by translation covariance of the rotated frame.
    """
    if mode not in ("zero", "staggered"):
        raise ValueError(f"unknown mode {mode!r}")
    lat = ctx.lattice
    num = 0.0
    den = 0.0
    per_k = []
    wvecs = {}
    for n, weight in sorted(wp.weights.items()):
        q_op = lat.shift_q(n) if mode == "staggered" else n
        v = ctx.sk_phi(q_op, 2)
        w = ctx.filtered_vector(g, v, method)
        den_k = float(np.vdot(w, w).real)
        num_k = float(np.vdot(w, ctx.h_shifted(w)).real)
        per_k.append(PerMomentum(n, tuple(lat.kvec(n)), weight, num_k, den_k))
        num += weight ** 2 * num_k / lat.n_sites
        den += weight ** 2 * den_k / lat.n_sites
        if ctx.dense is not None:
            wvecs[n] = w
    cross = None
    if ctx.dense is not None and len(wvecs) > 1:
        cross = 0.0
        labels = sorted(wvecs)
        for i, a in enumerate(labels):
            for b in labels[i + 1:]:
                cross = max(cross,
                            abs(np.vdot(wvecs[a], ctx.h_shifted(wvecs[b]))),
                            abs(np.vdot(wvecs[a], wvecs[b])))
        cross = float(cross)
    if den <= den_threshold:
        raise VanishingDenominatorError(
            f"filter window empty for this wavepacket (den = {den:.3e})",
            per_k)
    delta_e = num / den
    spec = wp.spec
    record = DispersionRecord(
        lattice_extents=lat.spec.extents, spin=lat.spec.spin, B=ctx.B,
        mode=mode, p_target=spec.p, annulus_radius=spec.annulus_radius,
        kappa=spec.kappa, epsilon=g.spec.epsilon, gamma=g.spec.gamma,
        delta_gamma=g.spec.delta_gamma, v_min=v_min, m_B=ctx_m_b(ctx),
        numerator=num, denominator=den, delta_e=delta_e, per_k=per_k,
        cross_momentum_max=cross)
    if mode == "zero":
        _attach_c0(ctx, record, wp, g, v_min,
                   {p.momentum: p.den_k for p in per_k}, method)
    return record


def _attach_c0(ctx: SystemContext, record: DispersionRecord,
               wp: WavepacketWeights, g: GFilter, v_min: float,
               known_dens: dict, method: str) -> None:
    """c0 = min over annulus momenta of D(k, B)/R, and v_max = 2 S^2/c0."""
    lat = ctx.lattice
    s = lat.spec.spin
    r = wp.spec.annulus_radius
    m_b = ctx_m_b(ctx)
    d_over = []
    for n in wp.annulus:
        ek = lat.dispersion(n)
        ekq = lat.dispersion(lat.shift_q(n))
        if ek <= 1e-12 or ekq <= 1e-12:
            continue
        bracket = m_b / 2.0 - v_min * r / np.sqrt(ekq * ek)
        d_over.append(_denominator_formula(s, ctx.B, ek, ekq, bracket,
                                           g.spec.gamma, g.spec.delta_gamma) / r)
    if d_over:
        c0 = float(min(d_over))
        record.c0_estimate = c0
        record.v_max_estimate = float(2 * s * s / c0) if c0 > 0 else None


def qmode_trend(ctx: SystemContext, g: GFilter, method: str = "auto") -> list:
    """den_k of the staggered-mode operator at one representative momentum
    per distinct dispersion value, sorted by increasing dispersion.

    The recorded trend exposes the growth of the staggered-mode weight as
    E_k shrinks (the ~ 1/|k| behaviour at small momenta).
    """
    lat = ctx.lattice
    reps = {}
    for n in sorted(lat.momenta):
        e = round(lat.dispersion(n), 9)
        if e not in reps:
            reps[e] = n
    out = []
    for e, n in sorted(reps.items()):
        _, den_k = filtered_moments(ctx, g, lat.shift_q(n), 2, method)
        out.append((float(e), n, den_k))
    return out


def extrapolate_ms(b_values, m_values) -> dict:
    """Low-order polynomial fit of m_B against B; intercept is the estimate.

    Labelled clearly as a finite-size extrapolation: the true order parameter
    is a double limit (volume first, then field) that desk-scale data cannot
    reach.
    """
    b = np.asarray(b_values, dtype=float)
    m = np.asarray(m_values, dtype=float)
    if len(b) < 3:
        raise ValueError("need at least three ladder points")
    order = sorted(range(len(b)), key=lambda i: b[i])
    b, m = b[order], m[order]
    deg = min(2, len(b) - 1)
    coeffs = np.polyfit(b, m, deg)
    fit = np.polyval(coeffs, b)
    residuals = m - fit
    return {
        "intercept": float(coeffs[-1]),
        "coefficients": [float(c) for c in coeffs[::-1]],
        "degree": deg,
        "b_values": [float(x) for x in b],
        "m_values": [float(x) for x in m],
        "residual_max": float(np.max(np.abs(residuals))),
        "label": "estimate - finite-size extrapolation, not the "
                 "infinite-volume double limit",
    }

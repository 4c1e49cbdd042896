"""Ground states (restarted Lanczos), dense spectral oracle, deflated solves.

The Lanczos driver keeps a fully reorthogonalised basis and restarts from the
best Ritz vector when the basis fills, trading memory for correctness at desk
scale.  The dense oracle backs every spectral-window quantity on small
systems; Ritz gap estimates are advisory only.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, LatticeSpec
from .operators import SparseHermitianOperator

__all__ = [
    "GroundState",
    "SpectralDecomposition",
    "SolverOptions",
    "SolverError",
    "ground_state",
    "dense_spectrum",
    "ground_state_from_dense",
    "deflated_solve",
    "extremal_estimates",
    "save_ground_state",
    "load_ground_state",
    "ground_state_cache_name",
]

DENSE_CAP_DEFAULT = 4096
DEGENERACY_GAP_THRESHOLD = 1e-8
GS_CACHE_MAGIC = b"GSGS"
GS_CACHE_VERSION = 1


class SolverError(RuntimeError):
    """Breakdown or non-convergence; callers must treat as inconclusive."""


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10              # Ritz residual target, relative to ||H||
    max_basis: int = 220
    max_restarts: int = 60
    seed: int = 7


@dataclass(frozen=True, eq=False)
class GroundState:
    energy: float
    vector: np.ndarray
    gap_estimate: float
    gap_is_estimate: bool
    B: float
    lattice: Lattice
    residual: float

    def projector_coefficient(self, v: np.ndarray) -> complex:
        return np.vdot(self.vector, v)

    def deflate(self, v: np.ndarray) -> np.ndarray:
        """(1 - P0) v."""
        return v - self.vector * np.vdot(self.vector, v)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruction_defect(self, H: SparseHermitianOperator) -> float:
        dense = H.to_dense()
        rebuilt = (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T
        return float(np.linalg.norm(rebuilt - dense) / max(np.linalg.norm(dense), 1e-300))

    def window_mask(self, lo: float, hi: float, lo_open=True, hi_open=True) -> np.ndarray:
        """Mask of eigenstates with excitation energy in the given interval."""
        e = self.eigenvalues - self.eigenvalues[0]
        lo_ok = e > lo if lo_open else e >= lo
        hi_ok = e < hi if hi_open else e <= hi
        return lo_ok & hi_ok


def _lanczos_sweep(matvec, dim: int, v0: np.ndarray, tol: float,
                   max_basis: int):
    """One fully reorthogonalised Lanczos sweep from v0.

    Returns (converged, theta0, ritz_vector, gap_estimate, residual_estimate).
    """
    basis = np.empty((max_basis, dim), dtype=v0.dtype)
    alphas = np.empty(max_basis)
    betas = np.empty(max_basis)
    v = v0 / np.linalg.norm(v0)
    basis[0] = v
    m = 0
    theta = ritz = None
    gap = np.inf
    res_est = np.inf
    for m in range(max_basis):
        w = matvec(basis[m])
        alphas[m] = np.real(np.vdot(basis[m], w))
        # full reorthogonalisation, twice for safety
        for _ in range(2):
            w -= basis[: m + 1].T @ (basis[: m + 1].conj() @ w)
        beta = np.linalg.norm(w)
        T = np.diag(alphas[: m + 1])
        if m > 0:
            off = betas[:m]
            T += np.diag(off, 1) + np.diag(off, -1)
        evals, evecs = np.linalg.eigh(T)
        theta = evals[0]
        gap = evals[1] - evals[0] if len(evals) > 1 else np.inf
        res_est = abs(beta * evecs[-1, 0])
        if res_est <= tol or beta <= 1e-14:
            ritz = basis[: m + 1].T @ evecs[:, 0]
            return True, theta, ritz, gap, res_est
        if m + 1 == max_basis:
            break
        betas[m] = beta
        basis[m + 1] = w / beta
    ritz = basis[: m + 1].T @ evecs[:, 0]
    return False, theta, ritz, gap, res_est


def _restarted_lowest(matvec, dim: int, v0: np.ndarray, target: float,
                      opts: SolverOptions):
    v = v0
    for _ in range(opts.max_restarts):
        converged, theta, ritz, gap, _ = _lanczos_sweep(
            matvec, dim, v, target, min(opts.max_basis, dim))
        v = ritz
        if converged:
            return theta, v / np.linalg.norm(v), gap
    raise SolverError(
        f"Lanczos did not reach residual {target:.2e} in "
        f"{opts.max_restarts} restarts of basis {opts.max_basis}")


def ground_state(H: SparseHermitianOperator, lattice: Lattice, B: float,
                 opts: SolverOptions = SolverOptions()) -> GroundState:
    """Lowest eigenpair by restarted Lanczos with full reorthogonalisation.

    At B = 0 the gap is re-estimated against the deflated operator (a plain
    Krylov space cannot see eigenvalue multiplicity), and a warning is issued
    when the ground state is numerically degenerate.
    """
    rng = np.random.default_rng(opts.seed)
    real = not np.iscomplexobj(H.data)
    v = rng.standard_normal(H.dim)
    if not real:
        v = v + 1j * rng.standard_normal(H.dim)
    scale = max(1.0, _norm_estimate(H))
    target = opts.tol * scale
    theta, v, gap = _restarted_lowest(H.matvec, H.dim, v, target, opts)
    resid = float(np.linalg.norm(H.matvec(v) - theta * v))
    energy = float(np.real(np.vdot(v, H.matvec(v))))
    if B == 0:
        gap = _deflated_gap(H, v, energy, scale, opts)
        if gap < DEGENERACY_GAP_THRESHOLD:
            warnings.warn(
                "ground state numerically degenerate at B = 0; "
                "positivity checks are disabled for this state", stacklevel=2)
    return GroundState(energy=energy, vector=v, gap_estimate=float(gap),
                       gap_is_estimate=True, B=B, lattice=lattice,
                       residual=resid)


def _deflated_gap(H: SparseHermitianOperator, phi: np.ndarray, e0: float,
                  scale: float, opts: SolverOptions) -> float:
    """E1 - E0 with E1 from Lanczos on H + shift * |phi><phi|."""
    shift = 10.0 * scale

    def matvec(x):
        return H.matvec(x) + shift * phi * np.vdot(phi, x)

    rng = np.random.default_rng(opts.seed + 1)
    v = rng.standard_normal(H.dim)
    if np.iscomplexobj(phi):
        v = v + 1j * rng.standard_normal(H.dim)
    try:
        e1, _, _ = _restarted_lowest(matvec, H.dim, v, opts.tol * scale, opts)
    except SolverError:
        return np.nan
    return float(e1 - e0)


def _norm_estimate(H: SparseHermitianOperator) -> float:
    """Cheap upper bound on ||H||: the maximal absolute row sum."""
    return _row_abs_sum_max(H)


def _row_abs_sum_max(H: SparseHermitianOperator) -> float:
    sums = np.add.reduceat(np.abs(H.data), H.indptr[:-1])
    sums[np.diff(H.indptr) == 0] = 0.0
    return float(sums.max())


def dense_spectrum(H: SparseHermitianOperator,
                   cap: int = DENSE_CAP_DEFAULT) -> SpectralDecomposition:
    """Full eigensystem oracle; refuses dimensions above the dense cap."""
    if H.dim > cap:
        raise ValueError(f"dimension {H.dim} above dense cap {cap}")
    evals, evecs = np.linalg.eigh(H.to_dense())
    return SpectralDecomposition(evals, evecs)


def ground_state_from_dense(dec: SpectralDecomposition, lattice: Lattice,
                            B: float) -> GroundState:
    gap = float(dec.eigenvalues[1] - dec.eigenvalues[0]) if dec.dim > 1 else np.inf
    return GroundState(energy=float(dec.eigenvalues[0]),
                       vector=dec.eigenvectors[:, 0].copy(),
                       gap_estimate=gap, gap_is_estimate=False, B=B,
                       lattice=lattice, residual=0.0)


def deflated_solve(H: SparseHermitianOperator, gs: GroundState,
                   rhs: np.ndarray, tol: float = 1e-10,
                   max_iter: int | None = None) -> np.ndarray:
    """Solve (H - E0) x = (1 - P0) rhs with x orthogonal to the ground state.

    Conjugate gradients on the deflated operator; the ground-state component
    is projected out of every iterate, so the solve lives entirely on the
    positive part of H - E0.  Breakdown (vanishing gap relative to `tol`)
    raises SolverError rather than returning a silent wrong answer.
    """
    phi = gs.vector
    e0 = gs.energy
    b = rhs - phi * np.vdot(phi, rhs)
    bnorm = np.linalg.norm(b)
    if bnorm <= 1e-14 * max(1.0, float(np.linalg.norm(rhs))):
        return np.zeros_like(b)
    if max_iter is None:
        max_iter = max(2000, 60 * int(np.sqrt(H.dim)))

    def apply(v):
        w = H.matvec(v) - e0 * v
        return w - phi * np.vdot(phi, w)

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.real(np.vdot(r, r))
    for _ in range(max_iter):
        Ap = apply(p)
        pAp = np.real(np.vdot(p, Ap))
        if pAp <= 0.0:
            raise SolverError(
                "deflated CG breakdown: operator not positive on the "
                "deflated subspace (gap too small relative to tolerance)")
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        r -= phi * np.vdot(phi, r)
        rs_new = np.real(np.vdot(r, r))
        if np.sqrt(rs_new) <= tol * bnorm:
            x -= phi * np.vdot(phi, x)
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverError(f"deflated CG: no convergence in {max_iter} iterations")


def extremal_estimates(H: SparseHermitianOperator, iters: int = 80,
                       seed: int = 11) -> tuple[float, float]:
    """Lanczos Ritz estimates of the extreme eigenvalues (not certified)."""
    rng = np.random.default_rng(seed)
    real = not np.iscomplexobj(H.data)
    v = rng.standard_normal(H.dim)
    if not real:
        v = v + 1j * rng.standard_normal(H.dim)
    iters = max(2, min(iters, H.dim))
    dim = H.dim
    basis = np.empty((iters, dim), dtype=v.dtype)
    alphas = np.empty(iters)
    betas = np.empty(iters)
    basis[0] = v / np.linalg.norm(v)
    m_eff = iters
    for m in range(iters):
        w = H.matvec(basis[m])
        alphas[m] = np.real(np.vdot(basis[m], w))
        w -= basis[: m + 1].T @ (basis[: m + 1].conj() @ w)
        w -= basis[: m + 1].T @ (basis[: m + 1].conj() @ w)
        beta = np.linalg.norm(w)
        if beta <= 1e-14 or m + 1 == iters:
            m_eff = m + 1
            break
        betas[m] = beta
        basis[m + 1] = w / beta
    T = np.diag(alphas[:m_eff])
    if m_eff > 1:
        T += np.diag(betas[: m_eff - 1], 1) + np.diag(betas[: m_eff - 1], -1)
    evals = np.linalg.eigvalsh(T)
    return float(evals[0]), float(evals[-1])


# -- ground-state cache -----------------------------------------------------
# Layout (little endian): magic, u32 version, u32 d, d*u32 extents, u32 two_s,
# f8 B, f8 tol, u64 dim, f8 E0, then dim (re, im) f8 pairs.

def ground_state_cache_name(spec: LatticeSpec, B: float, tol: float) -> str:
    return f"gs_{spec.content_hash()}_B{B:.12g}_tol{tol:.3g}.bin"


def save_ground_state(path, gs: GroundState, tol: float) -> None:
    spec = gs.lattice.spec
    vec = np.asarray(gs.vector, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(GS_CACHE_MAGIC)
        fh.write(struct.pack("<II", GS_CACHE_VERSION, spec.dimension))
        fh.write(struct.pack(f"<{spec.dimension}I", *spec.extents))
        fh.write(struct.pack("<I", spec.two_s))
        fh.write(struct.pack("<ddQd", gs.B, tol, len(vec), gs.energy))
        pairs = np.empty((len(vec), 2))
        pairs[:, 0] = vec.real
        pairs[:, 1] = vec.imag
        fh.write(pairs.tobytes())


def read_ground_state_header(path):
    with open(path, "rb") as fh:
        if fh.read(4) != GS_CACHE_MAGIC:
            raise ValueError(f"{path}: not a ground-state cache file")
        version, d = struct.unpack("<II", fh.read(8))
        if version != GS_CACHE_VERSION:
            raise ValueError(f"{path}: cache version {version} unsupported")
        extents = struct.unpack(f"<{d}I", fh.read(4 * d))
        (two_s,) = struct.unpack("<I", fh.read(4))
        B, tol, dim, e0 = struct.unpack("<ddQd", fh.read(32))
        pairs = np.frombuffer(fh.read(16 * dim), dtype=np.float64)
    vec = pairs[0::2] + 1j * pairs[1::2]
    if np.abs(vec.imag).max(initial=0.0) == 0.0:
        vec = vec.real.copy()
    return extents, two_s, B, tol, e0, vec


def load_ground_state(path, lattice: Lattice, H: SparseHermitianOperator,
                      B: float, tol: float) -> GroundState | None:
    """Load a cached ground state, verifying the residual; None if stale."""
    try:
        extents, two_s, b_file, tol_file, e0, vec = read_ground_state_header(path)
    except (OSError, ValueError):
        return None
    spec = lattice.spec
    if (tuple(extents) != spec.extents or two_s != spec.two_s
            or b_file != B or tol_file != tol or len(vec) != H.dim):
        return None
    scale = max(1.0, _row_abs_sum_max(H))
    resid = float(np.linalg.norm(H.matvec(vec) - e0 * vec))
    if resid > 10 * tol * scale or abs(np.linalg.norm(vec) - 1.0) > 1e-10:
        return None
    return GroundState(energy=e0, vector=vec, gap_estimate=np.nan,
                       gap_is_estimate=True, B=B, lattice=lattice,
                       residual=resid)

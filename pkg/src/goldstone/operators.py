"""Sparse spin operators on the full product basis.

Basis encoding: each site's S_z level is one base-(2S+1) digit of the state
index, site 0 most significant (row-major over the coordinate list), digit 0
meaning m = +S.  All builders are vectorised over the basis; the resulting
CSR arrays feed the matvec kernels in `_kernels`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse

from . import _kernels
from .lattice import Lattice, LatticeSpec

__all__ = [
    "SparseHermitianOperator",
    "spin_matrices",
    "build_hamiltonian",
    "transformed_hamiltonian",
    "marshall_transform",
    "marshall_signs",
    "fourier_spin",
    "site_spin_operator",
    "staggered_operator",
    "translation_permutation",
    "save_operator",
    "load_operator",
]

OPERATOR_CACHE_MAGIC = b"GSOP"
OPERATOR_CACHE_VERSION = 1


@dataclass(eq=False)
class SparseHermitianOperator:
    """Complex (or real) sparse matrix in CSR form on the spin Hilbert space."""

    dim: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    hermitian: bool = True
    _scipy_cache: scipy.sparse.csr_matrix | None = field(
        default=None, repr=False, compare=False)

    @classmethod
    def from_coo(cls, dim, rows, cols, vals, hermitian=True):
        mat = scipy.sparse.coo_matrix((vals, (rows, cols)),
                                      shape=(dim, dim)).tocsr()
        mat.sum_duplicates()
        return cls.from_scipy(mat, hermitian)

    @classmethod
    def from_scipy(cls, mat, hermitian=True):
        mat = mat.tocsr()
        return cls(mat.shape[0], mat.indptr, mat.indices, mat.data, hermitian)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def _scipy(self) -> scipy.sparse.csr_matrix:
        if self._scipy_cache is None:
            self._scipy_cache = scipy.sparse.csr_matrix(
                (self.data, self.indices, self.indptr),
                shape=(self.dim, self.dim))
        return self._scipy_cache

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return _kernels.csr_matvec(self.indptr, self.indices, self.data, x,
                                   scipy_csr=self._scipy())

    def __matmul__(self, x):
        if isinstance(x, np.ndarray) and x.ndim == 1:
            return self.matvec(x)
        return NotImplemented

    def adjoint(self) -> "SparseHermitianOperator":
        return SparseHermitianOperator.from_scipy(
            self._scipy().conjugate().transpose().tocsr(), self.hermitian)

    def to_dense(self) -> np.ndarray:
        return np.asarray(self._scipy().todense())

    def hermiticity_defect(self) -> float:
        """Largest entry of |A - A^dagger|; zero for honest Hermitian builds."""
        diff = self._scipy() - self._scipy().conjugate().transpose()
        return 0.0 if diff.nnz == 0 else float(np.abs(diff.data).max())

    def shifted(self, c: float) -> "SparseHermitianOperator":
        return SparseHermitianOperator.from_scipy(
            self._scipy() + c * scipy.sparse.identity(self.dim, format="csr"),
            self.hermitian)

    def coo_triplets(self):
        mat = self._scipy().tocoo()
        return mat.row.astype(np.int64), mat.col.astype(np.int64), mat.data


def spin_matrices(two_s: int):
    """Dense single-site (S^(1), S^(2), S^(3)) for spin S = two_s/2.

    Rows/columns are ordered m = S, S-1, ..., -S to match the basis digits.
    """
    s = two_s / 2.0
    m = s - np.arange(two_s + 1, dtype=float)
    sz = np.diag(m).astype(complex)
    sp = np.zeros((two_s + 1, two_s + 1), dtype=complex)
    for i in range(1, two_s + 1):
        sp[i - 1, i] = np.sqrt(s * (s + 1) - m[i] * (m[i] + 1))
    sm = sp.conj().T
    return (sp + sm) / 2, (sp - sm) / 2j, sz


@dataclass(frozen=True)
class BasisTables:
    """Per-state digit and m-value tables for one lattice spec."""

    dim: int
    dloc: int
    spin: float
    digits: np.ndarray      # (n_sites, dim) int8
    mval: np.ndarray        # (n_sites, dim) float64
    strides: np.ndarray     # (n_sites,) int64


@lru_cache(maxsize=16)
def basis_tables(spec: LatticeSpec) -> BasisTables:
    n = spec.n_sites
    dloc = spec.two_s + 1
    dim = spec.hilbert_dim
    idx = np.arange(dim, dtype=np.int64)
    digits = np.empty((n, dim), dtype=np.int8)
    r = idx.copy()
    for j in range(n - 1, -1, -1):
        digits[j] = r % dloc
        r //= dloc
    mval = spec.spin - digits.astype(np.float64)
    strides = np.array([dloc ** (n - 1 - j) for j in range(n)], dtype=np.int64)
    return BasisTables(dim, dloc, spec.spin, digits, mval, strides)


def _raising_terms(tab: BasisTables, j: int):
    """(src, dst, amp) for S^+_j: dst = src - stride_j, amp = sqrt coupling."""
    s = tab.spin
    mask = tab.digits[j] > 0
    src = np.nonzero(mask)[0].astype(np.int64)
    m = tab.mval[j][mask]
    amp = np.sqrt(s * (s + 1) - m * (m + 1))
    return src, src - tab.strides[j], amp


def build_hamiltonian(lattice: Lattice, B: float) -> SparseHermitianOperator:
    """H = sum_bonds S_x . S_y  -  B sum_x sigma(x) S_x^(1).

    Real symmetric in the product basis (the S^(2)S^(2) bond piece combines
    with S^(1)S^(1) into real hopping).
    """
    if B < 0:
        raise ValueError("staggered field must be nonnegative")
    tab = basis_tables(lattice.spec)
    dim = tab.dim
    s = tab.spin
    idx = np.arange(dim, dtype=np.int64)

    diag = np.zeros(dim)
    rows = [idx]
    cols = [idx]
    vals = []
    for (i, j) in lattice.bonds:
        diag += tab.mval[i] * tab.mval[j]
        # transverse part: (S+_i S-_j + S-_i S+_j)/2
        mask = (tab.digits[i] > 0) & (tab.digits[j] < tab.dloc - 1)
        src = np.nonzero(mask)[0].astype(np.int64)
        mi = tab.mval[i][mask]
        mj = tab.mval[j][mask]
        amp = 0.5 * np.sqrt((s * (s + 1) - mi * (mi + 1)) *
                            (s * (s + 1) - mj * (mj - 1)))
        dst = src - tab.strides[i] + tab.strides[j]
        rows.extend((dst, src))
        cols.extend((src, dst))
        vals.extend((amp, amp))
    if B != 0:
        for j in range(lattice.n_sites):
            src, dst, amp = _raising_terms(tab, j)
            hop = -0.5 * B * lattice.staggered_signs[j] * amp
            rows.extend((dst, src))
            cols.extend((src, dst))
            vals.extend((hop, hop))
    data = np.concatenate([diag] + vals)
    return SparseHermitianOperator.from_coo(
        dim, np.concatenate(rows), np.concatenate(cols), data, hermitian=True)


def marshall_signs(lattice: Lattice) -> np.ndarray:
    """Diagonal of the sublattice pi-rotation about axis 3, as +-1 per state.

    Fixed to a real gauge: entry (-1)^(sum over odd-sublattice sites of S - m).
    This differs from exp(i pi sum S^(3)) by a global phase only.
    """
    tab = basis_tables(lattice.spec)
    odd = [j for j in range(lattice.n_sites) if lattice.staggered_signs[j] < 0]
    par = np.zeros(tab.dim, dtype=np.int64)
    for j in odd:
        par += tab.digits[j]
    return np.where(par % 2 == 0, 1.0, -1.0)


def marshall_transform(lattice: Lattice) -> SparseHermitianOperator:
    """The sublattice rotation U as a diagonal +-1 operator (U = U* = U^-1)."""
    signs = marshall_signs(lattice)
    dim = len(signs)
    idx = np.arange(dim, dtype=np.int64)
    return SparseHermitianOperator.from_coo(dim, idx, idx, signs, hermitian=True)


def transformed_hamiltonian(lattice: Lattice, B: float) -> SparseHermitianOperator:
    """U* H U built directly from the rotated couplings.

    Bond terms become -(S+_x S-_y + S-_x S+_y)/2 + S3_x S3_y and the field
    -B/2 sum_x (S+_x + S-_x); all off-diagonal entries of the result are
    nonpositive, which is what makes the B > 0 ground state Perron-Frobenius
    positive and translation covariant with period one.
    """
    if B < 0:
        raise ValueError("staggered field must be nonnegative")
    tab = basis_tables(lattice.spec)
    dim = tab.dim
    s = tab.spin
    idx = np.arange(dim, dtype=np.int64)
    diag = np.zeros(dim)
    rows = [idx]
    cols = [idx]
    vals = []
    for (i, j) in lattice.bonds:
        diag += tab.mval[i] * tab.mval[j]
        mask = (tab.digits[i] > 0) & (tab.digits[j] < tab.dloc - 1)
        src = np.nonzero(mask)[0].astype(np.int64)
        mi = tab.mval[i][mask]
        mj = tab.mval[j][mask]
        amp = -0.5 * np.sqrt((s * (s + 1) - mi * (mi + 1)) *
                             (s * (s + 1) - mj * (mj - 1)))
        dst = src - tab.strides[i] + tab.strides[j]
        rows.extend((dst, src))
        cols.extend((src, dst))
        vals.extend((amp, amp))
    if B != 0:
        for j in range(lattice.n_sites):
            src, dst, amp = _raising_terms(tab, j)
            hop = -0.5 * B * amp
            rows.extend((dst, src))
            cols.extend((src, dst))
            vals.extend((hop, hop))
    data = np.concatenate([diag] + vals)
    return SparseHermitianOperator.from_coo(
        dim, np.concatenate(rows), np.concatenate(cols), data, hermitian=True)


def site_spin_operator(lattice: Lattice, site: int, axis: int) -> SparseHermitianOperator:
    """S_x^(axis) at one site, axis in {1, 2, 3}."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    tab = basis_tables(lattice.spec)
    idx = np.arange(tab.dim, dtype=np.int64)
    if axis == 3:
        return SparseHermitianOperator.from_coo(
            tab.dim, idx, idx, tab.mval[site].copy(), hermitian=True)
    src, dst, amp = _raising_terms(tab, site)
    if axis == 1:
        rows = np.concatenate((dst, src))
        cols = np.concatenate((src, dst))
        vals = np.concatenate((0.5 * amp, 0.5 * amp))
    else:
        rows = np.concatenate((dst, src))
        cols = np.concatenate((src, dst))
        vals = np.concatenate((-0.5j * amp, 0.5j * amp))
    return SparseHermitianOperator.from_coo(tab.dim, rows, cols, vals,
                                            hermitian=True)


def fourier_spin(lattice: Lattice, n_momentum, axis: int) -> SparseHermitianOperator:
    """hat S_k^(axis) = N^{-1/2} sum_x e^{i k x} S_x^(axis).

    Hermitian exactly when -k folds back onto k on the grid; in general the
    adjoint is the operator at -k.
    """
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    n_momentum = tuple(n_momentum)
    if not lattice.momentum_on_grid(n_momentum):
        raise ValueError(f"momentum label {n_momentum} is off the grid")
    tab = basis_tables(lattice.spec)
    k = lattice.kvec(n_momentum)
    phases = np.array([np.exp(1j * np.dot(k, x)) for x in lattice.sites])
    norm = 1.0 / np.sqrt(lattice.n_sites)
    idx = np.arange(tab.dim, dtype=np.int64)

    rows, cols, vals = [], [], []
    if axis == 3:
        diag = np.zeros(tab.dim, dtype=complex)
        for j in range(lattice.n_sites):
            diag += phases[j] * tab.mval[j]
        rows.append(idx)
        cols.append(idx)
        vals.append(norm * diag)
    else:
        coef_up = 0.5 if axis == 1 else -0.5j
        coef_dn = 0.5 if axis == 1 else 0.5j
        for j in range(lattice.n_sites):
            src, dst, amp = _raising_terms(tab, j)
            rows.extend((dst, src))
            cols.extend((src, dst))
            vals.extend((norm * phases[j] * coef_up * amp,
                         norm * phases[j] * coef_dn * amp))
    hermitian = lattice.negate(n_momentum) == n_momentum
    return SparseHermitianOperator.from_coo(
        tab.dim, np.concatenate(rows), np.concatenate(cols),
        np.concatenate(vals), hermitian=hermitian)


def staggered_operator(lattice: Lattice) -> SparseHermitianOperator:
    """sum_x sigma(x) S_x^(1): the order parameter N m_B is its expectation."""
    tab = basis_tables(lattice.spec)
    rows, cols, vals = [], [], []
    for j in range(lattice.n_sites):
        src, dst, amp = _raising_terms(tab, j)
        half = 0.5 * lattice.staggered_signs[j] * amp
        rows.extend((dst, src))
        cols.extend((src, dst))
        vals.extend((half, half))
    return SparseHermitianOperator.from_coo(
        tab.dim, np.concatenate(rows), np.concatenate(cols),
        np.concatenate(vals), hermitian=True)


def translation_permutation(lattice: Lattice, axis: int = 0) -> np.ndarray:
    """perm with (P v)[i] = v[perm[i]] for the one-site shift along `axis`.

    P maps the state with digits g(x) to the one with digits g(x - e_axis),
    so U* H U built with period-one couplings commutes with P.
    """
    tab = basis_tables(lattice.spec)
    ext = lattice.spec.extents
    site_map = np.empty(lattice.n_sites, dtype=np.int64)
    for j, x in enumerate(lattice.sites):
        y = list(x)
        y[axis] = (y[axis] + 1) % ext[axis]
        site_map[j] = lattice.site_index(tuple(y))
    perm = np.zeros(tab.dim, dtype=np.int64)
    for j in range(lattice.n_sites):
        perm += tab.digits[site_map[j]].astype(np.int64) * tab.strides[j]
    return perm


def apply_permutation(perm: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v[perm]


# -- operator cache file ---------------------------------------------------
# Layout (little endian): magic, u32 version, 8-byte lattice hash prefix,
# u64 dimension, u64 nnz, u8 hermitian flag, then nnz records of
# (u64 row, u64 col, f64 re, f64 im).

def save_operator(path, op: SparseHermitianOperator, spec: LatticeSpec) -> None:
    rows, cols, data = op.coo_triplets()
    data = data.astype(np.complex128)
    with open(path, "wb") as fh:
        fh.write(OPERATOR_CACHE_MAGIC)
        fh.write(struct.pack("<I", OPERATOR_CACHE_VERSION))
        fh.write(bytes.fromhex(spec.content_hash()))
        fh.write(struct.pack("<QQB", op.dim, len(rows), int(op.hermitian)))
        rec = np.empty(len(rows), dtype=[("r", "<u8"), ("c", "<u8"),
                                         ("re", "<f8"), ("im", "<f8")])
        rec["r"] = rows
        rec["c"] = cols
        rec["re"] = data.real
        rec["im"] = data.imag
        fh.write(rec.tobytes())


def load_operator(path, spec: LatticeSpec) -> SparseHermitianOperator:
    with open(path, "rb") as fh:
        if fh.read(4) != OPERATOR_CACHE_MAGIC:
            raise ValueError(f"{path}: not an operator cache file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != OPERATOR_CACHE_VERSION:
            raise ValueError(f"{path}: cache version {version} unsupported")
        if fh.read(8).hex() != spec.content_hash():
            raise ValueError(f"{path}: lattice spec hash mismatch")
        dim, nnz, herm = struct.unpack("<QQB", fh.read(17))
        rec = np.frombuffer(fh.read(nnz * 32),
                            dtype=[("r", "<u8"), ("c", "<u8"),
                                   ("re", "<f8"), ("im", "<f8")])
    vals = rec["re"] + 1j * rec["im"]
    if np.abs(vals.imag).max(initial=0.0) == 0.0:
        vals = vals.real.copy()
    return SparseHermitianOperator.from_coo(
        dim, rec["r"].astype(np.int64), rec["c"].astype(np.int64), vals,
        hermitian=bool(herm))

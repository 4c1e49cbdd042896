import numpy as np
import pytest
import scipy.sparse

from goldstone import _kernels
from goldstone.lattice import Lattice
from goldstone.operators import build_hamiltonian, fourier_spin


def _random_csr(rng, n, density, dtype):
    mat = scipy.sparse.random(n, n, density=density, random_state=42,
                              format="csr")
    data = mat.data.astype(dtype)
    if np.issubdtype(dtype, np.complexfloating):
        data = data + 1j * rng.standard_normal(len(data))
    return mat.indptr, mat.indices, data


@pytest.mark.parametrize("dtype", [np.float64, np.complex128])
def test_lanes_agree_on_random_matrices(rng, dtype):
    n = 300
    indptr, indices, data = _random_csr(rng, n, 0.03, dtype)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    ref = scipy.sparse.csr_matrix((data, indices, indptr), shape=(n, n)) @ x
    if _kernels.HAVE_NUMBA:
        got = _kernels.csr_matvec(indptr, indices, data, x)
        assert np.abs(got - ref).max() <= 1e-13 * max(1.0, np.abs(ref).max())


def test_empty_rows_handled(rng):
    # row 1 and the last row carry no entries
    indptr = np.array([0, 2, 2, 3, 3])
    indices = np.array([0, 3, 2])
    data = np.array([1.0, 2.0, -3.0])
    x = np.arange(4, dtype=float)
    expected = np.array([6.0, 0.0, -6.0, 0.0])
    saved = _kernels.use_numba
    try:
        for lane in ([True] if _kernels.HAVE_NUMBA else []) + [False]:
            _kernels.use_numba = lane
            got = _kernels.csr_matvec(indptr, indices, data, x)
            assert np.allclose(got, expected)
    finally:
        _kernels.use_numba = saved


def test_lanes_agree_on_hamiltonian(rng):
    lat = Lattice.build((2, 4))
    H = build_hamiltonian(lat, 0.3)
    sk = fourier_spin(lat, (0, 1), 2)
    x = rng.standard_normal(H.dim) + 1j * rng.standard_normal(H.dim)
    saved = _kernels.use_numba
    results_h, results_s = [], []
    try:
        for lane in ([True] if _kernels.HAVE_NUMBA else []) + [False]:
            _kernels.use_numba = lane
            results_h.append(H.matvec(x))
            results_s.append(sk.matvec(x))
    finally:
        _kernels.use_numba = saved
    for got in results_h[1:]:
        assert np.abs(got - results_h[0]).max() <= 1e-12
    for got in results_s[1:]:
        assert np.abs(got - results_s[0]).max() <= 1e-12


def test_real_matrix_real_vector_stays_real(rng):
    lat = Lattice.build((2, 2))
    H = build_hamiltonian(lat, 0.2)
    x = rng.standard_normal(H.dim)
    y = H.matvec(x)
    assert not np.iscomplexobj(y)
    assert np.abs(y - H.to_dense().real @ x).max() <= 1e-12


def test_env_flag_documented():
    assert _kernels.NUMBA_ENV_FLAG == "GOLDSTONE_NO_NUMBA"


def test_env_flag_selects_fallback_lane():
    import subprocess
    import sys

    code = ("import goldstone._kernels as k; "
            "print(k.use_numba, k.HAVE_NUMBA)")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"GOLDSTONE_NO_NUMBA": "1", "PATH": "/usr/bin"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "False"]

import numpy as np
import pytest

from goldstone.eigensolver import (SolverError, SolverOptions, deflated_solve,
                                   dense_spectrum, extremal_estimates,
                                   ground_state, ground_state_cache_name,
                                   ground_state_from_dense, load_ground_state,
                                   save_ground_state)
from goldstone.lattice import Lattice
from goldstone.operators import (SparseHermitianOperator, build_hamiltonian,
                                 marshall_signs, spin_matrices)


def _sho_from_dense(mat):
    mat = np.asarray(mat)
    rows, cols = np.nonzero(mat)
    return SparseHermitianOperator.from_coo(mat.shape[0], rows, cols,
                                            mat[rows, cols])


def test_single_site_field_spectrum():
    sx, _, _ = spin_matrices(1)
    B = 0.7
    dec = dense_spectrum(_sho_from_dense(-B * sx))
    assert np.allclose(dec.eigenvalues, [-B / 2, B / 2], atol=1e-14)


def test_dense_reconstruction(ring4):
    H = build_hamiltonian(ring4, 0.2)
    dec = dense_spectrum(H)
    assert dec.reconstruction_defect(H) <= 1e-10
    assert np.all(np.diff(dec.eigenvalues) >= -1e-12)


def test_dense_cap_enforced(lat24):
    H = build_hamiltonian(lat24, 0.0)
    with pytest.raises(ValueError):
        dense_spectrum(H, cap=100)


@pytest.mark.parametrize("extents,B", [((4,), 0.0), ((2, 2), 0.1),
                                       ((2, 4), 0.2)])
def test_lanczos_matches_dense(extents, B):
    lat = Lattice.build(extents)
    H = build_hamiltonian(lat, B)
    gs = ground_state(H, lat, B)
    dec = dense_spectrum(H)
    assert abs(gs.energy - dec.eigenvalues[0]) <= 1e-10
    assert abs(np.linalg.norm(gs.vector) - 1.0) <= 1e-12
    overlap = abs(np.vdot(dec.eigenvectors[:, 0], gs.vector))
    assert overlap == pytest.approx(1.0, abs=1e-9)
    assert gs.gap_estimate > 0.0   # unique ground state on these systems


def test_ring4_energy_is_minus_two(ring4):
    H = build_hamiltonian(ring4, 0.0)
    gs = ground_state(H, ring4, 0.0)
    assert gs.energy == pytest.approx(-2.0, abs=1e-10)


def test_spectral_shift_invariance(lat22):
    B = 0.1
    H = build_hamiltonian(lat22, B)
    shifted = H.shifted(3.7)
    gs = ground_state(H, lat22, B)
    gs2 = ground_state(shifted, lat22, B)
    assert gs2.energy == pytest.approx(gs.energy + 3.7, abs=1e-9)
    assert abs(np.vdot(gs.vector, gs2.vector)) == pytest.approx(1.0, abs=1e-10)


def test_degenerate_warning():
    lat = Lattice.build((2,))
    zero = SparseHermitianOperator.from_coo(4, [0, 1, 2, 3], [0, 1, 2, 3],
                                            np.zeros(4))
    with pytest.warns(UserWarning, match="degenerate"):
        ground_state(zero, lat, 0.0)


def test_lanczos_nonconvergence_error(ring4):
    H = build_hamiltonian(ring4, 0.0)
    with pytest.raises(SolverError):
        ground_state(H, ring4, 0.0,
                     SolverOptions(tol=1e-16, max_basis=3, max_restarts=1))


def test_perron_positive_transformed_vector(lat24):
    # sign structure of the original ground state is exactly the sublattice
    # rotation's diagonal for B > 0
    H = build_hamiltonian(lat24, 0.2)
    gs = ground_state(H, lat24, 0.2)
    rotated = marshall_signs(lat24) * gs.vector.real
    rotated *= np.sign(rotated[np.argmax(np.abs(rotated))])
    assert rotated.min() > 0.0


def test_deflated_solve_annihilates_ground_vector(ctx22):
    x = deflated_solve(ctx22.H, ctx22.gs, ctx22.gs.vector.astype(complex))
    assert np.linalg.norm(x) == 0.0


def test_deflated_solve_on_excited_eigenvector(ctx22):
    dec = ctx22.dense
    v1 = dec.eigenvectors[:, 1].astype(complex)
    gap = dec.eigenvalues[1] - dec.eigenvalues[0]
    x = deflated_solve(ctx22.H, ctx22.gs, v1)
    assert np.linalg.norm(x - v1 / gap) <= 1e-8


def test_deflated_solve_matches_spectral_sum(ctx22):
    dec = ctx22.dense
    rhs = ctx22.sk_phi((1, 0), 2)
    x = deflated_solve(ctx22.H, ctx22.gs, rhs)
    lhs = np.vdot(rhs, x).real
    amps = dec.eigenvectors.conj().T @ rhs
    de = dec.eigenvalues - dec.eigenvalues[0]
    expected = np.sum(np.abs(amps[de > 0]) ** 2 / de[de > 0])
    assert abs(lhs - expected) <= 1e-8
    assert lhs >= 0.0


def test_deflated_resolvent_self_adjoint(ctx22, rng):
    a = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    b = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    ra = deflated_solve(ctx22.H, ctx22.gs, a)
    rb = deflated_solve(ctx22.H, ctx22.gs, b)
    assert abs(np.vdot(a, rb) - np.conj(np.vdot(b, ra))) <= 1e-8


def test_ground_energy_concave_in_field(lat22):
    bs = [0.05, 0.2, 0.4]
    es = [dense_spectrum(build_hamiltonian(lat22, b)).eigenvalues[0]
          for b in bs]
    slope_low = (es[1] - es[0]) / (bs[1] - bs[0])
    slope_high = (es[2] - es[1]) / (bs[2] - bs[1])
    assert slope_high - slope_low <= 1e-10


def test_extremal_estimates_bracket_spectrum(lat24):
    H = build_hamiltonian(lat24, 0.1)
    dec = dense_spectrum(H)
    lo, hi = extremal_estimates(H)
    assert lo <= dec.eigenvalues[0] + 1e-8
    assert hi >= dec.eigenvalues[-1] - 1e-8


def test_ground_state_cache_roundtrip(tmp_path, lat22):
    B, tol = 0.1, 1e-10
    H = build_hamiltonian(lat22, B)
    gs = ground_state_from_dense(dense_spectrum(H), lat22, B)
    path = tmp_path / ground_state_cache_name(lat22.spec, B, tol)
    save_ground_state(path, gs, tol)
    back = load_ground_state(path, lat22, H, B, tol)
    assert back is not None
    assert back.energy == gs.energy
    assert np.linalg.norm(back.vector - gs.vector) <= 1e-14
    # wrong field value is a miss, not an error
    assert load_ground_state(path, lat22, H, 0.2, tol) is None


def test_ground_state_cache_detects_tampering(tmp_path, lat22):
    B, tol = 0.1, 1e-10
    H = build_hamiltonian(lat22, B)
    gs = ground_state_from_dense(dense_spectrum(H), lat22, B)
    path = tmp_path / "gs.bin"
    save_ground_state(path, gs, tol)
    blob = bytearray(path.read_bytes())
    blob[-9] ^= 0xFF  # flip bits inside the vector payload
    path.write_bytes(bytes(blob))
    assert load_ground_state(path, lat22, H, B, tol) is None

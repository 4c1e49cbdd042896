import numpy as np
import pytest

from goldstone.filters import (EmptySupportError, FilterDegreeError,
                               FilterSpec, WavepacketSpec,
                               apply_filter, build_f, build_g,
                               make_chebyshev_expansion, smoothstep)
from goldstone.lattice import Lattice


def test_smoothstep_boundaries():
    assert smoothstep(0.0) == 0.0
    assert smoothstep(1.0) == 1.0
    assert smoothstep(-3.0) == 0.0
    assert smoothstep(7.0) == 1.0
    assert smoothstep(0.5) == pytest.approx(0.5, abs=1e-15)


def test_smoothstep_partition_of_unity():
    s = np.linspace(-0.5, 1.5, 401)
    total = smoothstep(s) + smoothstep(1.0 - s)
    assert np.allclose(total, 1.0, atol=1e-14)
    vals = smoothstep(s)
    assert np.all(np.diff(vals) >= -1e-15)


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(-0.1, 3.0, 0.5)
    with pytest.raises(ValueError):
        FilterSpec(0.2, 3.0, -0.5)
    with pytest.raises(ValueError):
        FilterSpec(1.3, 3.0, 0.5)   # 2 eps >= gamma - delta_gamma
    FilterSpec(0.2, 3.0, 0.5)


def test_window_endpoint_values():
    g = build_g(FilterSpec(0.2, 3.0, 0.5))
    assert g(0.2) == 0.0
    assert g(0.4) == 1.0
    assert g(3.0) == 0.0
    assert g((2 * 0.2 + 3.0 - 0.5) / 2) == 1.0
    assert g(0.0) == 0.0
    assert g(-1.0) == 0.0


def test_window_conformance_dense_sample():
    spec = FilterSpec(0.2, 3.0, 0.5)
    g = build_g(spec)
    xs = np.linspace(0.0, 2 * spec.gamma, 10_000)
    vals = g(xs)
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    plateau = (xs >= 2 * spec.epsilon) & (xs <= spec.gamma - spec.delta_gamma)
    assert np.all(vals[plateau] == 1.0)
    outside = (xs <= spec.epsilon) | (xs >= spec.gamma)
    assert np.all(vals[outside] == 0.0)


def test_wavepacket_spec_validation():
    with pytest.raises(ValueError):
        WavepacketSpec(-1.0, 2.0)
    with pytest.raises(ValueError):
        WavepacketSpec(np.pi / 2, np.pi / 2)   # annulus radius exceeds kappa
    wp = WavepacketSpec(np.pi / 2, 2.2)
    assert wp.annulus_radius == pytest.approx(2 * np.pi / 3)


def test_profile_support_and_plateau():
    wp = WavepacketSpec(1.2, 2.0)
    r = wp.annulus_radius
    assert wp.profile(0.0) == 0.0
    assert wp.profile(r / 2) == 0.0
    assert wp.profile(r) == 0.0
    assert wp.profile(1.05 * r) == 0.0
    assert wp.profile(3 * r / 4) == 1.0
    assert wp.profile(wp.p) == 1.0
    assert wp.profile(5 * r / 8) == 1.0
    assert wp.profile(7 * r / 8) == 1.0


def test_grid_weights_4x4(golden):
    lat = Lattice.build((4, 4))
    wp = WavepacketSpec(np.pi / 2, 2.2)
    weights = build_f(wp, lat)
    support = sorted(weights.support)
    assert support == [tuple(t) for t in golden["f_support_4x4"]]
    for n in support:
        assert lat.kmag(n) == pytest.approx(np.pi / 2)
        assert weights.weights[n] == 1.0
    q = lat.q_ordering
    assert q not in weights.weights
    assert (0, 0) not in weights.weights


def test_empty_support_rejected(lat22):
    with pytest.raises(EmptySupportError):
        build_f(WavepacketSpec(0.3, 2.0), lat22)


def test_apply_identity_function(ctx22, rng):
    v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    for method in ("dense", "chebyshev"):
        w = apply_filter(ctx22.H, ctx22.gs, lambda e: np.ones_like(e), v,
                         tol=1e-12, method=method)
        assert np.linalg.norm(w - v) <= 1e-10


def test_filter_annihilates_ground_state(ctx22):
    g = build_g(FilterSpec(0.2, 3.0, 0.5))
    v = ctx22.gs.vector.astype(complex)
    for method in ("dense", "chebyshev"):
        w = apply_filter(ctx22.H, ctx22.gs, g, v, tol=1e-10, method=method)
        assert np.linalg.norm(w) <= 1e-9


def test_chebyshev_matches_dense(ctx22):
    g = build_g(FilterSpec(0.2, 3.0, 0.5))
    v = ctx22.sk_phi((1, 0), 2)
    dense = ctx22.filtered_vector(g, v, "dense")
    cheb = apply_filter(ctx22.H, ctx22.gs, g, v, tol=1e-10, method="chebyshev")
    assert np.linalg.norm(cheb - dense) <= 1e-8


def test_chebyshev_error_decreases_with_tolerance(ctx22):
    g = build_g(FilterSpec(0.2, 3.0, 0.5))
    v = ctx22.sk_phi((1, 0), 2)
    dense = ctx22.filtered_vector(g, v, "dense")
    errors = []
    for tol in (1e-4, 5e-5, 2.5e-5, 1e-6, 1e-8):
        w = apply_filter(ctx22.H, ctx22.gs, g, v, tol=tol, method="chebyshev")
        errors.append(np.linalg.norm(w - dense))
    assert all(a >= b - 1e-13 for a, b in zip(errors, errors[1:]))


def test_degree_cap_error():
    g = build_g(FilterSpec(0.01, 3.0, 0.5))
    with pytest.raises(FilterDegreeError):
        make_chebyshev_expansion(g, -1.0, 40.0, 1e-12, max_degree=64)


def test_expansion_is_certified():
    g = build_g(FilterSpec(0.2, 3.0, 0.5))
    exp = make_chebyshev_expansion(g, -0.5, 6.0, 1e-8)
    xs = np.linspace(-0.5, 6.0, 20001)
    assert np.max(np.abs(exp.evaluate(xs) - g(xs))) <= 2e-8
    assert exp.sup_error <= 1e-8


@pytest.mark.parametrize("fixture", ["ctx22", "ctx24"])
def test_idempotence_bracketing(fixture, rng, request):
    ctx = request.getfixturevalue(fixture)
    g = build_g(FilterSpec(0.2, 3.0, 0.5))
    dim = ctx.H.dim
    for _ in range(5):
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        w1 = ctx.filtered_vector(g, v, "dense")
        w2 = ctx.filtered_vector(g, w1, "dense")
        assert np.linalg.norm(w2) <= np.linalg.norm(w1) + 1e-12
        assert np.linalg.norm(w1) <= np.linalg.norm(v) + 1e-12


@pytest.mark.parametrize("fixture", ["ctx22", "ctx24"])
def test_window_and_plateau_projections(fixture, rng, request):
    """g(H-E0)^2 is squeezed between the plateau projector and the support
    projector."""
    ctx = request.getfixturevalue(fixture)
    spec = FilterSpec(0.2, 3.0, 0.5)
    g = build_g(spec)
    dec = ctx.dense
    de = dec.eigenvalues - dec.eigenvalues[0]
    support_mask = (de > spec.epsilon) & (de < spec.gamma)
    plateau_mask = (de >= 2 * spec.epsilon) & (de <= spec.gamma - spec.delta_gamma)
    dim = ctx.H.dim
    for _ in range(20):
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        amps = np.abs(dec.eigenvectors.conj().T @ v) ** 2
        quad = float(np.sum(g(de) ** 2 * amps))
        assert quad <= float(np.sum(amps[support_mask])) + 1e-8
        assert float(np.sum(amps[plateau_mask])) <= quad + 1e-8

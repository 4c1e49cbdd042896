import numpy as np
import pytest

from goldstone.analysis import (EpsilonChoiceError, SystemContext,
                                VanishingDenominatorError, bound_report,
                                choose_epsilon, ctx_m_b,
                                double_commutator_entry, excitation_energy,
                                extrapolate_ms, filtered_moments, irb_entry,
                                qmode_trend, staggered_magnetization,
                                sum_rule_entry, window_entries)
from goldstone.filters import FilterSpec, GFilter, WavepacketSpec, build_f
from goldstone.lattice import Lattice

GF = GFilter(FilterSpec(0.2, 3.0, 0.5))


def test_m_b_vanishes_without_field(lat22):
    ctx = SystemContext(lat22, 0.0)
    assert abs(staggered_magnetization(ctx.gs)) <= 1e-10


def test_m_b_golden_value(ctx22, golden):
    assert staggered_magnetization(ctx22.gs) == pytest.approx(
        golden["m_b_2x2_B0.1"], abs=1e-10)


def test_m_b_saturates_toward_spin(lat22):
    values = [staggered_magnetization(SystemContext(lat22, b).gs)
              for b in (1.0, 4.0, 16.0)]
    assert values[0] < values[1] < values[2] < 0.5
    assert values[2] > 0.45


@pytest.mark.parametrize("fixture", ["ctx22", "ctx24"])
def test_sum_rule_every_momentum(fixture, request):
    ctx = request.getfixturevalue(fixture)
    for n in ctx.lattice.momenta:
        entry = sum_rule_entry(ctx, n)
        assert entry.passed, (n, entry.margin)
        assert abs(entry.margin) <= 1e-10
        # the reported value is real up to rounding
        assert float(entry.note.split("=")[1]) <= 1e-12


def test_double_commutator_zero_momentum(lat22):
    ctx0 = SystemContext(lat22, 0.0)
    entry = double_commutator_entry(ctx0, (0, 0), 2)
    assert abs(entry.lhs) <= 1e-12      # zero mode commutes at B = 0
    ctx = SystemContext(lat22, 0.4)
    entry = double_commutator_entry(ctx, (0, 0), 2)
    assert entry.lhs <= 0.4 * 0.5 + 1e-12   # only the field term survives
    assert entry.rhs == pytest.approx(0.4 * 0.5)


@pytest.mark.parametrize("fixture", ["ctx22", "ctx24"])
def test_double_commutator_bound_everywhere(fixture, request):
    ctx = request.getfixturevalue(fixture)
    for n in ctx.lattice.momenta:
        for axis in (2, 3):
            entry = double_commutator_entry(ctx, n, axis)
            assert entry.passed, (n, axis, entry.margin)


def test_irb_bound_and_cross_validation(ctx22):
    entry = irb_entry(ctx22, (0, 0), 2)
    assert entry.rhs == pytest.approx(1.0 / (4 * 2))   # 1/(2 E_Q) = 1/(4d)
    assert entry.lhs >= 0.0
    assert entry.passed
    assert "dense_vs_solver" in entry.note
    assert float(entry.note.split("=")[1]) <= 1e-8


def test_irb_rejects_ordering_momentum(ctx22):
    with pytest.raises(ValueError):
        irb_entry(ctx22, ctx22.lattice.q_ordering, 2)


def test_filtered_moments_match_spectral_sums(ctx22):
    n = (1, 0)
    num, den = filtered_moments(ctx22, GF, n, 2)
    dec = ctx22.dense
    de = dec.eigenvalues - dec.eigenvalues[0]
    amps = np.abs(dec.eigenvectors.conj().T @ ctx22.sk_phi(n, 2)) ** 2
    g2 = GF(de) ** 2
    assert den == pytest.approx(float(np.sum(g2 * amps)), abs=1e-12)
    assert num == pytest.approx(float(np.sum(g2 * de * amps)), abs=1e-12)
    # window sandwich and unfiltered domination
    assert num >= GF.spec.epsilon * den
    assert num <= GF.spec.gamma * den
    assert den <= float(np.sum(amps[de > 0])) + 1e-12


def test_choose_epsilon_errors_without_order():
    lat = Lattice.build((2, 2))
    wp = WavepacketSpec(np.pi, 4.5)
    with pytest.raises(EpsilonChoiceError):
        choose_epsilon(0.0, wp, lat)


def test_choose_epsilon_arithmetic(ctx22):
    # on the 2x2 grid both annulus momenta have E_k = E_{k+Q} = 2, so the
    # bracket threshold is m_B/R and the top-of-ladder epsilon is m_B/2
    m_b = ctx_m_b(ctx22)
    wp = WavepacketSpec(np.pi, 4.5)
    v_min, eps = choose_epsilon(m_b, wp, ctx22.lattice)
    assert v_min == pytest.approx(0.5 * m_b / wp.annulus_radius, rel=1e-12)
    assert eps == pytest.approx(m_b / 2, rel=1e-12)


def test_choose_epsilon_respects_window():
    lat = Lattice.build((2, 2))
    wp = WavepacketSpec(np.pi, 4.5)
    with pytest.raises(EpsilonChoiceError):
        choose_epsilon(1.0, wp, lat, ladder=(0.5,), gamma=0.9, delta_gamma=0.5)


def test_window_entries_pass(ctx22):
    wp = WavepacketSpec(np.pi, 4.5)
    v_min, eps = choose_epsilon(ctx_m_b(ctx22), wp, ctx22.lattice,
                                gamma=3.0, delta_gamma=0.5)
    g = GFilter(FilterSpec(eps, 3.0, 0.5))
    entries = window_entries(ctx22, g, v_min, wp.annulus_radius, (1, 0))
    names = [e.name for e in entries]
    assert names == ["window_small", "window_large", "denominator_lower_bound"]
    for e in entries:
        assert e.passed, (e.name, e.margin)
    # at desk scale the denominator bound is not binding (D < 0)
    denom = entries[-1]
    assert denom.lhs < 0.0 < denom.rhs


def test_window_entries_reject_zero_momentum(ctx22):
    with pytest.raises(ValueError):
        window_entries(ctx22, GF, 0.1, np.pi, (0, 0))


def test_bound_report_composition(ctx22):
    wp = WavepacketSpec(np.pi, 4.5)
    v_min, eps = choose_epsilon(ctx_m_b(ctx22), wp, ctx22.lattice,
                                gamma=3.0, delta_gamma=0.5)
    g = GFilter(FilterSpec(eps, 3.0, 0.5))
    report = bound_report(ctx22, g, v_min, wp.annulus_radius)
    counts = {}
    for e in report.entries:
        counts[e.name] = counts.get(e.name, 0) + 1
    assert counts == {"sum_rule": 4, "double_commutator": 8, "irb": 6,
                      "window_small": 2, "window_large": 2,
                      "denominator_lower_bound": 2}
    assert report.all_passed


def _dispersion_setup(ctx, p):
    wp = WavepacketSpec(p, 2.2)
    weights = build_f(wp, ctx.lattice)
    v_min, eps = choose_epsilon(ctx_m_b(ctx), wp, ctx.lattice,
                                gamma=3.0, delta_gamma=0.5)
    return weights, GFilter(FilterSpec(eps, 3.0, 0.5)), v_min


def test_excitation_energy_record(ctx24, golden):
    weights, g, v_min = _dispersion_setup(ctx24, np.pi / 2)
    rec = excitation_energy(ctx24, weights, g, v_min, "zero")
    assert rec.epsilon <= rec.delta_e <= rec.gamma
    assert rec.delta_e >= v_min * rec.annulus_radius
    assert rec.cross_momentum_max <= 1e-10
    assert rec.delta_e == pytest.approx(golden["delta_e_2x4_B0.1"], abs=1e-9)
    assert {p.momentum for p in rec.per_k} == set(weights.support)
    for p in rec.per_k:
        assert p.weight == 1.0
        assert p.num_k >= rec.epsilon * p.den_k - 1e-12


def test_qmode_record_and_ordering(ctx24):
    weights, g, v_min = _dispersion_setup(ctx24, np.pi / 2)
    rec = excitation_energy(ctx24, weights, g, v_min, "zero")
    rec_q = excitation_energy(ctx24, weights, g, v_min, "staggered")
    assert rec_q.epsilon <= rec_q.delta_e <= rec_q.gamma
    assert rec.delta_e > rec_q.delta_e - 1e-6


def test_qmode_sum_rule_reduces_at_zero(ctx24):
    # the staggered-mode sum rule at k = 0 is the same commutator as the
    # zero-mode one: -i <[S2_Q, S3_0]> = m_B
    lat = ctx24.lattice
    q = lat.q_ordering
    zero = (0, 0)
    t1 = np.vdot(ctx24.sk_phi(lat.negate(q), 2), ctx24.sk_phi(zero, 3))
    t2 = np.vdot(ctx24.sk_phi(zero, 3), ctx24.sk_phi(q, 2))
    value = (-1j * (t1 - t2)).real
    assert value == pytest.approx(ctx_m_b(ctx24), abs=1e-10)


def test_qmode_trend_grows_at_small_dispersion(ctx24):
    _, g, _ = _dispersion_setup(ctx24, np.pi / 2)
    trend = qmode_trend(ctx24, g)
    assert [e for e, _, _ in trend] == [0.0, 1.0, 2.0, 3.0, 4.0]
    dens = [d for _, _, d in trend]
    for hi, lo in zip(dens, dens[1:]):
        assert hi > lo - 1e-6
    assert dens[0] > 3 * dens[1]     # the near-Q weight dominates clearly


def test_vanishing_denominator_diagnostic(ctx22):
    # a window far above the spectrum captures nothing
    weights = build_f(WavepacketSpec(np.pi, 4.5), ctx22.lattice)
    empty = GFilter(FilterSpec(50.0, 200.0, 10.0))
    with pytest.raises(VanishingDenominatorError) as info:
        excitation_energy(ctx22, weights, empty, 0.5, "zero")
    assert len(info.value.per_momentum) == len(weights.support)


def test_extrapolate_ms_constant_and_linear():
    fit = extrapolate_ms([0.4, 0.2, 0.1], [0.3, 0.3, 0.3])
    assert fit["intercept"] == pytest.approx(0.3, abs=1e-12)
    bs = [0.4, 0.2, 0.1, 0.05]
    fit = extrapolate_ms(bs, [0.2 + 0.5 * b for b in bs])
    assert fit["intercept"] == pytest.approx(0.2, abs=1e-10)
    assert fit["residual_max"] <= 1e-10
    assert "finite-size" in fit["label"]
    with pytest.raises(ValueError):
        extrapolate_ms([0.1, 0.2], [0.1, 0.2])


def test_sparse_context_skips_window_pieces(lat22):
    ctx = SystemContext(lat22, 0.1, force_sparse=True)
    assert ctx.dense is None
    entries = window_entries(ctx, GF, 0.02, np.pi, (1, 0))
    assert [e.name for e in entries] == ["denominator_lower_bound"]
    assert "window pieces skipped" in entries[0].note

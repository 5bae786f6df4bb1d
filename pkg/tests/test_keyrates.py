import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetqkd import keyrates as kr
from hetqkd.gaussian import condition_on_measurement, epr_through_channel, heterodyne_split, make_channel

from grids import CHANNEL_GRID

channels = st.builds(make_channel, st.floats(0.01, 1.0), st.floats(0.0, 2.0))


def rho_oracle(T, eps, dps=50):
    """High-precision roots of the quadratic, sorted descending."""
    with mpmath.workdps(dps):
        T, eps = mpmath.mpf(T), mpmath.mpf(eps)
        chi = (1 - T) / T + eps
        a = T * (T * chi**2 + 4)
        b = -2 * chi * T * (T + 1)
        c = (1 - T) ** 2
        disc = b * b - 4 * a * c
        disc = max(disc, mpmath.mpf(0))
        return float((-b + mpmath.sqrt(disc)) / (2 * a)), float((-b - mpmath.sqrt(disc)) / (2 * a))


@pytest.mark.parametrize("T, eps", CHANNEL_GRID)
def test_rho_matches_high_precision_roots(T, eps):
    sol = kr.solve_rho(make_channel(T, eps))
    plus, minus = rho_oracle(T, eps)
    assert sol.rho_plus == pytest.approx(plus, rel=1e-13, abs=1e-16)
    assert sol.rho_minus == pytest.approx(minus, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("T", [0.1, 0.3, 0.5, 0.7, 0.95, 1.0])
def test_noiseless_channel_gives_double_root(T):
    sol = kr.solve_rho(make_channel(T, 0.0))
    assert sol.discriminant == 0.0
    assert sol.rho_plus == sol.rho_minus
    assert sol.rho_plus == pytest.approx((1 - T) / (1 + T), rel=1e-14, abs=1e-300)


def test_rho_roundtrip_through_eve_variance():
    for rho in (0.0, 0.1, 0.5, 0.99):
        assert kr.rho_from_v_given_e(12.0, kr.v_a_given_e_from_rho(12.0, rho)) == pytest.approx(rho, abs=1e-14)


@pytest.mark.parametrize("T, eps", [(0.3, 0.0), (0.5, 0.01), (0.9, 0.2)])
def test_conditional_variances_match_explicit_state(T, eps):
    V = 12.0
    ch = make_channel(T, eps)
    s = epr_through_channel(V, ch)
    assert kr.v_a_given_b(V, ch) == pytest.approx(condition_on_measurement(s, [1], "x").x_block[0, 0], rel=1e-13)
    assert kr.v_b_given_a(V, ch) == pytest.approx(condition_on_measurement(s, [0], "p").p_block[0, 0], rel=1e-13)
    # heterodyne on B: x port of B (mode 1), appended vacuum carries p
    sb = heterodyne_split(s, 1)
    assert kr.v_a_given_bm(V, ch) == pytest.approx(condition_on_measurement(sb, [1], "x").x_block[0, 0], rel=1e-13)
    both = heterodyne_split(sb, 0)  # modes: A port, B port, B vac port, A vac port
    am_given_bm = condition_on_measurement(both.submatrix([0, 1]), [1], "x").x_block[0, 0]
    bm_given_am = condition_on_measurement(both.submatrix([0, 1]), [0], "x").x_block[0, 0]
    assert kr.v_am_given_bm(V, ch) == pytest.approx(am_given_bm, rel=1e-13)
    assert kr.v_bm_given_am(V, ch) == pytest.approx(bm_given_am, rel=1e-13)
    # B given Alice's heterodyne outcome, with the port rescaled to amplitude units
    b_given_am = condition_on_measurement(both.submatrix([0, 1]), [0], "x").x_block[0, 0]
    assert kr.v_b_given_am(V, ch) == pytest.approx(2 * b_given_am - 1, rel=1e-13)


def test_perfect_channel_rates():
    V = 12.0
    ch = make_channel(1.0, 0.0)
    rates = kr.all_rates(V, ch)
    # heterodyne mutual information with nothing leaked
    assert rates["k_rr_opt"].rate_bits == pytest.approx(math.log2((V + 1) / 2), rel=1e-14)
    assert rates["k_dr_opt"].rate_bits == pytest.approx(math.log2((V + 1) / 2), rel=1e-14)
    assert rates["k_rr_hom"].rate_bits == pytest.approx(0.5 * math.log2(V), rel=1e-14)
    assert rates["k_dr_hom"].rate_bits == pytest.approx(0.5 * math.log2(V), rel=1e-14)


def test_report_fields_and_flags():
    r = kr.optimal_dr(12.0, make_channel(0.3, 0.01))
    assert (r.direction, r.protocol, r.bound_kind) == (kr.DR, kr.HETERODYNE, kr.OPTIMAL)
    assert r.rate_bits == pytest.approx(math.log2(r.v_key_holder_given_eve / r.v_key_holder_given_partner))
    assert r.rate_bits < 0 and not r.has_key
    d = r.to_dict()
    assert d["has_key"] is False and d["rate_bits"] == r.rate_bits


def test_expected_conditionals_keys():
    got = kr.expected_conditional_variances(12.0, make_channel(0.5, 0.01))
    assert set(got) == {"A|B", "B|A", "A|E", "B|E", "AM|BM", "BM|AM", "AM|E", "BM|E"}
    assert got["AM|E"] == pytest.approx(0.5 * (got["A|E"] + 1))


@settings(max_examples=200, deadline=None)
@given(ch=channels)
def test_roots_solve_the_quadratic(ch):
    sol = kr.solve_rho(ch)
    scale = ch.T * (ch.T * ch.chi**2 + 4)
    for r in (sol.rho_plus, sol.rho_minus):
        assert abs(kr.rho_polynomial(r, ch)) <= 1e-12 * max(1.0, scale)
    assert 0.0 <= sol.rho_minus <= sol.rho_plus


@settings(max_examples=200, deadline=None)
@given(ch=channels)
def test_rho_plus_below_chi(ch):
    if ch.chi > 0:
        assert kr.solve_rho(ch).rho_plus < ch.chi


@settings(max_examples=200, deadline=None)
@given(V=st.floats(1.01, 100.0), ch=channels)
def test_optimal_rate_dominates_heisenberg_bound(V, ch):
    dr = kr.optimal_dr(V, ch).rate_bits - kr.heisenberg_dr(V, ch).rate_bits
    rr = kr.optimal_rr(V, ch).rate_bits - kr.heisenberg_rr(V, ch).rate_bits
    # strict once chi is resolvable in double precision
    if ch.chi > 1e-6:
        assert dr > 0 and rr > 0
    else:
        assert dr >= 0 and rr >= 0


@settings(max_examples=200, deadline=None)
@given(V=st.floats(1.0, 100.0), ch=channels)
def test_optimal_eve_respects_uncertainty(V, ch):
    v_e = kr.optimal_eve_variance(V, ch)
    assert v_e * kr.v_a_given_b(V, ch) >= 1 - 1e-9
    assert v_e * kr.v_b_given_a(V, ch) >= 1 - 1e-9


@settings(max_examples=300, deadline=None)
@given(T=st.floats(0.001, 1.0), eps=st.floats(0.0, 1000.0))
def test_rho_plus_bounded_by_chi_and_one(T, eps):
    ch = make_channel(T, eps)
    assert kr.solve_rho(ch).rho_plus <= min(ch.chi, 1.0) + 1e-12


@pytest.mark.parametrize("eps", [0.01, 0.3, 2.0])
def test_lossless_noisy_line_roots(eps):
    sol = kr.solve_rho(make_channel(1.0, eps))
    assert sol.rho_minus == 0.0
    assert sol.rho_plus == pytest.approx(4 * eps / (eps * eps + 4), rel=1e-14)


def test_eve_variance_shared_by_both_directions():
    ch = make_channel(0.5, 0.01)
    dr, rr = kr.optimal_dr(12.0, ch), kr.optimal_rr(12.0, ch)
    assert dr.v_key_holder_given_eve == rr.v_key_holder_given_eve
    rho = kr.solve_rho(ch).rho_plus
    assert dr.v_key_holder_given_eve == pytest.approx(6.5 * (rho + 1) / (12 * rho + 1), rel=1e-14)


def test_simple_values():
    ch = make_channel(0.5, 0.01)
    assert kr.v_a_given_b(12.0, ch) == pytest.approx(13.12 / 13.01, rel=1e-14)
    assert kr.v_a_given_b(1.0, ch) == pytest.approx(1.0)
    assert kr.v_am_given_bm(1.0, ch) == pytest.approx(1.0)
    assert kr.v_a_given_b(7.0, make_channel(1.0, 0.0)) == pytest.approx(1 / 7)


def test_homodyne_direct_reconciliation_dies_at_half_transmission():
    assert kr.homodyne_dr(12.0, make_channel(0.5, 0.0)).rate_bits == pytest.approx(0.0, abs=1e-15)
    assert kr.homodyne_dr(12.0, make_channel(0.51, 0.0)).rate_bits > 0
    assert kr.homodyne_dr(12.0, make_channel(0.49, 0.0)).rate_bits < 0

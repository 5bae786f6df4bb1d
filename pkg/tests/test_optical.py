import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetqkd import keyrates as kr
from hetqkd import optical
from hetqkd.gaussian import DomainError, make_channel

from grids import CHANNEL_GRID

V = 12.0


def check_report(rep, ch, tol=1e-10):
    assert rep.T_eff == pytest.approx(ch.T, rel=tol)
    assert rep.chi_eff == pytest.approx(ch.chi, rel=tol, abs=tol)
    assert rep.state.x_block[1, 1] == pytest.approx(ch.T * (V + ch.chi), abs=tol)
    assert rep.state.p_block[1, 1] == pytest.approx(ch.T * (V + ch.chi), abs=tol)
    assert rep.state.x_block[0, 1] == pytest.approx(math.sqrt(ch.T * (V * V - 1)), abs=tol)
    assert rep.state.p_block[0, 1] == pytest.approx(-math.sqrt(ch.T * (V * V - 1)), abs=tol)


@pytest.mark.parametrize("T, eps", CHANNEL_GRID)
def test_teleportation_realizes_channel_and_optimum(T, eps):
    ch = make_channel(T, eps)
    cfg = optical.solve_teleportation(ch)
    assert abs(cfg.channel_residual(ch)) < 1e-12 * max(1.0, ch.T * ch.chi)
    rep = optical.teleportation_channel(V, cfg)
    check_report(rep, ch)
    v_e = kr.optimal_eve_variance(V, ch)
    assert rep.v_a_given_e == pytest.approx(v_e, abs=1e-10)
    assert rep.v_b_given_e == pytest.approx(v_e, abs=1e-10)
    p = rep.p_quadrature
    assert p["v_a_given_e"] == pytest.approx(v_e, abs=1e-10)
    assert p["v_b_given_e"] == pytest.approx(v_e, abs=1e-10)


@pytest.mark.parametrize("T, eps", CHANNEL_GRID)
def test_feed_forward_realizes_channel_and_optimum(T, eps):
    ch = make_channel(T, eps)
    rep = optical.feed_forward_channel(V, optical.solve_feed_forward(ch))
    check_report(rep, ch)
    v_e = kr.optimal_eve_variance(V, ch)
    assert rep.v_a_given_e == pytest.approx(v_e, abs=1e-10)
    assert rep.v_b_given_e == pytest.approx(v_e, abs=1e-10)
    assert rep.p_quadrature["v_a_given_e"] == pytest.approx(v_e, abs=1e-10)


def test_teleportation_noiseless_half_loss():
    ch = make_channel(0.5, 0.0)
    cfg = optical.solve_teleportation(ch)
    assert math.cosh(2 * cfg.r_sq) == pytest.approx(3.0, rel=1e-14)
    assert cfg.r_sq < 0
    assert cfg.g_E == pytest.approx(1.0)
    assert abs(cfg.channel_residual(ch)) < 1e-12


@pytest.mark.parametrize("T", [0.1, 0.5, 0.9])
def test_feed_forward_noiseless_is_plain_tap(T):
    cfg = optical.solve_feed_forward(make_channel(T, 0.0))
    assert cfg.G == pytest.approx(T, rel=1e-14)
    assert cfg.g_E == pytest.approx(0.0, abs=1e-15)


def test_lossless_line_edge_cases():
    ch = make_channel(1.0, 0.0)
    with pytest.raises(optical.DegenerateAttackError):
        optical.solve_teleportation(ch)
    assert optical.solve_feed_forward(ch) == optical.FeedForwardConfig(1.0, 0.0)


def test_minus_root_teleportation():
    ch = make_channel(0.5, 0.1)
    rep = optical.teleportation_channel(V, optical.solve_teleportation(ch, "minus"))
    check_report(rep, ch)
    assert rep.v_a_given_e == pytest.approx(kr.v_a_given_e_from_rho(V, kr.solve_rho(ch).rho_minus), abs=1e-10)
    with pytest.raises(ValueError):
        optical.solve_teleportation(ch, "middle")


def test_entanglement_breaking_channels():
    T = 0.3
    eps = optical.entanglement_breaking_chi(T) - (1 - T) / T
    assert eps == pytest.approx(2.0)
    at_edge = make_channel(T, 2.0)
    assert kr.solve_rho(at_edge).rho_plus == pytest.approx(1.0, rel=1e-12)
    assert optical.solve_feed_forward(at_edge).G == pytest.approx(0.0, abs=1e-12)
    beyond = make_channel(T, 3.0)
    with pytest.raises(DomainError):
        optical.solve_feed_forward(beyond)
    rep = optical.teleportation_channel(V, optical.solve_teleportation(beyond))
    check_report(rep, beyond)
    assert optical.solve_teleportation(beyond).r_sq > 0


def test_feed_forward_config_validation():
    with pytest.raises(DomainError):
        optical.FeedForwardConfig(G=1.5, g_E=0.0)


def test_circuit_states_are_physical():
    ch = make_channel(0.4, 0.05)
    t = optical.teleportation_state(V, optical.solve_teleportation(ch))
    f = optical.feed_forward_state(V, optical.solve_feed_forward(ch))
    # Eve's mode holds classical readouts, so check the quantum (A, B) marginal
    assert t.submatrix([0, 1]).is_physical()
    assert f.submatrix([0, 1]).is_physical()
    assert np.all(np.linalg.eigvalsh(t.x_block) > 0)


@settings(max_examples=80, deadline=None)
@given(T=st.floats(0.05, 0.999), eps=st.floats(0.0, 2.0), V=st.floats(1.5, 50.0))
def test_circuits_agree(T, eps, V):
    ch = make_channel(T, eps)
    tele = optical.teleportation_channel(V, optical.solve_teleportation(ch))
    ff = optical.feed_forward_channel(V, optical.solve_feed_forward(ch))
    np.testing.assert_allclose(tele.as_tuple(), ff.as_tuple(), rtol=1e-8, atol=1e-9)
    assert tele.v_a_given_e * kr.v_a_given_b(V, ch) >= 1 - 1e-9

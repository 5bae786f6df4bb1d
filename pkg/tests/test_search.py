import math

import numpy as np
import pytest

from hetqkd import keyrates as kr
from hetqkd import search
from hetqkd.gaussian import SymplecticPair, apply_attack, condition_on_measurement, make_channel

V = 12.0


def explicit_eve_variance(pair, mode, quadrature, target):
    """Eve's conditional variance read straight off the joint covariance."""
    state = apply_attack(V, pair)
    kept = [i for i in range(4) if i != mode]
    return condition_on_measurement(state, [mode], quadrature).block(quadrature)[kept.index(target), kept.index(target)]


@pytest.mark.parametrize("T, eps", [(0.3, 0.0), (0.5, 0.01), (0.7, 0.2), (0.95, 0.05)])
@pytest.mark.parametrize("cos_sign", [1, -1])
def test_constructed_attack_is_optimal_and_symmetric(T, eps, cos_sign):
    ch = make_channel(T, eps)
    sol = search.construct_optimal(V, ch, cos_sign=cos_sign)
    v_e = kr.optimal_eve_variance(V, ch)
    assert sol.feasible
    assert sol.s_pair.symplectic_residual() < 1e-12
    for key in ("xa", "pa", "xb", "pb"):
        assert sol.eve[key] == pytest.approx(v_e, rel=1e-12)
    # independent readout from the 4-mode state, p taken from E2
    assert explicit_eve_variance(sol.s_pair, 3, "p", 0) == pytest.approx(v_e, rel=1e-12)
    mom = search.channel_moments(V, sol.s_pair)
    assert mom["xb2"] == pytest.approx(T * (V + ch.chi), rel=1e-12)
    assert mom["pb2"] == pytest.approx(T * (V + ch.chi), rel=1e-12)
    assert mom["xaxb"] == pytest.approx(math.sqrt(T * (V * V - 1)), rel=1e-12)
    assert mom["papb"] == pytest.approx(-math.sqrt(T * (V * V - 1)), rel=1e-12)


def test_minus_root_is_also_symmetric():
    ch = make_channel(0.5, 0.05)
    sol = search.construct_optimal(V, ch, root="minus")
    assert sol.feasible
    assert sol.rho_achieved == pytest.approx(kr.solve_rho(ch).rho_minus, rel=1e-10)
    assert sol.v_a_given_e > kr.optimal_eve_variance(V, ch)


def test_minus_root_vanishes_on_lossless_line():
    with pytest.raises(search.InfeasibleAttackError):
        search.construct_optimal(V, make_channel(1.0, 0.05), root="minus")


def test_perfect_channel_is_identity():
    sol = search.construct_optimal(V, make_channel(1.0, 0.0))
    np.testing.assert_array_equal(sol.s_pair.s_x, np.eye(3))
    assert sol.v_a_given_e == V
    assert search.optimize_attack(V, make_channel(1.0, 0.0)).rho_achieved == pytest.approx(0.0, abs=1e-15)


def test_beamsplitter_attack_matches_channel_but_not_eve_symmetry():
    T = 0.6
    sx = search.beamsplitter_sx(T)
    np.testing.assert_allclose(search.symmetry_residuals(sx, T, (1 - T) / T), 0.0, atol=1e-14)
    eve = search.eve_variances(V, SymplecticPair.from_sx(sx))
    # E1 holds the reflected beam: A given a lossy copy of transmittance 1-T
    assert eve["xa"] == pytest.approx((V * T + (1 - T)) / (V * (1 - T) + T), rel=1e-13)
    # E2 is untouched, so the p readout learns nothing
    assert eve["pa"] == pytest.approx(V, rel=1e-14)
    assert math.sqrt(eve["xa"] * eve["pa"]) > kr.optimal_eve_variance(V, make_channel(T, 0.0))


def test_symmetry_residuals_flag_asymmetric_transform():
    T = 0.6
    sx = search.beamsplitter_sx(T) @ np.diag([1.0, 2.0, 0.5])
    assert np.abs(search.symmetry_residuals(sx, T, (1 - T) / T)).max() > 1e-3


def test_sx_parameterization_has_channel_row():
    T, chi = 0.5, 1.2
    p = search.SxParameterization(theta=0.3, xi=0.1, rho=0.4, T=T, chi=chi)
    sx = search.build_sx(p)
    np.testing.assert_allclose(sx[0], math.sqrt(T) * search.channel_row(T, chi, 0.3))
    assert sx[0] @ sx[0] == pytest.approx(T * (1 + chi))


@pytest.mark.parametrize("direction", ["DR", "RR"])
@pytest.mark.parametrize("T, eps", [(0.4, 0.01), (0.8, 0.2)])
def test_optimizer_recovers_closed_form(direction, T, eps):
    ch = make_channel(T, eps)
    sol = search.optimize_attack(V, ch, direction, search.SearchConfig(n_starts=8, seed=5))
    assert sol.feasible
    assert sol.direction == direction
    rho = kr.solve_rho(ch).rho_plus
    assert abs(sol.rho_achieved - rho) / rho < 1e-6


def test_optimizer_is_deterministic_across_workers():
    ch = make_channel(0.6, 0.05)
    a = search.optimize_attack(V, ch, "RR", search.SearchConfig(n_starts=8, seed=11))
    b = search.optimize_attack(V, ch, "RR", search.SearchConfig(n_starts=8, seed=11, workers=4))
    np.testing.assert_array_equal(a.s_pair.s_x, b.s_pair.s_x)
    assert a.rho_achieved == b.rho_achieved


def test_optimizer_input_validation():
    ch = make_channel(0.5, 0.01)
    with pytest.raises(ValueError):
        search.optimize_attack(V, ch, "sideways")
    with pytest.raises(ValueError):
        search.optimize_attack(V, ch, "DR", search.SearchConfig(n_starts=0))


def test_dropping_symmetry_constraint_does_not_beat_optimum():
    ch = make_channel(0.5, 0.05)
    cfg = search.SearchConfig(n_starts=4, seed=2)
    stress = search.unconstrained_stress_search(V, ch, "DR", cfg)
    v_e = kr.optimal_eve_variance(V, ch)
    assert stress.v_a_given_e >= v_e * (1 - 1e-9)
    assert stress.eve["xa"] * kr.v_a_given_b(V, ch) >= 1 - 1e-9
    assert stress.eve["pa"] * kr.v_a_given_b(V, ch) >= 1 - 1e-9


def test_noise_phase_half_angle_agrees_with_acos():
    T, eps = 0.4, 0.3
    chi = (1 - T) / T + eps
    a = search.noise_phase_candidates(T, chi, 0.2)
    b = search.noise_phase_candidates(T, chi, 0.2, eps)
    np.testing.assert_allclose(a, b, rtol=1e-13)
    assert search.noise_phase_candidates(T, (1 - T) / T, 0.2, 0.0) == (0.2, 0.2)


def test_third_row_completion_rejects_bad_v2():
    with pytest.raises(search.InfeasibleAttackError):
        search.complete_third_row(0.5, 1.5, 0.0, np.array([1.0, 0.0, 0.0]))

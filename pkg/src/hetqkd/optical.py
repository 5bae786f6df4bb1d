"""Optical circuits that realize the optimal attack.

Both circuits are Gaussian maps that are linear in the input quadratures,
so they are propagated exactly at the covariance level. Measurement outcomes
fed forward as displacements enter as extra linear terms.

Mode layout of every circuit state returned here is (A, B, E) where E holds
Eve's x readout in the x block and her p readout in the p block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import keyrates
from .gaussian import (
    ALGEBRAIC_TOL,
    ChannelParams,
    DomainError,
    MultiModeCovariance,
    beamsplitter_matrix,
    check_variance,
    condition_on_measurement,
    direct_sum,
    epr_state,
    transform,
    vacuum,
)

PLUS, MINUS = "plus", "minus"
_A, _B, _E = 0, 1, 2


class DegenerateAttackError(DomainError):
    """The requested circuit needs infinite resources (e.g. infinite squeezing)."""


@dataclass(frozen=True)
class TeleportationConfig:
    """Squeezing of Eve's EPR resource and the classical feed-forward gain.

    ``r_sq`` is signed: mode E1 is scaled by ``exp(r_sq)`` in x and E2 by
    ``exp(-r_sq)``.
    """

    r_sq: float
    g_E: float

    def channel_residual(self, ch: ChannelParams) -> float:
        """``(1+T) cosh 2r + 2 sqrt(T) sinh 2r - T chi``; zero when the circuit realizes ``ch``."""
        T = ch.T
        return (1.0 + T) * math.cosh(2 * self.r_sq) + 2.0 * math.sqrt(T) * math.sinh(2 * self.r_sq) - T * ch.chi


@dataclass(frozen=True)
class FeedForwardConfig:
    """Tap transmittance ``G`` and displacement gain ``g_E``."""

    G: float
    g_E: float

    def __post_init__(self):
        if not 0.0 <= self.G <= 1.0:
            raise DomainError(f"tap transmittance must lie in [0, 1], got {self.G}")


@dataclass(frozen=True)
class CircuitReport:
    """Effective channel and Eve's conditional variances for one circuit."""

    T_eff: float
    chi_eff: float
    v_a_given_e: float
    v_b_given_e: float
    state: MultiModeCovariance

    @property
    def p_quadrature(self) -> dict[str, float]:
        """Eve's variances from the p readout; equal to the x ones for a symmetric attack."""
        return {
            "v_a_given_e": float(condition_on_measurement(self.state, [_E], "p").p_block[_A, _A]),
            "v_b_given_e": float(condition_on_measurement(self.state, [_E], "p").p_block[_B, _B]),
        }

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.T_eff, self.chi_eff, self.v_a_given_e, self.v_b_given_e


def _root(ch: ChannelParams, root_choice: str) -> float:
    sol = keyrates.solve_rho(ch)
    if root_choice == PLUS:
        return sol.rho_plus
    if root_choice == MINUS:
        return sol.rho_minus
    raise ValueError(f"root_choice must be 'plus' or 'minus', got {root_choice!r}")


def solve_teleportation(ch: ChannelParams, root_choice: str = PLUS) -> TeleportationConfig:
    """Squeezing and gain that make the teleportation attack optimal on ``ch``.

    ``cosh 2r = 1/rho``; the sign of ``r`` is whichever satisfies the
    channel-matching condition, and is negative whenever the ``sinh`` term
    has to remove noise.
    """
    rho = _root(ch, root_choice)
    if rho <= 0.0:
        raise DegenerateAttackError("perfect channel: teleportation attack degenerates (infinite squeezing)")
    if rho > 1.0:
        # rho hits 1 exactly on the entanglement-breaking edge
        if rho > 1.0 + ALGEBRAIC_TOL:
            raise DomainError(f"rho = {rho} > 1 has no real squeezing parameter")
        rho = 1.0
    T = ch.T
    cosh2r = 1.0 / rho
    magnitude = 0.5 * math.acosh(cosh2r)
    sign = 1.0 if T * ch.chi - (1.0 + T) * cosh2r >= 0.0 else -1.0
    return TeleportationConfig(r_sq=sign * magnitude, g_E=math.sqrt(2.0 * T))


def solve_feed_forward(ch: ChannelParams) -> FeedForwardConfig:
    """Tap and gain that make the feed-forward attack optimal on ``ch``.

    Only channels short of entanglement breaking are reachable: there
    ``rho_plus`` hits 1 and the tap takes the whole beam.
    """
    if ch.chi > entanglement_breaking_chi(ch.T) * (1.0 + 1e-12):
        raise DomainError(
            f"feed-forward attack cannot realize an entanglement-breaking channel (chi={ch.chi:.6g})"
        )
    rho = min(1.0, keyrates.solve_rho(ch).rho_plus)
    G = (1.0 - rho) / (1.0 + rho)
    if G >= 1.0:
        # rho = 0 only on a perfect line: nothing is tapped and nothing fed forward.
        return FeedForwardConfig(G=1.0, g_E=0.0)
    g = (math.sqrt(ch.T) - math.sqrt(G)) * math.sqrt(2.0 / (1.0 - G))
    return FeedForwardConfig(G=G, g_E=g)


def _report(V: float, state: MultiModeCovariance) -> CircuitReport:
    cov_ab = state.x_block[_A, _B]
    T_eff = cov_ab * cov_ab / (V * V - 1.0) if V > 1.0 else float("nan")
    chi_eff = state.x_block[_B, _B] / T_eff - V
    given_e = condition_on_measurement(state, [_E], "x").x_block
    return CircuitReport(
        T_eff=float(T_eff),
        chi_eff=float(chi_eff),
        v_a_given_e=float(given_e[_A, _A]),
        v_b_given_e=float(given_e[_B, _B]),
        state=state,
    )


def teleportation_state(V: float, cfg: TeleportationConfig) -> MultiModeCovariance:
    """Joint (A, B, E) covariance after Eve's teleportation attack.

    Register: (A, B0, E1, E2). E1 and E2 are squeezed in opposite
    quadratures and mixed into an EPR pair; a Bell measurement on (B0, E1)
    reads x on the B0 port and p on the E1 port, and the outcomes displace E2,
    which is what Bob receives.
    """
    V = check_variance(V)
    state = direct_sum(epr_state(V), vacuum(2))
    e = math.exp(cfg.r_sq)
    sq_x = np.diag([1.0, 1.0, e, 1.0 / e])
    sq_p = np.diag([1.0, 1.0, 1.0 / e, e])
    state = transform(state, sq_x, sq_p)
    state = transform(state, beamsplitter_matrix(4, 2, 3, 0.5))
    state = transform(state, beamsplitter_matrix(4, 1, 2, 0.5))
    # Bob's mode is E2 displaced by g times the x outcome (port 1) / p outcome (port 2).
    readout_x = np.array([[1, 0, 0, 0], [0, cfg.g_E, 0, 1], [0, 1, 0, 0]], float)
    readout_p = np.array([[1, 0, 0, 0], [0, 0, cfg.g_E, 1], [0, 0, 1, 0]], float)
    return transform(state, readout_x, readout_p)


def teleportation_channel(V: float, cfg: TeleportationConfig) -> CircuitReport:
    return _report(V, teleportation_state(V, cfg))


def feed_forward_state(V: float, cfg: FeedForwardConfig) -> MultiModeCovariance:
    """Joint (A, B, E) covariance after the feed-forward attack.

    Register: (A, B0, V0, V1). A beamsplitter of transmittance G taps B0
    into V0; Eve heterodynes the tap (x on V0, p on V1 after a balanced
    split) and displaces the transmitted beam by g times her outcomes.
    """
    V = check_variance(V)
    state = direct_sum(epr_state(V), vacuum(2))
    state = transform(state, beamsplitter_matrix(4, 1, 2, cfg.G))
    state = transform(state, beamsplitter_matrix(4, 2, 3, 0.5))
    readout_x = np.array([[1, 0, 0, 0], [0, 1, cfg.g_E, 0], [0, 0, 1, 0]], float)
    readout_p = np.array([[1, 0, 0, 0], [0, 1, 0, cfg.g_E], [0, 0, 0, 1]], float)
    return transform(state, readout_x, readout_p)


def feed_forward_channel(V: float, cfg: FeedForwardConfig) -> CircuitReport:
    return _report(V, feed_forward_state(V, cfg))


def entanglement_breaking_chi(T: float) -> float:
    """Smallest input-referred noise at which a channel of transmittance T breaks entanglement."""
    return (1.0 + T) / T

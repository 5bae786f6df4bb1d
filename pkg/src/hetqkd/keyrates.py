"""Closed-form conditional variances and secret key rates.

Rates are in bits per channel use. Heterodyne-protocol rates already
include both quadratures; homodyne-protocol rates count the single measured
quadrature. Negative rates are returned unclamped (no key).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .gaussian import ALGEBRAIC_TOL, ChannelParams, DomainError, check_variance, heterodyne_conditioned_variance

DR, RR = "DR", "RR"
HETERODYNE, HOMODYNE = "heterodyne", "homodyne"
HEISENBERG, OPTIMAL = "heisenberg", "optimal"


class UnreachableChannelError(DomainError):
    """No symmetric Gaussian attack produces the requested channel."""


@dataclass(frozen=True)
class KeyRateReport:
    direction: str
    protocol: str
    bound_kind: str
    v_key_holder_given_partner: float
    v_key_holder_given_eve: float
    rate_bits: float

    @property
    def has_key(self) -> bool:
        return self.rate_bits > 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["has_key"] = self.has_key
        return d


@dataclass(frozen=True)
class RhoSolution:
    """Roots of the quadratic fixing Eve's best Alice-to-Eve signal-to-noise ratio.

    ``discriminant`` is the radicand ``T((T chi)^2 - (1-T)^2)``.
    """

    rho_plus: float
    rho_minus: float
    discriminant: float

    def residuals(self, ch: ChannelParams) -> tuple[float, float]:
        return rho_polynomial(self.rho_plus, ch), rho_polynomial(self.rho_minus, ch)


def rho_polynomial(rho: float, ch: ChannelParams) -> float:
    T, chi = ch.T, ch.chi
    return T * (T * chi * chi + 4.0) * rho * rho - 2.0 * chi * T * (T + 1.0) * rho + (1.0 - T) ** 2


def solve_rho(ch: ChannelParams) -> RhoSolution:
    """Both roots of ``T(T chi^2 + 4) rho^2 - 2 chi T (T+1) rho + (1-T)^2 = 0``."""
    T, chi, eps = ch.T, ch.chi, ch.eps
    # (T chi)^2 - (1-T)^2 factors as (T eps) (T chi + 1 - T); this keeps the
    # radicand exactly zero at eps = 0 instead of a rounding-sized negative.
    disc = T * (T * eps) * (T * chi + 1.0 - T)
    if disc < 0.0:
        if disc < -ALGEBRAIC_TOL:
            raise UnreachableChannelError(
                f"channel unreachable by symmetric Gaussian attack (discriminant {disc:.3e})"
            )
        disc = 0.0
    den = T * (T * chi * chi + 4.0)
    root = 2.0 * math.sqrt(disc)
    centre = chi * T * (T + 1.0)
    rho_minus = (centre - root) / den
    if rho_minus < 0.0 and rho_minus > -ALGEBRAIC_TOL:
        rho_minus = 0.0
    return RhoSolution((centre + root) / den, rho_minus, disc)


def v_a_given_e_from_rho(V: float, rho: float) -> float:
    """Eve's conditional variance on one quadrature of A (also of B at the optimum)."""
    return (V + rho) / (V * rho + 1.0)


def rho_from_v_given_e(V: float, v_eve: float) -> float:
    """Invert ``v_a_given_e_from_rho``."""
    return (V - v_eve) / (V * v_eve - 1.0)


def v_a_given_b(V: float, ch: ChannelParams) -> float:
    V = check_variance(V)
    chi = ch.chi
    return (V * chi + 1.0) / (V + chi)


def v_b_given_a(V: float, ch: ChannelParams) -> float:
    V = check_variance(V)
    return ch.T * (ch.chi + 1.0 / V)


def v_a_given_bm(V: float, ch: ChannelParams) -> float:
    """Alice's quadrature given Bob's heterodyne outcome on the same quadrature."""
    V = check_variance(V)
    T, chi = ch.T, ch.chi
    return (T * (V * chi + 1.0) + V) / (T * (V + chi) + 1.0)


def v_am_given_bm(V: float, ch: ChannelParams) -> float:
    V = check_variance(V)
    T, chi = ch.T, ch.chi
    return 0.5 * (V + 1.0) * (T * (chi + 1.0) + 1.0) / (T * (V + chi) + 1.0)


def v_b_given_am(V: float, ch: ChannelParams) -> float:
    check_variance(V)
    return ch.T * (ch.chi + 1.0)


def v_bm_given_am(V: float, ch: ChannelParams) -> float:
    return heterodyne_conditioned_variance(v_b_given_am(V, ch))


def _report(direction, protocol, bound, v_partner, v_eve, quadratures=2):
    rate = 0.5 * quadratures * math.log2(v_eve / v_partner)
    return KeyRateReport(direction, protocol, bound, v_partner, v_eve, rate)


def heisenberg_dr(V: float, ch: ChannelParams) -> KeyRateReport:
    v_eve = heterodyne_conditioned_variance(1.0 / v_a_given_b(V, ch))
    return _report(DR, HETERODYNE, HEISENBERG, v_am_given_bm(V, ch), v_eve)


def heisenberg_rr(V: float, ch: ChannelParams) -> KeyRateReport:
    v_eve = heterodyne_conditioned_variance(1.0 / v_b_given_a(V, ch))
    return _report(RR, HETERODYNE, HEISENBERG, v_bm_given_am(V, ch), v_eve)


def optimal_eve_variance(V: float, ch: ChannelParams) -> float:
    """Eve's minimal conditional variance on one quadrature of A or B."""
    V = check_variance(V)
    return v_a_given_e_from_rho(V, solve_rho(ch).rho_plus)


def optimal_dr(V: float, ch: ChannelParams) -> KeyRateReport:
    v_eve = heterodyne_conditioned_variance(optimal_eve_variance(V, ch))
    return _report(DR, HETERODYNE, OPTIMAL, v_am_given_bm(V, ch), v_eve)


def optimal_rr(V: float, ch: ChannelParams) -> KeyRateReport:
    v_eve = heterodyne_conditioned_variance(optimal_eve_variance(V, ch))
    return _report(RR, HETERODYNE, OPTIMAL, v_bm_given_am(V, ch), v_eve)


def homodyne_dr(V: float, ch: ChannelParams) -> KeyRateReport:
    """Coherent states with homodyne detection, direct reconciliation.

    Eve is assumed to saturate ``V_{A|E} V_{A|B} = 1`` (entangling cloner).
    """
    vab = v_a_given_b(V, ch)
    v_partner = heterodyne_conditioned_variance(vab)
    v_eve = heterodyne_conditioned_variance(1.0 / vab)
    return _report(DR, HOMODYNE, HEISENBERG, v_partner, v_eve, quadratures=1)


def homodyne_rr(V: float, ch: ChannelParams) -> KeyRateReport:
    """Coherent states with homodyne detection, reverse reconciliation."""
    v_partner = v_b_given_am(V, ch)
    v_eve = 1.0 / v_b_given_a(V, ch)
    return _report(RR, HOMODYNE, HEISENBERG, v_partner, v_eve, quadratures=1)


def all_rates(V: float, ch: ChannelParams) -> dict[str, KeyRateReport]:
    """Every rate the toolkit knows, keyed like the sweep CSV columns."""
    return {
        "k_dr_heis": heisenberg_dr(V, ch),
        "k_dr_opt": optimal_dr(V, ch),
        "k_rr_heis": heisenberg_rr(V, ch),
        "k_rr_opt": optimal_rr(V, ch),
        "k_dr_hom": homodyne_dr(V, ch),
        "k_rr_hom": homodyne_rr(V, ch),
    }


def expected_conditional_variances(V: float, ch: ChannelParams) -> dict[str, float]:
    """Closed-form per-quadrature conditional variances under the optimal attack.

    Keys follow ``X|Y`` with ``AM``/``BM`` for heterodyne outcomes and ``E``
    for Eve's readout of the same quadrature.
    """
    v_eve = optimal_eve_variance(V, ch)
    return {
        "A|B": v_a_given_b(V, ch),
        "B|A": v_b_given_a(V, ch),
        "A|E": v_eve,
        "B|E": v_eve,
        "AM|BM": v_am_given_bm(V, ch),
        "BM|AM": v_bm_given_am(V, ch),
        "AM|E": heterodyne_conditioned_variance(v_eve),
        "BM|E": heterodyne_conditioned_variance(v_eve),
    }

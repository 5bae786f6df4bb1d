"""Covariance-matrix primitives for symmetric, x-p uncorrelated Gaussian states.

All variances are in shot-noise units: a vacuum quadrature has variance
``VACUUM``. States are stored as one block per quadrature because none of the
channels handled here correlate x with p.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

VACUUM = 1.0

ALGEBRAIC_TOL = 1e-12
COMPOSED_TOL = 1e-10
SINGULAR_DET = 1e-12


class DomainError(ValueError):
    """Raised when a parameter lies outside its physical domain."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix that must be inverted is (numerically) singular."""


def inv_small(m: np.ndarray) -> np.ndarray:
    """Inverse of a 1x1, 2x2 or 3x3 matrix via the adjugate.

    Larger matrices fall back to LAPACK. ``|det| < 1e-12`` counts as singular.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if n > 3:
        if abs(np.linalg.det(m)) < SINGULAR_DET:
            raise SingularMatrixError("matrix is singular")
        return np.linalg.inv(m)
    if n == 1:
        det = m[0, 0]
        adj = np.ones((1, 1))
    elif n == 2:
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        adj = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
    else:
        cof = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                rows = [k for k in range(3) if k != i]
                cols = [k for k in range(3) if k != j]
                minor = m[np.ix_(rows, cols)]
                cof[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
        det = float(m[0] @ cof[0])
        adj = cof.T
    if abs(det) < SINGULAR_DET:
        raise SingularMatrixError(f"matrix is singular (det={det:.3e})")
    return adj / det


@dataclass(frozen=True)
class ChannelParams:
    """Phase-insensitive Gaussian channel seen by the legitimate parties.

    ``chi`` is the total input-referred noise, loss-induced vacuum noise
    plus excess noise.
    """

    T: float
    eps: float

    def __post_init__(self):
        if not (0.0 < self.T <= 1.0) or not np.isfinite(self.T):
            raise DomainError(f"transmittance must lie in (0, 1], got {self.T}")
        if not (self.eps >= 0.0) or not np.isfinite(self.eps):
            raise DomainError(f"excess noise must be >= 0, got {self.eps}")

    @property
    def chi(self) -> float:
        return (1.0 - self.T) / self.T + self.eps

    @property
    def loss_db(self) -> float:
        return -10.0 * np.log10(self.T)


def make_channel(T: float, eps: float) -> ChannelParams:
    return ChannelParams(float(T), float(eps))


def channel_from_loss_db(loss_db: float, eps: float) -> ChannelParams:
    """Channel with transmittance ``10**(-loss_db/10)``."""
    if not (loss_db >= 0.0) or not np.isfinite(loss_db):
        raise DomainError(f"line loss must be a finite number of dB >= 0, got {loss_db}")
    return make_channel(10.0 ** (-loss_db / 10.0), eps)


@dataclass(frozen=True)
class ProtocolParams:
    """Alice's EPR variance (equivalently, modulation variance plus one)."""

    V: float

    def __post_init__(self):
        check_variance(self.V)


def check_variance(V: float) -> float:
    if not (V >= VACUUM) or not np.isfinite(V):
        raise DomainError(f"EPR variance V must be >= {VACUUM}, got {V}")
    return float(V)


@dataclass(frozen=True)
class MultiModeCovariance:
    """Zero-mean n-mode state with independent x and p blocks."""

    x_block: np.ndarray
    p_block: np.ndarray

    def __post_init__(self):
        x = np.array(self.x_block, dtype=float)
        p = np.array(self.p_block, dtype=float)
        if x.ndim != 2 or x.shape[0] != x.shape[1] or x.shape != p.shape:
            raise ValueError(f"x and p blocks must be equal square matrices, got {x.shape} and {p.shape}")
        if not (np.allclose(x, x.T, atol=ALGEBRAIC_TOL, rtol=0) and np.allclose(p, p.T, atol=ALGEBRAIC_TOL, rtol=0)):
            raise ValueError("covariance blocks must be symmetric")
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "x_block", x)
        object.__setattr__(self, "p_block", p)

    @property
    def n_modes(self) -> int:
        return self.x_block.shape[0]

    def block(self, quadrature: str) -> np.ndarray:
        if quadrature == "x":
            return self.x_block
        if quadrature == "p":
            return self.p_block
        raise ValueError(f"quadrature must be 'x' or 'p', got {quadrature!r}")

    def submatrix(self, modes: Sequence[int]) -> MultiModeCovariance:
        idx = np.asarray(modes, dtype=int)
        return MultiModeCovariance(self.x_block[np.ix_(idx, idx)], self.p_block[np.ix_(idx, idx)])

    def physicality_margin(self) -> float:
        """Smallest eigenvalue of ``x_block - inv(p_block)``.

        Non-negative (up to rounding) for any state obeying the uncertainty
        relation; zero for a pure state.
        """
        gap = self.x_block - inv_small(self.p_block)
        return float(np.linalg.eigvalsh(0.5 * (gap + gap.T)).min())

    def is_physical(self, tol: float = 1e-9) -> bool:
        try:
            return self.physicality_margin() >= -tol
        except SingularMatrixError:
            return False


@dataclass(frozen=True)
class TwoModeCovariance(MultiModeCovariance):
    """Covariance of Alice's mode A and Bob's mode B."""

    def __post_init__(self):
        super().__post_init__()
        if self.n_modes != 2:
            raise ValueError("TwoModeCovariance holds exactly two modes")


def vacuum(n_modes: int) -> MultiModeCovariance:
    eye = VACUUM * np.eye(n_modes)
    return MultiModeCovariance(eye, eye)


def epr_state(V: float) -> TwoModeCovariance:
    """Two-mode squeezed vacuum with local variance ``V``."""
    return epr_through_channel(V, make_channel(1.0, 0.0))


def epr_through_channel(V: float, ch: ChannelParams) -> TwoModeCovariance:
    """State of (A, B) after half of an EPR pair crosses channel ``ch``."""
    V = check_variance(V)
    c = np.sqrt(ch.T * (V * V - 1.0))
    vb = ch.T * (V + ch.chi)
    return TwoModeCovariance(np.array([[V, c], [c, vb]]), np.array([[V, -c], [-c, vb]]))


def direct_sum(*states: MultiModeCovariance) -> MultiModeCovariance:
    n = sum(s.n_modes for s in states)
    x = np.zeros((n, n))
    p = np.zeros((n, n))
    k = 0
    for s in states:
        m = s.n_modes
        x[k:k + m, k:k + m] = s.x_block
        p[k:k + m, k:k + m] = s.p_block
        k += m
    return MultiModeCovariance(x, p)


def conditional_variance(var_x: float, var_y: float, cov_xy: float) -> float:
    """Remaining variance of x once y has been measured.

    Negative results down to ``-1e-12`` are rounding noise and clamp to zero.
    """
    if not var_y > 0.0:
        raise DomainError(f"conditioning variable must have positive variance, got {var_y}")
    v = var_x - cov_xy * cov_xy / var_y
    if v < 0.0:
        if v < -ALGEBRAIC_TOL:
            raise DomainError(f"negative conditional variance {v:.3e}: inputs are not a covariance")
        v = 0.0
    return v


def condition_on_measurement(
    cov: MultiModeCovariance, measured: Sequence[int], quadrature: str
) -> MultiModeCovariance:
    """Condition the remaining modes on a homodyne measurement.

    The ``quadrature`` block of the retained modes becomes the Schur
    complement; the conjugate block is the plain marginal, which is exact
    because x and p are uncorrelated. Returned modes keep their original
    relative order with the measured ones removed.
    """
    if quadrature not in ("x", "p"):
        raise ValueError(f"quadrature must be 'x' or 'p', got {quadrature!r}")
    measured = sorted(set(int(i) for i in measured))
    if not measured:
        raise ValueError("at least one mode must be measured")
    if measured[0] < 0 or measured[-1] >= cov.n_modes:
        raise IndexError(f"measured modes {measured} out of range for {cov.n_modes} modes")
    kept = [i for i in range(cov.n_modes) if i not in measured]
    if not kept:
        raise ValueError("measuring every mode leaves nothing to condition")

    sigma = cov.block(quadrature)
    s11 = sigma[np.ix_(kept, kept)]
    s12 = sigma[np.ix_(kept, measured)]
    s22 = sigma[np.ix_(measured, measured)]
    if len(measured) == 1:
        var_y = s22[0, 0]
        if not var_y > SINGULAR_DET:
            raise SingularMatrixError(f"measured variance {var_y:.3e} is singular")
        col = s12[:, 0]
        cond = s11 - np.outer(col, col) / var_y
    else:
        cond = s11 - s12 @ inv_small(s22) @ s12.T
    cond = 0.5 * (cond + cond.T)
    diag = np.diag(cond).copy()
    if (diag < -ALGEBRAIC_TOL).any():
        raise DomainError("conditioning produced a negative variance: input is not a covariance")
    np.fill_diagonal(cond, np.maximum(diag, 0.0))

    other = cov.block("p" if quadrature == "x" else "x")[np.ix_(kept, kept)]
    if quadrature == "x":
        return MultiModeCovariance(cond, other)
    return MultiModeCovariance(other, cond)


def heterodyne_conditioned_variance(v_conditional: float) -> float:
    """Variance of a heterodyne outcome given the conditional variance of the mode.

    Splitting the mode on a balanced beamsplitter with vacuum adds half a
    vacuum unit and halves the signal.
    """
    if v_conditional < 0.0:
        raise DomainError(f"conditional variance must be >= 0, got {v_conditional}")
    return 0.5 * (v_conditional + VACUUM)


def beamsplitter_matrix(n_modes: int, i: int, j: int, transmittance: float) -> np.ndarray:
    """Orthogonal mode map of a beamsplitter acting identically on x and p.

    Output i is ``sqrt(t) a_i + sqrt(1-t) a_j``; output j is
    ``sqrt(1-t) a_i - sqrt(t) a_j``.
    """
    if not 0.0 <= transmittance <= 1.0:
        raise DomainError(f"beamsplitter transmittance must lie in [0, 1], got {transmittance}")
    if i == j:
        raise ValueError("beamsplitter needs two distinct modes")
    t, r = np.sqrt(transmittance), np.sqrt(1.0 - transmittance)
    m = np.eye(n_modes)
    m[i, i], m[i, j] = t, r
    m[j, i], m[j, j] = r, -t
    return m


def transform(cov: MultiModeCovariance, lx: np.ndarray, lp: np.ndarray | None = None) -> MultiModeCovariance:
    """Apply linear quadrature maps: ``x -> lx x``, ``p -> lp p``.

    ``lp`` defaults to ``lx``, which is right for passive orthogonal optics.
    The maps may be rectangular (e.g. to drop or read out modes).
    """
    lx = np.asarray(lx, dtype=float)
    lp = lx if lp is None else np.asarray(lp, dtype=float)
    return MultiModeCovariance(lx @ cov.x_block @ lx.T, lp @ cov.p_block @ lp.T)


def heterodyne_split(cov: MultiModeCovariance, mode: int) -> MultiModeCovariance:
    """Mix ``mode`` with a fresh vacuum on a balanced beamsplitter.

    The vacuum is appended as the last mode. After the split, an x readout
    on ``mode`` and a p readout on the appended mode together form a
    heterodyne measurement of the original mode.
    """
    full = direct_sum(cov, vacuum(1))
    bs = beamsplitter_matrix(full.n_modes, mode, full.n_modes - 1, 0.5)
    return transform(full, bs)


@dataclass(frozen=True)
class SymplecticPair:
    """Block-diagonal Gaussian unitary on three modes, ``S = S_x (+) S_p``."""

    s_x: np.ndarray
    s_p: np.ndarray

    def __post_init__(self):
        sx = np.array(self.s_x, dtype=float)
        sp = np.array(self.s_p, dtype=float)
        if sx.shape != (3, 3) or sp.shape != (3, 3):
            raise ValueError("attack transforms act on exactly three modes")
        sx.setflags(write=False)
        sp.setflags(write=False)
        object.__setattr__(self, "s_x", sx)
        object.__setattr__(self, "s_p", sp)

    @classmethod
    def from_sx(cls, s_x: np.ndarray) -> SymplecticPair:
        """Complete ``s_x`` with the p block ``(s_x^T)^-1``."""
        s_x = np.asarray(s_x, dtype=float)
        return cls(s_x, inv_small(s_x.T))

    @classmethod
    def identity(cls) -> SymplecticPair:
        return cls(np.eye(3), np.eye(3))

    def full_matrix(self) -> np.ndarray:
        """The 6x6 transform in (x1, x2, x3, p1, p2, p3) ordering."""
        s = np.zeros((6, 6))
        s[:3, :3] = self.s_x
        s[3:, 3:] = self.s_p
        return s

    def symplectic_residual(self) -> float:
        """``max |S J S^T - J|`` for the x-p pairing form J."""
        j = symplectic_form(3)
        s = self.full_matrix()
        return float(np.abs(s @ j @ s.T - j).max())

    def is_symplectic(self, tol: float = COMPOSED_TOL) -> bool:
        return self.symplectic_residual() <= tol


def symplectic_form(n_modes: int) -> np.ndarray:
    eye = np.eye(n_modes)
    zero = np.zeros((n_modes, n_modes))
    return np.block([[zero, eye], [-eye, zero]])


# Mode ordering of the joint state returned by apply_attack.
MODE_A, MODE_B, MODE_E1, MODE_E2 = 0, 1, 2, 3


def apply_attack(V: float, pair: SymplecticPair) -> MultiModeCovariance:
    """Joint state of (A, B, E1, E2) after Eve's unitary on (B0, E1, E2).

    The input is an EPR pair on (A, B0) with both ancillae in vacuum.
    """
    start = direct_sum(epr_state(V), vacuum(2))
    lx = np.eye(4)
    lp = np.eye(4)
    lx[1:, 1:] = pair.s_x
    lp[1:, 1:] = pair.s_p
    return transform(start, lx, lp)

"""Explicit symplectic attacks and numerical search for the optimal one.

Eve's unitary acts on (B0, E1, E2) and is block diagonal, ``S_x (+) S_p``
with ``S_p = (S_x^T)^-1``. She reads x on E1 and p on E2. An attack is
*feasible* when Bob's mode sees the requested channel in both quadratures
and Eve's two readouts are equally informative.

Two independent routes are provided:

* :func:`construct_optimal` builds the attack from the closed-form root
  ``rho_plus`` of :func:`hetqkd.keyrates.solve_rho`.
* :func:`optimize_attack` never looks at the closed form. It parameterizes
  every S_x whose p block reproduces the channel exactly, then searches that
  family for Eve-symmetric attacks and keeps the most informative one.

Channel elimination used by the optimizer: write the unscaled rows of
``S_x / sqrt(T)`` as v1 (fixed by the x channel), v2 and w. The p channel
requires ``v2 x w = d T n`` with ``n = (1, sqrt(chi) cos(phi), sqrt(chi) sin(phi))``
and ``d = v1 . (v2 x w)``. For a non-singular S_x this holds exactly when
``T v1.n = 1`` (fixes ``phi`` up to a sign), ``v2 . n = 0``, and
``w = n x v2 / |v2|^2`` up to irrelevant scale and a multiple of v2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from . import keyrates
from .gaussian import (
    MODE_A,
    MODE_B,
    MODE_E1,
    MODE_E2,
    ChannelParams,
    DomainError,
    SingularMatrixError,
    SymplecticPair,
    apply_attack,
    check_variance,
    condition_on_measurement,
)
from .keyrates import DR, RR

FEASIBILITY_TOL = 1e-8


class InfeasibleAttackError(RuntimeError):
    """No attack satisfying the channel and symmetry constraints was found."""


@dataclass(frozen=True)
class SxParameterization:
    """Free parameters of Eve's x-quadrature transform.

    Row 1 is ``sqrt(T) (1, sqrt(chi) cos(theta), sqrt(chi) sin(theta))``,
    row 2 is ``sqrt(T) u (sqrt(rho), sin(xi), cos(xi))`` and row 3 is
    ``sqrt(T) third_row``. ``phi`` is the phase of the p-quadrature noise
    and only matters when completing the third row.
    """

    theta: float
    xi: float
    rho: float
    T: float
    chi: float
    u: float = 1.0
    third_row: tuple[float, float, float] = (0.0, 0.0, 1.0)
    phi: float = 0.0


def channel_row(T: float, chi: float, theta: float) -> np.ndarray:
    sq = math.sqrt(chi)
    return np.array([1.0, sq * math.cos(theta), sq * math.sin(theta)])


def build_sx(param: SxParameterization) -> np.ndarray:
    if param.rho < 0.0:
        raise DomainError(f"rho must be >= 0, got {param.rho}")
    v2 = param.u * np.array([math.sqrt(param.rho), math.sin(param.xi), math.cos(param.xi)])
    m = np.vstack([channel_row(param.T, param.chi, param.theta), v2, np.asarray(param.third_row, float)])
    s_x = math.sqrt(param.T) * m
    det = np.linalg.det(s_x)
    if abs(det) < 1e-12:
        raise SingularMatrixError(f"S_x is singular (det={det:.3e})")
    return s_x


def symmetry_residuals(s_x: np.ndarray, T: float, chi: float) -> np.ndarray:
    """Residuals of the p-quadrature channel conditions with ``phi`` eliminated.

    ``d`` is the determinant of the bracketed matrix ``S_x / sqrt(T)``; with
    that convention the first row of ``S_p`` equals ``sqrt(T) n`` exactly when
    both residuals vanish.
    """
    m = np.asarray(s_x, float) / math.sqrt(T)
    (a, b, c), (r, s, t) = m[1], m[2]
    d = np.linalg.det(m)
    r1 = (b * t - c * s) - d * T
    r2 = (c * r - a * t) ** 2 + (a * s - b * r) ** 2 - (d * T) ** 2 * chi
    return np.array([r1, r2])


def eve_variances(V: float, pair: SymplecticPair) -> dict[str, float]:
    """Eve's conditional variances on A and B, x read from E1 and p from E2."""
    state = apply_attack(V, pair)
    x_given = condition_on_measurement(state, [MODE_E1], "x").x_block
    p_given = condition_on_measurement(state, [MODE_E2], "p").p_block
    # Retained modes after dropping E1: (A, B, E2); after dropping E2: (A, B, E1).
    return {
        "xa": float(x_given[MODE_A, MODE_A]),
        "pa": float(p_given[MODE_A, MODE_A]),
        "xb": float(x_given[MODE_B, MODE_B]),
        "pb": float(p_given[MODE_B, MODE_B]),
    }


def channel_moments(V: float, pair: SymplecticPair) -> dict[str, float]:
    state = apply_attack(V, pair)
    return {
        "xb2": float(state.x_block[MODE_B, MODE_B]),
        "pb2": float(state.p_block[MODE_B, MODE_B]),
        "xaxb": float(state.x_block[MODE_A, MODE_B]),
        "papb": float(state.p_block[MODE_A, MODE_B]),
    }


@dataclass(frozen=True)
class AttackSolution:
    rho_achieved: float
    s_pair: SymplecticPair
    v_a_given_e: float
    v_b_given_e: float
    residuals: np.ndarray
    direction: str = DR
    eve: dict = field(default_factory=dict)
    parameterization: SxParameterization | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(np.all(np.abs(self.residuals) < FEASIBILITY_TOL)) and self.s_pair.is_symplectic()


def _solution(V, ch, pair, direction, param=None, diagnostics=None, symmetric=True):
    eve = eve_variances(V, pair)
    if symmetric:
        v_ae, v_be = eve["xa"], eve["xb"]
    else:
        v_ae = math.sqrt(eve["xa"] * eve["pa"])
        v_be = math.sqrt(eve["xb"] * eve["pb"])
    v_key = v_ae if direction == DR else v_be
    if ch.chi == 0.0:
        res = np.zeros(2)
    else:
        res = symmetry_residuals(pair.s_x, ch.T, ch.chi)
    rho = keyrates.rho_from_v_given_e(V, v_key) if V > 1.0 else float("nan")
    return AttackSolution(
        rho_achieved=float(rho),
        s_pair=pair,
        v_a_given_e=v_ae,
        v_b_given_e=v_be,
        residuals=res,
        direction=direction,
        eve=eve,
        parameterization=param,
        diagnostics=diagnostics or {},
    )


def _check_direction(direction: str) -> str:
    d = direction.upper()
    if d not in (DR, RR):
        raise ValueError(f"direction must be DR or RR, got {direction!r}")
    return d


def noise_phase_candidates(T: float, chi: float, theta: float, eps: float | None = None) -> tuple[float, float]:
    """The two p-noise phases compatible with a channel-matching S_x.

    They solve ``T (1 + chi cos(theta - phi)) = 1``. The offset from
    ``theta`` grows like ``sqrt(eps)``, so pass ``eps`` when known: the
    half-angle form then avoids the cancellation in ``T chi - (1 - T)``.
    """
    if eps is None:
        delta = math.acos(min(1.0, max(-1.0, (1.0 - T) / (T * chi))))
    else:
        half = min(1.0, math.sqrt(0.5 * T * eps / (T * chi)))
        delta = 2.0 * math.asin(half)
    return theta - delta, theta + delta


def noise_direction(chi: float, phi: float) -> np.ndarray:
    sq = math.sqrt(chi)
    return np.array([1.0, sq * math.cos(phi), sq * math.sin(phi)])


def complete_third_row(
    T: float, chi: float, theta: float, v2: np.ndarray, eps: float | None = None
) -> tuple[float, np.ndarray]:
    """Choose ``phi`` and a unit third row so the p channel matches.

    Returns ``(phi, row)``. Raises if neither admissible ``phi`` makes the
    noise direction orthogonal to ``v2``.
    """
    v2 = np.asarray(v2, float)
    best = None
    for phi in noise_phase_candidates(T, chi, theta, eps):
        n = noise_direction(chi, phi)
        miss = abs(n @ v2) / (np.linalg.norm(n) * np.linalg.norm(v2))
        if best is None or miss < best[0]:
            best = (miss, phi, n)
    miss, phi, n = best
    if miss > FEASIBILITY_TOL:
        raise InfeasibleAttackError(
            f"third-row completion has no non-trivial solution (orthogonality miss {miss:.3e})"
        )
    row = np.cross(n, v2)
    return phi, row / np.linalg.norm(row)


def construct_optimal(
    V: float,
    ch: ChannelParams,
    direction: str = DR,
    *,
    root: str = "plus",
    cos_sign: int = 1,
    theta: float = 0.0,
) -> AttackSolution:
    """Build the attack attaining the closed-form optimum.

    ``root`` selects ``rho_plus`` (Eve-optimal) or ``rho_minus``; ``cos_sign``
    picks the sign of ``cos(xi + theta)``. The same transform is optimal in
    both reconciliation directions.
    """
    V = check_variance(V)
    direction = _check_direction(direction)
    if ch.chi == 0.0:
        return _solution(V, ch, SymplecticPair.identity(), direction, diagnostics={"degenerate": True})
    sol = keyrates.solve_rho(ch)
    rho = {"plus": sol.rho_plus, "minus": sol.rho_minus}[root]
    if rho <= 0.0:
        raise InfeasibleAttackError(f"rho_{root} = {rho} leaves Eve's mode uncorrelated with Alice's")
    T, chi = ch.T, ch.chi
    sin_a = 0.5 * (T * chi * rho - (1.0 - T)) / (T * math.sqrt(chi * rho))
    cos_a = math.copysign(math.sqrt(max(0.0, rho / (T * chi))), cos_sign)
    xi = math.atan2(sin_a, cos_a) - theta
    v2 = np.array([math.sqrt(rho), math.sin(xi), math.cos(xi)])
    phi, row = complete_third_row(T, chi, theta, v2, ch.eps)
    param = SxParameterization(theta=theta, xi=xi, rho=rho, T=T, chi=chi, third_row=tuple(row), phi=phi)
    pair = SymplecticPair.from_sx(build_sx(param))
    return _solution(V, ch, pair, direction, param, {"sin_xi_theta": sin_a, "cos_xi_theta": cos_a})


# --- numerical search -------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    n_starts: int = 32
    seed: int = 0
    psi_grid: int = 720
    n_refine: int = 4
    theta_step: float = 0.25
    theta_tol: float = 1e-4
    root_xtol: float = 1e-15
    workers: int = 1


def _perp_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = int(np.argmin(np.abs(n)))
    axis = np.zeros(3)
    axis[k] = 1.0
    e1 = np.cross(n, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2 / np.linalg.norm(e2)


class _Family:
    """Channel-matching S_x at fixed (theta, phi branch), indexed by an angle psi."""

    def __init__(self, V: float, ch: ChannelParams, theta: float, branch: int):
        self.V, self.T, self.chi = V, ch.T, ch.chi
        self.theta = theta
        self.phi = noise_phase_candidates(ch.T, ch.chi, theta, ch.eps)[0 if branch < 0 else 1]
        self.n = noise_direction(ch.chi, self.phi)
        self.v1 = channel_row(ch.T, ch.chi, theta)
        self.e1, self.e2 = _perp_basis(self.n)
        c = math.sqrt(V * V - 1.0)
        self.sig_x = np.diag([V, V, 1.0, 1.0])
        self.sig_x[0, 1] = self.sig_x[1, 0] = c
        self.sig_p = np.diag([V, V, 1.0, 1.0])
        self.sig_p[0, 1] = self.sig_p[1, 0] = -c

    def rows(self, psi):
        psi = np.atleast_1d(np.asarray(psi, float))
        v2 = np.cos(psi)[:, None] * self.e1 + np.sin(psi)[:, None] * self.e2
        w = np.cross(self.n, v2) / np.einsum("ij,ij->i", v2, v2)[:, None]
        return v2, w

    def sx(self, psi):
        v2, w = self.rows(psi)
        m = np.empty((v2.shape[0], 3, 3))
        m[:, 0] = self.v1
        m[:, 1] = v2
        m[:, 2] = w
        return math.sqrt(self.T) * m

    def variances(self, psi):
        """Eve's four conditional variances (xa, pa, xb, pb) for each psi."""
        sx = self.sx(psi)
        sp = np.linalg.inv(np.transpose(sx, (0, 2, 1)))
        out = []
        for s, sig, eve in ((sx, self.sig_x, 2), (sp, self.sig_p, 3)):
            lm = np.tile(np.eye(4), (s.shape[0], 1, 1))
            lm[:, 1:, 1:] = s
            cov = lm @ sig @ np.transpose(lm, (0, 2, 1))
            ve = cov[:, eve, eve]
            out.append((cov[:, 0, 0] - cov[:, 0, eve] ** 2 / ve, cov[:, 1, 1] - cov[:, 1, eve] ** 2 / ve))
        (xa, xb), (pa, pb) = out
        return xa, pa, xb, pb

    def gap_and_objective(self, psi, direction):
        xa, pa, xb, pb = self.variances(psi)
        if direction == DR:
            return xa - pa, xa
        return xb - pb, xb


def _symmetric_candidates(fam: _Family, direction: str, cfg: SearchConfig):
    """Eve-symmetric attacks in one family, as (objective, psi) pairs."""
    grid = np.linspace(0.0, math.pi, cfg.psi_grid, endpoint=False)
    gap, _ = fam.gap_and_objective(grid, direction)
    # psi and psi + pi give opposite v2 and identical variances: gap is pi-periodic.
    edges = np.append(grid, math.pi)
    sign = np.sign(np.append(gap, gap[0]))

    def f(p):
        return float(fam.gap_and_objective(p, direction)[0][0])

    roots = []
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        roots.append(brentq(f, edges[i], edges[i + 1], xtol=cfg.root_xtol, rtol=4 * np.finfo(float).eps))
    # Tangential zeros do not change sign; polish small local minima of |gap| there.
    mag = np.abs(gap)
    scale = max(1.0, float(mag.max()))
    n = cfg.psi_grid
    for i in np.nonzero(mag < 1e-3 * scale)[0]:
        lo, hi = (i - 1) % n, (i + 1) % n
        if mag[i] > mag[lo] or mag[i] > mag[hi] or not (sign[lo] == sign[i] == sign[hi]):
            continue
        res = minimize_scalar(
            lambda p: abs(f(p)),
            bounds=(grid[i] - math.pi / n, grid[i] + math.pi / n),
            method="bounded",
            options={"xatol": 1e-14},
        )
        if abs(f(res.x)) < 1e-12 * scale:
            roots.append(float(res.x))
    if not roots:
        return []
    psi = np.array(roots)
    gaps, obj = fam.gap_and_objective(psi, direction)
    keep = np.abs(gaps) < FEASIBILITY_TOL
    return sorted(zip(obj[keep].tolist(), psi[keep].tolist()))


def _best_in_family(V, ch, theta, branch, direction, cfg):
    fam = _Family(V, ch, theta, branch)
    cands = _symmetric_candidates(fam, direction, cfg)
    if not cands:
        return math.inf, None
    return cands[0]


def _refine_theta(V, ch, theta, branch, value, psi, direction, cfg):
    """Compass search over theta; psi is re-solved at every trial point."""
    step = cfg.theta_step
    evals = 0
    while step > cfg.theta_tol:
        improved = False
        for trial in (theta + step, theta - step):
            val, p = _best_in_family(V, ch, trial, branch, direction, cfg)
            evals += 1
            if val < value - 1e-15:
                theta, value, psi, improved = trial, val, p, True
                break
        if not improved:
            step *= 0.5
    return theta, value, psi, evals


def _start_theta(seed: int, k: int) -> float:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))
    return float(rng.uniform(0.0, 2.0 * math.pi))


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _to_solution(V, ch, theta, branch, psi, direction, diagnostics, symmetric=True):
    fam = _Family(V, ch, theta, branch)
    v2, w = fam.rows(psi)
    v2, w = v2[0], w[0]
    if v2[0] < 0.0:
        v2, w = -v2, -w
    u = math.hypot(v2[1], v2[2])
    param = SxParameterization(
        theta=theta,
        xi=math.atan2(v2[1], v2[2]),
        rho=(v2[0] / u) ** 2,
        T=ch.T,
        chi=ch.chi,
        u=1.0,
        third_row=tuple(w / np.linalg.norm(w)),
        phi=fam.phi,
    )
    pair = SymplecticPair.from_sx(build_sx(param))
    return _solution(V, ch, pair, direction, param, diagnostics, symmetric=symmetric)


def optimize_attack(
    V: float, ch: ChannelParams, direction: str = DR, config: SearchConfig | None = None
) -> AttackSolution:
    """Most informative Eve-symmetric attack found by seeded multi-start search.

    DR minimizes Eve's variance on A, RR on B. The result carries the
    ``rho`` it achieves; it is never seeded with the closed-form value.
    """
    V = check_variance(V)
    direction = _check_direction(direction)
    cfg = config or SearchConfig()
    if cfg.n_starts < 1:
        raise ValueError("need at least one start")
    if ch.chi == 0.0:
        # Perfect line: the only channel-matching transform leaves Eve uncorrelated.
        return _solution(V, ch, SymplecticPair.identity(), direction, diagnostics={"degenerate": True})

    starts = [(_start_theta(cfg.seed, k), 1 if k % 2 else -1) for k in range(cfg.n_starts)]
    scored = _map(lambda s: _best_in_family(V, ch, s[0], s[1], direction, cfg), starts, cfg.workers)
    ranked = sorted(range(len(starts)), key=lambda k: (scored[k][0], k))
    feasible = [k for k in ranked if scored[k][1] is not None]
    if not feasible:
        raise InfeasibleAttackError(
            f"no Eve-symmetric attack found for T={ch.T}, eps={ch.eps} over {cfg.n_starts} starts"
        )

    def refine(k):
        theta, branch = starts[k]
        val, psi = scored[k]
        return _refine_theta(V, ch, theta, branch, val, psi, direction, cfg) + (branch, k)

    refined = _map(refine, feasible[: cfg.n_refine], cfg.workers)
    theta, value, psi, _, branch, k = min(refined, key=lambda r: (r[1], r[5]))
    diagnostics = {
        "n_starts": cfg.n_starts,
        "n_feasible_starts": len(feasible),
        "best_start": k,
        "objective": value,
        "theta": theta,
        "branch": branch,
        "psi": psi,
        "refine_evals": sum(r[3] for r in refined),
    }
    return _to_solution(V, ch, theta, branch, psi, direction, diagnostics)


def unconstrained_stress_search(
    V: float, ch: ChannelParams, direction: str = DR, config: SearchConfig | None = None
) -> AttackSolution:
    """Channel-matching search that drops the equal-x-p-information constraint.

    Minimizes ``log v_x + log v_p`` of Eve's variances on the key holder.
    The returned ``v_*_given_e`` are geometric means of the two quadratures,
    and ``rho_achieved`` is the rho those means correspond to.
    """
    V = check_variance(V)
    direction = _check_direction(direction)
    cfg = config or SearchConfig()
    if ch.chi == 0.0:
        return _solution(V, ch, SymplecticPair.identity(), direction, diagnostics={"degenerate": True})

    def objective(theta, branch, psi):
        xa, pa, xb, pb = _Family(V, ch, theta, branch).variances(psi)
        return np.log(xa) + np.log(pa) if direction == DR else np.log(xb) + np.log(pb)

    psi_grid = np.linspace(0.0, math.pi, 180, endpoint=False)

    def run(k):
        theta0 = _start_theta(cfg.seed, k)
        branch = 1 if k % 2 else -1
        vals = objective(theta0, branch, psi_grid)
        psi0 = float(psi_grid[int(np.argmin(vals))])
        res = minimize(
            lambda z: float(objective(z[0], branch, z[1])[0]),
            x0=[theta0, psi0],
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000},
        )
        return float(res.fun), float(res.x[0]), float(res.x[1]), branch, k

    results = _map(run, range(cfg.n_starts), cfg.workers)
    value, theta, psi, branch, k = min(results, key=lambda r: (r[0], r[4]))
    diagnostics = {"objective": value, "theta": theta, "psi": psi, "branch": branch, "best_start": k}
    return _to_solution(V, ch, theta, branch, psi, direction, diagnostics, symmetric=False)


def beamsplitter_sx(T: float) -> np.ndarray:
    """Pure-loss attack: Eve keeps the reflected beam in E1, E2 is untouched."""
    t, r = math.sqrt(T), math.sqrt(1.0 - T)
    return np.array([[t, r, 0.0], [r, -t, 0.0], [0.0, 0.0, 1.0]])


"""Shot-by-shot simulation of the entanglement-based protocol.

Every shot draws the EPR pair, pushes Bob's half through the chosen attack
with freshly sampled vacuum ancillae, and performs each heterodyne
measurement explicitly by mixing with a vacuum mode on a balanced
beamsplitter. Statistics are accumulated per batch as raw second moments;
the states are zero-mean, so no centring is applied.

Random numbers: each batch owns a Philox-4x64 stream keyed by
``SeedSequence(seed, spawn_key=(batch,))``. Uniform doubles are built from the
top 53 bits of the raw 64-bit output and turned into normals with the
Box-Muller transform, so results depend only on the raw bit stream, which
numpy keeps stable across releases.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .gaussian import ChannelParams, SymplecticPair, check_variance
from .keyrates import DR, RR
from .optical import FeedForwardConfig, TeleportationConfig

Attack = Union[None, SymplecticPair, TeleportationConfig, FeedForwardConfig]

SHOT_FIELDS = ("x_a_m", "p_a_m", "x_b_m", "p_b_m", "x_e", "p_e")
# Order of the variables whose second moments are accumulated, per quadrature.
VARIABLES = ("A", "B", "AM", "BM", "E")
_IDX = {name: i for i, name in enumerate(VARIABLES)}
CONDITIONALS = {
    "A|B": ("A", "B"),
    "B|A": ("B", "A"),
    "A|E": ("A", "E"),
    "B|E": ("B", "E"),
    "AM|BM": ("AM", "BM"),
    "BM|AM": ("BM", "AM"),
    "AM|E": ("AM", "E"),
    "BM|E": ("BM", "E"),
}
_EVE_KEYS = frozenset(k for k in CONDITIONALS if "E" in k.split("|")[1])

DEFAULT_SAMPLES = 1_000_000
DEFAULT_BATCHES = 16
_SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class SimConfig:
    V: float
    channel: ChannelParams
    attack: Attack = None
    n_samples: int = DEFAULT_SAMPLES
    seed: int = 0
    n_batches: int = DEFAULT_BATCHES
    workers: int = 1

    def __post_init__(self):
        check_variance(self.V)
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_batches < 1:
            raise ValueError(f"n_batches must be >= 1, got {self.n_batches}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.attack is not None and not isinstance(
            self.attack, (SymplecticPair, TeleportationConfig, FeedForwardConfig)
        ):
            raise TypeError(f"unsupported attack {type(self.attack).__name__}")

    @property
    def has_eve(self) -> bool:
        return self.attack is not None

    def batch_sizes(self) -> list[int]:
        nb = min(self.n_batches, self.n_samples)
        base, extra = divmod(self.n_samples, nb)
        return [base + (1 if b < extra else 0) for b in range(nb)]


@dataclass(frozen=True)
class ShotRecord:
    """Measured outcomes of one batch of shots (arrays of equal length)."""

    x_a_m: np.ndarray
    p_a_m: np.ndarray
    x_b_m: np.ndarray
    p_b_m: np.ndarray
    x_e: np.ndarray
    p_e: np.ndarray

    def __len__(self):
        return len(self.x_a_m)


@dataclass
class EstimatorResult:
    """Pooled estimators plus batch-to-batch standard errors.

    ``moments[q]`` is the 5x5 raw second-moment matrix of ``VARIABLES`` for
    quadrature ``q``; the other dicts are keyed ``[name][q]``.
    """

    n_samples: int
    n_batches: int
    has_eve: bool
    moments: dict[str, np.ndarray]
    moments_se: dict[str, np.ndarray]
    conditional: dict[str, dict[str, float]]
    conditional_se: dict[str, dict[str, float]]
    mutual_info: dict[str, dict[str, float]]
    batch_counts: np.ndarray = field(repr=False)
    batch_moments: np.ndarray = field(repr=False)

    def covariance_ab(self, quadrature: str) -> np.ndarray:
        return self.moments[quadrature][:2, :2]

    def covariance_ab_se(self, quadrature: str) -> np.ndarray:
        return self.moments_se[quadrature][:2, :2]


# --- random numbers ---------------------------------------------------------


def batch_bit_generator(seed: int, batch: int) -> np.random.Philox:
    return np.random.Philox(np.random.SeedSequence(seed, spawn_key=(batch,)))


def uniform_open(bitgen: np.random.BitGenerator, n: int) -> np.ndarray:
    """Doubles in (0, 1] from the top 53 bits of the raw stream."""
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def standard_normals(bitgen: np.random.BitGenerator, shape: tuple[int, ...]) -> np.ndarray:
    """Box-Muller normals, consuming exactly ``2 * ceil(size / 2)`` raw draws."""
    size = int(np.prod(shape))
    half = (size + 1) // 2
    u = uniform_open(bitgen, 2 * half)
    radius = np.sqrt(-2.0 * np.log(u[:half]))
    angle = 2.0 * np.pi * u[half:]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:size].reshape(shape)


# --- shot generation --------------------------------------------------------


def _heterodyne(x, p, vac_x, vac_p):
    """Balanced split with vacuum; x read on one port, p on the other."""
    return (x + vac_x) * _SQRT_HALF, (p - vac_p) * _SQRT_HALF


def _simulate_batch(cfg: SimConfig, batch: int, size: int):
    g = standard_normals(batch_bit_generator(cfg.seed, batch), (12, size))
    V = cfg.V
    c = math.sqrt(V * V - 1.0)
    x_a = math.sqrt(V) * g[0]
    p_a = math.sqrt(V) * g[2]
    x_b0 = (c / V) * x_a + math.sqrt(1.0 / V) * g[1]
    p_b0 = -(c / V) * p_a + math.sqrt(1.0 / V) * g[3]
    attack = cfg.attack

    if attack is None:
        ch = cfg.channel
        noise = math.sqrt(ch.T * ch.chi)
        x_b = math.sqrt(ch.T) * x_b0 + noise * g[4]
        p_b = math.sqrt(ch.T) * p_b0 + noise * g[6]
        x_e = np.zeros(size)
        p_e = np.zeros(size)
    elif isinstance(attack, SymplecticPair):
        out_x = attack.s_x @ np.vstack([x_b0, g[4], g[5]])
        out_p = attack.s_p @ np.vstack([p_b0, g[6], g[7]])
        x_b, x_e = out_x[0], out_x[1]
        p_b, p_e = out_p[0], out_p[2]
    elif isinstance(attack, TeleportationConfig):
        e = math.exp(attack.r_sq)
        x1, x2 = e * g[4], g[5] / e
        p1, p2 = g[6] / e, e * g[7]
        x1p, x2p = (x1 + x2) * _SQRT_HALF, (x1 - x2) * _SQRT_HALF
        p1p, p2p = (p1 + p2) * _SQRT_HALF, (p1 - p2) * _SQRT_HALF
        # Bell measurement on (B0, E1'): x on the sum port, p on the difference port.
        x_e = (x_b0 + x1p) * _SQRT_HALF
        p_e = (p_b0 - p1p) * _SQRT_HALF
        x_b = x2p + attack.g_E * x_e
        p_b = p2p + attack.g_E * p_e
    else:
        tg, rg = math.sqrt(attack.G), math.sqrt(1.0 - attack.G)
        x_t, x_f = tg * x_b0 + rg * g[4], rg * x_b0 - tg * g[4]
        p_t, p_f = tg * p_b0 + rg * g[6], rg * p_b0 - tg * g[6]
        x_e, p_e = _heterodyne(x_f, p_f, g[5], g[7])
        x_b = x_t + attack.g_E * x_e
        p_b = p_t + attack.g_E * p_e

    x_am, p_am = _heterodyne(x_a, p_a, g[8], g[9])
    x_bm, p_bm = _heterodyne(x_b, p_b, g[10], g[11])
    shots = ShotRecord(x_am, p_am, x_bm, p_bm, x_e, p_e)
    xs = np.vstack([x_a, x_b, x_am, x_bm, x_e])
    ps = np.vstack([p_a, p_b, p_am, p_bm, p_e])
    return shots, np.stack([xs @ xs.T, ps @ ps.T])


def iter_shots(cfg: SimConfig) -> Iterator[ShotRecord]:
    """Measured outcomes batch by batch, in batch order."""
    for b, size in enumerate(cfg.batch_sizes()):
        yield _simulate_batch(cfg, b, size)[0]


def write_shots_csv(cfg: SimConfig, path) -> int:
    """Dump every shot as CSV; returns the number of rows written."""
    rows = 0
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SHOT_FIELDS)
        for shots in iter_shots(cfg):
            cols = [getattr(shots, f) for f in SHOT_FIELDS]
            for row in zip(*cols):
                writer.writerow([repr(float(v)) for v in row])
            rows += len(shots)
    return rows


# --- estimators -------------------------------------------------------------


def empirical_conditional_variance(x, y) -> float:
    """Plug-in ``<x^2> - <xy>^2 / <y^2>`` from zero-mean samples."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two paired samples")
    syy = float(y @ y) / y.size
    if not syy > 0.0:
        raise ValueError("conditioning samples have zero variance")
    sxy = float(x @ y) / x.size
    return float(x @ x) / x.size - sxy * sxy / syy


def _conditionals(m: np.ndarray, has_eve: bool) -> dict[str, float]:
    out = {}
    for name, (a, b) in CONDITIONALS.items():
        if name in _EVE_KEYS and not has_eve:
            continue
        i, j = _IDX[a], _IDX[b]
        out[name] = m[i, i] - m[i, j] ** 2 / m[j, j]
    return out


def _mutual_info(m: np.ndarray, has_eve: bool) -> dict[str, float]:
    cond = _conditionals(m, has_eve)
    info = {"AM:BM": 0.5 * math.log2(m[_IDX["AM"], _IDX["AM"]] / cond["AM|BM"])}
    if has_eve:
        info["AM:E"] = 0.5 * math.log2(m[_IDX["AM"], _IDX["AM"]] / cond["AM|E"])
        info["BM:E"] = 0.5 * math.log2(m[_IDX["BM"], _IDX["BM"]] / cond["BM|E"])
    return info


def _rate_from_moments(mx: np.ndarray, mp: np.ndarray, direction: str) -> float:
    key, partner = ("AM", "BM") if direction == DR else ("BM", "AM")
    total = 0.0
    for m in (mx, mp):
        cond = _conditionals(m, True)
        total += 0.5 * math.log2(cond[f"{key}|E"] / cond[f"{key}|{partner}"])
    return total


def _se(values: np.ndarray) -> float:
    if len(values) < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def run_sim(cfg: SimConfig) -> EstimatorResult:
    sizes = cfg.batch_sizes()
    jobs = list(enumerate(sizes))

    def work(job):
        b, size = job
        return _simulate_batch(cfg, b, size)[1]

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            sums = list(pool.map(work, jobs))
    else:
        sums = [work(j) for j in jobs]
    batch_sums = np.stack(sums)  # (batch, quadrature, 5, 5)
    counts = np.asarray(sizes, dtype=float)
    return _estimate(batch_sums, counts, cfg.has_eve)


def _estimate(batch_sums: np.ndarray, counts: np.ndarray, has_eve: bool) -> EstimatorResult:
    total = counts.sum()
    pooled = batch_sums.sum(axis=0) / total
    per_batch = batch_sums / counts[:, None, None, None]
    quads = ("x", "p")
    moments = {q: pooled[k] for k, q in enumerate(quads)}
    moments_se = {
        q: np.std(per_batch[:, k], axis=0, ddof=1) / math.sqrt(len(counts)) if len(counts) > 1
        else np.full((5, 5), np.nan)
        for k, q in enumerate(quads)
    }
    conditional: dict[str, dict[str, float]] = {}
    conditional_se: dict[str, dict[str, float]] = {}
    mutual: dict[str, dict[str, float]] = {}
    for k, q in enumerate(quads):
        for name, val in _conditionals(pooled[k], has_eve).items():
            conditional.setdefault(name, {})[q] = float(val)
            batch_vals = np.array([_conditionals(m, has_eve)[name] for m in per_batch[:, k]])
            conditional_se.setdefault(name, {})[q] = _se(batch_vals)
        for name, val in _mutual_info(pooled[k], has_eve).items():
            mutual.setdefault(name, {})[q] = float(val)
    return EstimatorResult(
        n_samples=int(total),
        n_batches=len(counts),
        has_eve=has_eve,
        moments=moments,
        moments_se=moments_se,
        conditional=conditional,
        conditional_se=conditional_se,
        mutual_info=mutual,
        batch_counts=counts,
        batch_moments=batch_sums,
    )


def empirical_key_rate(result: EstimatorResult, direction: str) -> float:
    """Two-quadrature Gaussian key rate in bits per channel use."""
    if not result.has_eve:
        raise ValueError("no eavesdropper in this simulation")
    direction = direction.upper()
    if direction not in (DR, RR):
        raise ValueError(f"direction must be DR or RR, got {direction!r}")
    return _rate_from_moments(result.moments["x"], result.moments["p"], direction)


def empirical_key_rate_se(result: EstimatorResult, direction: str) -> float:
    per_batch = result.batch_moments / result.batch_counts[:, None, None, None]
    rates = np.array([_rate_from_moments(m[0], m[1], direction.upper()) for m in per_batch])
    return _se(rates)

"""Command-line front end.

Line loss in dB maps to transmittance as T = 10^(-dB/10). Exit codes:
0 success, 1 verification failed, 2 bad usage or parameters.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import keyrates, montecarlo, optical, search
from .gaussian import ChannelParams, DomainError, channel_from_loss_db, make_channel

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SWEEP_COLUMNS = (
    "loss_db", "T", "chi", "rho_plus",
    "k_dr_heis", "k_dr_opt", "k_rr_heis", "k_rr_opt", "k_dr_hom", "k_rr_hom",
)

DEFAULTS = {
    "v": 12.0,
    "eps": 0.01,
    "json": False,
    "loss_start": 0.0,
    "loss_stop": 20.0,
    "loss_step": 0.5,
    "workers": 1,
    "scheme": "teleportation",
    "root": "plus",
    "direction": "dr",
    "seed": 0,
    "starts": 32,
    "attack": "symplectic",
    "n": montecarlo.DEFAULT_SAMPLES,
    "batches": montecarlo.DEFAULT_BATCHES,
}

CHANNEL_TOL = 1e-10
MC_SIGMAS = 4.0


class UsageError(Exception):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".12g")


@dataclass(frozen=True)
class SweepSpec:
    start: float
    stop: float
    step: float
    V: float
    eps: float

    def __post_init__(self):
        if not (self.start <= self.stop):
            raise DomainError("sweep start must not exceed stop")
        if not (self.step > 0.0):
            raise DomainError("sweep step must be positive")

    def losses(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [self.start + i * self.step for i in range(n)]


def sweep_row(V: float, eps: float, loss_db: float) -> dict[str, float]:
    ch = channel_from_loss_db(loss_db, eps)
    row = {"loss_db": loss_db, "T": ch.T, "chi": ch.chi, "rho_plus": keyrates.solve_rho(ch).rho_plus}
    row.update({k: r.rate_bits for k, r in keyrates.all_rates(V, ch).items()})
    return row


def sweep(spec: SweepSpec, workers: int = 1) -> list[dict[str, float]]:
    """Rows in increasing loss order; parallel workers do not change the output."""
    losses = spec.losses()
    fn = lambda loss: sweep_row(spec.V, spec.eps, loss)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, losses))
    return [fn(loss) for loss in losses]


def write_sweep_csv(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in SWEEP_COLUMNS])


# --- argument handling ------------------------------------------------------


def _channel_args(p):
    p.add_argument("--v", type=float, help="EPR variance V in shot-noise units (default 12)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--t", type=float, help="line transmittance T in (0, 1]")
    g.add_argument("--loss-db", type=float, help="line loss in dB; T = 10^(-dB/10)")
    p.add_argument("--eps", type=float, help="excess noise referred to the input (default 0.01)")


def _common(p):
    p.add_argument("--json", action="store_true", default=None, help="emit JSON instead of text")
    p.add_argument("--config", help="JSON file with flag values; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetqkd",
        description="Security analysis of coherent-state CV-QKD with heterodyne detection. "
        "Loss in dB converts as T = 10^(-dB/10).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", help="all key rates at one channel point")
    _channel_args(p)
    _common(p)

    p = sub.add_parser("sweep", help="key rates versus line loss, as CSV")
    p.add_argument("--v", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--loss-start", type=float, help="first loss in dB (default 0)")
    p.add_argument("--loss-stop", type=float, help="last loss in dB (default 20)")
    p.add_argument("--loss-step", type=float, help="loss increment in dB (default 0.5)")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output CSV path (default stdout)")
    p.add_argument("--config", help="JSON file with flag values; explicit flags win")

    p = sub.add_parser("verify-attack", help="build an optimal attack and check it against the closed forms")
    _channel_args(p)
    p.add_argument("--scheme", choices=["symplectic", "teleportation", "feed-forward"])
    p.add_argument("--root", choices=["plus", "minus"], help="rho root to target (symplectic and teleportation)")
    _common(p)

    p = sub.add_parser("search", help="numerically optimize Eve's symplectic attack")
    _channel_args(p)
    p.add_argument("--direction", type=str.lower, choices=["dr", "rr"])
    p.add_argument("--seed", type=int)
    p.add_argument("--starts", type=int, help="number of multi-start points (default 32)")
    p.add_argument("--workers", type=int)
    _common(p)

    p = sub.add_parser("mc", help="Monte-Carlo cross-check of the closed forms")
    _channel_args(p)
    p.add_argument("--attack", choices=["none", "symplectic", "teleportation", "feed-forward"])
    p.add_argument("--n", type=int, help="number of shots (default 1e6)")
    p.add_argument("--seed", type=int)
    p.add_argument("--batches", type=int, help="batches for standard errors (default 16)")
    p.add_argument("--workers", type=int)
    p.add_argument("--dump", help="write every shot to this CSV path")
    _common(p)
    return parser


def resolve_args(args: argparse.Namespace) -> argparse.Namespace:
    """Merge ``--config`` values under explicit flags, then fill defaults."""
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest in ("command", "config") or not hasattr(args, dest):
                raise UsageError(f"unknown config key {key!r} for '{args.command}'")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if hasattr(args, "t") and args.t is not None and getattr(args, "loss_db", None) is not None:
        raise UsageError("give either --t or --loss-db, not both")
    return args


def channel_of(args) -> ChannelParams:
    if args.t is not None:
        return make_channel(args.t, args.eps)
    if args.loss_db is not None:
        return channel_from_loss_db(args.loss_db, args.eps)
    raise UsageError("one of --t or --loss-db is required")


def _emit(payload: dict, lines: list[str], as_json: bool, out) -> None:
    if as_json:
        out.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        out.write("\n".join(lines) + "\n")


# --- commands ---------------------------------------------------------------


def cmd_rate(args, out) -> int:
    ch = channel_of(args)
    V = args.v
    rho = keyrates.solve_rho(ch)
    rates = keyrates.all_rates(V, ch)
    v_eve_opt = keyrates.optimal_eve_variance(V, ch)
    payload = {
        "V": V, "T": ch.T, "eps": ch.eps, "chi": ch.chi, "loss_db": ch.loss_db,
        "rho_plus": rho.rho_plus, "rho_minus": rho.rho_minus,
        "v_a_given_e_optimal": v_eve_opt,
        "v_a_given_e_heisenberg": 1.0 / keyrates.v_a_given_b(V, ch),
        "v_b_given_e_heisenberg": 1.0 / keyrates.v_b_given_a(V, ch),
        "rates": {k: r.to_dict() for k, r in rates.items()},
        "no_key": all(not r.has_key for r in rates.values()),
    }
    lines = [
        f"V={fmt(V)} T={fmt(ch.T)} loss_db={fmt(ch.loss_db)} eps={fmt(ch.eps)} chi={fmt(ch.chi)}",
        f"rho_plus={fmt(rho.rho_plus)} rho_minus={fmt(rho.rho_minus)}",
        f"V_A|E optimal={fmt(v_eve_opt)}  heisenberg: V_A|E={fmt(payload['v_a_given_e_heisenberg'])} "
        f"V_B|E={fmt(payload['v_b_given_e_heisenberg'])}",
    ]
    for key, r in rates.items():
        flag = "" if r.has_key else "  no key"
        lines.append(
            f"{key:10s} {r.protocol:10s} {r.direction} {r.bound_kind:10s} rate={fmt(r.rate_bits)} bits"
            f"  V_partner={fmt(r.v_key_holder_given_partner)} V_eve={fmt(r.v_key_holder_given_eve)}{flag}"
        )
    if payload["no_key"]:
        lines.append("no key: every rate is <= 0")
    _emit(payload, lines, args.json, out)
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    spec = SweepSpec(args.loss_start, args.loss_stop, args.loss_step, args.v, args.eps)
    rows = sweep(spec, workers=args.workers)
    if args.out:
        try:
            with open(args.out, "w", newline="", encoding="ascii") as fh:
                write_sweep_csv(rows, fh)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc}") from exc
    else:
        write_sweep_csv(rows, out)
    return EXIT_OK


def _check(name, value, expected, tol, relative=False):
    err = abs(value - expected)
    if relative:
        err /= abs(expected)
    return {"check": name, "value": value, "expected": expected, "error": err, "tol": tol, "pass": bool(err <= tol)}


def cmd_verify_attack(args, out) -> int:
    ch = channel_of(args)
    V = args.v
    rho_target = getattr(keyrates.solve_rho(ch), f"rho_{args.root}")
    v_eve = keyrates.v_a_given_e_from_rho(V, rho_target)
    checks = []
    if args.scheme == "symplectic":
        sol = search.construct_optimal(V, ch, root=args.root)
        mom = search.channel_moments(V, sol.s_pair)
        xb2, pb2, xaxb = mom["xb2"], mom["pb2"], mom["xaxb"]
        va, vb = sol.v_a_given_e, sol.v_b_given_e
        checks.append(_check("symmetry residual", float(np.abs(sol.residuals).max()), 0.0, search.FEASIBILITY_TOL))
        checks.append(_check("symplectic residual", sol.s_pair.symplectic_residual(), 0.0, CHANNEL_TOL))
        eve_tol = search.FEASIBILITY_TOL
        extra = {"parameters": sol.parameterization.__dict__ if sol.parameterization else None}
    else:
        if args.scheme == "teleportation":
            cfg = optical.solve_teleportation(ch, args.root)
            rep = optical.teleportation_channel(V, cfg)
            checks.append(_check("squeezing condition", cfg.channel_residual(ch), 0.0, 1e-12 * max(1.0, ch.T * ch.chi)))
        else:
            if args.root != "plus":
                raise UsageError("the feed-forward scheme only targets rho_plus")
            cfg = optical.solve_feed_forward(ch)
            rep = optical.feed_forward_channel(V, cfg)
        xb2, pb2 = rep.state.x_block[1, 1], rep.state.p_block[1, 1]
        xaxb = rep.state.x_block[0, 1]
        va, vb = rep.v_a_given_e, rep.v_b_given_e
        eve_tol = CHANNEL_TOL
        extra = {"parameters": cfg.__dict__}
    checks += [
        _check("<x_B^2>", xb2, ch.T * (V + ch.chi), CHANNEL_TOL),
        _check("<p_B^2>", pb2, ch.T * (V + ch.chi), CHANNEL_TOL),
        _check("<x_A x_B>", xaxb, math.sqrt(ch.T * (V * V - 1.0)), CHANNEL_TOL),
        _check("V_A|E", va, v_eve, eve_tol),
        _check("V_B|E", vb, v_eve, eve_tol),
    ]
    ok = all(c["pass"] for c in checks)
    payload = {"scheme": args.scheme, "V": V, "T": ch.T, "eps": ch.eps, "rho": rho_target,
               "v_eve": v_eve, "checks": checks, "pass": ok, **extra}
    lines = [f"scheme={args.scheme} V={fmt(V)} T={fmt(ch.T)} eps={fmt(ch.eps)} rho_{args.root}={fmt(rho_target)}"]
    lines += [f"{'PASS' if c['pass'] else 'FAIL'} {c['check']}: {fmt(c['value'])} "
              f"(expected {fmt(c['expected'])}, error {c['error']:.3e})" for c in checks]
    lines.append(f"{'PASS' if ok else 'FAIL'} v_eve = {fmt(v_eve)}")
    _emit(payload, lines, args.json, out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_search(args, out) -> int:
    ch = channel_of(args)
    cfg = search.SearchConfig(n_starts=args.starts, seed=args.seed, workers=args.workers)
    sol = search.optimize_attack(args.v, ch, args.direction.upper(), cfg)
    rho_plus = keyrates.solve_rho(ch).rho_plus
    if rho_plus > 0.0:
        rel = abs(sol.rho_achieved - rho_plus) / rho_plus
    else:
        rel = abs(sol.rho_achieved)
    ok = rel < 1e-6 and sol.feasible
    payload = {
        "direction": args.direction.upper(), "V": args.v, "T": ch.T, "eps": ch.eps, "seed": args.seed,
        "rho_search": sol.rho_achieved, "rho_plus": rho_plus, "relative_error": rel,
        "v_a_given_e": sol.v_a_given_e, "v_b_given_e": sol.v_b_given_e,
        "residuals": [float(r) for r in sol.residuals], "feasible": sol.feasible,
        "s_x": sol.s_pair.s_x.tolist(), "pass": ok,
    }
    lines = [
        f"direction={payload['direction']} V={fmt(args.v)} T={fmt(ch.T)} eps={fmt(ch.eps)} seed={args.seed}",
        f"rho_search={fmt(sol.rho_achieved)} rho_plus={fmt(rho_plus)} relative_error={rel:.3e}",
        f"V_A|E={fmt(sol.v_a_given_e)} V_B|E={fmt(sol.v_b_given_e)} "
        f"residuals={[f'{r:.2e}' for r in sol.residuals]}",
        f"{'PASS' if ok else 'FAIL'} optimizer matches closed form within 1e-6",
    ]
    _emit(payload, lines, args.json, out)
    return EXIT_OK if ok else EXIT_FAIL


def _mc_attack(kind, V, ch):
    if kind == "none":
        return None
    if kind == "symplectic":
        return search.construct_optimal(V, ch).s_pair
    if kind == "teleportation":
        return optical.solve_teleportation(ch)
    return optical.solve_feed_forward(ch)


def mc_checks(V: float, ch: ChannelParams, result: montecarlo.EstimatorResult) -> list[dict]:
    """Closed-form comparisons at ``MC_SIGMAS`` batch standard errors."""
    checks = []
    c = math.sqrt(ch.T * (V * V - 1.0))
    theory = {"x": np.array([[V, c], [c, ch.T * (V + ch.chi)]]),
              "p": np.array([[V, -c], [-c, ch.T * (V + ch.chi)]])}
    labels = {(0, 0): "<A^2>", (0, 1): "<AB>", (1, 1): "<B^2>"}
    for q in ("x", "p"):
        cov, se = result.covariance_ab(q), result.covariance_ab_se(q)
        for (i, j), label in labels.items():
            err = abs(cov[i, j] - theory[q][i, j])
            checks.append({"check": f"{q} {label}", "value": float(cov[i, j]), "expected": float(theory[q][i, j]),
                           "sigmas": float(err / se[i, j]), "pass": bool(err <= MC_SIGMAS * se[i, j])})
    if result.has_eve:
        expected = keyrates.expected_conditional_variances(V, ch)
        for name, exp in expected.items():
            for q in ("x", "p"):
                val, se = result.conditional[name][q], result.conditional_se[name][q]
                err = abs(val - exp)
                checks.append({"check": f"{q} V_{name}", "value": val, "expected": exp,
                               "sigmas": err / se, "relative": err / exp, "pass": bool(err <= MC_SIGMAS * se)})
        for direction, closed in ((keyrates.DR, keyrates.optimal_dr(V, ch)), (keyrates.RR, keyrates.optimal_rr(V, ch))):
            val = montecarlo.empirical_key_rate(result, direction)
            se = montecarlo.empirical_key_rate_se(result, direction)
            err = abs(val - closed.rate_bits)
            checks.append({"check": f"K_{direction}", "value": val, "expected": closed.rate_bits,
                           "sigmas": err / se, "pass": bool(err <= MC_SIGMAS * se)})
    return checks


def cmd_mc(args, out) -> int:
    ch = channel_of(args)
    V = args.v
    attack = _mc_attack(args.attack, V, ch)
    cfg = montecarlo.SimConfig(V=V, channel=ch, attack=attack, n_samples=args.n, seed=args.seed,
                               n_batches=args.batches, workers=args.workers)
    if args.dump:
        try:
            montecarlo.write_shots_csv(cfg, args.dump)
        except OSError as exc:
            raise UsageError(f"cannot write {args.dump}: {exc}") from exc
    result = montecarlo.run_sim(cfg)
    if result.n_batches < 2:
        raise UsageError("need at least two batches for standard errors")
    checks = mc_checks(V, ch, result)
    ok = all(c["pass"] for c in checks)
    payload = {"attack": args.attack, "V": V, "T": ch.T, "eps": ch.eps, "n": result.n_samples,
               "batches": result.n_batches, "seed": args.seed, "checks": checks, "pass": ok}
    lines = [f"attack={args.attack} V={fmt(V)} T={fmt(ch.T)} eps={fmt(ch.eps)} n={result.n_samples} "
             f"batches={result.n_batches} seed={args.seed}"]
    lines += [f"{'PASS' if c['pass'] else 'FAIL'} {c['check']}: {fmt(c['value'])} "
              f"(expected {fmt(c['expected'])}, {c['sigmas']:.2f} sigma)" for c in checks]
    lines.append(f"{'PASS' if ok else 'FAIL'} moment match at {MC_SIGMAS:g} standard errors")
    _emit(payload, lines, args.json, out)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "rate": cmd_rate,
    "sweep": cmd_sweep,
    "verify-attack": cmd_verify_attack,
    "search": cmd_search,
    "mc": cmd_mc,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        args = resolve_args(args)
        return COMMANDS[args.command](args, out)
    except (UsageError, DomainError, ValueError) as exc:
        print(f"hetqkd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except search.InfeasibleAttackError as exc:
        print(f"hetqkd {args.command}: verification failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands::

    crfbl sense     detector probabilities, priors, feasibility
    crfbl rate      finite-blocklength quantities at the configured point
    crfbl effrate   optimised effective rate at one QoS exponent
    crfbl sweep     one-dimensional parameter sweeps written as CSV
    crfbl simulate  queue simulation with overflow curve and decay fit

Every command is deterministic given the config and ``--seed``. Exit
codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, build_budget, build_policy, load_config, merge_params
from .effrate import (
    FixedRates,
    LinkPolicy,
    VariableRate,
    effective_rate_fixed,
    effective_rate_variable,
    optimize_fixed,
    optimize_variable,
    zero_theta_fixed,
    zero_theta_variable,
)
from .fbcode import (
    average_error_prob,
    mismatch_error_falsealarm,
    mismatch_error_missdetect,
    variable_rate,
)
from .numerics import expect_over_fading
from .queuesim import SimConfig, merge_results, run_sim
from .sensing import check_power_feasibility, priors, sensed_state_probs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

SWEEP_VARIABLES = ("lambda", "sense_N", "theta", "blocklength", "eps", "rate_pair")
_PARAM_OF = {"lambda": "threshold_lambda", "sense_N": "sense_N", "theta": "theta", "eps": "eps"}
SWEEP_COLUMNS = ("R_E_fixed", "R_E_variable", "P_d", "P_f", "r1_opt", "r2_opt", "eps_opt", "avg_error")


class IOFailure(Exception):
    pass


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.9g" % x
    return str(x)


def write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def report_text(items: Sequence[tuple[str, Any]]) -> str:
    width = max(len(k) for k, _ in items)
    return "".join(f"{k.ljust(width)}  {fmt(v)}\n" for k, v in items)


# ---------------------------------------------------------------------------
# parameter handling
# ---------------------------------------------------------------------------

def _parse_set(items: Sequence[str] | None) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        key, value = key.strip(), value.strip()
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value
    return out


def resolve_params(args) -> dict[str, Any]:
    file_layer = load_config(args.config) if args.config else {}
    flag_layer = _parse_set(args.set)
    if args.quad_order is not None:
        flag_layer["quad_order"] = args.quad_order
    for name in ("theta", "eps", "r1", "r2", "mode"):
        v = getattr(args, name, None)
        if v is not None:
            flag_layer[name] = v
    return merge_params(file_layer, flag_layer)


# ---------------------------------------------------------------------------
# evaluation helpers shared by commands
# ---------------------------------------------------------------------------

def _policy_for(params: dict[str, Any], mode: str) -> LinkPolicy:
    return build_policy({**params, "mode": mode})


def eval_fixed(params: dict[str, Any]) -> dict[str, float]:
    policy = _policy_for(params, "fixed")
    theta = params["theta"]
    res = optimize_fixed(theta, policy, weights=params["zero_theta_weights"])
    return {"R_E_fixed": res.value, "r1_opt": res.argmax[0], "r2_opt": res.argmax[1]}


def eval_variable(params: dict[str, Any]) -> dict[str, float]:
    policy = _policy_for(params, "variable")
    res = optimize_variable(
        params["theta"], policy, weights=params["zero_theta_weights"], nested=params["nested"]
    )
    return {"R_E_variable": res.value, "eps_opt": res.argmax}


def avg_error(params: dict[str, Any], eps: float | None = None) -> float:
    policy = _policy_for(params, "variable")
    eps = params["eps"] if eps is None else eps
    return average_error_prob(policy.chain, policy.perf, policy.snrs, policy.frame, eps, policy.dist, policy.rule)


def _rate_at(params: dict[str, Any], theta: float, mode: str) -> float:
    policy = _policy_for(params, mode)
    if mode == "fixed":
        if theta == 0:
            return zero_theta_fixed(policy, weights=params["zero_theta_weights"])
        return effective_rate_fixed(theta, policy)
    if theta == 0:
        return zero_theta_variable(policy, weights=params["zero_theta_weights"])
    return effective_rate_variable(theta, policy, nested=params["nested"])


def sweep_point(task: tuple[dict[str, Any], str, Any, str]) -> list[Any]:
    """One CSV row. Module-level so it can run in a worker process."""
    params, variable, value, modes = task
    p = dict(params)
    if variable == "blocklength":
        n = int(round(value))
        p["frame_T"] = p["sense_N"] + n / p["bandwidth_B"]
        lead = [n]
    elif variable == "rate_pair":
        p["r1"], p["r2"] = value
        lead = list(value)
    else:
        p[_PARAM_OF[variable]] = value
        lead = [value]

    row = dict.fromkeys(SWEEP_COLUMNS, math.nan)
    policy = _policy_for(p, "fixed")
    row["P_d"] = policy.perf.p_detect
    row["P_f"] = policy.perf.p_false_alarm
    if variable == "rate_pair":
        row["R_E_fixed"] = _rate_at(p, p["theta"], "fixed")
    elif variable == "eps":
        row["R_E_variable"] = _rate_at(p, p["theta"], "variable")
        row["avg_error"] = avg_error(p)
    else:
        if modes in ("both", "fixed"):
            row.update(eval_fixed(p))
        if modes in ("both", "variable"):
            row.update(eval_variable(p))
            row["avg_error"] = avg_error(p)
    return lead + [row[c] for c in SWEEP_COLUMNS]


def sweep_values(variable: str, lo, hi, steps, values, log: bool) -> list[Any]:
    if values:
        vals = [float(v) for v in values.split(",")]
        if len(vals) < 2:
            raise ConfigError("need at least two explicit values", "--values")
    else:
        if lo is None or hi is None:
            raise ConfigError("give --lo/--hi or --values", "--lo")
        if not lo < hi:
            raise ConfigError(f"need lo < hi, got {lo} and {hi}", "--lo")
        if steps < 2:
            raise ConfigError("steps must be >= 2", "--steps")
        if log:
            if lo <= 0:
                raise ConfigError("log spacing needs lo > 0", "--lo")
            vals = np.geomspace(lo, hi, steps).tolist()
        else:
            vals = np.linspace(lo, hi, steps).tolist()
    if variable == "rate_pair":
        return [(a, b) for a in vals for b in vals]
    if variable == "blocklength":
        return sorted({int(round(v)) for v in vals})
    return vals


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_sense(args, params) -> int:
    policy = _policy_for(params, params["mode"])
    perf = policy.perf
    pr_busy, pr_idle = priors(policy.chain)
    sb, si = sensed_state_probs(policy.chain, perf)
    items: list[tuple[str, Any]] = [
        ("samples_NB", policy.sensing.sample_count),
        ("P_d", perf.p_detect),
        ("P_f", perf.p_false_alarm),
        ("prior_busy", pr_busy),
        ("prior_idle", pr_idle),
        ("sensed_busy", sb),
        ("sensed_idle", si),
    ]
    if perf.p_detect == perf.p_false_alarm:
        items.append(("note", "P_d = P_f (no primary signal energy)"))
    budget = build_budget(params)
    if budget is None:
        items.append(("feasibility", "no interference budget configured"))
    else:
        rep = check_power_feasibility(policy.p1, policy.p2, perf, budget, mode=params["feasibility_mode"])
        items += [
            ("feasible", rep.feasible),
            ("feasibility_mode", rep.mode),
            ("interference", rep.interference),
            ("limit", rep.limit),
            ("binding", ";".join(rep.binding) or "none"),
            ("violated", ";".join(rep.violated) or "none"),
            ("max_p2", rep.max_p2),
        ]
    write_text(args.out, report_text(items))
    return EXIT_OK


def cmd_rate(args, params) -> int:
    policy = _policy_for(params, "variable")
    eps = params["eps"]
    snrs, frame, dist, rule = policy.snrs, policy.frame, policy.dist, policy.rule
    items: list[tuple[str, Any]] = [
        ("blocklength", frame.blocklength),
        ("snr1", snrs.snr1),
        ("snr2", snrs.snr2),
        ("snr3", snrs.snr3),
        ("snr4", snrs.snr4),
        ("eps", eps),
    ]
    if args.h2 is not None:
        h = args.h2
        items += [
            ("h2", h),
            ("rate_sensed_busy", variable_rate(True, h, snrs, frame, eps)),
            ("rate_sensed_idle", variable_rate(False, h, snrs, frame, eps)),
            ("eps_missdetect", mismatch_error_missdetect(h, snrs, frame, eps)),
            ("eps_falsealarm", mismatch_error_falsealarm(h, snrs, frame, eps)),
        ]
    else:
        k1, k4 = policy.clamp_points(eps)
        items += [
            ("mean_rate_sensed_busy", expect_over_fading(lambda h: variable_rate(True, h, snrs, frame, eps), dist, rule, [k1])),
            ("mean_rate_sensed_idle", expect_over_fading(lambda h: variable_rate(False, h, snrs, frame, eps), dist, rule, [k4])),
            ("mean_eps_missdetect", expect_over_fading(lambda h: mismatch_error_missdetect(h, snrs, frame, eps), dist, rule)),
            ("mean_eps_falsealarm", expect_over_fading(lambda h: mismatch_error_falsealarm(h, snrs, frame, eps), dist, rule)),
        ]
    items.append(("avg_error", avg_error(params)))
    write_text(args.out, report_text(items))
    return EXIT_OK


def cmd_effrate(args, params) -> int:
    theta = params["theta"]
    items: list[tuple[str, Any]] = [("theta", theta)]
    modes = ("fixed", "variable") if args.modes == "both" else (args.modes,)
    for mode in modes:
        if args.no_optimize:
            items.append((f"R_E_{mode}", _rate_at(params, theta, mode)))
            continue
        policy = _policy_for(params, mode)
        if mode == "fixed":
            res = optimize_fixed(theta, policy, weights=params["zero_theta_weights"])
            items += [("R_E_fixed", res.value), ("r1_opt", res.argmax[0]), ("r2_opt", res.argmax[1])]
        else:
            res = optimize_variable(theta, policy, weights=params["zero_theta_weights"], nested=params["nested"])
            items += [("R_E_variable", res.value), ("eps_opt", res.argmax)]
        items += [
            (f"{mode}_converged", res.diagnostics["converged"]),
            (f"{mode}_iterations", res.diagnostics["iterations"]),
            (f"{mode}_clamp_fraction", res.diagnostics["clamp_fraction"]),
        ]
    items.append(("quad_order", params["quad_order"]))
    write_text(args.out, report_text(items))
    return EXIT_OK


def cmd_sweep(args, params) -> int:
    variable = args.variable
    values = sweep_values(variable, args.lo, args.hi, args.steps, args.values, args.log)
    # validate the base point once so config errors surface before work starts
    _policy_for(params, params["mode"])
    tasks = [(params, variable, v, args.modes) for v in values]
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(sweep_point, tasks))
        else:
            rows = [sweep_point(t) for t in tasks]
    except ValueError as exc:
        raise ConfigError(str(exc), variable) from exc
    lead = ["r1", "r2"] if variable == "rate_pair" else [variable]
    write_text(args.out, csv_text(lead + list(SWEEP_COLUMNS), rows))
    return EXIT_OK


def _sim_task(task):
    return run_sim(task)


def cmd_simulate(args, params) -> int:
    theta = params["theta"]
    policy = _policy_for(params, params["mode"])
    analytical = math.nan
    if params["arrival_rate"] < 0:
        # arrivals follow the analytical effective rate at theta
        if theta <= 0:
            raise ConfigError("automatic arrivals need theta > 0", "theta")
        if args.no_optimize:
            analytical = _rate_at(params, theta, params["mode"])
        elif params["mode"] == "fixed":
            res = optimize_fixed(theta, policy)
            policy = policy.with_mode(FixedRates(*res.argmax))
            analytical = res.value
        else:
            res = optimize_variable(theta, policy, nested=params["nested"])
            policy = policy.with_mode(VariableRate(res.argmax))
            analytical = res.value
        arrival = params["arrival_scale"] * analytical * policy.frame.symbols_per_frame
    else:
        arrival = params["arrival_rate"] * params["arrival_scale"]

    q_levels = tuple(np.arange(params["q_step"], params["q_max"] + 0.5 * params["q_step"], params["q_step"]))
    try:
        base = SimConfig(
            policy=policy,
            arrival_rate=arrival,
            horizon_frames=params["horizon_frames"],
            seed=args.seed,
            q_levels=q_levels,
            trace_frames=params["trace_frames"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "horizon_frames") from exc
    cfgs = [base] + [replace(base, seed=args.seed + k, trace_frames=0) for k in range(1, args.reps)]
    if args.jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sim_task, cfgs))
    else:
        results = [run_sim(c) for c in cfgs]
    result = merge_results(results) if len(results) > 1 else results[0]

    d = result.decay
    mode = policy.mode
    items: list[tuple[str, Any]] = [
        ("mode", params["mode"]),
        ("r1", mode.r1 if isinstance(mode, FixedRates) else math.nan),
        ("r2", mode.r2 if isinstance(mode, FixedRates) else math.nan),
        ("eps", mode.eps if isinstance(mode, VariableRate) else math.nan),
        ("theta", theta),
        ("R_E_analytical", analytical),
        ("arrival_bits_per_frame", arrival),
        ("frames_after_burn_in", result.frames),
        ("replications", len(results)),
        ("seed", args.seed),
        ("mean_service_bits_per_frame", result.mean_service),
        ("decay_rate_hat", d.rate),
        ("decay_fit_ok", d.ok),
        ("decay_fit_window_lo", d.window[0] if d.window else math.nan),
        ("decay_fit_window_hi", d.window[1] if d.window else math.nan),
        ("decay_fit_r2", d.r_squared),
        ("decay_fit_points", d.points),
        ("decay_rel_dev_from_theta", (d.rate - theta) / theta if theta > 0 else math.nan),
        ("tail_warning", result.warning),
    ]
    items += [(f"occupancy_{i + 1}", f) for i, f in enumerate(result.state_occupancy)]
    summary = report_text(items)
    ci = result.overflow_ci
    overflow = csv_text(
        ["q_bits", "overflow_prob", "ci_lo", "ci_hi", "exceedances", "low_count"],
        [
            [q, p, lo, hi, int(k), bool(flag)]
            for q, p, (lo, hi), k, flag in zip(
                result.q_levels, result.overflow_prob, ci, result.exceed_counts, result.low_count
            )
        ],
    )
    if args.out:
        write_text(f"{args.out}_summary.txt", summary)
        write_text(f"{args.out}_overflow.csv", overflow)
        if result.trace is not None:
            tr = result.trace
            keys = list(tr)
            write_text(f"{args.out}_trace.csv", csv_text(keys, list(zip(*[tr[k] for k in keys]))))
    else:
        write_text(None, summary + "\n" + overflow)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat TOML config file")
    common.add_argument("--out", metavar="PATH", help="output file (simulate: output prefix)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps/replications")
    common.add_argument("--quad-order", type=int, default=None, dest="quad_order")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--theta", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--r1", type=float)
    common.add_argument("--r2", type=float)
    common.add_argument("--mode", choices=("fixed", "variable"))

    parser = argparse.ArgumentParser(prog="crfbl", description="Effective rate of cognitive links with finite blocklength codes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("sense", parents=[common], help="sensing probabilities and feasibility")
    p = sub.add_parser("rate", parents=[common], help="finite-blocklength rates and errors")
    p.add_argument("--h2", type=float, help="evaluate at one fading power instead of averaging")
    p = sub.add_parser("effrate", parents=[common], help="optimised effective rate")
    p.add_argument("--modes", choices=("fixed", "variable", "both"), default="both")
    p.add_argument("--no-optimize", action="store_true", help="evaluate at configured r1/r2 or eps")
    p = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV")
    p.add_argument("--variable", choices=SWEEP_VARIABLES, required=True)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--values", help="comma-separated explicit values")
    p.add_argument("--log", action="store_true", help="geometric spacing")
    p.add_argument("--modes", choices=("fixed", "variable", "both"), default="both")
    p = sub.add_parser("simulate", parents=[common], help="queue simulation")
    p.add_argument("--reps", type=int, default=1, help="independent replications (seeds seed..seed+reps-1)")
    p.add_argument("--no-optimize", action="store_true", help="use configured rates instead of the optimum")
    return parser


_COMMANDS = {
    "sense": cmd_sense,
    "rate": cmd_rate,
    "effrate": cmd_effrate,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("must be >= 1", "--jobs")
        if getattr(args, "reps", 1) < 1:
            raise ConfigError("must be >= 1", "--reps")
        params = resolve_params(args)
        return _COMMANDS[args.command](args, params)
    except ConfigError as exc:
        print(f"crfbl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IOFailure, OSError) as exc:
        print(f"crfbl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

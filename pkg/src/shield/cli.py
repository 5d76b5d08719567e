"""Command-line entry point: ``shield <subcommand> ...``.

Exit codes: 0 success (optimal), 2 infeasible program or run, 1 malformed
input or other errors. Records are printed with 12 significant digits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import mpc
from .dual import DualObjective, DualSolveError, gap, solve_dual_exact
from .predictor import (all_active, distance_heuristic, dump_samples,
                        load_model, load_samples, save_model, train)
from .problem import ProgramFormatError, epsilon_crit, load, validate
from .screening import EPS_FLAG, shield_step
from .solver import kkt_report, kkt_residual, solve

log = logging.getLogger("shield")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _num(x):
    """Round floats to 12 significant digits for stable text output."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not np.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        return float(f"{x:.12g}")
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


def emit(record: dict, out) -> None:
    out.write(json.dumps(_num(record), sort_keys=True) + "\n")


def _open_out(path):
    return open(path, "w", newline="") if path else _Stdout()


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        return False


def _dual_record(y) -> dict:
    return {"mu": y.mu, "eta": y.eta, "nu": y.nu, "g": y.g}


def _load_program(path, args):
    program = load(path)
    overrides = {k: getattr(args, a) for k, a in (("epsilon", "epsilon"), ("zeta", "zeta"), ("lam", "lam"))
                 if getattr(args, a, None) is not None}
    if overrides:
        program = program.with_params(**overrides)
    report = validate(program)
    if not report.ok:
        raise ProgramFormatError("invalid program: " + "; ".join(report.problems))
    return program


# subcommands -----------------------------------------------------------------

def cmd_solve(args) -> int:
    program = _load_program(args.instance, args)
    record = {}
    if args.reduced:
        sol, sets, diag = shield_step(program, None, certificate_only=True)
        theta = sol.theta_full
        record["screen"] = sets.to_dict()
        record["fallback"] = diag["fallback"]
        y = solve(program, warm=sol).dual
    else:
        sol = solve(program)
        theta = sol.theta
        y = sol.dual
    record.update({"status": sol.status, "theta": theta, "objective": program.objective(theta),
                   "iterations": sol.iterations})
    if sol.optimal:
        S = program.S if program.n_sparse else np.zeros((0, program.n))
        s = np.abs(S @ theta)
        record["kkt_residual"] = kkt_residual(program, theta, s, y)
        if args.kkt_report:
            record["kkt_report"] = kkt_report(program, theta, s, y)
        if args.dual:
            obj = DualObjective(program)
            try:
                y_exact = solve_dual_exact(obj)
                record["dual"] = _dual_record(y_exact)
                record["gap"] = gap(obj, y_exact)
            except DualSolveError as err:
                record["dual_error"] = str(err)
                record["dual"] = _dual_record(y)
                record["gap"] = gap(obj, y)
    with _open_out(args.out) as out:
        emit(record, out)
    return EXIT_OK if sol.optimal else EXIT_INFEASIBLE


def cmd_shield(args) -> int:
    program = _load_program(args.instance, args)
    model = load_model(args.model) if args.model else all_active(0, program.n_screenable, program.n_sparse)
    if model.n_mu != program.n_screenable or model.n_g != program.n_sparse:
        raise ValueError("model output sizes do not match the program")
    if model.zeta is not None and not np.isclose(model.zeta, program.zeta):
        msg = f"model trained at zeta={model.zeta}, program uses zeta={program.zeta}"
        if args.zeta_check:
            raise ValueError(msg)
        warnings.warn(msg)
    features = np.asarray(json.loads(open(args.features).read()) if args.features else [], dtype=float)
    ecrit = epsilon_crit(program)
    if program.epsilon > ecrit:
        log.warning("epsilon %.6g exceeds critical %.6g: certificates disabled", program.epsilon, ecrit)
    sol, sets, diag = shield_step(program, model, features)
    theta = sol.theta_full
    record = {
        "status": sol.status, "theta": theta, "objective": program.objective(theta),
        "screen": sets.to_dict(), "fallback": diag["fallback"], "epsilon_crit": ecrit,
        "certificates_disabled": EPS_FLAG in sets.flags,
        "timings": {"Avg. Classifier Query Time": diag["t_classifier"],
                    "Avg. Dual Approx. Time": diag["t_dual_approx"],
                    "gap": diag["t_gap"] + diag["t_certificate"],
                    "reduced_solve": diag["t_reduced_solve"],
                    "Avg. Total Computation Time": diag["t_total"]},
    }
    with _open_out(args.out) as out:
        emit(record, out)
    return EXIT_OK if sol.optimal else EXIT_INFEASIBLE


def _params(args) -> mpc.MPCParams:
    base = mpc.MPCParams()
    kw = {}
    for key, attr in (("epsilon", "epsilon"), ("zeta", "zeta"), ("lam", "lam")):
        if getattr(args, attr, None) is not None:
            kw[key] = float(getattr(args, attr))
    if getattr(args, "horizon", None):
        kw["N"] = int(args.horizon)
    return mpc.MPCParams(**{**base.__dict__, **kw})


def _predictor(args, scenario, params):
    V, M, N = len(scenario.agents), scenario.M, params.N
    c, q = V * M * N, (2 * V * M * N if params.lam > 0 else 0)
    if args.model:
        return load_model(args.model)
    if args.predictor == "distance":
        return distance_heuristic(2 * c, c, q, V * M) if V else all_active(0, 0, q)
    return all_active(2 * c, c, q)


def _scenario(args, params):
    if args.scenario:
        return mpc.load_scenario(args.scenario)
    return mpc.generate_scenario(args.seed, V=args.agents, M=args.modes, N=params.N)


TIMING_KEYS = ("t_classifier", "t_dual_approx", "t_gap", "t_reduced_solve", "t_total",
               "Avg. Classifier Query Time", "Avg. Dual Approx. Time", "Avg. Total Computation Time",
               "Median Total Computation Time")


def _write_records(records, columns, fmt, out, timings=True):
    if not timings:
        records = [{k: (0.0 if k in TIMING_KEYS else v) for k, v in rec.items()} for rec in records]
    if fmt == "json-lines":
        for rec in records:
            emit({k: rec[k] for k in columns}, out)
    else:
        mpc.write_csv(records, columns, out)


def cmd_simulate(args) -> int:
    params = _params(args)
    scenario = _scenario(args, params)
    policies = ["full", "reduced"] if args.policy == "both" else [args.policy]
    runs = []
    for pol in policies:
        pred = _predictor(args, scenario, params) if pol == "reduced" else None
        runs.append(mpc.simulate(pol, scenario, args.steps, params, predictor=pred))
    steps = [dict(s.__dict__) for r in runs for s in r.steps]
    summaries = [r.summary() for r in runs]
    if len(runs) == 2:
        for s in summaries:
            s["ade"] = mpc.ade(runs[0], runs[1])
    with _open_out(args.out) as out:
        _write_records(steps, mpc.STEP_COLUMNS, args.format, out, not args.no_timings)
    cols = mpc.SUMMARY_COLUMNS + (["ade"] if len(runs) == 2 else [])
    with _open_out(args.summary) as out:
        _write_records(summaries, cols, args.format, out, not args.no_timings)
    return EXIT_OK if all(r.feasible for r in runs) else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    params = _params(args)
    seeds = list(range(args.seed, args.seed + args.scenarios))
    scenarios = [mpc.generate_scenario(s, V=args.agents, M=args.modes, N=params.N) for s in seeds]
    pred = load_model(args.model) if args.model else None
    rows = mpc.sweep(args.epsilons, args.lambdas, scenarios, args.steps, params, predictor=pred)
    with _open_out(args.out) as out:
        _write_records(rows, mpc.SWEEP_COLUMNS, args.format, out, not args.no_timings)
    return EXIT_OK if all(r["Feasible (%)"] == 100.0 for r in rows) else EXIT_INFEASIBLE


def cmd_collect(args) -> int:
    params = _params(args)
    if args.instances:
        from .predictor import collect
        samples = collect([load(p) for p in args.instances])
    else:
        samples = mpc.collect_samples(range(args.seed, args.seed + args.scenarios), args.steps, params)
    if not args.out:
        raise ValueError("collect needs --out")
    dump_samples(samples, args.out)
    emit({"samples": len(samples), "out": args.out}, sys.stdout)
    return EXIT_OK


def cmd_train(args) -> int:
    samples = load_samples(args.data)
    augment = None
    if args.augment_agents:
        V, M = args.augment_agents
        augment = lambda tr: mpc.permute_agents(tr, V, M)  # noqa: E731
    model = train(samples, epochs=args.epochs, step_size=args.step_size,
                  class_weights=(args.w0, args.w1), seed=args.seed,
                  eval_fraction=args.eval_fraction, zeta=args.zeta, tau=args.tau, augment=augment)
    if not args.out:
        raise ValueError("train needs --out")
    save_model(model, args.out)
    emit({"model": args.out, "report": model.report}, sys.stdout)
    return EXIT_OK


# parser ----------------------------------------------------------------------

def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    vals = [int(t) for t in text.split(",") if t.strip()]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected two integers V,M")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shield", description="Safe screening for l1-regularized QPs")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, program=False):
        sp.add_argument("--config", help="JSON file with default option values")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--zeta", type=float)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--out")
        sp.add_argument("--format", choices=["csv", "json-lines"], default="csv")
        if not program:
            sp.add_argument("--steps", type=int, default=50)
            sp.add_argument("--agents", type=int, default=3)
            sp.add_argument("--modes", type=int, default=2)
            sp.add_argument("--horizon", type=int, default=14)
            sp.add_argument("--no-timings", action="store_true",
                            help="write 0 in timing columns so reruns are byte-identical")

    sp = sub.add_parser("solve", help="solve one program file")
    sp.add_argument("instance")
    sp.add_argument("--reduced", action="store_true", help="screen with certificates before solving")
    sp.add_argument("--dual", action="store_true", help="report the exact dual and its gap")
    sp.add_argument("--kkt-report", action="store_true", help="report each optimality residual")
    common(sp, program=True)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("shield", help="run one screening step with a predictor")
    sp.add_argument("instance")
    sp.add_argument("--model")
    sp.add_argument("--features", help="JSON list with the feature vector")
    sp.add_argument("--zeta-check", action="store_true", help="fail when the model zeta differs")
    common(sp, program=True)
    sp.set_defaults(func=cmd_shield)

    sp = sub.add_parser("simulate", help="closed-loop rollout")
    sp.add_argument("--policy", choices=["full", "reduced", "both"], default="both")
    sp.add_argument("--scenario")
    sp.add_argument("--model")
    sp.add_argument("--predictor", choices=["all", "distance"], default="distance")
    sp.add_argument("--summary", help="path for the per-run summary rows (default stdout)")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="epsilon / lambda grid over seeded scenarios")
    sp.add_argument("--epsilons", type=_floats, default=[0.001, 0.01, 0.1])
    sp.add_argument("--lambdas", type=_floats, default=[100.0])
    sp.add_argument("--scenarios", type=int, default=20)
    sp.add_argument("--model")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("collect", help="log (feature, label) samples")
    sp.add_argument("--scenarios", type=int, default=20)
    sp.add_argument("--instances", nargs="*", help="program files instead of rollouts")
    common(sp)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train", help="train the logistic predictor")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=300)
    sp.add_argument("--step-size", type=float, default=0.05)
    sp.add_argument("--w0", type=float, default=1.0)
    sp.add_argument("--w1", type=float, default=20.0)
    sp.add_argument("--eval-fraction", type=float, default=0.15)
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--augment-agents", type=_ints, metavar="V,M",
                    help="add every agent relabelling of the training split (V agents, M modes)")
    common(sp, program=True)
    sp.set_defaults(func=cmd_train)
    return p


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` when given."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    with open(path) as fh:
        conf = json.load(fh)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in conf.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProgramFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

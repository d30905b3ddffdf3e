"""Command-line front end.

    mftg solve GAME.json --variant rn_nash --out DIR
    mftg simulate GAME.json --paths 100000 --seed 42 --out DIR
    mftg verify GAME.json --out DIR
    mftg compare-rs-robust GAME.json --out DIR
    mftg lambda-bar GAME.json --out DIR

Exit status: 0 all checks pass, 1 invalid input, 2 a verification check
failed, 3 the Riccati solution blows up.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import game_model as gm
from . import riccati
from . import simulator as sm
from . import strategy as st
from . import verifier as vf

EXIT_OK, EXIT_INVALID, EXIT_FAILED, EXIT_BLOWUP = 0, 1, 2, 3


def _fmt(x):
    return "%.17g" % x


def _entries(prefix, d):
    return [f"{prefix}_{r}{c}" for r in range(d) for c in range(d)]


def write_riccati_csv(path, sol):
    n, S, _, d, _ = sol.P.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "regime", "player"] + _entries("P", d) + _entries("Pbar", d) + ["delta"])
        for k, t in enumerate(sol.grid):
            for s in range(S):
                for i in range(n):
                    row = [_fmt(t), s, i]
                    row += [_fmt(v) for v in sol.P[i, s, k].ravel()]
                    row += [_fmt(v) for v in sol.Pbar[i, s, k].ravel()]
                    row.append(_fmt(sol.delta[i, s, k]))
                    w.writerow(row)


def write_means_csv(path, grid, regimes, means):
    d = means.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "regime"] + _entries("Xbar", d))
        for k, t in enumerate(grid):
            w.writerow([_fmt(t), int(regimes[k])] + [_fmt(v) for v in means[k].ravel()])


def write_paths_csv(path, batch):
    m, K1, d, _ = batch.X.shape
    n = batch.U.shape[2]
    header = ["path", "t", "regime"] + _entries("X", d) + _entries("Xbar", d)
    for j in range(n):
        header += _entries(f"U{j}", d)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in range(m):
            for k in range(K1):
                row = [p, _fmt(batch.grid[k]), int(batch.regimes[p, k])]
                row += [_fmt(v) for v in batch.X[p, k].ravel()]
                row += [_fmt(v) for v in batch.Xbar[p, k].ravel()]
                for j in range(n):
                    # no control is applied after the last step
                    u = batch.U[p, k, j] if k < K1 - 1 else np.full((d, d), np.nan)
                    row += [_fmt(v) for v in u.ravel()]
                w.writerow(row)


def _report(args, spec, checks, extra=None):
    return {
        "tool": "mftg",
        "version": __version__,
        "command": args.command,
        "spec_digest": spec.digest(),
        "variant": getattr(args, "variant", None),
        "steps": args.steps,
        "seed": args.seed,
        "all_pass": all(c["pass"] for c in checks),
        "checks": checks,
        **(extra or {}),
    }


def _solve_and_means(args, spec, out):
    sol = riccati.solve(spec, args.variant, args.steps)
    write_riccati_csv(out / "riccati.csv", sol)
    info = {
        "wellposed": sol.wellposed,
        "blowup_time": sol.blowup_time,
        "channel_positive": sol.channel_positive,
        "warnings": list(sol.warnings),
        "diffusion_weight": sol.diffusion_weight,
    }
    if not sol.wellposed:
        return sol, None, info
    law = st.synthesize(spec, sol)
    path = sm.sample_regime_path(spec.generator, spec.initial_regime, spec.horizon, args.seed)
    grid, means = st.propagate_mean(spec, law, path, args.steps)
    write_means_csv(out / "means.csv", grid, path.on_grid(grid), means)
    return sol, law, info


def cmd_solve(args, spec, out):
    sol, _, info = _solve_and_means(args, spec, out)
    checks = []
    if sol.wellposed:
        res = vf.riccati_residual(spec, sol)
        checks.append(vf.VerificationReport("riccati_residual", spec.digest(), 0.0, res, 1e-6, res < 1e-6).to_dict())
    report = _report(args, spec, checks, {"solution": info})
    if sol.wellposed:
        p, pbar, delta = sol.at_start(0, spec.initial_regime)
        report["at_start"] = {"P": p, "Pbar": pbar, "delta": delta}
    return report, (EXIT_BLOWUP if not sol.wellposed else EXIT_OK)


def _sim_config(args, record=0):
    return sm.SimulationConfig(args.paths, args.sim_steps or args.steps, args.seed, record_paths=record)


def cmd_simulate(args, spec, out):
    sol, law, info = _solve_and_means(args, spec, out)
    if law is None:
        return _report(args, spec, [], {"solution": info}), EXIT_BLOWUP
    cfg = _sim_config(args, args.dump_paths)
    batch = sm.simulate(spec, law, cfg)
    if args.dump_paths:
        write_paths_csv(out / "paths.csv", batch)
    lambdas = [p.lam if args.variant.startswith("rs_") else 0.0 for p in spec.players]
    est = sm.estimate_costs(batch, lambdas) if batch.valid else []
    costs = [
        {"player": i, "mean": e.risk_neutral_mean, "stderr": e.risk_neutral_stderr,
         "risk_sensitive": e.risk_sensitive_value, "risk_sensitive_stderr": e.risk_sensitive_stderr,
         "lambda": e.lam, "warnings": list(e.warnings)}
        for i, e in enumerate(est)
    ]
    report = _report(args, spec, [], {"solution": info, "costs": costs, "paths": args.paths,
                                      "valid_batch": batch.valid})
    return report, EXIT_OK if batch.valid else EXIT_FAILED


def cmd_verify(args, spec, out):
    sol, law, info = _solve_and_means(args, spec, out)
    if law is None:
        return _report(args, spec, [], {"solution": info}), EXIT_BLOWUP
    checks = []
    res = vf.riccati_residual(spec, sol)
    checks.append(vf.VerificationReport("riccati_residual", spec.digest(), 0.0, res, 1e-6, res < 1e-6))
    cfg = _sim_config(args)
    checks.append(vf.cost_formula_check(spec, sol, law, cfg))
    for i in range(spec.num_players):
        checks.append(vf.deviation_test(spec, sol, law, i, (0.8, 1.2), cfg))
    checks.append(vf.deviation_penalty_identity(spec, sol, law, 0, law.scaled(0, 1.5, 1.5), cfg))
    checks = [c.to_dict() for c in checks]
    report = _report(args, spec, checks, {"solution": info})
    return report, EXIT_OK if report["all_pass"] else EXIT_FAILED


def cmd_compare(args, spec, out):
    rtilde = [args.gamma2 * np.eye(spec.dim)] * spec.num_players
    comp = vf.build_robust_companion(spec, rtilde)
    checks = [vf.rs_robust_equivalence_test(comp, args.steps),
              vf.mean_trajectory_relation_test(comp, "mean_field_type", args.steps)]
    extra = {}
    if spec.dim == 1:
        mff = vf.mean_trajectory_relation_test(comp, "mean_field_free", args.steps)
        checks.append(mff)
        extra["ratio_at_T"] = mff.details["ratio_at_T"]
    extra["P_distance"] = checks[0].details["P_distance"]
    extra["Pbar_distance"] = checks[0].details["Pbar_distance"]
    sol = riccati.solve(comp.companion, "rn_adversarial", args.steps)
    write_riccati_csv(out / "riccati.csv", sol)
    report = _report(args, spec, [c.to_dict() for c in checks], extra)
    return report, EXIT_OK if report["all_pass"] else EXIT_FAILED


def cmd_lambda_bar(args, spec, out):
    per_player = [riccati.lambda_bar(spec, i) for i in range(spec.num_players)]
    coop = riccati.lambda_bar(spec)
    check = vf.shared_risk_test([spec])
    report = _report(args, spec, [check.to_dict()], {
        "lambda_bar": vf._jsonable(per_player), "lambda_bar_cooperative": vf._jsonable(coop),
    })
    return report, EXIT_OK if check.passed else EXIT_FAILED


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "compare-rs-robust": cmd_compare,
    "lambda-bar": cmd_lambda_bar,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mftg", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"mftg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("spec", help="game description (JSON)")
        p.add_argument("--variant", default="rn_nash", choices=gm.VARIANTS)
        p.add_argument("--steps", type=int, default=riccati.DEFAULT_STEPS, help="Riccati grid steps")
        p.add_argument("--sim-steps", type=int, default=None, help="simulation steps (default: --steps)")
        p.add_argument("--paths", type=int, default=100_000)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--dump-paths", type=int, default=0, metavar="N", help="write the first N paths")
        p.add_argument("--gamma2", type=float, default=1.0, help="attacker weight -R = gamma2 * I")
    return parser


def run(argv=None):
    """Parse ``argv``, run the command and return ``(exit_code, report)``."""
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = None
    try:
        text = Path(args.spec).read_text(encoding="utf-8")
        spec = gm.loads_spec(text)
        report, code = COMMANDS[args.command](args, spec, out)
    except json.JSONDecodeError as exc:
        report = {"error": f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"}
        code = EXIT_INVALID
    except gm.ValidationError as exc:
        report = {"error": str(exc), "validation": exc.report.to_dict()}
        code = EXIT_INVALID
    except (gm.SpecFormatError, OSError, ValueError) as exc:
        report = {"error": str(exc)}
        code = EXIT_INVALID
    report.setdefault("version", __version__)
    report.setdefault("spec_digest", spec.digest() if spec is not None else None)
    report["exit_code"] = code
    with open(out / "report.json", "w") as fh:
        json.dump(vf._jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if "error" in report:
        print(f"mftg: error: {report['error']}", file=sys.stderr)
    return code, report


def main(argv=None):
    code, _ = run(argv)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

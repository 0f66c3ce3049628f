"""Command-line front end.

Subcommands: `solve` (Nash / planner / best-deviation systems to CSV),
`check-cce` (verdict for a scenario law, optionally Monte Carlo confirmed),
and `figure` (the CSV tables behind the standard plots).  Every output CSV
is accompanied by a JSON manifest that makes the run reproducible; floats
are written in round-trip precision.

Exit codes: 0 ok, 2 model validation failure, 3 input mismatch,
4 empty result, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .abatement import (
    AbatementParams,
    LinearFlowLaw,
    gl_verdict,
    linear_class_coefficients,
    linear_class_coefficients_sweep,
    maximal_payoff_cce,
    ne_payoff,
    outperformance_region,
    payoff_offset,
)
from .conditions import evaluate
from .grids import DEFAULT_STEPS, GridMismatchError, TimeGrid
from .model import validate
from .modelio import ModelFileError, load_law, load_model
from .moments import conditional_moment_payoff
from .flows import build_flow, nash_flow_law, planner_flow_law
from .montecarlo import SimConfig, simulate_deviation, simulate_flow
from .riccati import solve_mfc, solve_ne

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_MISMATCH = 3
EXIT_EMPTY = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(path: Path, command: str, params: dict, grid: TimeGrid, outputs, started: float, seed=None) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "grid": {"horizon": grid.horizon, "steps": grid.steps},
        "seed": seed,
        "outputs": [str(o) for o in outputs],
        "version": __version__,
        "wall_clock_s": round(time.time() - started, 6),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _flat_columns(name: str, arr: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """One CSV column per component of a trajectory array."""
    if arr.ndim == 1:
        return [(name, arr)]
    if arr.ndim == 2:
        if arr.shape[1] == 1:
            return [(name, arr[:, 0])]
        return [(f"{name}_{i}", arr[:, i]) for i in range(arr.shape[1])]
    cols = []
    for i in range(arr.shape[1]):
        for j in range(arr.shape[2]):
            suffix = "" if arr.shape[1] == arr.shape[2] == 1 else f"_{i}{j}"
            cols.append((f"{name}{suffix}", arr[:, i, j]))
    return cols


def _load(args) -> tuple:
    try:
        parsed = load_model(args.model)
    except FileNotFoundError as exc:
        raise CliError(f"model file not found: {exc.filename}", EXIT_MISMATCH) from exc
    except ModelFileError as exc:
        raise CliError(f"model file error: {exc}", EXIT_VALIDATION) from exc
    steps = args.grid_n if args.grid_n else (parsed.grid_steps or DEFAULT_STEPS)
    grid = TimeGrid(parsed.spec.horizon, steps)
    report = validate(parsed.spec, grid)
    if not report.passed:
        print(report, file=sys.stderr)
        raise CliError("model validation failed", EXIT_VALIDATION)
    return parsed, grid


def _resolve_law(args, parsed, grid):
    if getattr(args, "law", None):
        try:
            return load_law(args.law, parsed.spec, grid)
        except FileNotFoundError as exc:
            raise CliError(f"law file not found: {exc.filename}", EXIT_MISMATCH) from exc
        except ModelFileError as exc:
            raise CliError(f"law file error: {exc}", EXIT_MISMATCH) from exc
        except GridMismatchError as exc:
            raise CliError(str(exc), EXIT_MISMATCH) from exc
    if parsed.law is not None:
        if parsed.law.grid.steps != grid.steps:
            # tabulated law parsed at the file's default grid: re-read at the session grid
            try:
                return _reparse_model_law(args.model, parsed, grid)
            except ModelFileError as exc:
                raise CliError(str(exc), EXIT_MISMATCH) from exc
        return parsed.law, parsed.linear_law
    return None, None


def _reparse_model_law(path, parsed, grid):
    from .modelio import parse_law, _tokenize

    with open(path, "r", encoding="utf-8") as fh:
        sections = _tokenize(fh.read())
    return parse_law(sections["law"], parsed.spec, grid)


def _require_law(args, parsed, grid):
    law, lin = _resolve_law(args, parsed, grid)
    if law is None:
        raise CliError("this command needs a scenario law (--law FILE or a [law] section)", EXIT_MISMATCH)
    return law, lin


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args) -> int:
    started = time.time()
    parsed, grid = _load(args)
    spec = parsed.spec
    out = _outdir(args)
    t = grid.nodes

    if args.what == "ne":
        ne = solve_ne(spec, grid)
        cols = [("t", t)]
        for name, arr in (
            ("phi_ne", ne.P_ne.values),
            ("theta_ne", ne.p_ne.values),
            ("m_hat", ne.mean_flow.values),
            ("theta_mhat", ne.p_offset.values),
        ):
            cols.extend(_flat_columns(name, arr))
        payoff = ne.payoff
    elif args.what == "mfc":
        mfc = solve_mfc(spec, grid)
        cols = [("t", t)]
        for name, arr in (
            ("phi_mfc", mfc.P_mfc.values),
            ("theta_mfc", mfc.p_mfc.values),
            ("psi_bar", mfc.P_ctrl.values),
            ("theta_bar", mfc.p_ctrl.values),
            ("xbar_mfc", mfc.mean_flow.values),
        ):
            cols.extend(_flat_columns(name, arr))
        payoff = mfc.payoff
    else:  # deviation
        law, _ = _require_law(args, parsed, grid)
        flow = build_flow(spec, grid, law)
        cols = [("t", t)]
        for name, arr in (
            ("phi", flow.riccati.P.values),
            ("psi", flow.riccati.P_flow.values),
            ("theta", flow.riccati.p_const.values),
            ("e_mu", flow.mean_mu.values),
        ):
            cols.extend(_flat_columns(name, arr))
        from .flows import analytic_payoff_report

        payoff = analytic_payoff_report(flow, flow.best_deviation_policy()).payoff

    csv_path = out / f"solve_{args.what}.csv"
    header = [name for name, _ in cols]
    write_csv(csv_path, header, zip(*(arr for _, arr in cols)))
    print(f"{args.what}: analytic payoff = {_fmt(payoff)}")
    print(f"wrote {csv_path}")
    write_manifest(
        out / f"solve_{args.what}.manifest.json",
        "solve",
        {"model": str(args.model), "what": args.what, "law": getattr(args, "law", None), "payoff": payoff},
        grid,
        [csv_path],
        started,
    )
    return EXIT_OK


def cmd_check_cce(args) -> int:
    started = time.time()
    parsed, grid = _load(args)
    spec = parsed.spec
    law, _ = _require_law(args, parsed, grid)
    out = _outdir(args)

    verdict = evaluate(spec, grid, law)
    row = verdict.row()
    print(f"is_cce = {verdict.is_cce} (lhs = {_fmt(verdict.optimality_lhs)}, rhs = {_fmt(verdict.optimality_rhs)})")
    print(f"outperforms_ne = {verdict.outperforms_ne} (value = {_fmt(verdict.outperf_value)})")
    for name, value in verdict.payoffs.items():
        print(f"payoff[{name}] = {_fmt(value)}")
    for name, value in verdict.breakdown.items():
        print(f"  {name} = {_fmt(value)}")

    csv_path = out / "verdict.csv"
    write_csv(csv_path, list(row.keys()), [list(row.values())])
    outputs = [csv_path]

    simulate = args.simulate
    if simulate == -1:  # flag given without a value: [sim] section or --paths
        simulate = parsed.sim.get("paths", args.paths)
    seed = args.seed if args.seed is not None else parsed.sim.get("seed", 42)
    if simulate:
        flow = build_flow(spec, grid, law)
        cfg = SimConfig(
            paths=simulate, seed=seed, grid=grid,
            antithetic=parsed.sim.get("antithetic", False),
        )
        rep = simulate_flow(flow, cfg)
        z = abs(rep.payoff - verdict.payoffs["flow"]) / rep.payoff_se if rep.payoff_se > 0 else 0.0
        print(
            f"simulated payoff = {rep.payoff:.6f} +- {rep.payoff_se:.6f} "
            f"(analytic {verdict.payoffs['flow']:.6f}, {z:.2f} SE away)"
        )
        print(f"consistency residual = {rep.consistency_resid:.3g} ({rep.consistency_resid_se_units:.2f} SE units)")
        dev = simulate_deviation(flow, cfg)
        print(f"deviation gap (deviating - committed) = {dev.gap:.6f} +- {dev.gap_se:.6f}")
        sim_path = out / "verdict_sim.csv"
        write_csv(
            sim_path,
            ["payoff", "payoff_se", "consistency_resid", "consistency_se_units", "gap", "gap_se", "paths", "seed"],
            [[rep.payoff, rep.payoff_se, rep.consistency_resid, rep.consistency_resid_se_units, dev.gap, dev.gap_se, cfg.paths, cfg.seed]],
        )
        outputs.append(sim_path)

    write_manifest(
        out / "verdict.manifest.json",
        "check-cce",
        {"model": str(args.model), "law": getattr(args, "law", None), "simulate": simulate},
        grid,
        outputs,
        started,
        seed=seed,
    )
    return EXIT_OK


def _require_abatement(parsed) -> AbatementParams:
    if parsed.abatement is None:
        raise CliError("this figure needs an [abatement] model", EXIT_MISMATCH)
    return parsed.abatement


def cmd_figure(args) -> int:
    started = time.time()
    parsed, grid = _load(args)
    spec = parsed.spec
    out = _outdir(args)
    which = args.which

    if which in (1, 2):
        law, _ = _require_law(args, parsed, grid)
        flow = build_flow(spec, grid, law)
        ne = solve_ne(spec, grid)
        mfc = solve_mfc(spec, grid)
        from .flows import analytic_payoff_report

        rep_cce = analytic_payoff_report(flow)
        rep_mfc = conditional_moment_payoff(spec, grid, mfc.policy, [mfc.mean_flow], np.array([1.0]))
        rep_ne = conditional_moment_payoff(spec, grid, ne.policy, [ne.mean_flow], np.array([1.0]))
        w = flow.weights
        if which == 1:
            running_cce = w @ rep_cce.running
            rows = zip(
                grid.nodes,
                running_cce,
                rep_mfc.running[0],
                rep_ne.running[0],
                np.full(len(grid.nodes), rep_cce.payoff),
                np.full(len(grid.nodes), rep_mfc.payoff),
                np.full(len(grid.nodes), rep_ne.payoff),
            )
            header = ["t", "running_cce", "running_mfc", "running_ne", "total_cce", "total_mfc", "total_ne"]
        else:
            mu_mean = w @ np.stack([m.values[:, 0] for m in flow.mus])
            rows = zip(grid.nodes, mu_mean, mfc.mean_flow.values[:, 0], ne.mean_flow.values[:, 0])
            header = ["t", "mu_mean_cce", "xbar_mfc", "m_ne"]
    elif which == 3:
        params = _require_abatement(parsed)
        region = outperformance_region(params, z1_samples=args.samples)
        if not region.nonempty and not args.allow_empty:
            raise CliError(
                "the outperformance region is empty (pass --allow-empty to export anyway)",
                EXIT_EMPTY,
            )
        rows = zip(region.z1, region.sigma2_lower, region.sigma2_upper)
        header = ["z1", "sigma2_lower", "sigma2_upper"]
    elif which == 4:
        params = _require_abatement(parsed)
        # inset the left endpoint: exactly on the boundary the variance
        # coefficient vanishes and the ratio diverges
        lo = 3.0 / params.horizon**2 * (1.0 + 1e-6)
        eps_values = np.linspace(lo, max(3.0, lo * 1.5), args.samples)
        cm, cv = linear_class_coefficients_sweep(eps_values, params.horizon, grid.steps)
        rows = zip(eps_values, -cm / cv)
        header = ["eps", "ratio"]
    else:  # 5
        params = _require_abatement(parsed)
        coeffs = linear_class_coefficients(params, grid)
        region = outperformance_region(params, coeffs=coeffs)
        if not region.nonempty and not args.allow_empty:
            raise CliError(
                "the outperformance region is empty (pass --allow-empty to export anyway)",
                EXIT_EMPTY,
            )
        ne = solve_ne(spec, grid)
        mfc = solve_mfc(spec, grid)
        z1_star, s2_star, _ = maximal_payoff_cce(params, coeffs)
        z1s = np.linspace(0.0, region.z1_max, args.samples) if region.nonempty else np.zeros(1)
        if region.nonempty and not np.any(np.isclose(z1s, z1_star)):
            z1s = np.sort(np.append(z1s, z1_star))
        rows_list = []
        for z1 in z1s:
            s2 = max(region.lower_coef * z1**2, 0.0)
            law = LinearFlowLaw(float(z1), float(s2))
            payoff = ne.payoff + payoff_offset(params, law)
            rows_list.append(
                [
                    float(z1),
                    payoff,
                    mfc.payoff,
                    ne.payoff,
                    params.nu1 + params.horizon * float(z1),
                    float(mfc.mean_flow.values[-1, 0]),
                    float(ne.mean_flow.values[-1, 0]),
                ]
            )
        rows = rows_list
        header = ["z1", "payoff_cce", "payoff_mfc", "payoff_ne", "abatement_cce", "abatement_mfc", "abatement_ne"]

    csv_path = out / f"fig{which}.csv"
    write_csv(csv_path, header, rows)
    print(f"wrote {csv_path}")
    write_manifest(
        out / f"fig{which}.manifest.json",
        "figure",
        {"model": str(args.model), "which": which, "law": getattr(args, "law", None), "samples": args.samples},
        grid,
        [csv_path],
        started,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcce",
        description="Moderated equilibria in linear-quadratic mean field games",
    )
    parser.add_argument("--version", action="version", version=f"mfcce {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="model file")
        p.add_argument("--grid-n", type=int, default=0, help=f"grid steps (default {DEFAULT_STEPS})")
        p.add_argument("--out", default=None, help="output directory (default: cwd)")

    p_solve = sub.add_parser("solve", help="solve the Nash, planner, or best-deviation system")
    common(p_solve)
    p_solve.add_argument("--what", required=True, choices=["ne", "mfc", "deviation"])
    p_solve.add_argument("--law", default=None, help="scenario-law file (required for deviation)")
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("check-cce", help="equilibrium verdict for a scenario law")
    common(p_check)
    p_check.add_argument("--law", default=None, help="scenario-law file")
    p_check.add_argument(
        "--simulate", type=int, nargs="?", const=-1, default=0, metavar="M",
        help="confirm by Monte Carlo (M paths; without a value, [sim] or --paths)",
    )
    p_check.add_argument("--paths", type=int, default=100_000, help="default Monte Carlo paths")
    p_check.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (default 42 or [sim])")
    p_check.set_defaults(func=cmd_check_cce)

    p_fig = sub.add_parser("figure", help="emit the CSV table behind a standard figure")
    common(p_fig)
    p_fig.add_argument("--which", required=True, type=int, choices=[1, 2, 3, 4, 5])
    p_fig.add_argument("--law", default=None)
    p_fig.add_argument("--samples", type=int, default=400)
    p_fig.add_argument("--allow-empty", action="store_true")
    p_fig.set_defaults(func=cmd_figure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except GridMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

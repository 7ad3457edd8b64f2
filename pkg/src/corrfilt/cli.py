"""Command-line front end.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
Diagnostics go to stderr and each command prints a one-line summary on
stdout. Files are written only under ``--out-dir``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import load_config
from .errors import ConfigError, CorrfiltError, NumericalFailure, OracleFailure
from .estimator import FixedLagDriver, iter_filter
from .experiment import (GRID, ScenarioConfig, Timer, build_model, build_policy,
                         build_signal, reproduce_figure, run_sweep, write_csv, write_manifest)
from .oracle import run_oracle_suite
from .plotting import figure_series, plot_script, svg_line_chart
from .simulator import RngStream, read_observations, simulate_run

ORACLE_TOLERANCE = 1e-8


def _probability(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None


def _grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list") from None
    if not vals:
        raise argparse.ArgumentTypeError("grid is empty")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI scenario file")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--runs", type=int, help="Monte Carlo replications")
    common.add_argument("--steps", type=int, help="horizon K")
    common.add_argument("--lag", type=int, help="smoothing lag h")
    common.add_argument("--gamma-bar", type=_probability, dest="gamma_bar",
                        help="probability that the signal is present")
    common.add_argument("--lambda-bar", type=_probability, dest="lambda_bar",
                        help="probability of a deception attack")
    common.add_argument("--mode", choices=("theorem", "ekf"),
                        help="innovation covariance form")
    common.add_argument("--init", choices=("stationary", "paper-transient"),
                        help="signal initialization")
    common.add_argument("--out-dir", default="out", metavar="PATH")
    common.add_argument("--emit-plot", choices=("none", "svg", "script"), default="svg")

    parser = _Parser(prog="corrfilt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="write simulated trajectories")
    for name, text in (("filter", "run the filter on one trajectory"),
                       ("smooth", "run the fixed-lag smoother on one trajectory")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--input", metavar="CSV",
                       help="trajectory CSV (default: simulate run 0 from the config)")
    p = sub.add_parser("reproduce", parents=[common], help="regenerate a figure table")
    p.add_argument("--figure", type=int, choices=(1, 2, 3), required=True)
    p = sub.add_parser("sweep", parents=[common], help="mean RMSE over a probability grid")
    p.add_argument("--gamma-grid", type=_grid, default=GRID, metavar="LIST")
    p.add_argument("--lambda-grid", type=_grid, default=GRID, metavar="LIST")
    p = sub.add_parser("oracle-check", parents=[common], help="batch-oracle equivalence suite")
    p.add_argument("--instances", type=int, default=50)
    return parser


OVERRIDES = ("seed", "runs", "steps", "lag", "gamma_bar", "lambda_bar", "mode", "init")


def resolve(args: argparse.Namespace) -> ScenarioConfig:
    overrides = {k: getattr(args, k) for k in OVERRIDES}
    if args.command == "simulate" and overrides["runs"] is None:
        overrides["runs"] = 1
    return load_config(args.config, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create --out-dir {out}: {exc.strerror}", key="out-dir") from exc
    return out


def _emit_plot(args, out: Path, name: str, header, rows, x_col, y_cols, group_col=None) -> list[str]:
    if args.emit_plot == "svg":
        path = out / f"{name}.svg"
        path.write_text(svg_line_chart(figure_series(header, rows), title=name,
                                       xlabel=x_col, ylabel="RMSE"))
        return [path.name]
    if args.emit_plot == "script":
        path = out / f"plot_{name}.py"
        path.write_text(plot_script(f"{name}.csv", x_col, y_cols, group_col))
        return [path.name]
    return []


def cmd_simulate(args, cfg: ScenarioConfig) -> str:
    out = _out_dir(args)
    model, signal = build_model(cfg), build_signal(cfg)
    for run in range(cfg.runs):
        traj = simulate_run(model, cfg.steps, RngStream(cfg.seed, run), signal, cfg.dist)
        traj.to_csv(out / f"trajectory_{run:04d}.csv")
    return f"simulate: wrote {cfg.runs} trajectories of {cfg.steps} steps to {out}"


def _load_track(args, cfg: ScenarioConfig):
    model = build_model(cfg)
    if args.input:
        try:
            y, x = read_observations(args.input)
        except OSError as exc:
            raise ConfigError(f"cannot read --input {args.input}: {exc.strerror}",
                              key="input") from exc
    else:
        traj = simulate_run(model, cfg.steps, RngStream(cfg.seed, 0), build_signal(cfg), cfg.dist)
        y, x = traj.y, traj.x
    return model, y, x


def _cols(name: str, n: int) -> list[str]:
    return [name] if n == 1 else [f"{name}{i + 1}" for i in range(n)]


def cmd_filter(args, cfg: ScenarioConfig) -> str:
    out = _out_dir(args)
    model, y, x = _load_track(args, cfg)
    n_x, n_z = model.cov.n_x, model.obs.n_z
    header = (["k"] + _cols("x_filt", n_x) + _cols("x_pred", n_x) + _cols("z_pred", n_z)
              + _cols("eta", n_z) + _cols("sigma_eta", n_z))
    rows = []
    for state, rec, o in iter_filter(y, model, build_policy(cfg), cfg.resolved_mode,
                                     cfg.cross_terms):
        rows.append([state.k, *o.x_filt, *o.x_pred, *rec.z_pred, *rec.eta,
                     *np.diag(rec.Sigma_eta)])
    write_csv(out / "filter.csv", header, rows)
    msg = f"filter: {len(rows)} steps -> {out / 'filter.csv'}"
    if x is not None and len(x) == len(rows):
        err = x - np.array([r[1:1 + n_x] for r in rows])
        msg += f" (rmse {np.sqrt(np.mean(err ** 2)):.6g})"
    return msg


def cmd_smooth(args, cfg: ScenarioConfig) -> str:
    out = _out_dir(args)
    model, y, x = _load_track(args, cfg)
    n_x = model.cov.n_x
    driver = FixedLagDriver(cfg.lag, model.cov)
    filt, smooth = {}, {}
    for state, rec, o in iter_filter(y, model, build_policy(cfg), cfg.resolved_mode,
                                     cfg.cross_terms):
        filt[state.k] = o.x_filt
        for k, est in driver.push(state, rec, o):
            smooth[k] = (k + cfg.lag, est)
    # the final h times only see data up to the end of the record
    for k, L, est in driver.pending():
        smooth.setdefault(k, (L, est))
    header = ["k", "L"] + _cols("x_filt", n_x) + _cols(f"x_smooth_h{cfg.lag}", n_x)
    rows = [[k, smooth[k][0], *filt[k], *smooth[k][1]] for k in sorted(filt)]
    write_csv(out / "smooth.csv", header, rows)
    msg = f"smooth: {len(rows)} steps, lag {cfg.lag} -> {out / 'smooth.csv'}"
    if x is not None and len(x) == len(rows):
        err = x - np.array([r[2 + n_x:2 + 2 * n_x] for r in rows])
        msg += f" (rmse {np.sqrt(np.mean(err ** 2)):.6g})"
    return msg


def cmd_reproduce(args, cfg: ScenarioConfig) -> str:
    out = _out_dir(args)
    name = f"figure{args.figure}"
    with Timer() as t:
        header, rows = reproduce_figure(args.figure, cfg)
    write_csv(out / f"{name}.csv", header, rows)
    files = [f"{name}.csv"]
    group = None if args.figure == 1 else header[1]
    files += _emit_plot(args, out, name, header, rows, header[0], header[2:], group)
    write_manifest(out / "manifest.json", cfg, f"reproduce --figure {args.figure}",
                   t.elapsed, files)
    return f"reproduce: {name}.csv with {len(rows)} rows in {t.elapsed:.1f}s -> {out}"


def cmd_sweep(args, cfg: ScenarioConfig) -> str:
    out = _out_dir(args)
    for g in (*args.gamma_grid, *args.lambda_grid):
        if not 0.0 <= g <= 1.0:
            raise ConfigError(f"grid value {g} is not a probability in [0, 1]", key="grid")
    with Timer() as t:
        rows = run_sweep(cfg, args.gamma_grid, args.lambda_grid)
    header = ["gamma_bar", "lambda_bar", "estimator", "mean_rmse"]
    tidy = []
    for r in rows:
        tidy.append([r.gamma_bar, r.lambda_bar, "filter", r.mean_rmse_filter])
        tidy.append([r.gamma_bar, r.lambda_bar, f"smoother_h{cfg.lag}", r.mean_rmse_smoother])
    write_csv(out / "sweep.csv", header, tidy)
    write_manifest(out / "manifest.json", cfg, "sweep", t.elapsed, ["sweep.csv"])
    return f"sweep: {len(rows)} cells in {t.elapsed:.1f}s -> {out / 'sweep.csv'}"


def cmd_oracle_check(args, cfg: ScenarioConfig) -> str:
    report = run_oracle_suite(instances=args.instances, seed=cfg.seed % 2 ** 32,
                              mode=cfg.mode or "theorem")
    worst = max(report.max_deviation, report.max_kalman_deviation)
    if worst > ORACLE_TOLERANCE:
        raise OracleFailure(f"max deviation {worst:.3e} exceeds {ORACLE_TOLERANCE:g}")
    return (f"oracle-check: {report.instances} instances, {report.comparisons} comparisons, "
            f"max deviation {report.max_deviation:.3e} (kalman {report.max_kalman_deviation:.3e})")


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "smooth": cmd_smooth,
            "reproduce": cmd_reproduce, "sweep": cmd_sweep, "oracle-check": cmd_oracle_check}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        summary = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"corrfilt: configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, OracleFailure) as exc:
        print(f"corrfilt: numerical failure: {exc}", file=sys.stderr)
        return 1
    except CorrfiltError as exc:
        # model validation problems stem from the supplied parameters
        print(f"corrfilt: invalid model: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

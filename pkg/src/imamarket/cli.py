"""Command-line front end.

Commands: ``simulate``, ``verify-emm``, ``optimize``, ``hedge-check``, ``oracle``.

Exit codes: 0 success, 1 unreadable or malformed input, 2 a value breaks a
model invariant, 3 a no-arbitrage or martingale check failed, 4 a solver did
not converge.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ScenarioConfig, load_config
from .errors import ConfigError, ConvergenceError, SpecError
from .hedge import RepresentationCoefficients, residual_csv, selffinancing_check
from .market import asset_names, check_no_arbitrage, simulate_assets
from .measure import density_moments, girsanov_parameters, martingale_ztest, switch_mark_drift, ztest_csv
from .portfolio import (
    FocProblem,
    coordinate_names,
    grid_oracle,
    merton_closed_form,
    solution_csv,
    solve_enlarged,
    solve_original,
)

EXIT_OK, EXIT_INPUT, EXIT_SPEC, EXIT_CHECK, EXIT_SOLVER = 0, 1, 2, 3, 4
Z_LIMIT = 3.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


class _CheckFailed(Exception):
    pass


def _path_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1)[0])


class _Run:
    """Output directory plus the manifest that records every file written."""

    def __init__(self, cfg: ScenarioConfig, args, command: str):
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = {}
        self.extra = {}
        self.command = command
        self.threads = args.threads

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.outputs[name] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self, status: int) -> None:
        run = self.cfg.run
        doc = {
            "command": self.command,
            "exit_code": status,
            "config_sha256": self.cfg.sha256,
            "seed": run.seed,
            "n_paths": run.n_paths,
            "threads": self.threads,
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "imamarket": __version__,
            },
            "config": self.cfg.source,
            "outputs": self.outputs,
            **self.extra,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_simulate(run: _Run) -> int:
    cfg = run.cfg
    r = cfg.run
    for i in range(r.export_paths):
        path = simulate_assets(cfg.market, r.horizon, r.dt, r.K, r.L, _path_seed(r.seed, i))
        run.write(f"path_{i:04d}.csv", path.to_csv())
    return EXIT_OK


def cmd_verify_emm(run: _Run) -> int:
    cfg = run.cfg
    r, spec = cfg.run, cfg.market
    report = check_no_arbitrage(spec)
    if not report.passed:
        raise _CheckFailed(f"static no-arbitrage conditions failed: {', '.join(report.violations)}")
    gir = girsanov_parameters(spec)
    rows = martingale_ztest(spec, gir, asset_names(spec, r.K, r.L), r.checkpoints, r.n_paths, r.seed, run.threads)
    run.write("ztest.csv", ztest_csv(rows))
    mean, se = density_moments(spec, gir, r.horizon, r.n_paths, r.seed, run.threads)
    run.extra["density_mean"] = {"mean": mean, "stderr": se}
    run.extra["switch_mark_drift"] = {k: [float(x) for x in v] for k, v in switch_mark_drift(spec, gir).items()}
    failed = sorted({row.asset for row in rows if not abs(row.z) < Z_LIMIT})
    if failed:
        raise _CheckFailed(f"martingale test failed (|z| >= {Z_LIMIT}) for {', '.join(failed)}")
    return EXIT_OK


def _regime_solutions(cfg: ScenarioConfig):
    r, spec = cfg.run, cfg.market
    rows, original, failures = [], [], []
    for a in range(spec.n_regimes):
        sol = solve_enlarged(FocProblem(spec, a, r.utility, r.K, r.L, r.z0))
        if not sol.converged:
            failures.append(f"regime {a + 1}: {sol.message}")
        gap = None
        if r.oracle is not None:
            orc = grid_oracle(spec, a, r.utility, r.oracle.bounds, r.oracle.points, r.K, r.L, r.z0)
            gap = orc.objective - sol.objective
        rows.append((a, r.utility, r.K, r.L, sol, gap))
        try:
            original.append((a, solve_original(spec, a, r.utility)))
        except ConvergenceError as exc:
            failures.append(f"regime {a + 1} original market: {exc}")
    return rows, original, failures


def _original_csv(cfg: ScenarioConfig, original) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regime", "utility", "pi0", "merton"])
    for a, p in original:
        w.writerow([a + 1, cfg.run.utility.label, repr(p), repr(merton_closed_form(cfg.market, a, cfg.run.utility))])
    return buf.getvalue()


def cmd_optimize(run: _Run) -> int:
    rows, original, failures = _regime_solutions(run.cfg)
    run.write("solution.csv", solution_csv(rows))
    run.write("original.csv", _original_csv(run.cfg, original))
    if failures:
        raise ConvergenceError("; ".join(failures))
    return EXIT_OK


def cmd_oracle(run: _Run) -> int:
    cfg = run.cfg
    r, spec = cfg.run, cfg.market
    if r.oracle is None:
        raise ConfigError("run.oracle: required by the oracle command")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(r.oracle.bounds)
    w.writerow(["regime"] + names + ["objective"] + [f"step_{n}" for n in names])
    all_names = coordinate_names(spec.n_regimes, r.K, r.L)
    for a in range(spec.n_regimes):
        orc = grid_oracle(spec, a, r.utility, r.oracle.bounds, r.oracle.points, r.K, r.L, r.z0)
        vec = dict(zip(all_names, orc.weights.to_vector()))
        w.writerow([a + 1] + [repr(float(vec[n])) for n in names] + [repr(orc.objective)]
                   + [repr(orc.steps[n]) for n in names])
    run.write("oracle.csv", buf.getvalue())
    return EXIT_OK


def cmd_hedge_check(run: _Run) -> int:
    cfg = run.cfg
    r, spec = cfg.run, cfg.market
    h = r.hedge
    if h is None:
        raise ConfigError("run.hedge: required by the hedge-check command")
    gir = girsanov_parameters(spec)
    rows = []
    for i in range(h.n_paths):
        path = simulate_assets(spec, r.horizon, r.dt, r.K, r.L, _path_seed(r.seed, i))
        for factor in (1, 2):
            p = path.coarsen(factor) if factor > 1 else path
            try:
                coeffs = RepresentationCoefficients.by_regime(p, h.h0, h.h_markov, h.h_power, h.h_impulse, h.m0)
            except ValueError as exc:
                raise SpecError("hedge", str(exc)) from None
            rows.append((i, selffinancing_check(coeffs, p, gir), p.dt))
    run.write("residuals.csv", residual_csv(rows))
    fine = np.array([res for _, res, _ in rows[0::2]])
    coarse = np.array([res for _, res, _ in rows[1::2]])
    run.extra["residual_summary"] = {
        "max_residual": float(fine.max()),
        "max_residual_double_step": float(coarse.max()),
        "ratio_of_means": float(fine.mean() / coarse.mean()) if coarse.mean() > 0 else None,
    }
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "verify-emm": cmd_verify_emm,
    "optimize": cmd_optimize,
    "hedge-check": cmd_hedge_check,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="imamarket", description="Regime-switching jump-diffusion markets: simulation, "
                                                   "martingale checks, hedging and optimal portfolios.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario JSON document")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--paths", type=int, help="override run.n_paths")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: threads: must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.paths is not None:
            if args.paths < 1:
                raise SpecError("n_paths", "must be >= 1")
            overrides["n_paths"] = args.paths
        if args.seed is not None:
            if args.seed < 0:
                raise SpecError("seed", "must be >= 0")
            overrides["seed"] = args.seed
        if overrides:
            cfg = ScenarioConfig(cfg.market, replace(cfg.run, **overrides), cfg.sha256, cfg.source)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SpecError as exc:
        print(f"error: invalid value: {exc}", file=sys.stderr)
        return EXIT_SPEC

    run = _Run(cfg, args, args.command)
    try:
        status = COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    except SpecError as exc:
        print(f"error: invalid value: {exc}", file=sys.stderr)
        status = EXIT_SPEC
    except _CheckFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CHECK
    except ConvergenceError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        status = EXIT_SOLVER
    run.manifest(status)
    return status


if __name__ == "__main__":
    sys.exit(main())

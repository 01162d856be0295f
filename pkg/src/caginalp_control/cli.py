"""Command-line entry points: ``simulate``, ``optimize`` and ``verify``.

The heavy numerical modules are imported inside the command handlers so that
the ``CAGINALP_THREADS`` environment variable can cap the BLAS thread pools
before the first array library import. Exit codes are stable:

- 0: success (for ``verify``: every selected check passed);
- 2: configuration problem (bad config file, bad suite name, failed model
  hypothesis checks, bad ``CAGINALP_THREADS``);
- 3: the forward solver failed;
- 4: the optimization loop aborted;
- 5: at least one verification check failed.

All CSV files are written with round-trip float precision and Unix line
endings, so repeated runs of the same config are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigurationError, OptimizerError, SolverError

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_SOLVER",
    "EXIT_OPTIMIZER",
    "EXIT_VERIFY",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_OPTIMIZER = 4
EXIT_VERIFY = 5

_FMT = "{:.17g}"

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_limit(environ=os.environ):
    """Propagate CAGINALP_THREADS to the BLAS pools; 0 or unset means auto."""
    raw = environ.get("CAGINALP_THREADS")
    if raw is None or not raw.strip():
        return
    try:
        value = int(raw.strip())
    except ValueError:
        raise ConfigurationError(
            f"CAGINALP_THREADS: expected a non-negative integer, got {raw!r}"
        )
    if value < 0:
        raise ConfigurationError(
            f"CAGINALP_THREADS: expected a non-negative integer, got {raw!r}"
        )
    if value == 0:
        return
    for name in _THREAD_VARS:
        environ[name] = str(value)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="caginalp",
        description="Solver and verification suite for a coupled "
                    "phase-field/temperature/nutrient control problem.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", help="run the forward solver and write state plus "
                         "diagnostics CSVs")
    sim.add_argument("config", help="path to a run config file")

    opt = sub.add_parser(
        "optimize", help="run projected gradient descent and write the "
                         "iterate report and final control")
    opt.add_argument("config", help="path to a run config file")

    ver = sub.add_parser(
        "verify", help="run a verification suite ('all' or one suite name) "
                       "and write its reports")
    ver.add_argument("suite", help="'all' or one suite name")
    ver.add_argument("config", help="path to a run config file")
    return parser


def _format_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _FMT.format(value)
    return str(value)


def _write_csv(path, header, rows, seed=None):
    """Write one delimited report; a seed is recorded as a comment line."""
    lines = []
    if seed is not None:
        lines.append(f"# seed={seed}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def _check_model(cfg):
    """Run the hypothesis checks; any failure is a configuration error."""
    from .model import validate

    report = validate(cfg.params, cfg.nonlinearities, cfg.potential)
    if report.all_passed:
        return
    parts = []
    for check in report.failures():
        suffix = f" ({check.witness})" if check.witness else ""
        parts.append(f"[{check.hypothesis}] {check.description}{suffix}")
    raise ConfigurationError("model hypothesis checks failed: "
                             + "; ".join(parts))


def _prepare_output(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _write_effective_config(cfg):
    from .config import EFFECTIVE_CONFIG_NAME

    path = os.path.join(cfg.output_dir, EFFECTIVE_CONFIG_NAME)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(cfg.effective_config())


def _state_slice_rows(snapshot, grid):
    theta = snapshot.theta.flat
    phi = snapshot.phi.flat
    mu = snapshot.mu.flat
    sigma = snapshot.sigma.flat
    if grid.dim == 1:
        x = grid.coords(0)
        for i in range(grid.n[0]):
            yield (i, _FMT.format(x[i]), _FMT.format(theta[i]),
                   _FMT.format(phi[i]), _FMT.format(mu[i]),
                   _FMT.format(sigma[i]))
    else:
        x = grid.coords(0)
        y = grid.coords(1)
        nx, ny = grid.n
        for i in range(nx):
            for j in range(ny):
                flat = i * ny + j
                yield (i, j, _FMT.format(x[i]), _FMT.format(y[j]),
                       _FMT.format(theta[flat]), _FMT.format(phi[flat]),
                       _FMT.format(mu[flat]), _FMT.format(sigma[flat]))


def _cmd_simulate(config_path):
    from .config import load_config
    from .state import solve_state

    cfg = load_config(config_path)
    _check_model(cfg)
    out_dir = _prepare_output(cfg)

    trajectory = solve_state(cfg.init, cfg.control, cfg.solver, cfg.params,
                             cfg.nonlinearities, cfg.potential)

    header = ("step", "time", "mass_theta_ell_phi", "mass_phi", "energy",
              "linf_theta", "linf_phi")
    rows = [(d.step, d.time, d.mass_theta_ell_phi, d.mass_phi, d.energy,
             d.linf_theta, d.linf_phi) for d in trajectory.diagnostics]
    _write_csv(os.path.join(out_dir, "diagnostics.csv"), header, rows)

    if cfg.grid.dim == 1:
        slice_header = ("index_x", "x", "theta", "phi", "mu", "sigma")
    else:
        slice_header = ("index_x", "index_y", "x", "y", "theta", "phi",
                        "mu", "sigma")
    for level in cfg.output_slices:
        snapshot = trajectory.snapshot(level)
        path = os.path.join(out_dir, f"state_{level:06d}.csv")
        _write_csv(path, slice_header, _state_slice_rows(snapshot, cfg.grid))

    _write_effective_config(cfg)
    print(f"simulate: {cfg.time_grid.nt} steps,"
          f" {len(cfg.output_slices)} state slice(s),"
          f" reports in {out_dir}")
    return EXIT_OK


def _cmd_optimize(config_path):
    from .config import load_config
    from .control import projected_gradient_descent
    from .grid import write_space_time_csv

    cfg = load_config(config_path)
    _check_model(cfg)
    if cfg.cost is None:
        raise ConfigurationError("optimization needs a [cost] section")
    if cfg.admissible is None:
        raise ConfigurationError("optimization needs an [admissible] section")
    out_dir = _prepare_output(cfg)

    report = projected_gradient_descent(
        cfg.control, cfg.init, cfg.admissible, cfg.cost, cfg.optimizer,
        cfg.solver, cfg.params, cfg.nonlinearities, cfg.potential)

    header = ("iter", "J", "stationarity", "step", "backtracks")
    rows = [(it.iteration, it.cost, it.stationarity, it.step, it.backtracks)
            for it in report.iterates]
    _write_csv(os.path.join(out_dir, "optim_report.csv"), header, rows)
    write_space_time_csv(report.final_control,
                         os.path.join(out_dir, "control.csv"))

    _write_effective_config(cfg)
    print(f"optimize: {report.stop_reason} after"
          f" {len(report.iterates) - 1} iteration(s),"
          f" J={report.final_cost:.12e}"
          f" stationarity={report.final_stationarity:.6e},"
          f" reports in {out_dir}")
    return EXIT_OK


def _cmd_verify(suite, config_path):
    import dataclasses

    from .config import load_config
    from .verification import run_suite

    cfg = load_config(config_path)
    _check_model(cfg)
    problem = cfg.verify_problem()
    verify_cfg = cfg.verify
    if suite != "all":
        verify_cfg = dataclasses.replace(verify_cfg, suites=(suite,))
    out_dir = _prepare_output(cfg)

    report = run_suite(verify_cfg, problem)
    for line in report.summary_lines():
        print(line)

    header = ("name", "passed", "measured", "tolerance")
    rows = [(r.name, r.passed, r.measured, r.tolerance)
            for r in report.results]
    _write_csv(os.path.join(out_dir, "verify_report.csv"), header, rows,
               seed=report.seed)
    for stem in sorted(report.tables):
        table_header, table_rows = report.tables[stem]
        _write_csv(os.path.join(out_dir, f"{stem}.csv"), table_header,
                   table_rows, seed=report.seed)

    _write_effective_config(cfg)
    failed = sum(1 for r in report.results if not r.passed)
    if failed:
        print(f"verify: {failed} of {len(report.results)} check(s) FAILED,"
              f" reports in {out_dir}")
        return EXIT_VERIFY
    print(f"verify: all {len(report.results)} check(s) passed,"
          f" reports in {out_dir}")
    return EXIT_OK


def main(argv=None):
    """CLI entry point; returns the process exit code."""
    try:
        _apply_thread_limit()
        parser = _build_parser()
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args.config)
        if args.command == "optimize":
            return _cmd_optimize(args.config)
        return _cmd_verify(args.suite, args.config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: forward solve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OptimizerError as exc:
        print(f"error: optimization aborted: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER


if __name__ == "__main__":
    sys.exit(main())

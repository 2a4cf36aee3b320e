"""Command-line entry point: ``bsscfs <command> --config FILE``.

Every run writes its outputs and a ``manifest.txt`` into the output
directory.  Passing the manifest back as ``--config`` replays the run and
reproduces the outputs byte for byte, for any ``--workers``.

Exit status: 0 success, 2 invalid config or model, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import cfs_probe, io, rkhs_density, simulator
from .conditional_law import conditional_law, sample_gaussian
from .config import ExperimentConfig, load_config, manifest_text
from .errors import BssError, NumericalError
from .model import ConstantSigma, validate_model

COMMANDS = ("validate", "simulate", "covariance", "condlaw", "rkhs", "probe", "counterexample")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("bsscfs")


def versions() -> dict:
    import scipy
    import yaml

    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


class Run:
    """Output sink for one command; records file names for the manifest."""

    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.files: list[str] = []

    def json(self, name, obj):
        io.write_json(self.out / name, obj)
        self.files.append(name)

    def csv(self, name, columns):
        io.write_csv(self.out / name, columns)
        self.files.append(name)

    def sim_grid(self) -> simulator.SimGrid:
        return simulator.model_grid(self.cfg.model, self.cfg.dt)


def cmd_validate(run: Run) -> int:
    report = validate_model(run.cfg.model, run.cfg.section("validate")["n_probe"])
    run.json("validation.json", report.to_dict())
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_simulate(run: Run) -> int:
    cfg = run.cfg
    grid = run.sim_grid()
    t0, t1, _ = cfg.window
    for k in range(cfg.section("simulate")["n_paths"]):
        bundle = simulator.simulate_path(cfg.model, grid, cfg.seed, path_index=k)
        i0, i1 = grid.index_of(t0), grid.index_of(t1)
        cols = {"t": grid.times[i0:i1 + 1]}
        cols.update({name: v[i0:i1 + 1] for name, v in bundle.columns().items()})
        run.csv(f"path_{k:03d}.csv", cols)
    return EXIT_OK


def _sigma_path(run: Run, grid) -> simulator.SamplePath:
    model = run.cfg.model
    simulator.require_valid(model)
    return simulator.simulate_intermittency(model, grid, run.cfg.seed)


def cmd_covariance(run: Run) -> int:
    sec = run.cfg.section("covariance")
    grid = run.sim_grid()
    sig = _sigma_path(run, grid)
    g = run.cfg.model.g
    quad = simulator.covariance_matrix(g, sig, sec["t_lower"], sec["times"])
    scheme = simulator.scheme_covariance(g, sig, sec["t_lower"], sec["times"])
    run.json("covariance.json", {"t_lower": sec["t_lower"], "times": sec["times"], "quadrature": quad,
                                 "scheme": scheme, "sigma_random": not isinstance(run.cfg.model.sigma, ConstantSigma)})
    return EXIT_OK


def cmd_condlaw(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.section("condlaw")
    grid = run.sim_grid()
    fseed = cfg.seed if sec["frozen_seed"] is None else sec["frozen_seed"]
    frozen = simulator.freeze(cfg.model, grid, sec["t_lower"], fseed)
    law = conditional_law(cfg.model, frozen, sec["t_lower"], sec["times"], sec["method"])
    run.json("law.json", {"times": list(law.times), "mean": law.mean, "cov": law.cov,
                          "t_lower": sec["t_lower"], "method": sec["method"], "frozen_seed": fseed})
    if sec["n_samples"] > 0:
        x = sample_gaussian(law, sec["n_samples"], cfg.seed)
        run.csv("samples.csv", {f"z_{j}": x[:, j] for j in range(law.dim)})
    return EXIT_OK


def rkhs_target(name: str, grid: simulator.SimGrid, csv_path=None) -> np.ndarray:
    u = (grid.times - grid.t_start) / (grid.t_end - grid.t_start)
    if name == "hat":
        return np.maximum(0.0, 1.0 - np.abs(4.0 * u - 2.0))
    if name == "sine":
        return np.sin(np.pi * u) ** 2
    if name == "ramp":
        return u
    if name == "csv":
        if csv_path is None:
            raise BssError("rkhs.target_csv is required for target 'csv'")
        cols = io.read_csv(csv_path)
        t, v = list(cols.values())[:2]
        return np.interp(grid.times, t, v)
    raise BssError(f"unknown rkhs target {name!r} (hat, sine, ramp, csv)")


def rkhs_f(name: str, grid: simulator.SimGrid):
    span = grid.t_end - grid.t_start
    if name == "one":
        return 1.0
    if name == "linear":
        return lambda s: (s - grid.t_start) / span
    if name == "gap":
        return lambda s: np.where((s >= grid.t_start + 0.4 * span) & (s < grid.t_start + 0.5 * span), 0.0, 1.0)
    raise BssError(f"unknown rkhs f {name!r} (one, linear, gap)")


def cmd_rkhs(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.section("rkhs")
    t0, t1, _ = cfg.window
    grid = simulator.SimGrid(t0, t1, sec["n_steps"])
    target = rkhs_target(sec["target"], grid, sec["target_csv"])
    f = rkhs_f(sec["f"], grid)
    op = rkhs_density.build_operator(cfg.model.g, f, grid)
    fit = rkhs_density.approximate_target(op, target, sec["ridge"])
    run.csv("h_hat.csv", {"s": grid.times[:-1], "h": fit.h_hat})
    steps = []
    for d in sec["deltas"]:
        res = rkhs_density.cherny_two_step(cfg.model.g, f, target, d, grid, sec["ridge"])
        steps.append({"delta": d, **res.to_dict()})
    run.json("rkhs.json", {"sup_error": fit.sup_error, "continuum_error": fit.continuum_error,
                           "ridge": fit.ridge, "target_sup": float(np.max(np.abs(target))),
                           "h_hat_file": "h_hat.csv", "two_step": steps})
    return EXIT_OK


def cmd_probe(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.section("probe")
    model = cfg.model
    t_lower = sec["t_lower"]
    t_upper = model.horizon_T if sec["t_upper"] is None else sec["t_upper"]
    n = round((t_upper - t_lower) / cfg.dt)
    fseed = cfg.seed if sec["frozen_seed"] is None else sec["frozen_seed"]
    setup = cfs_probe.prepare_probe(model, t_lower, cfg.dt, fseed, t_upper)
    eps = sec["epsilon"] if sec["epsilon"] is not None else sec["epsilon_scale"] * setup.path_scale
    available = cfs_probe.standard_targets(t_lower, t_upper, n)
    unknown = [t for t in sec["targets"] if t not in available]
    if unknown:
        raise BssError(f"unknown probe targets {unknown} (choose from {sorted(available)})")
    reports = []
    for k, name in enumerate(sec["targets"]):
        r = cfs_probe.run_probe(setup, available[name], eps, sec["n_trials"], cfg.seed, k, run.workers,
                                sec["monitor_stride"], keep_deviations=sec["write_deviations"])
        reports.append(r)
        print(f"{name:8s} hits={r.hits:7d}/{r.n_trials}  p={r.p_hat:.3g}  wilson=[{r.wilson_lo:.3g}, {r.wilson_hi:.3g}]")
        if sec["write_deviations"]:
            run.csv(f"deviations_{name}.csv", {"trial": np.arange(r.n_trials), "sup_deviation": r.deviations})
    run.json("probe.json", {"targets": sec["targets"], "epsilon": eps,
                            "consistent_with_cfs": cfs_probe.consistent_with_cfs(reports),
                            "reports": [r.to_dict() for r in reports]})
    return EXIT_OK


def cmd_counterexample(run: Run) -> int:
    sec = run.cfg.section("counterexample")
    res = cfs_probe.counterexample_probe(sec["n_trials"], run.cfg.seed, sec["n_steps"], sec["T"], run.workers)
    run.json("counterexample.json", res.to_dict())
    print(f"below_floor hits={res.below_floor.hits}  above_floor hits={res.above_floor.hits}  "
          f"min Z={res.min_exact:.3g}")
    return EXIT_OK


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsscfs", description="Brownian semistationary processes: simulation, "
                                "conditional laws and conditional full support probes.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML config or a run manifest")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(command: str, cfg: ExperimentConfig, out: Path, workers: int = 1) -> int:
    r = Run(cfg, out, workers)
    out.mkdir(parents=True, exist_ok=True)
    status = HANDLERS[command](r)
    (out / "manifest.txt").write_text(manifest_text(cfg, command, versions(), r.files))
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.command is not None and cfg.command != args.command:
            raise BssError(f"manifest records command {cfg.command!r}, not {args.command!r}")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.workers < 1:
            raise BssError("--workers must be >= 1")
        out = Path(args.out if args.out is not None else cfg.output_dir)
        return run(args.command, cfg, out, args.workers)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BssError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

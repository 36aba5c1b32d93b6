"""Experiment runner: INI-style configs in, manifest JSON + CSV artifacts out.

Config files are flat key-value sections. Unknown sections or keys are hard
errors so that typos never silently fall back to defaults. Every run writes
a manifest with the fully resolved configuration; floating-point CSV output
uses 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import problems
from .bilevel import optimize
from .core import NotConvergedError, OracleError, ParamVector, SolverError
from .costs import QuadraticGoalCost
from .dynamics import DoublePendulum, LinearDynamics, Pendulum
from .sensitivity import gradient_from_solution
from .solver import ProblemSpec, SolverOptions, solve_problem
from .upper import (
    CoDesignCost,
    ControlImitationCost,
    QuadraticImitationCost,
    VelocityImitationCost,
)
from .validation import SweepSpec, fd_bilevel_oracle, gradient_error_sweep, gradient_slice


class ConfigError(ValueError):
    pass


PLANTS = ("pendulum", "double_pendulum", "linear")
KINDS = ("solve", "gradcheck", "slice", "sweep", "optimize")
UPPER_COSTS = ("imitation", "velocity_imitation", "quadratic_imitation", "codesign")

_THETA_NAMES = {
    "pendulum": ("rho", "qf"),
    "double_pendulum": ("l1", "l2", "qf"),
    "linear": ("qf",),
}
_THETA_DEFAULTS = {
    "rho": (0.5, (0.05, 2.0)),
    "l1": (0.5, (0.05, 1.0)),
    "l2": (0.5, (0.05, 1.0)),
    "qf": (1e3, (0.5, 2e4)),
}


def _parse_float(text):
    return float(text)


def _parse_int(text):
    return int(text)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_vector(text):
    return [float(tok) for tok in text.split()]


def _parse_choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return text
    return parse


def _schema(plant: str) -> dict:
    names = _THETA_NAMES[plant]
    theta_keys = {name: _parse_float for name in names}
    theta_keys.update({f"{name}_bounds": _parse_vector for name in names})
    return {
        "experiment": {
            "kind": _parse_choice(KINDS),
            "plant": _parse_choice(PLANTS),
            "out": str,
            "seed": _parse_int,
            "workers": _parse_int,
        },
        "problem": {
            "horizon": _parse_int,
            "dt": _parse_float,
            "x0": _parse_vector,
            "goal": _parse_vector,
            "control_weight": _parse_float,
        },
        "theta": theta_keys,
        "data": {name: _parse_float for name in names},
        "solver": {
            "mode": _parse_choice(("ddp", "ilqr")),
            "tol": _parse_float,
            "max_iters": _parse_int,
        },
        "sensitivity": {
            "derivative_mode": _parse_choice(("ddp", "ilqr")),
            "upper_cost": _parse_choice(UPPER_COSTS),
            "velocity_weight": _parse_float,
            "smoothing": _parse_float,
            "codesign_distance": _parse_float,
            "codesign_penalty": _parse_float,
        },
        "sweep": {
            "samples": _parse_int,
            "fd_step": _parse_float,
            "tol": _parse_float,
            "consistency_rtol": _parse_float,
            "inject_optimum": _parse_bool,
            **{f"{name}_range": _parse_vector for name in names},
        },
        "slice": {
            "component": _parse_choice(names),
            "grid": _parse_vector,
            "fd_step": _parse_float,
            "tol": _parse_float,
        },
        "optimize": {
            "rates": _parse_vector,
            "grad_tol": _parse_float,
            "max_outer": _parse_int,
            "divergence_factor": _parse_float,
        },
    }


def parse_config(path: str | Path) -> dict:
    """Parse and validate a config file into a nested dict of typed values."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    plant = parser.get("experiment", "plant", fallback=None)
    if plant not in PLANTS:
        raise ConfigError(f"experiment.plant must be one of {PLANTS}, got {plant!r}")
    schema = _schema(plant)

    config: dict = {}
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}]")
        config[section] = {}
        for key, raw in parser.items(section):
            if key not in schema[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                config[section][key] = schema[section][key](raw)
            except ValueError as err:
                raise ConfigError(f"bad value for [{section}] {key}: {err}") from None
    if "kind" not in config.get("experiment", {}):
        raise ConfigError("missing experiment.kind")
    return config


def serialize_config(config: dict) -> str:
    """Render a resolved config back to INI text (round-trips via parse)."""
    lines = []
    for section in sorted(config):
        lines.append(f"[{section}]")
        for key in sorted(config[section]):
            value = config[section][key]
            if isinstance(value, (list, tuple, np.ndarray)):
                text = " ".join(format(float(v), ".17g") for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = format(value, ".17g")
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return format(float(value), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


class Experiment:
    """Resolved experiment: plant, costs, parameters, and run dispatch."""

    def __init__(self, config: dict, out_dir: Path, seed: int | None, workers: int | None):
        self.config = {section: dict(values) for section, values in config.items()}
        exp = self.config.setdefault("experiment", {})
        exp.setdefault("out", "out")
        exp.setdefault("seed", 0)
        exp.setdefault("workers", 1)
        if seed is not None:
            exp["seed"] = seed
        if workers is not None:
            exp["workers"] = workers
        self.kind = exp["kind"]
        self.plant = exp["plant"]
        self.out_dir = out_dir if out_dir is not None else Path(exp["out"])
        exp["out"] = str(self.out_dir)

        self.model = self._build_model()
        prob = self.config.setdefault("problem", {})
        prob.setdefault("horizon", problems.SWINGUP_HORIZON)
        prob.setdefault("dt", problems.SWINGUP_DT)
        prob.setdefault("x0", [0.0] * self.model.n_x)
        default_goal = [np.pi] + [0.0] * (self.model.n_x - 1)
        if self.plant == "linear":
            default_goal = [1.0] + [0.0] * (self.model.n_x - 1)
        prob.setdefault("goal", default_goal)
        prob.setdefault("control_weight", 1e-2)
        if len(prob["x0"]) != self.model.n_x or len(prob["goal"]) != self.model.n_x:
            raise ConfigError(f"x0 and goal must have {self.model.n_x} components")

        solver = self.config.setdefault("solver", {})
        solver.setdefault("mode", "ilqr")
        solver.setdefault("tol", 1e-12)
        solver.setdefault("max_iters", 500)

        self.theta = self._build_theta()
        self.cost = QuadraticGoalCost(goal=prob["goal"], control_weight=prob["control_weight"])
        self.spec = ProblemSpec(
            x0=np.asarray(prob["x0"], dtype=float),
            horizon=prob["horizon"],
            dt=prob["dt"],
            mode=solver["mode"],
            options=SolverOptions(tol=solver["tol"], max_iters=solver["max_iters"]),
        )

    def _build_model(self):
        if self.plant == "pendulum":
            return Pendulum()
        if self.plant == "double_pendulum":
            return DoublePendulum()
        dt = self.config.get("problem", {}).get("dt", problems.SWINGUP_DT)
        return LinearDynamics(A=[[1.0, dt], [0.0, 1.0]], B=[[0.0], [dt]])

    def _build_theta(self) -> ParamVector:
        names = _THETA_NAMES[self.plant]
        section = self.config.setdefault("theta", {})
        values, bounds = [], []
        for name in names:
            default_value, default_bounds = _THETA_DEFAULTS[name]
            values.append(section.setdefault(name, default_value))
            b = section.setdefault(f"{name}_bounds", list(default_bounds))
            if len(b) != 2:
                raise ConfigError(f"{name}_bounds needs two values")
            bounds.append(tuple(b))
        return ParamVector(values, names, bounds)

    def _data_theta(self) -> ParamVector:
        section = self.config.setdefault("data", {})
        values = [section.setdefault(name, self.theta.get(name)) for name in self.theta.names]
        return self.theta.with_values(values, relax_bounds=True)

    def _upper_cost(self, spec: ProblemSpec):
        sens = self.config.setdefault("sensitivity", {})
        sens.setdefault("derivative_mode", "ddp")
        sens.setdefault("upper_cost", "imitation")
        sens.setdefault("velocity_weight", 1.0)
        sens.setdefault("smoothing", 1e-9)
        sens.setdefault("codesign_distance", 0.6)
        sens.setdefault("codesign_penalty", 1e3)
        kind = sens["upper_cost"]
        if kind == "codesign":
            length_names = tuple(n for n in self.theta.names if n != "qf")
            return CoDesignCost(
                distance=sens["codesign_distance"],
                penalty=sens["codesign_penalty"],
                length_names=length_names,
            )
        # data-generating solve shares the experiment's solve settings so a
        # re-solve at the data parameters reproduces the targets exactly
        targets = problems.imitation_controls(self.model, self.cost, self._data_theta(), spec)
        if kind == "imitation":
            return ControlImitationCost(targets, smoothing=sens["smoothing"])
        if kind == "velocity_imitation":
            return VelocityImitationCost(
                targets, smoothing=sens["smoothing"], velocity_weight=sens["velocity_weight"]
            )
        return QuadraticImitationCost(targets)

    def run(self) -> dict:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        summary = getattr(self, f"_run_{self.kind}")()
        manifest = {
            "config": self.config,
            "config_text": serialize_config(self.config),
            "seed": self.config["experiment"]["seed"],
            "versions": {
                "diffoc": _package_version(),
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "summary": summary,
        }
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return summary

    def _run_solve(self) -> dict:
        result = solve_problem(self.model, self.cost, self.theta, self.spec)
        if not result.converged:
            raise NotConvergedError(
                f"solve did not converge (metric {result.conv_metric:.3e})"
            )
        width = max(self.model.n_x, self.model.n_u)
        header = ["kind", "knot"] + [f"v{i}" for i in range(width)]
        rows = []
        for t, x in enumerate(result.trajectory.states):
            rows.append(["state", t] + list(x) + [None] * (width - self.model.n_x))
        for t, u in enumerate(result.trajectory.controls):
            rows.append(["control", t] + list(u) + [None] * (width - self.model.n_u))
        _write_csv(self.out_dir / "trajectory.csv", header, rows)
        return {
            "converged": bool(result.converged),
            "conv_metric": result.conv_metric,
            "iterations": result.iterations,
            "total_cost": result.cost_history[-1],
        }

    def _run_gradcheck(self) -> dict:
        sweep = self.config.setdefault("sweep", {})
        tol = sweep.setdefault("tol", 1e-14)
        fd_step = sweep.setdefault("fd_step", 1e-5)
        tight = replace(self.spec, options=replace(self.spec.options, tol=tol))
        ul = self._upper_cost(tight)
        result = solve_problem(self.model, self.cost, self.theta, tight, tape_order="full")
        if not result.converged:
            raise NotConvergedError("gradcheck solve did not converge")
        g_ddp = gradient_from_solution(result, ul, "ddp").grad
        g_ilqr = gradient_from_solution(result, ul, "ilqr").grad
        oracle = fd_bilevel_oracle(
            self.model, self.cost, ul, self.theta, tight, h=fd_step, base=result, tol=tol
        )
        header = ["component", "grad_ddp", "grad_ilqr", "grad_oracle", "abs_err_ddp", "abs_err_ilqr"]
        rows = [
            [name, g_ddp[i], g_ilqr[i], oracle[i], abs(g_ddp[i] - oracle[i]), abs(g_ilqr[i] - oracle[i])]
            for i, name in enumerate(self.theta.names)
        ]
        _write_csv(self.out_dir / "gradients.csv", header, rows)
        return {
            "gerr_ddp": float(np.abs(g_ddp - oracle).sum()),
            "gerr_ilqr": float(np.abs(g_ilqr - oracle).sum()),
        }

    def _run_slice(self) -> dict:
        section = self.config.setdefault("slice", {})
        component = section.setdefault("component", self.theta.names[0])
        grid_spec = section.setdefault("grid", [0.1, 1.0, 19])
        if len(grid_spec) != 3:
            raise ConfigError("slice.grid must be: low high npoints")
        tol = section.setdefault("tol", 1e-14)
        fd_step = section.setdefault("fd_step", 1e-5)
        tight = replace(self.spec, options=replace(self.spec.options, tol=tol))
        ul = self._upper_cost(tight)
        grid = np.linspace(grid_spec[0], grid_spec[1], int(grid_spec[2]))
        result = gradient_slice(
            self.model, self.cost, ul, self.spec, self.theta, component, grid,
            tol=tol, fd_step=fd_step,
        )
        header = ["value", "converged", "grad_ddp", "grad_ilqr", "grad_oracle"]
        rows = []
        for p in result.points:
            rows.append([
                p.value,
                p.converged,
                None if p.grad_ddp is None else p.grad_ddp[result.index],
                None if p.grad_ilqr is None else p.grad_ilqr[result.index],
                None if p.grad_oracle is None else p.grad_oracle[result.index],
            ])
        _write_csv(self.out_dir / "slice.csv", header, rows)
        missing = sum(1 for p in result.points if not p.converged)
        return {"component": component, "points": len(result.points), "missing": missing}

    def _run_sweep(self) -> dict:
        section = self.config.setdefault("sweep", {})
        samples = section.setdefault("samples", 100)
        fd_step = section.setdefault("fd_step", 1e-5)
        tol = section.setdefault("tol", 1e-14)
        tight = replace(self.spec, options=replace(self.spec.options, tol=tol))
        ul = self._upper_cost(tight)
        consistency = section.setdefault("consistency_rtol", 1e-4)
        inject = section.setdefault("inject_optimum", False)
        ranges = {}
        for name in self.theta.names:
            key = f"{name}_range"
            if key in section:
                lo, hi = section[key]
                ranges[name] = (lo, hi)
        if not ranges:
            raise ConfigError("sweep needs at least one <component>_range")
        spec = SweepSpec(
            ranges=ranges,
            samples=samples,
            seed=self.config["experiment"]["seed"],
            tol=tol,
            fd_step=fd_step,
            consistency_rtol=consistency,
            workers=self.config["experiment"]["workers"],
        )
        report = gradient_error_sweep(
            spec, self.model, self.cost, ul, self.spec, self.theta,
            inject=self._data_theta() if inject else None,
        )
        header = (
            ["sample_id"]
            + list(self.theta.names)
            + ["gerr_ddp", "gerr_ilqr", "sign_ok_ddp", "sign_ok_ilqr",
               "oracle_consistent", "injected", "resamples"]
        )
        rows = []
        for i, s in enumerate(report.samples):
            rows.append(
                [i]
                + list(s.theta)
                + [
                    s.err_ddp.sum(),
                    s.err_ilqr.sum(),
                    bool(np.all(s.sign_ok_ddp[s.classified])) if np.any(s.classified) else None,
                    bool(np.all(s.sign_ok_ilqr[s.classified])) if np.any(s.classified) else None,
                    bool(np.all(s.oracle_consistent)),
                    s.injected,
                    s.resamples,
                ]
            )
        _write_csv(self.out_dir / "sweep.csv", header, rows)

        sum_header = ["scope", "method", "n", "min_err", "max_err", "mean_err",
                      "sign_errors", "classified_samples"]
        sum_rows = []
        scopes = [("all", True)] + ([("random_only", False)] if inject else [])
        for scope, include in scopes:
            for method in ("ddp", "ilqr"):
                s = report.summary(method, include_injected=include)
                sum_rows.append([scope, method, s["n"], s["min_err"], s["max_err"],
                                 s["mean_err"], s["sign_errors"], s["classified_samples"]])
        _write_csv(self.out_dir / "summary.csv", sum_header, sum_rows)
        return {
            "samples": len(report.samples),
            "resamples": int(sum(s.resamples for s in report.samples)),
            "ddp": report.summary("ddp"),
            "ilqr": report.summary("ilqr"),
        }

    def _run_optimize(self) -> dict:
        ul = self._upper_cost(self.spec)
        section = self.config.setdefault("optimize", {})
        rates = section.setdefault("rates", [1e-3] * len(self.theta))
        grad_tol = section.setdefault("grad_tol", 1e-6)
        max_outer = section.setdefault("max_outer", 500)
        divergence = section.setdefault("divergence_factor", 10.0)
        if len(rates) != len(self.theta):
            raise ConfigError(f"optimize.rates needs {len(self.theta)} values")
        sens = self.config["sensitivity"]
        run = optimize(
            self.model, self.cost, ul, self.theta, self.spec, rates,
            derivative_mode=sens["derivative_mode"],
            grad_tol=grad_tol, max_iters=max_outer, divergence_factor=divergence,
        )
        header = (
            ["iteration"] + list(self.theta.names)
            + ["objective", "grad_inf", "inner_iterations", "inner_converged"]
        )
        rows = []
        for k, it in enumerate(run.history):
            rows.append([k] + list(it.theta) + [it.objective, it.grad_inf,
                                                it.inner_iterations, it.inner_converged])
        _write_csv(self.out_dir / "history.csv", header, rows)
        return {
            "stop": run.stop,
            "iterations": len(run.history),
            "final_theta": {n: run.theta.get(n) for n in self.theta.names},
            "final_objective": run.history[-1].objective,
        }


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("diffoc")
    except Exception:
        return "unknown"


def run(config_path: str, out: str | None = None, seed: int | None = None,
        workers: int | None = None) -> int:
    """Execute one experiment config; returns the process exit code."""
    try:
        config = parse_config(config_path)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        experiment = Experiment(config, Path(out) if out else None, seed, workers)
        experiment.run()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (NotConvergedError, SolverError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 3
    except OracleError as err:
        print(f"oracle failure: {err}", file=sys.stderr)
        return 4
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="diffoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment config")
    runp.add_argument("config", help="path to the INI config file")
    runp.add_argument("--out", default=None, help="output directory (overrides config)")
    runp.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
    runp.add_argument("--workers", type=int, default=None, help="sweep worker count")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out, args.seed, args.workers)
    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Ground-truth oracles and the gradient-error experiment protocols.

The finite-difference oracle re-solves the inner problem at perturbed
parameters and differences the upper-level objective; it is independent of
the sensitivity pass and serves as the reference everywhere. The sweep
protocol samples parameters, compares sensitivity gradients of both
derivative modes against the oracle, and classifies sign agreement with a
dead band so that near-zero reference gradients never count as sign errors.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import NotConvergedError, OracleError, ParamVector, SolverError
from .costs import CostModel
from .dynamics import DynamicsModel
from .sensitivity import gradient_from_solution
from .solver import ProblemSpec, SolveResult, solve_problem
from .upper import UpperLevelCost

_ORACLE_TOL = 1e-14


def _fd_scales(theta: ParamVector) -> np.ndarray:
    # Natural per-component step scale: absolute for order-one components,
    # relative for large ones (the terminal weight spans decades).
    return np.maximum(1.0, np.abs(theta.values))


def _tight(problem: ProblemSpec, tol: float) -> ProblemSpec:
    options = replace(problem.options, tol=min(problem.options.tol, tol))
    return replace(problem, options=options)


def fd_bilevel_oracle(
    model: DynamicsModel,
    cost: CostModel,
    ul_cost: UpperLevelCost,
    theta: ParamVector,
    problem: ProblemSpec,
    h: float = 1e-5,
    base: SolveResult | None = None,
    tol: float = _ORACLE_TOL,
) -> np.ndarray:
    """Central differences of theta -> upper cost at the re-solved optimum.

    Every perturbed solve runs to a tight convergence threshold so that
    truncation, not solver error, dominates the result. Perturbed solves are
    warm-started from the base solution and fall back to a cold start; a
    perturbation whose solve still fails raises OracleError naming it.

    Args:
        h: step on the natural scale of each component (absolute for
            order-one components, relative for large ones).
        base: optional converged solve at theta used for warm starts.
        tol: convergence threshold for the inner solves; the float64 floor
            scales with the cost magnitude, so heavier plants need it looser.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    tight = _tight(problem, tol)
    if base is None or not base.converged:
        base = solve_problem(model, cost, theta, tight)
        if not base.converged:
            raise OracleError("oracle base solve did not converge")
    warm = base.trajectory.controls

    steps = h * _fd_scales(theta)
    grad = np.zeros(len(theta))
    for i in range(len(theta)):
        values = {}
        for sign in (+1.0, -1.0):
            v = theta.values.copy()
            v[i] += sign * steps[i]
            th = theta.with_values(v, relax_bounds=True)
            result = None
            try:
                result = solve_problem(model, cost, th, tight, initial_controls=warm)
            except SolverError:
                result = None
            if result is None or not result.converged:
                try:
                    result = solve_problem(model, cost, th, tight)
                except SolverError:
                    result = None
            if result is None or not result.converged:
                raise OracleError(
                    f"perturbed solve failed for component {theta.names[i]!r} "
                    f"({'+' if sign > 0 else '-'}{steps[i]:g})"
                )
            values[sign] = ul_cost.value(result.trajectory, th)
        grad[i] = (values[1.0] - values[-1.0]) / (2.0 * steps[i])
    return grad


@dataclass(frozen=True)
class SweepSpec:
    """Configuration of a gradient-error sweep."""

    ranges: dict[str, tuple[float, float]]
    samples: int = 100
    seed: int = 0
    resample: bool = True
    max_resamples: int = 50
    tol: float = 1e-14          # inner solve threshold for samples and oracle
    fd_step: float = 1e-5
    deadband_scale: float = 1e-6
    consistency_rtol: float = 1e-4
    workers: int = 1


@dataclass(frozen=True)
class GradSample:
    theta: np.ndarray
    grad_ddp: np.ndarray
    grad_ilqr: np.ndarray
    grad_oracle: np.ndarray
    err_ddp: np.ndarray
    err_ilqr: np.ndarray
    oracle_consistent: np.ndarray  # per-component bool
    resamples: int
    injected: bool = False
    # sign classification is filled in after the dead band is known
    classified: np.ndarray | None = None
    sign_ok_ddp: np.ndarray | None = None
    sign_ok_ilqr: np.ndarray | None = None


@dataclass(frozen=True)
class GradReport:
    """Per-sample gradient errors plus the dead band used for sign counting."""

    samples: list[GradSample]
    deadband: np.ndarray
    seed: int

    def gerr(self, method: str) -> np.ndarray:
        return np.array([getattr(s, f"err_{method}").sum() for s in self.samples])

    def sign_errors(self, method: str, include_injected: bool = True) -> int:
        count = 0
        for s in self.samples:
            if s.injected and not include_injected:
                continue
            ok = getattr(s, f"sign_ok_{method}")
            if np.any(s.classified & ~ok):
                count += 1
        return count

    def summary(self, method: str, include_injected: bool = True) -> dict:
        mask = np.array([include_injected or not s.injected for s in self.samples])
        gerr = self.gerr(method)[mask]
        classified = sum(
            1
            for s in self.samples
            if (include_injected or not s.injected) and np.any(s.classified)
        )
        return {
            "method": method,
            "n": int(mask.sum()),
            "min_err": float(gerr.min()),
            "max_err": float(gerr.max()),
            "mean_err": float(gerr.mean()),
            "sign_errors": self.sign_errors(method, include_injected),
            "classified_samples": classified,
        }


def _sweep_one(args) -> GradSample:
    (model, cost, ul_cost, problem, theta_template, spec, values, child_seed, injected) = args
    rng = np.random.default_rng(child_seed)
    names = theta_template.names
    lows = np.array([spec.ranges[n][0] if n in spec.ranges else theta_template.get(n) for n in names])
    highs = np.array([spec.ranges[n][1] if n in spec.ranges else theta_template.get(n) for n in names])

    tight = _tight(problem, spec.tol)
    resamples = 0
    while True:
        theta = theta_template.with_values(values)
        try:
            result = solve_problem(model, cost, theta, tight, tape_order="full")
            if not result.converged:
                raise OracleError("inner solve stalled")
            g_ddp = gradient_from_solution(result, ul_cost, "ddp").grad
            g_ilqr = gradient_from_solution(result, ul_cost, "ilqr").grad
            oracle = fd_bilevel_oracle(
                model, cost, ul_cost, theta, tight, h=spec.fd_step, base=result, tol=spec.tol
            )
            oracle_half = fd_bilevel_oracle(
                model, cost, ul_cost, theta, tight,
                h=0.5 * spec.fd_step, base=result, tol=spec.tol,
            )
            break
        except (SolverError, OracleError) as err:
            if not spec.resample or injected:
                raise OracleError(f"sample at theta={values} failed: {err}") from None
            resamples += 1
            if resamples > spec.max_resamples:
                raise OracleError(f"exceeded {spec.max_resamples} resamples") from None
            values = lows + (highs - lows) * rng.random(len(names))

    consistent = np.abs(oracle - oracle_half) <= spec.consistency_rtol * np.maximum(
        np.maximum(np.abs(oracle), np.abs(oracle_half)), 1e-12
    )
    return GradSample(
        theta=theta.values.copy(),
        grad_ddp=g_ddp,
        grad_ilqr=g_ilqr,
        grad_oracle=oracle,
        err_ddp=np.abs(g_ddp - oracle),
        err_ilqr=np.abs(g_ilqr - oracle),
        oracle_consistent=consistent,
        resamples=resamples,
        injected=injected,
    )


def gradient_error_sweep(
    spec: SweepSpec,
    model: DynamicsModel,
    cost: CostModel,
    ul_cost: UpperLevelCost,
    problem: ProblemSpec,
    theta_template: ParamVector,
    inject: ParamVector | None = None,
) -> GradReport:
    """Sample parameters, compare both derivative modes against the oracle.

    ``inject`` appends one extra, known parameter point (the data-generating
    optimum) after the random samples. Identical specs produce identical
    reports; per-sample random streams make the result independent of the
    worker count.
    """
    names = theta_template.names
    for name in spec.ranges:
        if name not in names:
            raise KeyError(f"range given for unknown component {name!r}")
    seed_seq = np.random.SeedSequence(spec.seed)
    children = seed_seq.spawn(spec.samples)
    lows = np.array([spec.ranges[n][0] if n in spec.ranges else theta_template.get(n) for n in names])
    highs = np.array([spec.ranges[n][1] if n in spec.ranges else theta_template.get(n) for n in names])

    jobs = []
    for i in range(spec.samples):
        rng = np.random.default_rng(children[i])
        values = lows + (highs - lows) * rng.random(len(names))
        jobs.append(
            (model, cost, ul_cost, problem, theta_template, spec, values, children[i].spawn(1)[0], False)
        )
    if inject is not None:
        jobs.append(
            (model, cost, ul_cost, problem, theta_template, spec, inject.values.copy(),
             seed_seq.spawn(1)[0], True)
        )

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            samples = list(pool.map(_sweep_one, jobs))
    else:
        samples = [_sweep_one(job) for job in jobs]

    oracle = np.array([s.grad_oracle for s in samples])
    deadband = spec.deadband_scale * (1.0 + np.median(np.abs(oracle), axis=0))
    finished = []
    for s in samples:
        classified = (np.abs(s.grad_oracle) > deadband) & s.oracle_consistent
        finished.append(
            replace(
                s,
                classified=classified,
                sign_ok_ddp=np.sign(s.grad_ddp) == np.sign(s.grad_oracle),
                sign_ok_ilqr=np.sign(s.grad_ilqr) == np.sign(s.grad_oracle),
            )
        )
    return GradReport(samples=finished, deadband=deadband, seed=spec.seed)


@dataclass(frozen=True)
class SlicePoint:
    value: float
    converged: bool
    grad_ddp: np.ndarray | None
    grad_ilqr: np.ndarray | None
    grad_oracle: np.ndarray | None


@dataclass(frozen=True)
class SliceResult:
    component: str
    index: int
    points: list[SlicePoint]

    def curve(self, method: str) -> np.ndarray:
        """Swept-component gradient per grid point; NaN where missing."""
        out = np.full(len(self.points), np.nan)
        for i, p in enumerate(self.points):
            g = getattr(p, f"grad_{method}")
            if g is not None:
                out[i] = g[self.index]
        return out


def gradient_slice(
    model: DynamicsModel,
    cost: CostModel,
    ul_cost: UpperLevelCost,
    problem: ProblemSpec,
    theta: ParamVector,
    component: str,
    grid: np.ndarray,
    tol: float = 1e-14,
    fd_step: float = 1e-5,
) -> SliceResult:
    """Sweep one parameter component over a grid, all gradients per point.

    Points whose inner solve fails are marked non-converged and skipped, not
    fatal.
    """
    index = theta.index(component)
    tight = _tight(problem, tol)
    points = []
    for value in np.asarray(grid, dtype=float):
        v = theta.values.copy()
        v[index] = value
        th = theta.with_values(v, relax_bounds=True)
        try:
            result = solve_problem(model, cost, th, tight, tape_order="full")
        except SolverError:
            result = None
        if result is None or not result.converged:
            points.append(SlicePoint(value, False, None, None, None))
            continue
        g_ddp = gradient_from_solution(result, ul_cost, "ddp").grad
        g_ilqr = gradient_from_solution(result, ul_cost, "ilqr").grad
        try:
            oracle = fd_bilevel_oracle(
                model, cost, ul_cost, th, tight, h=fd_step, base=result, tol=tol
            )
        except OracleError:
            oracle = None
        points.append(SlicePoint(float(value), True, g_ddp, g_ilqr, oracle))
    return SliceResult(component=component, index=index, points=points)

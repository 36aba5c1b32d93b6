"""Shared value types: named parameter vectors, trajectories, dense tensor helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DynamicsError(RuntimeError):
    """A dynamics evaluation produced a non-finite state.

    ``knot`` is the trajectory index at which the rollout failed, when known.
    """

    def __init__(self, message: str, knot: int | None = None):
        super().__init__(message)
        self.knot = knot


class SolverError(RuntimeError):
    """Trajectory optimization could not proceed (regularization exhausted)."""


class NotConvergedError(RuntimeError):
    """A sensitivity pass was requested on a solve that did not converge."""


class OracleError(RuntimeError):
    """A finite-difference oracle refused to produce a value."""


@dataclass(frozen=True)
class ParamVector:
    """Hyper-parameter vector with named components and box bounds.

    Args:
        values: component values, shape (n,).
        names: one label per component.
        bounds: closed intervals, shape (n, 2); use +-inf for unbounded sides.
    """

    values: np.ndarray
    names: tuple[str, ...]
    bounds: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        names = tuple(self.names)
        bounds = np.asarray(self.bounds, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "bounds", bounds)
        if values.ndim != 1:
            raise ValueError(f"values must be 1-d, got shape {values.shape}")
        if len(names) != values.size:
            raise ValueError(f"{len(names)} names for {values.size} values")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate component names in {names}")
        if bounds.shape != (values.size, 2):
            raise ValueError(f"bounds must have shape ({values.size}, 2), got {bounds.shape}")
        bad = [
            names[i]
            for i in range(values.size)
            if not (bounds[i, 0] <= values[i] <= bounds[i, 1])
        ]
        if bad:
            raise ValueError(f"values out of bounds for components {bad}")

    def __len__(self) -> int:
        return self.values.size

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no component named {name!r}; have {self.names}") from None

    def get(self, name: str) -> float:
        return float(self.values[self.index(name)])

    def with_values(self, values, *, relax_bounds: bool = False) -> "ParamVector":
        """Same names/bounds with new values.

        ``relax_bounds`` widens the bounds to contain the new values; finite
        difference probes use it to step across a bound edge.
        """
        values = np.asarray(values, dtype=float)
        bounds = self.bounds
        if relax_bounds:
            bounds = np.column_stack(
                [np.minimum(bounds[:, 0], values), np.maximum(bounds[:, 1], values)]
            )
        return ParamVector(values, self.names, bounds)

    def clip(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self.bounds[:, 0], self.bounds[:, 1])


@dataclass(frozen=True)
class Trajectory:
    """Discrete-time trajectory: T states, T-1 controls, fixed timestep."""

    states: np.ndarray    # (T, n_x)
    controls: np.ndarray  # (T-1, n_u)
    dt: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        if states.ndim != 2 or controls.ndim != 2:
            raise ValueError("states and controls must be 2-d arrays")
        if states.shape[0] != controls.shape[0] + 1:
            raise ValueError(
                f"{states.shape[0]} states need {states.shape[0] - 1} controls, "
                f"got {controls.shape[0]}"
            )
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]


def tensor_contract_left(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Contract a vector with the leading axis of a rank-3 tensor.

    Returns the matrix sum_o v[o] * t[o, :, :]; this is the product that
    folds second-order dynamics tensors against a value gradient.
    """
    v = np.asarray(v, dtype=float)
    t = np.asarray(t, dtype=float)
    if v.ndim != 1 or t.ndim != 3 or v.shape[0] != t.shape[0]:
        raise ValueError(
            f"cannot contract vector of shape {v.shape} with tensor of shape {t.shape}"
        )
    return np.einsum("o,oab->ab", v, t)

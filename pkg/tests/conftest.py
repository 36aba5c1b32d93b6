import warnings
from dataclasses import replace

import numpy as np
import pytest

import diffoc as oc
from diffoc.problems import (
    double_pendulum_setup,
    double_pendulum_theta,
    imitation_controls,
    pendulum_setup,
    pendulum_theta,
)

# Line-search candidates may overflow before they are rejected; silence the
# stream of numpy warnings that produces.
warnings.filterwarnings("ignore", category=RuntimeWarning)


@pytest.fixture(scope="session")
def pendulum_problem():
    model, cost, problem = pendulum_setup()
    return model, cost, problem


@pytest.fixture(scope="session")
def pendulum_tight(pendulum_problem):
    model, cost, problem = pendulum_problem
    return model, cost, replace(problem, options=replace(problem.options, tol=1e-14))


@pytest.fixture(scope="session")
def pendulum_imitation(pendulum_tight):
    """Pendulum swing-up imitation setup at the data parameters."""
    model, cost, problem = pendulum_tight
    theta_data = pendulum_theta(0.5, 1e3)
    targets = imitation_controls(model, cost, theta_data, problem)
    return model, cost, problem, theta_data, oc.ControlImitationCost(targets)


@pytest.fixture(scope="session")
def double_pendulum_imitation():
    """Double-pendulum velocity-augmented imitation setup."""
    model, cost, problem = double_pendulum_setup()
    problem = replace(problem, options=replace(problem.options, tol=1e-13))
    theta_data = double_pendulum_theta(0.5, 0.5, 1e3)
    targets = imitation_controls(model, cost, theta_data, problem)
    ul = oc.VelocityImitationCost(targets, velocity_weight=10.0)
    return model, cost, problem, theta_data, ul


def rollout_random(model, theta, rng, horizon=8, dt=0.01, scale=1.0):
    controls = scale * rng.standard_normal((horizon - 1, model.n_u))
    x0 = 0.3 * rng.standard_normal(model.n_x)
    return oc.rollout(model, theta, x0, controls, dt)

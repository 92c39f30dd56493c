"""Empirical Lagrangian, its theta-gradient and the constraint statistics.

All empirical means are plain sums over the sample axis in index order
divided by N, so results are reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (ConstrainedProblem, ConstraintSpec, Dataset, DomainError, DualState,
                   bernoulli_kl_grads, eval_loss, eval_loss_gradient)
from .models import Parameterization, backward, forward


@dataclass(frozen=True)
class EmpiricalStats:
    objective: float
    constraint_values: np.ndarray
    slacks: np.ndarray


def _check_dims(model: Parameterization, data: Dataset):
    if data.dimension != model.input_dim:
        raise DomainError(f"data dimension {data.dimension} != model input dimension {model.input_dim}")


def _paired_inputs(data: Dataset, constraint: ConstraintSpec):
    if data.protected_slot is None:
        raise DomainError(f"constraint {constraint.name!r} needs a protected column")
    first, second = data.counterfactual_a, data.counterfactual_b
    return (second, first) if constraint.swap else (first, second)


def paired_constraint_stats(model: Parameterization, data: Dataset, constraint: ConstraintSpec) -> float:
    """Mean over samples of KL(f(x, z:=A) || f(x, z:=B))."""
    _check_dims(model, data)
    Xp, Xq = _paired_inputs(data, constraint)
    p, _ = forward(model, Xp)
    q, _ = forward(model, Xq)
    return float(np.sum(eval_loss(constraint.loss, p, q)) / len(data))


def _paired_value_grad(model, data, constraint):
    Xp, Xq = _paired_inputs(data, constraint)
    p, tp = forward(model, Xp)
    q, tq = forward(model, Xq)
    n = len(data)
    value = float(np.sum(eval_loss(constraint.loss, p, q)) / n)
    dp, dq = bernoulli_kl_grads(constraint.loss, p, q)
    grad = (backward(model, tp, dp) + backward(model, tq, dq)) / n
    return value, grad


def empirical_stats(problem: ConstrainedProblem, model: Parameterization, data: Dataset) -> EmpiricalStats:
    _check_dims(model, data)
    n = len(data)
    pred, _ = forward(model, data.X)
    objective = float(np.sum(eval_loss(problem.objective, pred, data.y)) / n)
    values = []
    for c in problem.constraints:
        if c.paired:
            values.append(paired_constraint_stats(model, data, c))
        else:
            values.append(float(np.sum(eval_loss(c.loss, pred, data.y)) / n))
    values = np.array(values, dtype=float)
    return EmpiricalStats(objective, values, values - problem.thresholds)


def _check_duals(problem: ConstrainedProblem, duals: DualState):
    if duals.m != problem.m:
        raise DomainError(f"expected {problem.m} multipliers, got {duals.m}")
    if not duals.is_feasible():
        raise DomainError("multipliers must be nonnegative")


def empirical_lagrangian(problem: ConstrainedProblem, model: Parameterization,
                         duals: DualState, data: Dataset) -> float:
    _check_duals(problem, duals)
    stats = empirical_stats(problem, model, data)
    return stats.objective + float(np.dot(duals.lambdas, stats.slacks))


def weighted_gradient(problem: ConstrainedProblem, model: Parameterization,
                      data: Dataset, weights) -> np.ndarray:
    """Gradient in theta of mean[l0] + sum_i w_i mean[l_i].

    Terms with weight exactly zero are skipped, so a zero weight gives the
    same floating-point result as dropping the constraint.
    """
    _check_dims(model, data)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size != problem.m:
        raise DomainError(f"expected {problem.m} weights, got {weights.size}")
    n = len(data)
    pred, trace = forward(model, data.X)
    upstream = eval_loss_gradient(problem.objective, pred, data.y)
    paired = []
    for w, c in zip(weights, problem.constraints):
        if w == 0:
            continue
        if c.paired:
            paired.append((w, c))
        else:
            upstream = upstream + w * eval_loss_gradient(c.loss, pred, data.y)
    grad = backward(model, trace, upstream) / n
    for w, c in paired:
        grad = grad + w * _paired_value_grad(model, data, c)[1]
    return grad


def lagrangian_gradient_theta(problem: ConstrainedProblem, model: Parameterization,
                              duals: DualState, data: Dataset) -> np.ndarray:
    # The thresholds are constant in theta, so they drop out.
    _check_duals(problem, duals)
    return weighted_gradient(problem, model, data, duals.lambdas)

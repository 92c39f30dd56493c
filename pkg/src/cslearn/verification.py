"""Independent oracles for convex instances and KKT/concavity certificates.

The primal oracle evaluates linear models with its own matrix algebra and
minimizes an augmented Lagrangian with L-BFGS, so it shares only the loss
formulas with the primal-dual trainer it checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .core import (ConstrainedProblem, ConstraintSpec, Dataset, DomainError, DualState, LossSpec,
                   eval_loss, eval_loss_gradient)
from .lagrangian import (empirical_lagrangian, empirical_stats, lagrangian_gradient_theta,
                         weighted_gradient)
from .models import Box, LinearKind, Parameterization, Unbounded, init_params
from .optimizer import TrainConfig, train_dual


class InfeasibleInstanceError(RuntimeError):
    pass


def shifted_squared(offset: float, bound: float = 10.0, lipschitz: float = 10.0) -> LossSpec:
    """(v - y - offset)^2: squared error against a shifted target."""
    return LossSpec.custom(lambda v, y: (v - y - offset) ** 2,
                           lambda v, y: 2.0 * (v - y - offset), bound, lipschitz)


def squared_magnitude(bound: float = 10.0, lipschitz: float = 10.0) -> LossSpec:
    """v^2: energy of the prediction, label ignored."""
    return LossSpec.custom(lambda v, y: v ** 2, lambda v, y: 2.0 * v, bound, lipschitz)


@dataclass(frozen=True)
class ConvexInstance:
    instance_id: int
    problem: ConstrainedProblem
    data: Dataset
    feasible_theta: np.ndarray
    bias: bool = True

    def model(self, seed: int = 0) -> Parameterization:
        return init_params(LinearKind(self.bias), self.data.dimension, seed)

    @property
    def curvature(self) -> float:
        """Largest eigenvalue of the Hessian of mean (x.theta - t)^2."""
        Xt = _design(self.data.X, self.bias)
        return float(2.0 * np.linalg.eigvalsh(Xt.T @ Xt / len(self.data))[-1])


def _design(X, bias):
    return np.hstack([X, np.ones((X.shape[0], 1))]) if bias else X


def random_convex_instance(seed: int, max_dim: int = 5, max_n: int = 200) -> ConvexInstance:
    """Least squares under one or two convex quadratic constraints.

    Thresholds sit a margin above the constraint values of a reference
    model, which is therefore strictly feasible.
    """
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(40, max_n + 1))
    X = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = X @ w + 0.3 * rng.normal(size=n)
    Xt = _design(X, True)
    theta_ls = np.linalg.lstsq(Xt, y, rcond=None)[0]
    m = int(rng.integers(1, 3))
    offset = float(rng.choice([-1, 1]) * rng.uniform(0.5, 1.5))
    # Distinct constraint types so the multipliers are unique.
    losses = [shifted_squared(offset), squared_magnitude()]
    if m == 1:
        losses = [losses[int(rng.integers(2))]]
    # Reference model: shrink the least-squares fit toward zero and shift it.
    ref = theta_ls * rng.uniform(0.3, 0.8)
    ref[-1] += rng.uniform(-0.5, 0.5)
    pred_ref = Xt @ ref
    constraints = []
    for i, loss in enumerate(losses):
        value = float(np.mean(eval_loss(loss, pred_ref, y)))
        margin = rng.uniform(0.05, 0.3) * value + 0.01
        constraints.append(ConstraintSpec(loss, value + margin, f"c{i}"))
    problem = ConstrainedProblem(LossSpec.squared_error(), tuple(constraints))
    return ConvexInstance(seed, problem, Dataset(X, y), ref)


def clipped_least_squares_instance() -> ConvexInstance:
    """min mean (theta - y)^2 over y in {0, 1} s.t. theta^2 <= 1/16.

    The minimizer is theta = 0.25 with value 0.3125 and multiplier 1.
    """
    data = Dataset(np.ones((2, 1)), np.array([0.0, 1.0]))
    problem = ConstrainedProblem(LossSpec.squared_error(),
                                 (ConstraintSpec(squared_magnitude(), 0.0625, "upper"),))
    return ConvexInstance(-1, problem, data, np.array([0.0]), bias=False)


@dataclass
class PrimalSolution:
    model: Parameterization
    value: float
    multipliers: np.ndarray
    max_slack: float
    outer_iterations: int


def _linear_terms(problem: ConstrainedProblem, Xt: np.ndarray, y: np.ndarray, theta):
    v = Xt @ theta
    n = len(y)
    f = float(np.sum(eval_loss(problem.objective, v, y)) / n)
    gf = Xt.T @ eval_loss_gradient(problem.objective, v, y) / n
    g = np.array([np.sum(eval_loss(c.loss, v, y)) / n - c.threshold for c in problem.constraints])
    G = np.array([Xt.T @ eval_loss_gradient(c.loss, v, y) / n for c in problem.constraints])
    return f, gf, g, G.reshape(len(problem.constraints), Xt.shape[1])


def solve_primal_projected(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
                           tol: float = 1e-9, max_iters: int = 60) -> PrimalSolution:
    """Solve the empirical constrained problem directly for a linear model.

    Augmented-Lagrangian outer loop; the penalty doubles whenever the
    constraint violation fails to shrink by a factor of 4. Every outer
    subproblem is minimized with L-BFGS(-B) to high accuracy.
    """
    if not isinstance(model.kind, LinearKind):
        raise DomainError("the primal oracle handles linear models only")
    if any(c.paired for c in problem.constraints):
        raise DomainError("the primal oracle does not handle paired constraints")
    H = model.admissible
    if isinstance(H, Box):
        bounds = [(H.lo, H.hi)] * model.num_params
    elif isinstance(H, Unbounded):
        bounds = None
    else:
        raise DomainError("the primal oracle supports unbounded or box parameter sets")
    Xt = _design(data.X, model.kind.bias)
    y = data.y
    m = problem.m
    mu = np.zeros(m)
    rho = 1.0
    theta = np.array(model.params)
    prev_viol = np.inf

    def aug(theta, mu, rho):
        f, gf, g, G = _linear_terms(problem, Xt, y, theta)
        shifted = np.maximum(0.0, mu + rho * g)
        val = f + float(np.sum(shifted ** 2 - mu ** 2)) / (2 * rho)
        return val, gf + G.T @ shifted

    for it in range(1, max_iters + 1):
        res = minimize(aug, theta, args=(mu, rho), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 20000, "gtol": 1e-13, "ftol": 1e-16, "maxcor": 30})
        theta = res.x
        _, _, g, _ = _linear_terms(problem, Xt, y, theta)
        mu = np.maximum(0.0, mu + rho * g)
        viol = float(np.max(np.maximum(g, 0.0))) if m else 0.0
        comp = float(np.sum(np.abs(mu * g))) if m else 0.0
        if viol <= tol and comp <= tol:
            break
        if viol > 0.25 * prev_viol:
            rho *= 2.0
        prev_viol = viol
    else:
        raise InfeasibleInstanceError(
            f"constraint violation {viol:.3g} still above {tol:.3g} after {max_iters} iterations")
    out = model.copy()
    out.set_params(theta)
    f, *_ = _linear_terms(problem, Xt, y, theta)
    return PrimalSolution(out, f, mu, viol, it)


@dataclass(frozen=True)
class KKTTolerances:
    feasibility: float = 1e-3
    complementarity: float = 1e-4
    stationarity: float = 1e-4


@dataclass(frozen=True)
class KKTReport:
    feasibility: np.ndarray
    complementarity: np.ndarray
    stationarity: float
    tolerances: KKTTolerances
    passed: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def kkt_report(problem: ConstrainedProblem, model: Parameterization, duals: DualState,
               data: Dataset, tolerances: KKTTolerances = KKTTolerances()) -> KKTReport:
    stats = empirical_stats(problem, model, data)
    feas = np.maximum(stats.slacks, 0.0)
    comp = np.abs(duals.lambdas * stats.slacks)
    grad = lagrangian_gradient_theta(problem, model, duals, data)
    if isinstance(model.admissible, Unbounded):
        stat = float(np.linalg.norm(grad))
    else:
        theta = model.params
        stat = float(np.linalg.norm(theta - model.admissible.project(theta - grad)))
    passed = {
        "feasibility": float(np.max(feas, initial=0.0)) <= tolerances.feasibility,
        "complementarity": float(np.sum(comp)) <= tolerances.complementarity,
        "stationarity": stat <= tolerances.stationarity,
    }
    return KKTReport(feas, comp, stat, tolerances, passed)


# Step sizes proven stable on the generated instances: the Lagrangian Hessian
# stays below 2 / primal_lr for multiplier sums up to about 5.
CONVEX_TRAIN_CONFIG = TrainConfig(epochs=1500, inner_steps=20, primal_lr=0.1, dual_lr=0.1)


@dataclass
class DualityGapResult:
    primal_value: float
    dual_value: float
    gap: float
    primal: PrimalSolution
    model: Parameterization
    duals: DualState


def duality_gap_convex(problem: ConstrainedProblem, data: Dataset, seed: int = 0,
                       config: Optional[TrainConfig] = None, bias: bool = True) -> DualityGapResult:
    """Primal oracle value against the primal-dual trainer's final Lagrangian."""
    config = config or CONVEX_TRAIN_CONFIG
    kind = LinearKind(bias)
    primal = solve_primal_projected(problem, init_params(kind, data.dimension, seed), data)
    cfg = TrainConfig(config.epochs, config.inner_steps, config.primal_lr, config.dual_lr,
                      config.batch_size, seed, config.lambda_init)
    model, duals, _ = train_dual(problem, init_params(kind, data.dimension, seed), data, cfg)
    dual_value = empirical_lagrangian(problem, model, duals, data)
    return DualityGapResult(primal.value, dual_value, primal.value - dual_value, primal, model, duals)


def dual_function(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
                  duals: DualState, steps: int, lr: float, gtol: float = 1e-12) -> float:
    """d_N(lambda) by projected gradient descent from ``model``'s parameters."""
    model = model.copy()
    H = model.admissible
    for _ in range(steps):
        g = weighted_gradient(problem, model, data, duals.lambdas)
        if np.linalg.norm(g) <= gtol:
            break
        model.set_params(H.project(model.params - lr * g))
    return empirical_lagrangian(problem, model, duals, data)


@dataclass(frozen=True)
class ConcavityReport:
    values: tuple          # (d(lam), d(lam'), d(mid)) per pair
    violations: int
    max_violation: float
    tol: float


def concavity_probe(problem: ConstrainedProblem, data: Dataset, lambda_pairs, inner_budget: int,
                    model: Parameterization, lr: float, tol: float = 1e-4) -> ConcavityReport:
    """Midpoint concavity of the dual function on the given pairs.

    All inner minimizations start from the same ``model``.
    """
    values = []
    worst = 0.0
    count = 0
    for lam, lam2 in lambda_pairs:
        lam = np.asarray(lam, dtype=float)
        lam2 = np.asarray(lam2, dtype=float)
        if np.any(lam < 0) or np.any(lam2 < 0):
            raise DomainError("concavity probe needs nonnegative multipliers")
        mid = 0.5 * (lam + lam2)
        d1, d2, dm = (dual_function(problem, model, data, DualState(v), inner_budget, lr)
                      for v in (lam, lam2, mid))
        shortfall = 0.5 * (d1 + d2) - dm
        worst = max(worst, shortfall)
        count += shortfall > tol
        values.append((d1, d2, dm))
    return ConcavityReport(tuple(values), int(count), worst, tol)


def probe_lr(instance: ConvexInstance, lambdas) -> float:
    """A stable gradient step for the instance's Lagrangian at ``lambdas``."""
    return 1.0 / (instance.curvature * (1.0 + float(np.sum(lambdas))))


@dataclass(frozen=True)
class CheckLine:
    check: str
    instance_id: int
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance

    def format(self) -> str:
        return (f"{self.check}, {self.instance_id}, {self.residual:.6g}, {self.tolerance:.6g}, "
                f"{'PASS' if self.passed else 'FAIL'}")


@dataclass(frozen=True)
class SuiteTolerances:
    gap: float = 1e-3
    weak: float = 1e-6
    kkt: KKTTolerances = KKTTolerances()
    concavity: float = 1e-4


def convex_suite(seeds: int, tolerances: SuiteTolerances = SuiteTolerances(),
                 concavity_pairs: int = 10) -> list:
    """Run every convex check on ``seeds`` generated instances."""
    lines = []
    for seed in range(seeds):
        inst = random_convex_instance(seed)
        res = duality_gap_convex(inst.problem, inst.data, seed)
        lines.append(CheckLine("strong_duality", seed, abs(res.gap), tolerances.gap))
        lines.append(CheckLine("weak_duality", seed, max(res.dual_value - res.primal_value, 0.0),
                               tolerances.weak))
        rep = kkt_report(inst.problem, res.model, res.duals, inst.data, tolerances.kkt)
        lines.append(CheckLine("complementary_slackness", seed, float(np.sum(rep.complementarity)),
                               tolerances.kkt.complementarity))
        lines.append(CheckLine("feasibility", seed, float(np.max(rep.feasibility, initial=0.0)),
                               tolerances.kkt.feasibility))
        rng = np.random.default_rng(10_000 + seed)
        pairs = [(rng.uniform(0, 2, inst.problem.m), rng.uniform(0, 2, inst.problem.m))
                 for _ in range(concavity_pairs)]
        lr = probe_lr(inst, np.full(inst.problem.m, 2.0))
        conc = concavity_probe(inst.problem, inst.data, pairs, 5000, inst.model(seed), lr,
                               tolerances.concavity)
        lines.append(CheckLine("dual_concavity", seed, max(conc.max_violation, 0.0),
                               tolerances.concavity))
    return lines

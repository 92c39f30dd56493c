"""Primal-dual training on the empirical Lagrangian, plus the baselines.

Each epoch runs ``inner_steps`` projected gradient steps on theta at fixed
multipliers, recomputes the full-batch slacks, and then takes one projected
ascent step on the multipliers using those slacks.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import ConstrainedProblem, Dataset, DomainError, DualState, project_duals
from .lagrangian import EmpiricalStats, empirical_stats, weighted_gradient
from .models import Parameterization


class TrainingError(RuntimeError):
    pass


class Mode(enum.Enum):
    DUAL = "dual"
    REGULARIZED = "regularized"
    UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    inner_steps: int = 20
    primal_lr: float = 0.1
    dual_lr: float = 0.05
    batch_size: Optional[int] = None   # None means full batch
    seed: int = 0
    lambda_init: Optional[tuple] = None
    mode: Mode = Mode.DUAL
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.epochs < 1 or self.inner_steps < 1:
            raise DomainError("epochs and inner_steps must be positive")
        if not (self.primal_lr > 0 and self.dual_lr > 0):
            raise DomainError("learning rates must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be positive")
        if self.lambda_init is not None:
            object.__setattr__(self, "lambda_init", tuple(float(v) for v in self.lambda_init))
            if any(v < 0 for v in self.lambda_init):
                raise DomainError("lambda_init must be nonnegative")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
            if any(v < 0 for v in self.weights):
                raise DomainError("regularization weights must be nonnegative")
        if self.mode is Mode.REGULARIZED and self.weights is None:
            raise DomainError("regularized mode needs weights")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    slacks: tuple
    lambdas: tuple
    accuracy: Optional[float] = None
    fairness: Optional[float] = None


@dataclass
class TrainingLog:
    m: int
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """``objective``, ``accuracy``, ``fairness``, ``slack_i`` or ``lambda_i``."""
        if name.startswith("slack_"):
            i = int(name[6:])
            return np.array([r.slacks[i] for r in self.records])
        if name.startswith("lambda_"):
            i = int(name[7:])
            return np.array([r.lambdas[i] for r in self.records])
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def header(self) -> list:
        return (["epoch", "objective"] + [f"slack_{i}" for i in range(self.m)]
                + [f"lambda_{i}" for i in range(self.m)] + ["acc", "fair"])

    def to_csv_string(self) -> str:
        fmt = lambda v: "" if v is None else f"{v:.12g}"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for r in self.records:
            w.writerow([r.epoch, fmt(r.objective)] + [fmt(s) for s in r.slacks]
                       + [fmt(v) for v in r.lambdas] + [fmt(r.accuracy), fmt(r.fairness)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_string())

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        m = sum(h.startswith("slack_") for h in header)
        log = cls(m)
        opt = lambda s: None if s == "" else float(s)
        for row in rows[1:]:
            vals = row[2:2 + 2 * m]
            log.append(EpochRecord(int(row[0]), float(row[1]), tuple(map(float, vals[:m])),
                                   tuple(map(float, vals[m:])), opt(row[-2]), opt(row[-1])))
        return log


Metrics = Callable[[Parameterization], tuple]


class _Batches:
    """Seeded mini-batch stream; reshuffles after each full pass."""

    def __init__(self, data: Dataset, batch_size: Optional[int], seed: int):
        self.data = data
        self.full = batch_size is None or batch_size >= len(data)
        self.size = batch_size
        self.rng = np.random.default_rng(int(seed) & (2 ** 64 - 1))
        self.perm = None
        self.pos = 0

    def next(self) -> Dataset:
        if self.full:
            return self.data
        n = len(self.data)
        if self.perm is None or self.pos + self.size > n:
            self.perm = self.rng.permutation(n)
            self.pos = 0
        idx = np.sort(self.perm[self.pos:self.pos + self.size])
        self.pos += self.size
        return self.data.subset(idx)


def _check_finite_stats(stats: EmpiricalStats, epoch: int):
    if not (math.isfinite(stats.objective) and np.all(np.isfinite(stats.slacks))):
        raise TrainingError(f"non-finite loss at epoch {epoch} (full-batch evaluation)")


def _run(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
         config: TrainConfig, weights: Optional[np.ndarray], metrics: Optional[Metrics]):
    if len(data) == 0:
        raise DomainError("training data is empty")
    model = model.copy()
    m = problem.m
    dual = weights is None
    if dual:
        lam = np.zeros(m) if config.lambda_init is None else np.array(config.lambda_init)
        if lam.size != m:
            raise DomainError(f"lambda_init needs {m} entries, got {lam.size}")
        state = project_duals(DualState(lam))
    batches = _Batches(data, config.batch_size, config.seed)
    log = TrainingLog(m)
    H = model.admissible
    for epoch in range(1, config.epochs + 1):
        w = state.lambdas if dual else weights
        for step in range(1, config.inner_steps + 1):
            batch = batches.next()
            # Overflow is caught by the finiteness check right below.
            with np.errstate(over="ignore", invalid="ignore"):
                g = weighted_gradient(problem, model, batch, w)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, step {step}")
            model.set_params(H.project(model.params - config.primal_lr * g))
        stats = empirical_stats(problem, model, data)
        _check_finite_stats(stats, epoch)
        if dual:
            state = project_duals(DualState(state.lambdas + config.dual_lr * stats.slacks))
            lam_rec = tuple(state.lambdas)
        else:
            lam_rec = tuple(np.zeros(m))
        acc, fair = metrics(model) if metrics is not None else (None, None)
        log.append(EpochRecord(epoch, stats.objective, tuple(stats.slacks), lam_rec, acc, fair))
    return model, (state if dual else None), log


def train_dual(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
               config: TrainConfig = TrainConfig(), metrics: Optional[Metrics] = None):
    """Solve max over lambda >= 0 of min over theta of the empirical Lagrangian.

    Returns ``(model, duals, log)``; the input model is left untouched.
    """
    return _run(problem, model, data, config, None, metrics)


def train_regularized(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
                      config: TrainConfig, metrics: Optional[Metrics] = None):
    """Gradient descent on mean[l0 + sum_i w_i l_i] with fixed weights."""
    if config.weights is None:
        raise DomainError("regularized training needs weights")
    weights = np.array(config.weights)
    if weights.size != problem.m:
        raise DomainError(f"expected {problem.m} weights, got {weights.size}")
    trained, _, log = _run(problem, model, data, config, weights, metrics)
    return trained, log


def train_unconstrained(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
                        config: TrainConfig = TrainConfig(), metrics: Optional[Metrics] = None):
    """Plain ERM on the objective. Constraint slacks are still logged."""
    trained, _, log = _run(problem, model, data, config, np.zeros(problem.m), metrics)
    return trained, log


def train(problem: ConstrainedProblem, model: Parameterization, data: Dataset,
          config: TrainConfig, metrics: Optional[Metrics] = None):
    """Dispatch on ``config.mode``; always returns ``(model, duals or None, log)``."""
    if config.mode is Mode.DUAL:
        return train_dual(problem, model, data, config, metrics)
    if config.mode is Mode.REGULARIZED:
        trained, log = train_regularized(problem, model, data, config, metrics)
    else:
        trained, log = train_unconstrained(problem, model, data, config, metrics)
    return trained, None, log

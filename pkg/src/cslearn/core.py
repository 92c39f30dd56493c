"""Domain types: losses, samples, datasets, constrained problems and duals."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

EPS_LOG = 1e-7

# Encoded values of the protected feature slot.
GROUP_A_VALUE = 1.0
GROUP_B_VALUE = 0.0


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


class LoadError(ValueError):
    """Raised when a dataset file does not conform to its schema."""


class LossKind(enum.Enum):
    SQUARED_ERROR = "squared_error"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"
    HINGE = "hinge"
    BERNOULLI_KL = "bernoulli_kl"
    CUSTOM = "custom"


_CLASSIFICATION = (LossKind.BINARY_CROSS_ENTROPY, LossKind.HINGE)
_LOG_BASED = (LossKind.BINARY_CROSS_ENTROPY, LossKind.BERNOULLI_KL)


@dataclass(frozen=True)
class LossSpec:
    """A loss l(v, y) of a scalar prediction v and a label y.

    ``bound`` and ``lipschitz`` are the declared constants B and L used by
    the gap bounds. They never clip values during optimization.

    Custom losses supply ``value_fn(v, y)`` and ``grad_fn(v, y)``, both
    vectorized over numpy arrays.
    """

    kind: LossKind
    bound: float
    lipschitz: float
    eps_log: float = EPS_LOG
    value_fn: Optional[Callable] = field(default=None, compare=False)
    grad_fn: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise DomainError(f"loss bound must be positive, got {self.bound}")
        if not (self.lipschitz > 0 and math.isfinite(self.lipschitz)):
            raise DomainError(f"lipschitz constant must be positive, got {self.lipschitz}")
        if not 0 < self.eps_log < 0.5:
            raise DomainError(f"eps_log must lie in (0, 0.5), got {self.eps_log}")
        if self.kind is LossKind.CUSTOM and (self.value_fn is None or self.grad_fn is None):
            raise DomainError("custom losses need both value_fn and grad_fn")

    @classmethod
    def squared_error(cls, bound: float = 1.0, lipschitz: float = 2.0) -> "LossSpec":
        # Defaults assume predictions and labels in [0, 1].
        return cls(LossKind.SQUARED_ERROR, bound, lipschitz)

    @classmethod
    def binary_cross_entropy(cls, eps_log: float = EPS_LOG, bound: Optional[float] = None,
                             lipschitz: Optional[float] = None) -> "LossSpec":
        # Clamping to [eps, 1 - eps] gives B = -log(eps) and L = 1/eps.
        return cls(LossKind.BINARY_CROSS_ENTROPY,
                   -math.log(eps_log) if bound is None else bound,
                   1.0 / eps_log if lipschitz is None else lipschitz,
                   eps_log)

    @classmethod
    def hinge(cls, bound: float = 2.0, lipschitz: float = 1.0) -> "LossSpec":
        return cls(LossKind.HINGE, bound, lipschitz)

    @classmethod
    def bernoulli_kl(cls, eps_log: float = EPS_LOG, bound: Optional[float] = None,
                     lipschitz: Optional[float] = None) -> "LossSpec":
        return cls(LossKind.BERNOULLI_KL,
                   math.log((1 - eps_log) / eps_log) if bound is None else bound,
                   1.0 / eps_log if lipschitz is None else lipschitz,
                   eps_log)

    @classmethod
    def custom(cls, value_fn: Callable, grad_fn: Callable, bound: float = 1.0,
               lipschitz: float = 1.0) -> "LossSpec":
        return cls(LossKind.CUSTOM, bound, lipschitz, value_fn=value_fn, grad_fn=grad_fn)


def _check_args(spec: LossSpec, prediction, label):
    v = np.asarray(prediction, dtype=float)
    y = np.asarray(label, dtype=float)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(y))):
        raise DomainError("loss inputs must be finite")
    if spec.kind in _CLASSIFICATION and not np.all((y == 0) | (y == 1)):
        raise DomainError(f"{spec.kind.value} expects labels in {{0, 1}}")
    if spec.kind in _LOG_BASED:
        v = np.clip(v, spec.eps_log, 1 - spec.eps_log)
    if spec.kind is LossKind.BERNOULLI_KL:
        y = np.clip(y, spec.eps_log, 1 - spec.eps_log)
    return v, y


def _scalar_or_array(out, prediction, label):
    if np.ndim(prediction) == 0 and np.ndim(label) == 0:
        return float(out)
    return out


def eval_loss(spec: LossSpec, prediction, label):
    """Evaluate the loss elementwise; scalars in, scalar out.

    For BernoulliKL the prediction is p and the label is q in KL(p || q).
    """
    v, y = _check_args(spec, prediction, label)
    kind = spec.kind
    if kind is LossKind.SQUARED_ERROR:
        out = (v - y) ** 2
    elif kind is LossKind.BINARY_CROSS_ENTROPY:
        out = -(y * np.log(v) + (1 - y) * np.log1p(-v))
    elif kind is LossKind.HINGE:
        out = np.maximum(0.0, 1.0 - (2 * y - 1) * v)
    elif kind is LossKind.BERNOULLI_KL:
        out = v * np.log(v / y) + (1 - v) * np.log((1 - v) / (1 - y))
        # Rounding can leave tiny negatives when p is close to q.
        out = np.maximum(out, 0.0)
    else:
        out = np.asarray(spec.value_fn(v, y), dtype=float)
    return _scalar_or_array(out, prediction, label)


def eval_loss_gradient(spec: LossSpec, prediction, label):
    """Derivative of the loss in the prediction, at the clamped point."""
    v, y = _check_args(spec, prediction, label)
    kind = spec.kind
    if kind is LossKind.SQUARED_ERROR:
        out = 2 * (v - y)
    elif kind is LossKind.BINARY_CROSS_ENTROPY:
        out = -y / v + (1 - y) / (1 - v)
    elif kind is LossKind.HINGE:
        s = 2 * y - 1
        out = np.where(1.0 - s * v > 0, -s, 0.0)
    elif kind is LossKind.BERNOULLI_KL:
        out = np.log(v / y) - np.log((1 - v) / (1 - y))
    else:
        out = np.asarray(spec.grad_fn(v, y), dtype=float)
    return _scalar_or_array(out, prediction, label)


def bernoulli_kl_grads(spec: LossSpec, p, q):
    """Partial derivatives of KL(p || q) in p and in q, at the clamped point."""
    if spec.kind is not LossKind.BERNOULLI_KL:
        raise DomainError("bernoulli_kl_grads needs a BernoulliKL loss")
    p, q = _check_args(spec, p, q)
    dp = np.log(p / q) - np.log((1 - p) / (1 - q))
    dq = -p / q + (1 - p) / (1 - q)
    return dp, dq


@dataclass(frozen=True)
class ConstraintSpec:
    """Constraint E[loss] <= threshold.

    A ``paired`` constraint is evaluated on counterfactual prediction pairs:
    the loss is KL(f(x, z:=A) || f(x, z:=B)), or the swapped order when
    ``swap`` is set. Only BernoulliKL losses can be paired.
    """

    loss: LossSpec
    threshold: float
    name: str
    paired: bool = False
    swap: bool = False

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise DomainError(f"constraint {self.name!r} threshold must be finite")
        if self.paired and self.loss.kind is not LossKind.BERNOULLI_KL:
            raise DomainError("paired constraints need a BernoulliKL loss")


@dataclass(frozen=True)
class ConstrainedProblem:
    objective: LossSpec
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        names = [c.name for c in self.constraints]
        if len(set(names)) != len(names):
            raise DomainError(f"constraint names must be unique, got {names}")

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([c.threshold for c in self.constraints], dtype=float)

    def objective_only(self) -> "ConstrainedProblem":
        return ConstrainedProblem(self.objective)


@dataclass(frozen=True)
class DualState:
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float).reshape(-1)
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @classmethod
    def zeros(cls, m: int) -> "DualState":
        return cls(np.zeros(m))

    @property
    def m(self) -> int:
        return self.lambdas.size

    def is_feasible(self) -> bool:
        return bool(np.all(self.lambdas >= 0))

    def l1(self) -> float:
        return float(np.sum(np.abs(self.lambdas)))


def project_duals(state: DualState) -> DualState:
    """Project the multipliers onto the nonnegative orthant."""
    return DualState(np.maximum(state.lambdas, 0.0))


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: float
    protected: Optional[str] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples stored column-wise: ``X`` is N x d, ``y`` has length N.

    ``z`` holds the protected tags, if any; ``protected_slot`` is the column
    of ``X`` that encodes them (A -> 1, B -> 0).
    """

    X: np.ndarray
    y: np.ndarray
    z: Optional[tuple] = None
    protected_slot: Optional[int] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise DomainError("features must form an N x d matrix")
        if X.shape[0] == 0:
            raise DomainError("dataset must be nonempty")
        if X.shape[1] == 0:
            raise DomainError("dimension must be positive")
        if y.shape[0] != X.shape[0]:
            raise DomainError("one label per sample required")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("features and labels must be finite")
        if self.z is not None:
            object.__setattr__(self, "z", tuple(self.z))
            if len(self.z) != X.shape[0]:
                raise DomainError("one protected tag per sample required")
        if self.protected_slot is not None and not 0 <= self.protected_slot < X.shape[1]:
            raise DomainError(f"protected slot {self.protected_slot} out of range")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], dimension: int,
                     protected_slot: Optional[int] = None) -> "Dataset":
        if not samples:
            raise DomainError("dataset must be nonempty")
        for i, s in enumerate(samples):
            if len(s.features) != dimension:
                raise DomainError(f"sample {i} has {len(s.features)} features, expected {dimension}")
        tags = [s.protected for s in samples]
        z = None if all(t is None for t in tags) else tuple(tags)
        return cls(np.array([s.features for s in samples], dtype=float),
                   np.array([s.label for s in samples], dtype=float), z, protected_slot)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> list:
        z = self.z or (None,) * len(self)
        return [Sample(self.X[n], float(self.y[n]), z[n]) for n in range(len(self))]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        z = None if self.z is None else tuple(self.z[i] for i in index)
        return Dataset(self.X[index], self.y[index], z, self.protected_slot)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.dimension != self.dimension:
            raise DomainError("cannot concatenate datasets of different dimension")
        z = None if self.z is None or other.z is None else self.z + other.z
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]),
                       z, self.protected_slot)

    def _with_slot(self, value: float) -> np.ndarray:
        if self.protected_slot is None:
            raise DomainError("dataset has no protected column")
        X = self.X.copy()
        X[:, self.protected_slot] = value
        X.setflags(write=False)
        return X

    @cached_property
    def counterfactual_a(self) -> np.ndarray:
        return self._with_slot(GROUP_A_VALUE)

    @cached_property
    def counterfactual_b(self) -> np.ndarray:
        return self._with_slot(GROUP_B_VALUE)


def load_dataset_csv(path, protected_slot: Optional[int] = None) -> Dataset:
    """Read a dataset with header ``x0..x{d-1}, y[, z]``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_z = bool(header) and header[-1] == "z"
    feat = header[:-2] if has_z else header[:-1]
    label_col = header[-2] if has_z else (header[-1] if header else None)
    if label_col != "y" or not feat or feat != [f"x{j}" for j in range(len(feat))]:
        raise LoadError(f"{path}: header must be x0..x{{d-1}}, y[, z]; got {header}")
    d = len(feat)
    X, y, z = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise LoadError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            vals = [float(v) for v in row[:d + 1]]
        except ValueError as exc:
            raise LoadError(f"{path}: row {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise LoadError(f"{path}: row {lineno}: non-finite value")
        if vals[d] not in (0.0, 1.0):
            raise LoadError(f"{path}: row {lineno}: label must be 0 or 1")
        X.append(vals[:d])
        y.append(vals[d])
        if has_z:
            z.append(row[d + 1].strip())
    if not X:
        raise LoadError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(y), tuple(z) if has_z else None, protected_slot)


def save_dataset_csv(data: Dataset, path) -> None:
    header = [f"x{j}" for j in range(data.dimension)] + ["y"]
    if data.z is not None:
        header.append("z")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n in range(len(data)):
            row = [repr(float(v)) for v in data.X[n]] + [repr(float(data.y[n]))]
            if data.z is not None:
                row.append(data.z[n])
            w.writerow(row)

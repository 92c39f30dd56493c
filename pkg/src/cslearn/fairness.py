"""Fair classification under a counterfactual KL constraint.

Input tables are CSVs with named numeric, categorical, protected and label
columns (the Adult layout). Preprocessing produces the feature layout
``[standardized numerics | one-hot categoricals | protected slot]`` with
group A encoded as 1 and group B as 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import GapCertificate, total_gap_certificate
from .core import (GROUP_A_VALUE, GROUP_B_VALUE, ConstrainedProblem, ConstraintSpec, Dataset,
                   DomainError, LoadError, LossSpec)
from .models import Activation, MLPKind, Parameterization, forward, init_params
from .optimizer import TrainConfig, TrainingLog, train_dual, train_unconstrained


@dataclass(frozen=True)
class PreprocessSpec:
    """Column roles plus the statistics fitted on the training split.

    ``group_a`` names the protected value mapped to 1; by default it is the
    lexicographically smallest value seen in training.
    """

    numeric: tuple
    categorical: tuple
    protected: str
    label: str
    positive: str = "1"
    group_a: Optional[str] = None
    means: Optional[tuple] = None
    stds: Optional[tuple] = None
    vocabularies: Optional[tuple] = None
    groups: Optional[tuple] = None

    @property
    def fitted(self) -> bool:
        return self.means is not None

    @property
    def dimension(self) -> int:
        if not self.fitted:
            raise DomainError("preprocessing spec is not fitted")
        return len(self.numeric) + sum(len(v) for v in self.vocabularies) + 1

    @property
    def protected_slot(self) -> int:
        return self.dimension - 1


SYNTH_CATEGORIES = ("u", "v", "w")


def synth_spec(d_numeric: int = 4) -> PreprocessSpec:
    return PreprocessSpec(tuple(f"num_{j}" for j in range(d_numeric)), ("group",), "z", "y",
                          positive="1", group_a="A")


def read_table(path) -> tuple:
    """Header and rows of a CSV; every row must match the header's arity."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise LoadError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        body.append((lineno, [v.strip() for v in row]))
    if not body:
        raise LoadError(f"{path}: no data rows")
    return header, body


def _columns(header, spec: PreprocessSpec, path):
    needed = list(spec.numeric) + list(spec.categorical) + [spec.protected, spec.label]
    missing = [c for c in needed if c not in header]
    if missing:
        raise LoadError(f"{path}: missing columns {missing}")
    return {c: header.index(c) for c in needed}


def _numeric(rows, col, path, name):
    out = np.empty(len(rows))
    for k, (lineno, row) in enumerate(rows):
        try:
            out[k] = float(row[col])
        except ValueError:
            raise LoadError(f"{path}: row {lineno}: column {name!r} is not numeric: {row[col]!r}") from None
        if not math.isfinite(out[k]):
            raise LoadError(f"{path}: row {lineno}: column {name!r} is not finite")
    return out


def fit_spec(header, rows, spec: PreprocessSpec, path="<train>") -> PreprocessSpec:
    cols = _columns(header, spec, path)
    means, stds = [], []
    for name in spec.numeric:
        col = _numeric(rows, cols[name], path, name)
        means.append(float(np.mean(col)))
        stds.append(float(np.std(col)))
    vocabs = tuple(tuple(sorted({row[cols[name]] for _, row in rows})) for name in spec.categorical)
    groups = sorted({row[cols[spec.protected]] for _, row in rows})
    if len(groups) != 2:
        raise LoadError(f"{path}: protected column {spec.protected!r} must be binary, found {groups}")
    if spec.group_a is not None:
        if spec.group_a not in groups:
            raise LoadError(f"{path}: protected value {spec.group_a!r} not present")
        groups = [spec.group_a] + [g for g in groups if g != spec.group_a]
    return replace(spec, means=tuple(means), stds=tuple(stds), vocabularies=vocabs,
                   groups=tuple(groups))


def transform(header, rows, spec: PreprocessSpec, path="<data>") -> Dataset:
    """Apply a fitted spec. Constant numeric columns map to 0; unseen
    categories map to an all-zero one-hot block."""
    if not spec.fitted:
        raise DomainError("preprocessing spec is not fitted")
    cols = _columns(header, spec, path)
    n = len(rows)
    blocks = []
    for name, mu, sd in zip(spec.numeric, spec.means, spec.stds):
        col = _numeric(rows, cols[name], path, name)
        blocks.append(((col - mu) / sd if sd > 0 else np.zeros(n))[:, None])
    for name, vocab in zip(spec.categorical, spec.vocabularies):
        index = {v: j for j, v in enumerate(vocab)}
        onehot = np.zeros((n, len(vocab)))
        for k, (_, row) in enumerate(rows):
            j = index.get(row[cols[name]])
            if j is not None:
                onehot[k, j] = 1.0
        blocks.append(onehot)
    z = []
    slot = np.empty(n)
    for k, (lineno, row) in enumerate(rows):
        g = row[cols[spec.protected]]
        if g not in spec.groups:
            raise LoadError(f"{path}: row {lineno}: protected value {g!r} not seen in training")
        z.append(g)
        slot[k] = GROUP_A_VALUE if g == spec.groups[0] else GROUP_B_VALUE
    blocks.append(slot[:, None])
    y = np.array([1.0 if row[cols[spec.label]] == spec.positive else 0.0 for _, row in rows])
    return Dataset(np.hstack(blocks), y, tuple(z), spec.dimension - 1)


def load_and_preprocess(train_csv, test_csv, spec: PreprocessSpec, seed: int = 0):
    """Fit on the training split, apply to both splits.

    Without a test CSV the training table is split 80/20 by a seeded shuffle.
    """
    header, rows = read_table(train_csv)
    if test_csv is None:
        perm = np.random.default_rng(int(seed) & (2 ** 64 - 1)).permutation(len(rows))
        cut = int(round(0.8 * len(rows)))
        if cut == 0 or cut == len(rows):
            raise LoadError(f"{train_csv}: too few rows to split")
        train_rows = [rows[i] for i in sorted(perm[:cut])]
        test_rows = [rows[i] for i in sorted(perm[cut:])]
        test_header, test_path = header, train_csv
    else:
        train_rows = rows
        test_header, test_rows = read_table(test_csv)
        test_path = test_csv
    fitted = fit_spec(header, train_rows, spec, train_csv)
    return (transform(header, train_rows, fitted, train_csv),
            transform(test_header, test_rows, fitted, test_path), fitted)


def make_fair_problem(c: float = 1e-3, swap: bool = False,
                      eps_log: float = 1e-7) -> ConstrainedProblem:
    """Cross-entropy objective with one paired KL constraint ``fairness_kl``."""
    if not (c > 0 and math.isfinite(c)):
        raise DomainError(f"fairness level c must be positive and finite, got {c}; "
                          "use unconstrained training to drop the constraint")
    return ConstrainedProblem(
        LossSpec.binary_cross_entropy(eps_log),
        (ConstraintSpec(LossSpec.bernoulli_kl(eps_log), c, "fairness_kl", paired=True, swap=swap),))


@dataclass(frozen=True)
class FairnessMetrics:
    accuracy: float
    fairness: float
    threshold: float = 0.5


def evaluate_metrics(model: Parameterization, test: Dataset, threshold: float = 0.5) -> FairnessMetrics:
    """Test accuracy and the fraction of counterfactually stable decisions."""
    pred, _ = forward(model, test.X)
    acc = float(np.mean((pred >= threshold) == (test.y == 1)))
    pa, _ = forward(model, test.counterfactual_a)
    pb, _ = forward(model, test.counterfactual_b)
    fair = float(np.mean((pa >= threshold) == (pb >= threshold)))
    return FairnessMetrics(acc, fair, threshold)


def synth_generate(n_train: int, n_test: int, d_numeric: int = 4, bias_strength: float = 1.0,
                   seed: int = 0) -> tuple:
    """Synthetic Adult-layout CSV texts ``(train, test)``.

    Labels are Bernoulli draws from a logistic model whose logit depends on
    the numeric columns, the categorical column, and a group term
    ``bias_strength * (1[z = A] - 1/2)``.
    """
    if n_train < 10 or n_test < 10:
        raise DomainError("synthetic splits need at least 10 rows each")
    if d_numeric < 1:
        raise DomainError("need at least one numeric column")
    rng = np.random.default_rng(int(seed) & (2 ** 64 - 1))
    w = rng.normal(size=d_numeric)
    w *= 2.5 / np.linalg.norm(w)
    cat_effect = np.array([-0.5, 0.0, 0.5])

    def table(n):
        X = rng.normal(size=(n, d_numeric))
        cat = rng.integers(0, len(SYNTH_CATEGORIES), size=n)
        is_a = rng.random(n) < 0.5
        logit = X @ w + cat_effect[cat] + bias_strength * (is_a - 0.5)
        y = rng.random(n) < 1.0 / (1.0 + np.exp(-logit))
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow([f"num_{j}" for j in range(d_numeric)] + ["group", "z", "y"])
        for k in range(n):
            out.writerow([f"{v:.6f}" for v in X[k]]
                         + [SYNTH_CATEGORIES[cat[k]], "A" if is_a[k] else "B", int(y[k])])
        return buf.getvalue()

    return table(n_train), table(n_test)


def write_synth(out_dir, n_train: int, n_test: int, d_numeric: int = 4,
                bias_strength: float = 1.0, seed: int = 0) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = synth_generate(n_train, n_test, d_numeric, bias_strength, seed)
    (out / "train.csv").write_text(train)
    (out / "test.csv").write_text(test)
    return out / "train.csv", out / "test.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    train_csv: str
    test_csv: Optional[str] = None
    spec: PreprocessSpec = field(default_factory=synth_spec)
    c: float = 1e-3
    hidden: int = 256
    activation: Activation = Activation.SIGMOID
    epochs: int = 300
    inner_steps: int = 20
    primal_lr: float = 1.0
    dual_lr: float = 20.0
    batch_size: Optional[int] = None
    seed: int = 0
    threshold: float = 0.5
    swap_kl: bool = False
    epsilon: Optional[float] = None
    vc_dim: Optional[int] = None
    delta: float = 0.05

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.inner_steps, self.primal_lr, self.dual_lr,
                           self.batch_size, self.seed)


@dataclass
class ExperimentResult:
    unconstrained: TrainingLog
    constrained: TrainingLog
    unconstrained_metrics: FairnessMetrics
    constrained_metrics: FairnessMetrics
    final_lambda: float
    final_slack: float
    certificate: Optional[GapCertificate]
    constrained_model: Parameterization
    unconstrained_model: Parameterization

    def report(self) -> str:
        u, k = self.unconstrained_metrics, self.constrained_metrics
        rows = [
            ("unconstrained_accuracy", u.accuracy), ("unconstrained_fairness", u.fairness),
            ("constrained_accuracy", k.accuracy), ("constrained_fairness", k.fairness),
            ("accuracy_delta", k.accuracy - u.accuracy), ("fairness_delta", k.fairness - u.fairness),
            ("final_lambda", self.final_lambda), ("final_slack", self.final_slack),
        ]
        text = "".join(f"{key} = {val:.12g}\n" for key, val in rows)
        if self.certificate is None:
            return text + "certificate = not computed (needs epsilon and vc_dim)\n"
        return text + "\n[certificate]\n" + self.certificate.to_text()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.unconstrained.write_csv(out / "unconstrained.csv")
        self.constrained.write_csv(out / "constrained.csv")
        (out / "report.txt").write_text(self.report())


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Train the unconstrained baseline and the constrained model from the
    same initialization and compare them on the test split."""
    train, test, _ = load_and_preprocess(config.train_csv, config.test_csv, config.spec, config.seed)
    problem = make_fair_problem(config.c, config.swap_kl)
    kind = MLPKind(config.hidden, config.activation, Activation.SIGMOID)
    model = init_params(kind, train.dimension, config.seed)
    tc = config.train_config()

    def metrics(mdl):
        fm = evaluate_metrics(mdl, test, config.threshold)
        return fm.accuracy, fm.fairness

    base, base_log = train_unconstrained(problem, model, train, tc, metrics)
    fair, duals, fair_log = train_dual(problem, model, train, tc, metrics)
    cert = None
    if config.epsilon is not None and config.vc_dim is not None:
        losses = [problem.objective] + [c.loss for c in problem.constraints]
        cert = total_gap_certificate(max(l.bound for l in losses), len(train), config.vc_dim,
                                     config.delta, max(l.lipschitz for l in losses), config.epsilon,
                                     duals)
    result = ExperimentResult(base_log, fair_log, evaluate_metrics(base, test, config.threshold),
                              evaluate_metrics(fair, test, config.threshold),
                              float(duals.lambdas[0]), float(fair_log.records[-1].slacks[0]),
                              cert, fair, base)
    if out_dir is not None:
        result.write(out_dir)
    return result

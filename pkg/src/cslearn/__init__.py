"""Constrained statistical learning via the empirical dual problem."""

from .bounds import GapCertificate, parameterization_gap, total_gap_certificate, v_n
from .core import (ConstrainedProblem, ConstraintSpec, Dataset, DomainError, DualState, LoadError,
                   LossKind, LossSpec, Sample, eval_loss, eval_loss_gradient, project_duals)
from .lagrangian import (EmpiricalStats, empirical_lagrangian, empirical_stats,
                         lagrangian_gradient_theta, paired_constraint_stats)
from .models import (Activation, Box, L2Ball, LinearKind, MLPKind, Parameterization, Unbounded,
                     backward, forward, init_params, project_params)
from .optimizer import (Mode, TrainConfig, TrainingError, TrainingLog, train_dual,
                        train_regularized, train_unconstrained)

__version__ = "0.1.0"

"""Generalization and parameterization terms of the empirical duality gap."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .core import DomainError, DualState


def v_n(B: float, N: int, d_vc: int, delta: float) -> float:
    """VC uniform-deviation term 2B sqrt((1 + log(4 (2N)^d_vc / delta)) / N).

    The log is expanded so (2N)^d_vc is never formed.
    """
    if not (isinstance(N, int) and N >= 1):
        raise DomainError(f"N must be a positive integer, got {N!r}")
    if not (isinstance(d_vc, int) and d_vc >= 1):
        raise DomainError(f"d_vc must be a positive integer, got {d_vc!r}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if not (B > 0 and math.isfinite(B)):
        raise DomainError(f"B must be positive, got {B}")
    log_term = 1.0 + math.log(4.0) + d_vc * math.log(2.0 * N) - math.log(delta)
    return 2.0 * B * math.sqrt(log_term / N)


def parameterization_gap(L: float, epsilon: float, lambda_l1: float) -> float:
    """(1 + ||lambda||_1) * L * epsilon."""
    for name, v in (("L", L), ("epsilon", epsilon), ("lambda_l1", lambda_l1)):
        if not (v >= 0 and math.isfinite(v)):
            raise DomainError(f"{name} must be finite and nonnegative, got {v}")
    return (1.0 + lambda_l1) * L * epsilon


@dataclass(frozen=True)
class GapCertificate:
    """Bound on |D*_{eps,N} - P*| holding with probability 1 - delta.

    ``epsilon`` and ``vc_dim`` are assumptions supplied by the caller.
    ``lambda_l1`` comes from the trained empirical multipliers, recorded in
    ``lambda_source``.
    """

    v_n: float
    epsilon: float
    lipschitz: float
    bound: float
    vc_dim: int
    delta: float
    n_samples: int
    lambda_l1: float
    parameterization_gap: float
    total_bound: float
    lambda_source: str = "empirical"

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, float):
                value = f"{value:.15g}"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "GapCertificate":
        raw = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        ints = {"vc_dim", "n_samples"}
        kwargs = {}
        for key, value in raw.items():
            if key == "lambda_source":
                kwargs[key] = value
            elif key in ints:
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)


def total_gap_certificate(B: float, N: int, d_vc: int, delta: float, L: float,
                          epsilon: float, duals: DualState,
                          lambda_source: str = "empirical") -> GapCertificate:
    vn = v_n(B, N, d_vc, delta)
    lam_l1 = float(sum(duals.lambdas))
    if not duals.is_feasible():
        raise DomainError("multipliers must be nonnegative")
    gap = parameterization_gap(L, epsilon, lam_l1)
    return GapCertificate(vn, epsilon, L, B, d_vc, delta, N, lam_l1, gap, gap + vn, lambda_source)

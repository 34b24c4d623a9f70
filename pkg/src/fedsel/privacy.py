"""Update clipping, Gaussian-mechanism noise and basic-composition accounting.

Noise is added once per client per round, to the clipped model delta, so the
L2 sensitivity of each release is the clip norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


def calibrate_sigma(epsilon: float, delta: float, clip_norm: float) -> float:
    """Classic Gaussian mechanism: ``C * sqrt(2 ln(1.25/delta)) / epsilon``."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if not clip_norm > 0:
        raise ParameterError(f"clip_norm must be positive, got {clip_norm}")
    return clip_norm * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


@dataclass(frozen=True)
class PrivacyParams:
    enabled: bool = True
    epsilon_round: float = 10.0
    delta: float = 1e-5
    clip_norm: float = 1.0

    @property
    def sigma(self) -> float:
        if not self.enabled:
            return 0.0
        return calibrate_sigma(self.epsilon_round, self.delta, self.clip_norm)

    def problems(self) -> list[tuple[str, str]]:
        out = []
        if not self.epsilon_round > 0:
            out.append(("epsilon_round", f"must be positive, got {self.epsilon_round}"))
        if not 0 < self.delta < 1:
            out.append(("delta", f"must lie in (0, 1), got {self.delta}"))
        if not self.clip_norm > 0:
            out.append(("clip_norm", f"must be positive, got {self.clip_norm}"))
        return out


@dataclass(frozen=True)
class BudgetLedger:
    rounds_completed: int = 0
    epsilon_total: float = 0.0
    delta_total: float = 0.0


def clip(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``grad`` by ``min(1, C / ||grad||)``."""
    if not clip_norm > 0:
        raise ParameterError("clip_norm must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    norm = float(np.linalg.norm(grad))
    if norm <= clip_norm:
        return grad.copy()
    return grad * (clip_norm / norm)


def add_noise(grad: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    grad = np.asarray(grad, dtype=np.float64)
    if sigma == 0:
        return grad.copy()
    return grad + rng.normal(0.0, sigma, size=grad.shape)


def record_round(ledger: BudgetLedger, params: PrivacyParams) -> BudgetLedger:
    """Charge one round under linear composition. Disabled privacy charges nothing."""
    if not params.enabled:
        return ledger
    t = ledger.rounds_completed + 1
    return BudgetLedger(t, t * params.epsilon_round, t * params.delta)

"""Utility scoring, top-K selection and the adaptive-K rule."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParameterError


@dataclass
class ClientStats:
    client_id: int
    n_samples: int
    compute_capacity: float
    last_seen_round: int = -1
    # carried for a loss-aware score; the default score ignores it
    recent_loss_delta: float = 0.0


@dataclass(frozen=True)
class UtilityScore:
    client_id: int
    score: float


@dataclass
class SelectionConfig:
    k_init: int = 5
    k_min: int = 2
    k_max: int = 10
    w_data: float = 0.5
    w_compute: float = 0.5
    # None disables the time rule
    time_budget_per_round: float | None = None
    min_accuracy_gain: float = 0.001

    def problems(self) -> list[tuple[str, str]]:
        out = []
        if not 1 <= self.k_min <= self.k_init <= self.k_max:
            out.append(("k_init", f"need 1 <= k_min <= k_init <= k_max, got {self.k_min}, {self.k_init}, {self.k_max}"))
        if self.w_data < 0 or self.w_compute < 0:
            out.append(("w_data", "weights must be non-negative"))
        elif not math.isclose(self.w_data + self.w_compute, 1.0, abs_tol=1e-9):
            out.append(("w_data", "w_data + w_compute must equal 1"))
        if self.time_budget_per_round is not None and not self.time_budget_per_round > 0:
            out.append(("time_budget_per_round", "must be positive or null"))
        return out


def registry_maxima(stats) -> tuple[int, float]:
    stats = list(stats)
    return max(s.n_samples for s in stats), max(s.compute_capacity for s in stats)


def compute_utility(stats: ClientStats, maxima: tuple[float, float], w_data: float = 0.5,
                    w_compute: float = 0.5) -> UtilityScore:
    """Convex combination of shard size and capacity, each scaled by the registry maximum."""
    max_n, max_cap = maxima
    if not (max_n > 0 and max_cap > 0):
        raise ParameterError("registry maxima must be positive")
    score = w_data * (stats.n_samples / max_n) + w_compute * (stats.compute_capacity / max_cap)
    return UtilityScore(stats.client_id, min(1.0, max(0.0, score)))


def select_top_k(scores, available, k: int) -> list[int]:
    """Highest-scoring available clients, ties to the lower id.

    An empty result means nobody was available and the round is skipped.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    available = set(available)
    pool = [s for s in scores if s.client_id in available]
    pool.sort(key=lambda s: (-s.score, s.client_id))
    return [s.client_id for s in pool[:k]]


def adapt_k(k_current: int, last_round_time: float, accuracy_gain: float, cfg: SelectionConfig) -> int:
    # time overrun takes precedence over stagnation
    if cfg.time_budget_per_round is not None and last_round_time > cfg.time_budget_per_round:
        # ceil(0.8 * k) in integer arithmetic
        return max(cfg.k_min, (4 * k_current + 4) // 5)
    if accuracy_gain < cfg.min_accuracy_gain:
        return min(cfg.k_max, k_current + 1)
    return k_current

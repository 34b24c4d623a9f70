"""Linear simulated-time cost model."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError


@dataclass(frozen=True)
class CostModel:
    base_step_cost: float = 0.01
    aggregation_cost: float = 0.05
    checkpoint_cost: float = 0.001
    recovery_cost: float = 0.005

    def problems(self) -> list[tuple[str, str]]:
        return [(name, "must be non-negative") for name in
                ("base_step_cost", "aggregation_cost", "checkpoint_cost", "recovery_cost")
                if not getattr(self, name) >= 0]


def client_time(steps: int, saves: int, recoveries: int, capacity: float, cm: CostModel) -> float:
    """Seconds for ``steps`` local steps (replays included) plus checkpoint and recovery overhead."""
    if steps < 0 or saves < 0 or recoveries < 0:
        raise ParameterError("counts must be non-negative")
    if not capacity > 0:
        raise ParameterError("capacity must be positive")
    return steps * cm.base_step_cost / capacity + saves * cm.checkpoint_cost + recoveries * cm.recovery_cost

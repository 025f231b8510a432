from dataclasses import dataclass, field

import numpy as np


class UndefinedMetric(ValueError):
    """The metric has no value for this input (e.g. every factor is constant)."""


@dataclass
class MetricReport:
    name: str
    score: float
    seed: int = None
    sizes: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        score = float(self.score)
        if not np.isfinite(score) or score < -1e-9 or score > 1 + 1e-9:
            raise ValueError(f"{self.name} score {score} outside [0, 1]")
        self.score = min(max(score, 0.0), 1.0)

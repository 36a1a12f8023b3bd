"""Model configuration shared by fitting and scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

GRANULARITIES = ("all", "weekpart")
COMBINERS = ("product", "weighted_sum")
F1_RESET = ("calls_and_sms", "calls")

DAY = 86400
HOUR = 3600


@dataclass(frozen=True)
class ModelConfig:
    granularity: str = "all"
    # local time = UTC + utc_offset; whole minutes only so hour edges fall on ticks
    utc_offset: int = 0
    min_samples: int = 5
    beta: float = 0.5
    radius_join: float = 250.0
    sigma: float = 500.0
    location_staleness: int = 1800
    f1_reset: str = "calls_and_sms"
    min_training_span: int = 14 * DAY
    fit_tick_seconds: int = 60
    combiner: str = "product"
    threshold: float = 0.1

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}")
        if self.f1_reset not in F1_RESET:
            raise ValueError(f"f1_reset must be one of {F1_RESET}")
        if self.utc_offset % 60:
            raise ValueError("utc_offset must be a whole number of minutes")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.radius_join <= 0 or self.sigma <= 0:
            raise ValueError("radius_join and sigma must be positive")
        if self.location_staleness < 0:
            raise ValueError("location_staleness must be >= 0")
        if self.fit_tick_seconds < 1:
            raise ValueError("fit_tick_seconds must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

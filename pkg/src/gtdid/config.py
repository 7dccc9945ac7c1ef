"""Design and bootstrap configuration objects."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any

CONTROL_MODES = ("never_treated", "not_yet_treated", "both")
MULTIPLIERS = ("mammen", "rademacher")

_CONTROL_ALIASES = {
    "never": "never_treated",
    "nevertreated": "never_treated",
    "never_treated": "never_treated",
    "notyet": "not_yet_treated",
    "notyettreated": "not_yet_treated",
    "not_yet_treated": "not_yet_treated",
    "both": "both",
}


def normalize_control_mode(mode: str) -> str:
    key = str(mode).strip().lower().replace("-", "_")
    key = _CONTROL_ALIASES.get(key, _CONTROL_ALIASES.get(key.replace("_", ""), key))
    if key not in CONTROL_MODES:
        raise ValueError(f"control_mode must be one of {CONTROL_MODES}, got {mode!r}")
    return key


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings for the multiplier bootstrap.

    Parameters
    ----------
    n_draws : int
        Number of bootstrap draws. At least 100 so that the uniform band
        quantile is meaningful.
    multiplier : {"mammen", "rademacher"}
        Distribution of the per-cluster multipliers.
    seed : int
        Seed for the per-draw random streams.
    alpha : float
        One minus the nominal coverage of pointwise intervals and bands.
    """

    n_draws: int = 999
    multiplier: str = "mammen"
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if int(self.n_draws) != self.n_draws or self.n_draws < 100:
            raise ValueError(f"n_draws must be an integer >= 100, got {self.n_draws}")
        if self.multiplier not in MULTIPLIERS:
            raise ValueError(f"multiplier must be one of {MULTIPLIERS}, got {self.multiplier!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class DesignConfig:
    """Estimation design for group-time ATTs.

    The base period of group ``g`` is always ``g - 1 - anticipation``.
    """

    control_mode: str = "never_treated"
    anticipation: int = 0
    conditional: bool = False
    covariate_names: tuple[str, ...] = ()
    event_window: tuple[int, int] = (-5, 5)
    strict_support: bool = False
    min_weight: float = 0.0
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)

    def __post_init__(self):
        object.__setattr__(self, "control_mode", normalize_control_mode(self.control_mode))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "event_window", tuple(int(e) for e in self.event_window))
        if int(self.anticipation) != self.anticipation or self.anticipation < 0:
            raise ValueError("anticipation must be a nonnegative integer")
        lo, hi = self.event_window
        if not lo <= 0 <= hi:
            raise ValueError(f"event_window must satisfy lower <= 0 <= upper, got {self.event_window}")
        if self.min_weight < 0:
            raise ValueError("min_weight must be nonnegative")
        if isinstance(self.bootstrap, dict):
            object.__setattr__(self, "bootstrap", BootstrapConfig(**self.bootstrap))

    def base_period(self, g: float) -> float:
        return g - 1 - self.anticipation

    def with_(self, **changes) -> "DesignConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["covariate_names"] = list(self.covariate_names)
        d["event_window"] = list(self.event_window)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DesignConfig":
        d = dict(d)
        if "bootstrap" in d and isinstance(d["bootstrap"], dict):
            d["bootstrap"] = BootstrapConfig(**d["bootstrap"])
        return cls(**d)

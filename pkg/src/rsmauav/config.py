from __future__ import annotations

from dataclasses import asdict, dataclass, fields

LOS_POLICIES = ("servedUsers", "allUsers")


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings. Distances in meters."""

    zeta0: float = 50.0
    eta: float = 0.9
    lambda0: float = 0.05
    mu0: float = 0.1
    t_max: int = 15
    los_margin: float = 1.0
    round_low: float = 0.05
    round_high: float = 0.95
    subproblem_tol: float = 1e-6
    los_policy: str = "servedUsers"
    z_min: float = 101.0
    z_max: float = 500.0

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not 0 <= self.round_low < self.round_high <= 1:
            raise ValueError("need 0 <= round_low < round_high <= 1")
        if not self.zeta0 > 0:
            raise ValueError("zeta0 must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.los_policy not in LOS_POLICIES:
            raise ValueError(f"los_policy must be one of {LOS_POLICIES}")
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")

    def to_json(self) -> dict:
        return {to_camel(k): v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, data: dict) -> "SolverConfig":
        known = {to_camel(f.name): f.name for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise KeyError(f"unknown solver fields: {sorted(unknown)}")
        return cls(**{known[k]: v for k, v in data.items()})


def to_camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(w.capitalize() for w in rest)

"""Central tolerance record.

Every numerical threshold used by contract checks lives here so the CLI can
override them with ``--tolerance KEY=VALUE``.
"""
from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    quadrature: float = 1e-10
    inequality_slack: float = 1e-6
    monotone: float = 1e-12
    mean_zero: float = 1e-13
    green_mean: float = 1e-12
    fixed_point: float = 1e-10
    feasibility: float = 1e-12
    residual: float = 1e-6
    descent_rel: float = 1e-12

    def override(self, **kwargs):
        known = {f.name for f in fields(self)}
        bad = set(kwargs) - known
        if bad:
            raise KeyError(f"unknown tolerance(s): {sorted(bad)}")
        return replace(self, **{k: float(v) for k, v in kwargs.items()})


DEFAULT = Tolerances()

"""Experiment descriptions and their validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional

from cloudmesh.errors import InvalidSpec


class Experiment(Enum):
    SETUP_TIME = "SetupTime"
    CONTROL_OVERHEAD = "ControlOverhead"
    DATA_OVERHEAD = "DataOverhead"
    MIGRATION_DEMO = "MigrationDemo"
    SNAPSHOT_ROUND_TRIP = "SnapshotRoundTrip"
    ISOLATION_FUZZ = "IsolationFuzz"


# sweep keys each experiment understands, with defaults
DEFAULT_SWEEPS: dict[Experiment, dict[str, tuple[Any, ...]]] = {
    Experiment.SETUP_TIME: {"clouds": tuple(range(2, 33)), "fabric": ("mst", "mesh")},
    Experiment.CONTROL_OVERHEAD: {"networks": (10, 100, 1000)},
    Experiment.DATA_OVERHEAD: {},
    Experiment.MIGRATION_DEMO: {},
    Experiment.SNAPSHOT_ROUND_TRIP: {"switches": (500,)},
    Experiment.ISOLATION_FUZZ: {"seeds": (0, 1, 2, 3, 4), "packets": (10_000,), "tenants": (3,)},
}


@dataclass(frozen=True)
class BenchSpec:
    experiment: Experiment
    sweep: Mapping[str, tuple[Any, ...]] = field(default_factory=dict)
    repetitions: int = 1
    seed: int = 0
    output_path: Optional[str] = None

    def value(self, key: str) -> tuple[Any, ...]:
        if key in self.sweep:
            return tuple(self.sweep[key])
        return DEFAULT_SWEEPS[self.experiment][key]


def _positive_ints(key: str, values: tuple[Any, ...], minimum: int) -> None:
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            raise InvalidSpec(f"sweep {key!r} needs integers >= {minimum}, got {v!r}")


def validate_spec(spec: BenchSpec) -> BenchSpec:
    """Reject malformed specs before anything runs or gets written."""
    if not isinstance(spec.experiment, Experiment):
        raise InvalidSpec(f"unknown experiment {spec.experiment!r}")
    if isinstance(spec.repetitions, bool) or not isinstance(spec.repetitions, int) or spec.repetitions < 1:
        raise InvalidSpec("repetitions must be an integer >= 1")
    if isinstance(spec.seed, bool) or not isinstance(spec.seed, int):
        raise InvalidSpec("seed must be an integer")
    allowed = DEFAULT_SWEEPS[spec.experiment]
    for key, values in spec.sweep.items():
        if key not in allowed:
            raise InvalidSpec(f"{spec.experiment.value} has no sweep parameter {key!r}")
        if len(tuple(values)) == 0:
            raise InvalidSpec(f"sweep {key!r} is empty")
    minimums = {"clouds": 2, "networks": 1, "switches": 1, "packets": 1, "tenants": 1, "seeds": 0}
    for key in allowed:
        values = spec.value(key)
        if key == "fabric":
            bad = [v for v in values if v not in ("mst", "mesh")]
            if bad:
                raise InvalidSpec(f"fabric must be 'mst' or 'mesh', got {bad}")
        else:
            _positive_ints(key, values, minimums[key])
    return spec

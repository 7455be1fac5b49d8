"""Process CPU / wall-clock measurement for pipeline stages."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, TypeVar

T = TypeVar("T")

__all__ = ["StageTiming", "time_stage"]


@dataclass(frozen=True)
class StageTiming:
    cpu_seconds: float
    wall_seconds: float

    def __add__(self, other: "StageTiming") -> "StageTiming":
        return StageTiming(
            cpu_seconds=self.cpu_seconds + other.cpu_seconds,
            wall_seconds=self.wall_seconds + other.wall_seconds,
        )


def time_stage(
    label: str,
    fn: Callable[[], T],
    timings: dict[str, StageTiming] | None = None,
) -> tuple[T, float, float]:
    """Run ``fn`` and measure its process CPU time and wall time.

    When an accumulator dict is given, the measurement is added under
    ``label`` (summing with any previous entry). Timed stages should not run
    in parallel with siblings, or CPU attribution becomes meaningless.
    """
    cpu0 = time.process_time()
    wall0 = time.perf_counter()
    result = fn()
    cpu = time.process_time() - cpu0
    wall = time.perf_counter() - wall0
    if timings is not None:
        stamp = StageTiming(cpu_seconds=cpu, wall_seconds=wall)
        timings[label] = timings[label] + stamp if label in timings else stamp
    return result, cpu, wall

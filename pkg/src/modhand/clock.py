"""Time sources for node and coordinator loops.

Every component that schedules work (telemetry ticks, heartbeats, grasp
phase deadlines) reads time from a small clock interface instead of the
system clock directly.  Two implementations are provided:

* :class:`WallClock` — real time, for live runs.
* :class:`VirtualClock` — manually advanced time, for deterministic
  simulation and tests.  Advancing is explicit, so a test can step a
  five-second scenario in microseconds of real time and still observe
  exact frame counts.

All timestamps are integer microseconds, matching the wire protocol.
"""

from __future__ import annotations

import time
from typing import Protocol, runtime_checkable

__all__ = ["Clock", "WallClock", "VirtualClock"]


@runtime_checkable
class Clock(Protocol):
    """Minimal time source: current time in microseconds plus sleep."""

    def now_us(self) -> int:
        """Current time in integer microseconds (monotone, non-negative)."""
        ...

    def sleep_until_us(self, deadline_us: int) -> None:
        """Block until ``now_us() >= deadline_us`` (no-op if already past)."""
        ...


class WallClock:
    """Monotonic real-time clock, zeroed at construction."""

    def __init__(self) -> None:
        self._origin_ns = time.monotonic_ns()

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._origin_ns) // 1000

    def sleep_until_us(self, deadline_us: int) -> None:
        while True:
            remaining = deadline_us - self.now_us()
            if remaining <= 0:
                return
            # Sleep slightly short of the deadline, then spin-check once.
            time.sleep(remaining / 1e6)


class VirtualClock:
    """Manually driven clock for deterministic runs.

    ``sleep_until_us`` advances time immediately: a component that waits
    for a deadline observes it as having arrived.  A scheduler that wants
    tighter control should call :meth:`advance_to` itself and never let
    components sleep.
    """

    def __init__(self, start_us: int = 0) -> None:
        if start_us < 0:
            raise ValueError("clock start must be non-negative")
        self._now_us = int(start_us)

    def now_us(self) -> int:
        return self._now_us

    def advance_to(self, t_us: int) -> None:
        """Move time forward to ``t_us``; moving backwards is an error."""
        if t_us < self._now_us:
            raise ValueError(
                f"cannot move virtual clock backwards "
                f"({t_us} < {self._now_us})"
            )
        self._now_us = int(t_us)

    def advance(self, dt_us: int) -> None:
        """Move time forward by ``dt_us`` microseconds."""
        if dt_us < 0:
            raise ValueError("cannot advance by a negative duration")
        self._now_us += int(dt_us)

    def sleep_until_us(self, deadline_us: int) -> None:
        if deadline_us > self._now_us:
            self._now_us = int(deadline_us)

"""Deterministic co-simulation of a hand: kernel + rig builder.

The kernel runs any set of components that expose the scheduling pair
``next_due_us() -> int | None`` and ``poll() -> None`` (finger nodes and
the coordinator both do).  It repeatedly advances a virtual clock to the
earliest pending activity — a component's due time or a scripted
scenario event — then fires due scenario events and polls every
component in a fixed registration order.  With producers registered
before consumers, bytes sent during a quantum are ingested in the same
quantum; commands flowing the other way are picked up at the receiver's
next activity (at most one plant step later).  Identical inputs
therefore produce byte-identical runs.

The end time of :meth:`SimKernel.run_until` is exclusive: activity
scheduled exactly at the end time does not run, so a five-second run
contains exactly the ticks in [0 s, 5 s).

:func:`build_sim_hand` assembles the standard rig — one simulated
finger node per configured mount, wired to a coordinator over
in-process channels — ready for scenario scripting.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Protocol

from modhand.clock import VirtualClock
from modhand.config import (
    FingerParams,
    HandConfiguration,
    geometry_preset,
    params_preset,
)
from modhand.coordinator import Coordinator, CoordinatorConfig
from modhand.dynamics import SimulationState
from modhand.node import FingerNode, NodeConfig, SimFingerDriver
from modhand.transport import channel_pair

__all__ = ["Schedulable", "SimKernel", "HandRig", "build_sim_hand"]


class Schedulable(Protocol):
    """Anything the kernel can drive."""

    def next_due_us(self) -> int | None: ...

    def poll(self) -> None: ...


@dataclass(order=True)
class _Event:
    t_us: int
    order: int
    fn: Callable[[], None] = field(compare=False)


class SimKernel:
    """Cooperative scheduler over one virtual clock."""

    def __init__(self, clock: VirtualClock | None = None):
        self.clock = clock or VirtualClock()
        self._components: list[Schedulable] = []
        self._events: list[_Event] = []
        self._event_counter = 0

    def add(self, component: Schedulable) -> Schedulable:
        """Register a component; poll order is registration order."""
        self._components.append(component)
        return component

    def at(self, t_us: int, fn: Callable[[], None]) -> None:
        """Schedule a scenario event; same-time events run in insertion order."""
        if t_us < self.clock.now_us():
            raise ValueError(f"cannot schedule event in the past ({t_us})")
        heapq.heappush(self._events, _Event(t_us, self._event_counter, fn))
        self._event_counter += 1

    def _next_due(self) -> int | None:
        dues = [c.next_due_us() for c in self._components]
        pending = [d for d in dues if d is not None]
        if self._events:
            pending.append(self._events[0].t_us)
        return min(pending) if pending else None

    def run_until(self, t_us: int) -> None:
        """Run everything scheduled before (exclusive) ``t_us``."""
        while True:
            due = self._next_due()
            if due is None or due >= t_us:
                break
            self.clock.advance_to(due)
            while self._events and self._events[0].t_us <= due:
                heapq.heappop(self._events).fn()
            for component in self._components:
                component.poll()
        self.clock.advance_to(max(t_us, self.clock.now_us()))

    def run_for(self, duration_s: float) -> None:
        self.run_until(self.clock.now_us() + round(duration_s * 1e6))


@dataclass
class HandRig:
    """A wired-up simulated hand: kernel, coordinator, per-finger nodes."""

    hand: HandConfiguration
    clock: VirtualClock
    kernel: SimKernel
    coordinator: Coordinator
    nodes: dict[int, FingerNode]
    states: dict[int, SimulationState]

    def start(self) -> None:
        """Announce every node and let the coordinator register them."""
        for node in self.nodes.values():
            if node.lifecycle == "init":
                node.start()
        self.coordinator.poll()

    def detach(self, finger_id: int) -> None:
        """Cleanly stop one node, as if its module were unplugged."""
        self.nodes[finger_id].stop("detached")


def build_sim_hand(
    hand: HandConfiguration,
    *,
    seed: int = 0,
    params_name: str = "default",
    params: FingerParams | None = None,
    node_overrides: dict | None = None,
    coordinator_config: CoordinatorConfig | None = None,
    clock: VirtualClock | None = None,
) -> HandRig:
    """Assemble one simulated node per configured finger plus the hub.

    ``seed`` fixes every finger's sensor-noise stream (per-finger
    streams stay distinct); ``node_overrides`` feeds extra NodeConfig
    fields (rates, sim_dt) to every node.  ``params`` overrides
    ``params_name`` with an already-loaded parameter set.
    """
    kernel = SimKernel(clock)
    coordinator = Coordinator(hand, kernel.clock, coordinator_config)
    nodes: dict[int, FingerNode] = {}
    states: dict[int, SimulationState] = {}
    overrides = node_overrides or {}
    if params is None:
        params = params_preset(params_name)
    for mount in hand.fingers:
        geometry = geometry_preset(mount.geometry_preset)
        state = SimulationState.from_params(geometry, params)
        driver = SimFingerDriver(state, sensor_seed=(seed << 8) | mount.finger_id)
        node_end, coordinator_end = channel_pair()
        config = NodeConfig(
            finger_id=mount.finger_id, role=mount.role, **overrides
        )
        node = FingerNode(config, node_end, kernel.clock, driver)
        coordinator.attach(coordinator_end)
        kernel.add(node)
        nodes[mount.finger_id] = node
        states[mount.finger_id] = state
    kernel.add(coordinator)  # consumers poll after producers
    return HandRig(
        hand=hand,
        clock=kernel.clock,
        kernel=kernel,
        coordinator=coordinator,
        nodes=nodes,
        states=states,
    )

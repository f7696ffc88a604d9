"""Regenerate the JSON fixtures the console tests run against.

Drives a deterministic simulated five-finger hand through the bridge
core (no sockets involved), scripting a short operator session:

* settle into the rest pose,
* execute the ``tip_pinch`` grasp to completion,
* retarget one finger with a ``set_joint`` command,
* poke another finger so the touch detector fires.

Everything the bridge emitted — the ``hello``, a spread of ``snapshot``
messages, the ``grasp_report``, and the first ``touch`` — is written to
``session.json`` next to this script. The console's tests replay those
messages through the client-side code and cross-check its fingertip
math against the tips the server computed.

Run from the repository root after installing the package:

    python3 frontend/fixtures/generate.py
"""

from __future__ import annotations

import json
import pathlib

from modhand.bridge import BridgeCore
from modhand.config import hand_preset
from modhand.sim import build_sim_hand

OUT = pathlib.Path(__file__).resolve().parent / "session.json"

STEP_S = 0.005


def drive(rig, core, duration_s: float) -> list[dict]:
    """Advance virtual time in small steps, collecting bridge output."""
    messages = []
    for _ in range(round(duration_s / STEP_S)):
        rig.kernel.run_for(STEP_S)
        messages.extend(core.poll())
    return messages


def thin(snapshots: list[dict], keep_every: int = 3, keep_tail: int = 5) -> list[dict]:
    """Keep every ``keep_every``-th snapshot plus the last ``keep_tail``."""
    head = snapshots[: -keep_tail or None]
    tail = snapshots[len(head):]
    return head[::keep_every] + tail


def main() -> None:
    rig = build_sim_hand(hand_preset("five_finger"), seed=0, params_name="quiet")
    core = BridgeCore(rig, snapshot_period_us=33_333)
    rig.start()

    hello = core.hello()
    messages = drive(rig, core, 0.5)

    reply = core.handle_command({"cmd": "grasp", "name": "tip_pinch"})
    assert reply["type"] == "ack", reply
    messages += drive(rig, core, 3.0)

    reply = core.handle_command(
        {"cmd": "set_joint", "finger_id": 4, "angles": [0.3, 0.25, 0.2]}
    )
    assert reply["type"] == "ack", reply
    messages += drive(rig, core, 1.0)

    reply = core.handle_command({"cmd": "inject_touch", "finger_id": 2})
    assert reply["type"] == "ack", reply
    messages += drive(rig, core, 0.5)

    snapshots = [m for m in messages if m["type"] == "snapshot"]
    reports = [m for m in messages if m["type"] == "grasp_report"]
    touches = [m for m in messages if m["type"] == "touch"]
    assert len(reports) == 1, f"expected one grasp report, got {len(reports)}"
    assert reports[0]["report"]["success"], reports[0]
    assert touches, "expected the injected poke to raise a touch event"

    fixture = {
        "hello": hello,
        "snapshots": thin(snapshots),
        "report": reports[0],
        "touch": touches[0],
    }
    OUT.write_text(json.dumps(fixture, indent=1, sort_keys=True) + "\n")
    print(
        f"wrote {OUT.name}: {len(fixture['snapshots'])} snapshots "
        f"(of {len(snapshots)} captured), 1 report, 1 touch"
    )


if __name__ == "__main__":
    main()

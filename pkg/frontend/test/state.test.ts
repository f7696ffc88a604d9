/**
 * Console store behavior: folding bridge messages into view state,
 * greying rules, touch flash lifecycle, and the event log.
 */

import { describe, expect, it } from "vitest";

import type {
  RegistryMessage,
  SnapshotMessage,
} from "../src/messages.js";
import { parseBridgeMessage } from "../src/messages.js";
import {
  ConsoleStore,
  FLASH_MS,
  LOG_LIMIT,
  STALE_AFTER_US,
} from "../src/state.js";
import { loadSession } from "./fixtures.js";

function storeWithHello(): ConsoleStore {
  const store = new ConsoleStore();
  store.apply(loadSession().hello, 0);
  return store;
}

function registry(
  event: RegistryMessage["event"],
  fingerId: number,
): RegistryMessage {
  return { type: "registry", event, finger_id: fingerId, role: "middle" };
}

describe("hello handling", () => {
  it("builds one view per described finger, in id order", () => {
    const store = storeWithHello();
    const views = store.fingerViews();
    expect(views.map((v) => v.fingerId)).toEqual([0, 1, 2, 3, 4]);
    expect(views.map((v) => v.role)).toEqual([
      "thumb",
      "index",
      "middle",
      "ring",
      "little",
    ]);
    for (const view of views) {
      expect(view.angles).toBeNull();
      expect(view.attached).toBe(true);
    }
  });

  it("keeps the last pose across a reconnect hello", () => {
    const session = loadSession();
    const store = storeWithHello();
    store.apply(session.snapshots.at(-1)!, 0);
    const before = store.fingers.get(4)!.angles;
    expect(before).not.toBeNull();
    store.apply(session.hello, 0);
    expect(store.fingers.get(4)!.angles).toEqual(before);
  });
});

describe("full captured session replay", () => {
  it("ends in the final snapshot's pose with the report stored", () => {
    const session = loadSession();
    const store = new ConsoleStore();
    store.setConnection("open");
    store.apply(session.hello, 0);
    for (const snapshot of session.snapshots) {
      store.apply(snapshot, snapshot.t_us / 1000);
    }
    store.apply(session.touch, 4_510_000 / 1000);
    store.apply(session.report, 5_000_000 / 1000);

    const last = session.snapshots.at(-1)!;
    expect(store.tUs).toBe(last.t_us);
    for (const entry of last.fingers) {
      const view = store.fingers.get(entry.finger_id)!;
      expect(view.angles).toEqual(entry.angles);
      expect(view.tip).toEqual(entry.tip);
      expect(store.isGreyed(view)).toBe(false);
    }
    expect(store.lastReport).toBe(session.report.report);
    expect(store.grasp).toBeNull();
    expect(store.log.some((line) => line.includes("touch on middle"))).toBe(true);
    expect(
      store.log.some((line) => line.includes("grasp tip_pinch: success")),
    ).toBe(true);
  });

  it("tracks the in-flight grasp phases from snapshots", () => {
    const session = loadSession();
    const store = storeWithHello();
    const phases = new Set<string>();
    for (const snapshot of session.snapshots) {
      store.apply(snapshot, 0);
      if (store.grasp !== null) {
        expect(store.grasp.name).toBe("tip_pinch");
        phases.add(store.grasp.phase);
      }
    }
    expect(phases).toContain("preshape");
    expect(phases).toContain("close");
    expect(store.grasp).toBeNull();
  });
});

describe("greying rules", () => {
  it("greys a finger the server flags inactive and restores it", () => {
    const store = storeWithHello();
    const view = store.fingers.get(2)!;
    expect(store.isGreyed(view)).toBe(false);
    store.apply(registry("stale", 2), 0);
    expect(store.isGreyed(view)).toBe(true);
    store.apply(registry("active", 2), 0);
    expect(store.isGreyed(view)).toBe(false);
  });

  it("keeps a detached finger greyed with its last pose intact", () => {
    const session = loadSession();
    const store = storeWithHello();
    store.apply(session.snapshots.at(-1)!, 0);
    const view = store.fingers.get(2)!;
    const pose = view.angles;
    store.apply(registry("detached", 2), 0);
    expect(view.attached).toBe(false);
    expect(store.isGreyed(view)).toBe(true);
    expect(view.angles).toEqual(pose);
    store.apply(registry("registered", 2), 0);
    expect(view.attached).toBe(true);
    expect(store.isGreyed(view)).toBe(false);
  });

  it("greys on old telemetry even when still flagged active", () => {
    const session = loadSession();
    const store = storeWithHello();
    const snapshot = structuredClone(session.snapshots.at(-1)!);
    snapshot.fingers[1].staleness_us = STALE_AFTER_US + 1;
    store.apply(snapshot, 0);
    expect(store.isGreyed(store.fingers.get(1)!)).toBe(true);
    expect(store.isGreyed(store.fingers.get(0)!)).toBe(false);
  });

  it("preserves the previous pose through a null-angles snapshot", () => {
    const session = loadSession();
    const store = storeWithHello();
    store.apply(session.snapshots.at(-1)!, 0);
    const before = store.fingers.get(3)!.angles;
    const snapshot = structuredClone(session.snapshots.at(-1)!);
    snapshot.fingers[3].angles = null;
    snapshot.fingers[3].tip = null;
    snapshot.fingers[3].staleness_us = 777;
    store.apply(snapshot, 0);
    const view = store.fingers.get(3)!;
    expect(view.angles).toEqual(before);
    expect(view.stalenessUs).toBe(777);
  });
});

describe("touch flashes", () => {
  it("shows a flash for its window, then prunes it", () => {
    const store = storeWithHello();
    store.apply(loadSession().touch, 1000);
    expect(store.activeFlashes(1000 + FLASH_MS - 1)).toHaveLength(1);
    expect(store.activeFlashes(1000 + FLASH_MS + 1)).toHaveLength(0);
    expect(store.flashes).toHaveLength(0);
  });
});

describe("connection state and log", () => {
  it("records transitions once and caps the log", () => {
    const store = new ConsoleStore();
    store.setConnection("open");
    store.setConnection("open");
    expect(store.log.filter((l) => l === "bridge open")).toHaveLength(1);
    store.setConnection("lost");
    expect(store.connection).toBe("lost");
    for (let i = 0; i < 3 * LOG_LIMIT; i += 1) {
      store.apply({ type: "error", detail: `x${i}` }, 0);
    }
    expect(store.log).toHaveLength(LOG_LIMIT);
    expect(store.lastError).toBe(`x${3 * LOG_LIMIT - 1}`);
  });

  it("clears the last error on an ack", () => {
    const store = storeWithHello();
    store.apply({ type: "error", detail: "a grasp is still executing" }, 0);
    expect(store.lastError).not.toBeNull();
    store.apply({ type: "ack", cmd: "grasp", name: "tripod" }, 0);
    expect(store.lastError).toBeNull();
  });
});

describe("message parsing", () => {
  it("round-trips every captured message type", () => {
    const session = loadSession();
    const wire = [
      session.hello,
      session.snapshots[0],
      session.touch,
      session.report,
    ];
    for (const message of wire) {
      expect(parseBridgeMessage(JSON.stringify(message))).toEqual(message);
    }
  });

  it("ignores what it cannot understand", () => {
    expect(parseBridgeMessage("not json at all")).toBeNull();
    expect(parseBridgeMessage('"a bare string"')).toBeNull();
    expect(parseBridgeMessage("[1,2,3]")).toBeNull();
    expect(parseBridgeMessage("{}")).toBeNull();
    expect(parseBridgeMessage('{"type": "brand_new_thing"}')).toBeNull();
  });

  it("applies an unknown finger id without exploding", () => {
    const store = storeWithHello();
    const snapshot: SnapshotMessage = {
      type: "snapshot",
      t_us: 1,
      grasp: null,
      fingers: [
        {
          finger_id: 9,
          role: "mystery",
          angles: [0, 0, 0],
          tip: [0, 0],
          staleness_us: 0,
          active: true,
        },
      ],
    };
    store.apply(snapshot, 0);
    expect(store.fingers.has(9)).toBe(false);
    store.apply({ type: "registry", event: "detached", finger_id: 9 }, 0);
    expect(store.log.at(-1)).toContain("#9");
  });
});

/**
 * Loader for the captured-session fixture. `fixtures/session.json` is
 * real bridge output from a scripted simulated session (see
 * `fixtures/generate.py`): the hello, a spread of snapshots covering
 * rest pose, every grasp phase, and a retargeted finger, plus the
 * grasp report and a touch event.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type {
  FingerDescriptor,
  GraspReportMessage,
  HelloMessage,
  SnapshotMessage,
  TouchMessage,
} from "../src/messages.js";

export interface SessionFixture {
  hello: HelloMessage;
  snapshots: SnapshotMessage[];
  report: GraspReportMessage;
  touch: TouchMessage;
}

const HERE = dirname(fileURLToPath(import.meta.url));

export function loadSession(): SessionFixture {
  const raw = readFileSync(join(HERE, "..", "fixtures", "session.json"), "utf8");
  return JSON.parse(raw) as SessionFixture;
}

export function descriptorsById(
  hello: HelloMessage,
): Map<number, FingerDescriptor> {
  return new Map(hello.hand.fingers.map((finger) => [finger.finger_id, finger]));
}

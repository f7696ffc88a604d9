/**
 * The console duplicates the server's fingertip math on purpose — the
 * skeleton must be drawn from the same chain the coordinator uses.
 * These tests hold the client side of that bargain: every tip the
 * client computes from captured snapshot angles must land within a
 * micrometer of the tip the server published in the same snapshot.
 */

import { describe, expect, it } from "vitest";

import {
  REST_ANGLES,
  distance,
  fingerChain,
  fingerReach,
  fingerTip,
  jointPoint,
} from "../src/fk.js";
import type { LinkLengths, MountPose } from "../src/messages.js";
import { descriptorsById, loadSession } from "./fixtures.js";

const FLAT_MOUNT: MountPose = { x: 0, y: 0, yaw: 0 };
const LINKS: LinkLengths = { l0: 0.024, l1: 0.025, l2: 0.031, l3: 0.045 };

describe("fingertips vs captured coordinator snapshots", () => {
  it("agrees with every snapshot tip to within 1e-6 m", () => {
    const session = loadSession();
    const descriptors = descriptorsById(session.hello);
    let checked = 0;
    let worst = 0;
    for (const snapshot of session.snapshots) {
      for (const finger of snapshot.fingers) {
        if (finger.angles === null || finger.tip === null) {
          continue;
        }
        const descriptor = descriptors.get(finger.finger_id);
        expect(descriptor).toBeDefined();
        const tip = fingerTip(descriptor!.mount, descriptor!.links, finger.angles);
        worst = Math.max(worst, distance(tip, finger.tip));
        checked += 1;
      }
    }
    expect(checked).toBeGreaterThanOrEqual(200);
    expect(worst).toBeLessThanOrEqual(1e-6);
  });

  it("covers bent poses, not just the rest pose", () => {
    const session = loadSession();
    const bent = session.snapshots.filter((snapshot) =>
      snapshot.fingers.some(
        (finger) =>
          finger.angles !== null &&
          Math.max(...finger.angles.map(Math.abs)) > 0.1,
      ),
    );
    expect(bent.length).toBeGreaterThanOrEqual(10);
  });
});

describe("finger chain geometry", () => {
  it("returns base, three joints, and tip in order", () => {
    const chain = fingerChain(FLAT_MOUNT, LINKS, [0.3, 0.2, 0.1]);
    expect(chain).toHaveLength(5);
    const segmentLengths = [LINKS.l3, LINKS.l2, LINKS.l1, LINKS.l0];
    for (let i = 0; i < 4; i += 1) {
      expect(distance(chain[i], chain[i + 1])).toBeCloseTo(segmentLengths[i], 12);
    }
  });

  it("renders the rest pose as a straight finger along the mount yaw", () => {
    const mount: MountPose = { x: 0.02, y: -0.01, yaw: Math.PI / 3 };
    const chain = fingerChain(mount, LINKS, REST_ANGLES);
    const reach = fingerReach(LINKS);
    const tip = chain[chain.length - 1];
    expect(tip[0]).toBeCloseTo(mount.x + reach * Math.cos(mount.yaw), 12);
    expect(tip[1]).toBeCloseTo(mount.y + reach * Math.sin(mount.yaw), 12);
    // Every intermediate point sits on the same ray.
    for (const [x, y] of chain.slice(1)) {
      const angle = Math.atan2(y - mount.y, x - mount.x);
      expect(angle).toBeCloseTo(mount.yaw, 10);
    }
  });

  it("flexion-positive angles curl the finger counterclockwise", () => {
    const straight = fingerTip(FLAT_MOUNT, LINKS, REST_ANGLES);
    const curled = fingerTip(FLAT_MOUNT, LINKS, [0.5, 0.5, 0.5]);
    expect(curled[1]).toBeGreaterThan(straight[1]);
    expect(curled[0]).toBeLessThan(straight[0]);
  });

  it("maps touch joint indices distal-first onto the chain", () => {
    const chain = fingerChain(FLAT_MOUNT, LINKS, [0.3, 0.2, 0.1]);
    expect(jointPoint(chain, 0)).toEqual(chain[3]); // distal
    expect(jointPoint(chain, 1)).toEqual(chain[2]); // middle
    expect(jointPoint(chain, 2)).toEqual(chain[1]); // proximal
    expect(jointPoint(chain, 99)).toEqual(chain[1]); // clamped
  });

  it("sums the link lengths into the reach", () => {
    expect(fingerReach(LINKS)).toBeCloseTo(0.125, 12);
  });
});

/**
 * Client-side finger kinematics.
 *
 * The console draws the skeleton from the same chain the server uses
 * (docs/ui-bridge.md spells it out): in the finger's local frame, with
 * flexion-positive angles `[t1, t2, t3]` = (distal, middle, proximal),
 *
 *   p   = (l3, 0)
 *   m   = p + l2 * (cos t3,         sin t3)
 *   d   = m + l1 * (cos(t3 + t2),   sin(t3 + t2))
 *   tip = d + l0 * (cos(t3+t2+t1),  sin(t3+t2+t1))
 *
 * then rotate by the mount yaw and translate by the mount (x, y). The
 * tips this module computes must agree with the `tip` field of every
 * snapshot to within a micrometer; the tests enforce that against
 * captured sessions.
 */

import type { JointTriple, LinkLengths, MountPose, Point } from "./messages.js";

export const REST_ANGLES: JointTriple = [0, 0, 0];

/**
 * Joint centers plus fingertip in the hand frame, root to tip:
 * `[base, proximal, middle, distal, tip]`.
 */
export function fingerChain(
  mount: MountPose,
  links: LinkLengths,
  angles: JointTriple,
): Point[] {
  const [t1, t2, t3] = angles;
  const local: Point[] = [[0, 0]];
  let x = links.l3;
  let y = 0;
  local.push([x, y]);
  let heading = t3;
  x += links.l2 * Math.cos(heading);
  y += links.l2 * Math.sin(heading);
  local.push([x, y]);
  heading += t2;
  x += links.l1 * Math.cos(heading);
  y += links.l1 * Math.sin(heading);
  local.push([x, y]);
  heading += t1;
  x += links.l0 * Math.cos(heading);
  y += links.l0 * Math.sin(heading);
  local.push([x, y]);

  const c = Math.cos(mount.yaw);
  const s = Math.sin(mount.yaw);
  return local.map(([lx, ly]): Point => [
    mount.x + c * lx - s * ly,
    mount.y + s * lx + c * ly,
  ]);
}

/** Fingertip position in the hand frame. */
export function fingerTip(
  mount: MountPose,
  links: LinkLengths,
  angles: JointTriple,
): Point {
  const chain = fingerChain(mount, links, angles);
  return chain[chain.length - 1];
}

/** Fully stretched finger length — how far the tip can get from the mount. */
export function fingerReach(links: LinkLengths): number {
  return links.l0 + links.l1 + links.l2 + links.l3;
}

export function distance(a: Point, b: Point): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}

/**
 * Canvas point for a touch's joint index (0 = distal, 2 = proximal):
 * the chain stores joints root-to-tip, so index from the `distal`
 * entry backwards.
 */
export function jointPoint(chain: Point[], joint: number): Point {
  const clamped = Math.min(Math.max(joint, 0), 2);
  return chain[3 - clamped];
}

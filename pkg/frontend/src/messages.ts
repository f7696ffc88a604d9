/**
 * Wire types for the operator bridge. Every WebSocket text message in
 * either direction is one JSON object; these interfaces mirror the
 * schema in docs/ui-bridge.md field for field.
 */

/** Planar base pose of a finger in the hand frame (meters, radians). */
export interface MountPose {
  x: number;
  y: number;
  yaw: number;
}

/** Segment lengths in meters. `l3` is the fixed root link; the
 * proximal, middle, and distal joints swing `l2`, `l1`, `l0` in turn. */
export interface LinkLengths {
  l0: number;
  l1: number;
  l2: number;
  l3: number;
}

/** Joint angles `[t1, t2, t3]` = (distal, middle, proximal), radians,
 * flexion-positive. */
export type JointTriple = [number, number, number];

/** A 2D point in the hand frame (meters). */
export type Point = [number, number];

export interface FingerDescriptor {
  finger_id: number;
  role: string;
  mount: MountPose;
  links: LinkLengths;
}

export interface HelloMessage {
  type: "hello";
  protocol: number;
  snapshot_period_us: number;
  grasps: string[];
  hand: {
    name: string;
    fingers: FingerDescriptor[];
  };
}

export interface FingerSnapshot {
  finger_id: number;
  role: string;
  /** Quantized joint angles, or null before the first telemetry. */
  angles: JointTriple | null;
  /** Server-computed fingertip in the hand frame; null when `angles` is. */
  tip: Point | null;
  /** Age of the newest telemetry in microseconds. Render it, never hide it. */
  staleness_us: number;
  /** False once the node misses its liveness window. */
  active: boolean;
}

export interface GraspPhase {
  name: string;
  phase: string;
}

export interface SnapshotMessage {
  type: "snapshot";
  t_us: number;
  grasp: GraspPhase | null;
  fingers: FingerSnapshot[];
}

export interface TouchMessage {
  type: "touch";
  finger_id: number;
  /** Index of the joint with the largest deviation; 0 = distal. */
  joint: number;
  onset_us: number;
  peak_rad: number;
}

export type RegistryEvent = "registered" | "stale" | "active" | "detached";

export interface RegistryMessage {
  type: "registry";
  event: RegistryEvent;
  finger_id: number;
  role?: string;
  geometry_warning?: boolean;
}

export interface FingerReport {
  finger_id: number;
  role: string;
  target: JointTriple;
  /** Null when the finger never reported during the grasp. */
  final: JointTriple | null;
  /** Entries are null exactly when `final` is. */
  per_joint_error: [number | null, number | null, number | null];
  /** Null exactly when `final` is. */
  error_norm: number | null;
  converged: boolean;
}

export interface GraspReportBody {
  grasp: string;
  success: boolean;
  timed_out: boolean;
  started_us: number;
  finished_us: number;
  fingers: FingerReport[];
}

export interface GraspReportMessage {
  type: "grasp_report";
  report: GraspReportBody;
}

export interface AckMessage {
  type: "ack";
  cmd: string;
  name?: string;
  finger_id?: number;
}

export interface BridgeErrorMessage {
  type: "error";
  detail: string;
  cmd?: string;
}

export type BridgeMessage =
  | HelloMessage
  | SnapshotMessage
  | TouchMessage
  | RegistryMessage
  | GraspReportMessage
  | AckMessage
  | BridgeErrorMessage;

const MESSAGE_TYPES = new Set([
  "hello",
  "snapshot",
  "touch",
  "registry",
  "grasp_report",
  "ack",
  "error",
]);

/**
 * Parse one incoming WebSocket text payload. Returns null for anything
 * that is not a JSON object carrying a known `type` — the console
 * ignores what it does not understand instead of crashing mid-session.
 */
export function parseBridgeMessage(text: string): BridgeMessage | null {
  let value: unknown;
  try {
    value = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    return null;
  }
  const type = (value as { type?: unknown }).type;
  if (typeof type !== "string" || !MESSAGE_TYPES.has(type)) {
    return null;
  }
  return value as BridgeMessage;
}

/** Client → server commands. Sent only on explicit user action. */
export interface GraspCommand {
  cmd: "grasp";
  name: string;
}

export interface SetJointCommand {
  cmd: "set_joint";
  finger_id: number;
  angles: JointTriple;
}

export interface InjectTouchCommand {
  cmd: "inject_touch";
  finger_id: number;
  joint?: number;
  torque?: number;
  duration_s?: number;
}

export type BridgeCommand = GraspCommand | SetJointCommand | InjectTouchCommand;

/**
 * Console state: one store fed by bridge messages, read by the
 * renderer and the control panel.
 *
 * The store never talks back to the bridge. Commands originate in DOM
 * event handlers only, so nothing in here can send one — state updates
 * cannot trigger hand motion.
 */

import type {
  BridgeMessage,
  FingerSnapshot,
  GraspPhase,
  GraspReportBody,
  HelloMessage,
  JointTriple,
  LinkLengths,
  MountPose,
  Point,
  RegistryMessage,
  TouchMessage,
} from "./messages.js";

/** Telemetry older than this is rendered greyed even if the server has
 * not flipped the finger inactive yet. Matches the hub's own liveness
 * window. */
export const STALE_AFTER_US = 3_000_000;

/** How long a touch halo stays on screen. */
export const FLASH_MS = 450;

/** Event-log entries kept for the side panel. */
export const LOG_LIMIT = 50;

export type ConnectionState = "connecting" | "open" | "lost";

export interface FingerView {
  fingerId: number;
  role: string;
  mount: MountPose;
  links: LinkLengths;
  /** Last received pose; null before the first telemetry. */
  angles: JointTriple | null;
  /** Server-computed fingertip matching `angles`. */
  tip: Point | null;
  stalenessUs: number;
  /** Server liveness verdict from the latest snapshot/registry event. */
  active: boolean;
  /** False after a `detached` registry event. */
  attached: boolean;
}

export interface TouchFlash {
  fingerId: number;
  joint: number;
  peakRad: number;
  onsetUs: number;
  shownAtMs: number;
}

export class ConsoleStore {
  connection: ConnectionState = "connecting";
  hello: HelloMessage | null = null;
  fingers = new Map<number, FingerView>();
  grasp: GraspPhase | null = null;
  lastReport: GraspReportBody | null = null;
  lastError: string | null = null;
  flashes: TouchFlash[] = [];
  log: string[] = [];
  /** Simulated time of the latest snapshot, microseconds. */
  tUs = 0;

  setConnection(state: ConnectionState): void {
    if (state === this.connection) {
      return;
    }
    this.connection = state;
    this.pushLog(`bridge ${state}`);
  }

  /** Fold one parsed bridge message into the view state. `nowMs` is the
   * client clock used to expire touch flashes. */
  apply(message: BridgeMessage, nowMs: number): void {
    switch (message.type) {
      case "hello":
        this.applyHello(message);
        break;
      case "snapshot":
        this.applySnapshot(message.t_us, message.grasp, message.fingers);
        break;
      case "touch":
        this.applyTouch(message, nowMs);
        break;
      case "registry":
        this.applyRegistry(message);
        break;
      case "grasp_report":
        this.lastReport = message.report;
        this.grasp = null;
        this.pushLog(
          `grasp ${message.report.grasp}: ` +
            (message.report.timed_out
              ? "timed out"
              : message.report.success
                ? "success"
                : "failed"),
        );
        break;
      case "ack":
        this.lastError = null;
        break;
      case "error":
        this.lastError = message.detail;
        this.pushLog(`error: ${message.detail}`);
        break;
    }
  }

  private applyHello(hello: HelloMessage): void {
    this.hello = hello;
    const fresh = new Map<number, FingerView>();
    for (const finger of hello.hand.fingers) {
      const previous = this.fingers.get(finger.finger_id);
      fresh.set(finger.finger_id, {
        fingerId: finger.finger_id,
        role: finger.role,
        mount: finger.mount,
        links: finger.links,
        angles: previous?.angles ?? null,
        tip: previous?.tip ?? null,
        stalenessUs: previous?.stalenessUs ?? 0,
        active: previous?.active ?? true,
        attached: previous?.attached ?? true,
      });
    }
    this.fingers = fresh;
    this.pushLog(
      `hello: ${hello.hand.name}, ${hello.hand.fingers.length} fingers, ` +
        `${hello.grasps.length} grasps`,
    );
  }

  private applySnapshot(
    tUs: number,
    grasp: GraspPhase | null,
    fingers: FingerSnapshot[],
  ): void {
    this.tUs = tUs;
    this.grasp = grasp;
    for (const entry of fingers) {
      const view = this.fingers.get(entry.finger_id);
      if (view === undefined) {
        continue; // no geometry to draw it with
      }
      if (entry.angles !== null) {
        view.angles = entry.angles;
        view.tip = entry.tip;
      }
      view.stalenessUs = entry.staleness_us;
      view.active = entry.active;
    }
  }

  private applyTouch(touch: TouchMessage, nowMs: number): void {
    this.flashes.push({
      fingerId: touch.finger_id,
      joint: touch.joint,
      peakRad: touch.peak_rad,
      onsetUs: touch.onset_us,
      shownAtMs: nowMs,
    });
    const role = this.fingers.get(touch.finger_id)?.role ?? "?";
    this.pushLog(
      `touch on ${role} (#${touch.finger_id}) joint ${touch.joint}, ` +
        `peak ${touch.peak_rad.toFixed(4)} rad`,
    );
  }

  private applyRegistry(message: RegistryMessage): void {
    const view = this.fingers.get(message.finger_id);
    if (view !== undefined) {
      switch (message.event) {
        case "registered":
          view.attached = true;
          view.active = true;
          break;
        case "active":
          view.active = true;
          break;
        case "stale":
          view.active = false;
          break;
        case "detached":
          view.attached = false;
          view.active = false;
          break;
      }
    }
    const role = message.role ?? view?.role ?? "?";
    this.pushLog(`registry: ${role} (#${message.finger_id}) ${message.event}`);
  }

  /** Greyed-out rendering: detached, flagged inactive by the server, or
   * telemetry older than the liveness window. */
  isGreyed(view: FingerView): boolean {
    return !view.attached || !view.active || view.stalenessUs > STALE_AFTER_US;
  }

  /** Touch halos still within their display window, pruning as it goes. */
  activeFlashes(nowMs: number): TouchFlash[] {
    this.flashes = this.flashes.filter(
      (flash) => nowMs - flash.shownAtMs < FLASH_MS,
    );
    return this.flashes;
  }

  /** Finger views in draw order (by id). */
  fingerViews(): FingerView[] {
    return [...this.fingers.values()].sort((a, b) => a.fingerId - b.fingerId);
  }

  private pushLog(line: string): void {
    this.log.push(line);
    if (this.log.length > LOG_LIMIT) {
      this.log.splice(0, this.log.length - LOG_LIMIT);
    }
  }
}

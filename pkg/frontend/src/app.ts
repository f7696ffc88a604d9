/**
 * Browser wiring: one WebSocket to the bridge, a paint loop, and the
 * control panel. Commands leave this file only from DOM event handlers
 * — clicking a grasp button, releasing a slider, pressing "poke" —
 * never from incoming messages or timers.
 */

import type { BridgeCommand, JointTriple, SnapshotMessage } from "./messages.js";
import { parseBridgeMessage } from "./messages.js";
import { FramePacer, ReconnectBackoff } from "./pacing.js";
import {
  drawHand,
  fitView,
  handBounds,
  type ViewTransform,
} from "./renderer.js";
import { formatReadout, residualReadout } from "./report.js";
import { ConsoleStore } from "./state.js";

const DEFAULT_URL = "ws://127.0.0.1:8765";

/** Override the bridge address via the fragment: index.html#ws://host:port */
function bridgeUrl(): string {
  const fragment = window.location.hash.slice(1);
  return fragment.startsWith("ws://") || fragment.startsWith("wss://")
    ? fragment
    : DEFAULT_URL;
}

function mustFind<T extends HTMLElement>(id: string): T {
  const element = document.getElementById(id);
  if (element === null) {
    throw new Error(`console page is missing #${id}`);
  }
  return element as T;
}

class ConsoleApp {
  private readonly store = new ConsoleStore();
  private readonly pacer = new FramePacer();
  private readonly backoff = new ReconnectBackoff();
  private socket: WebSocket | null = null;
  private view: ViewTransform | null = null;
  private controlsBuiltFor: string | null = null;

  private readonly canvas = mustFind<HTMLCanvasElement>("scene");
  private readonly banner = mustFind<HTMLDivElement>("banner");
  private readonly graspButtons = mustFind<HTMLDivElement>("grasp-buttons");
  private readonly fingerControls = mustFind<HTMLDivElement>("finger-controls");
  private readonly residual = mustFind<HTMLPreElement>("residual");
  private readonly eventLog = mustFind<HTMLPreElement>("log");

  start(): void {
    this.connect();
    const frame = (nowMs: number): void => {
      this.renderFrame(nowMs);
      window.requestAnimationFrame(frame);
    };
    window.requestAnimationFrame(frame);
  }

  // ---- bridge connection ----------------------------------------------------

  private connect(): void {
    this.store.setConnection("connecting");
    this.refreshBanner();
    const socket = new WebSocket(bridgeUrl());
    this.socket = socket;

    socket.onopen = () => {
      this.backoff.reset();
      this.store.setConnection("open");
      this.refreshBanner();
    };
    socket.onmessage = (event: MessageEvent) => {
      if (typeof event.data === "string") {
        this.onBridgeText(event.data);
      }
    };
    socket.onclose = () => {
      if (this.socket === socket) {
        this.scheduleReconnect();
      }
    };
    socket.onerror = () => {
      socket.close();
    };
  }

  private scheduleReconnect(): void {
    this.socket = null;
    this.pacer.reset();
    this.store.setConnection("lost");
    this.refreshBanner();
    window.setTimeout(() => this.connect(), this.backoff.nextDelayMs());
  }

  private onBridgeText(text: string): void {
    const message = parseBridgeMessage(text);
    if (message === null) {
      return;
    }
    if (message.type === "snapshot") {
      // Bursts coalesce here; the paint loop takes only the newest.
      this.pacer.offer(message as SnapshotMessage);
      return;
    }
    this.store.apply(message, performance.now());
    if (message.type === "hello") {
      this.view = null;
      this.rebuildControls();
    }
    if (message.type === "grasp_report") {
      this.residual.textContent = formatReadout(
        residualReadout(message.report),
      );
    }
    this.refreshLog();
  }

  private send(command: BridgeCommand): void {
    if (this.socket !== null && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(JSON.stringify(command));
    }
  }

  // ---- paint loop ---------------------------------------------------------

  private renderFrame(nowMs: number): void {
    const snapshot = this.pacer.take();
    if (snapshot !== null) {
      this.store.apply(snapshot, nowMs);
    }
    if (this.view === null && this.store.hello !== null) {
      this.view = fitView(
        handBounds(this.store.fingerViews()),
        this.canvas.width,
        this.canvas.height,
      );
    }
    const ctx = this.canvas.getContext("2d");
    if (ctx === null || this.view === null) {
      return;
    }
    drawHand(
      ctx,
      this.view,
      this.store,
      this.canvas.width,
      this.canvas.height,
      nowMs,
    );
  }

  private refreshBanner(): void {
    switch (this.store.connection) {
      case "open":
        this.banner.hidden = true;
        break;
      case "connecting":
        this.banner.hidden = false;
        this.banner.textContent = `connecting to ${bridgeUrl()} …`;
        break;
      case "lost":
        this.banner.hidden = false;
        this.banner.textContent =
          "bridge connection lost — reconnecting (last pose frozen)";
        break;
    }
    this.refreshLog();
  }

  private refreshLog(): void {
    this.eventLog.textContent = this.store.log.slice(-12).join("\n");
  }

  // ---- controls -------------------------------------------------------------

  private rebuildControls(): void {
    const hello = this.store.hello;
    if (hello === null) {
      return;
    }
    const signature = JSON.stringify([hello.grasps, hello.hand]);
    if (signature === this.controlsBuiltFor) {
      return; // same hand on reconnect; keep slider positions
    }
    this.controlsBuiltFor = signature;

    this.graspButtons.replaceChildren();
    for (const name of hello.grasps) {
      const button = document.createElement("button");
      button.textContent = name.replaceAll("_", " ");
      button.addEventListener("click", () => {
        this.residual.textContent = `${name}: executing…`;
        this.send({ cmd: "grasp", name });
      });
      this.graspButtons.appendChild(button);
    }

    this.fingerControls.replaceChildren();
    for (const finger of hello.hand.fingers) {
      this.fingerControls.appendChild(this.buildFingerRow(finger.finger_id, finger.role));
    }
  }

  private buildFingerRow(fingerId: number, role: string): HTMLElement {
    const row = document.createElement("div");
    row.className = "finger-row";

    const label = document.createElement("span");
    label.className = "finger-name";
    label.textContent = `${role} #${fingerId}`;
    row.appendChild(label);

    const sliders: HTMLInputElement[] = [];
    const joints: Array<[string, string]> = [
      ["t1", "distal"],
      ["t2", "middle"],
      ["t3", "proximal"],
    ];
    for (const [short, long] of joints) {
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = "-0.3";
      slider.max = "1.6";
      slider.step = "0.01";
      slider.value = "0";
      slider.title = `${role} ${long} target (${short}, rad)`;
      // One command per adjustment: range "change" fires on release.
      slider.addEventListener("change", () => {
        const angles = sliders.map((s) => Number(s.value)) as JointTriple;
        this.send({ cmd: "set_joint", finger_id: fingerId, angles });
      });
      sliders.push(slider);
      row.appendChild(slider);
    }

    const poke = document.createElement("button");
    poke.textContent = "poke";
    poke.title = "inject a brief external torque so the touch pipeline fires";
    poke.addEventListener("click", () => {
      this.send({ cmd: "inject_touch", finger_id: fingerId });
    });
    row.appendChild(poke);
    return row;
  }
}

new ConsoleApp().start();

/**
 * 2D canvas skeleton view: each finger as a polyline from its mount
 * through the three joints to the tip, joints as dots, touch events as
 * fading halos, staleness printed next to every finger.
 *
 * Drawing goes through the narrow `SkeletonContext` interface — the
 * subset of CanvasRenderingContext2D actually used — so tests can pass
 * a recording stub instead of a real canvas.
 */

import { fingerChain, fingerReach, jointPoint, REST_ANGLES } from "./fk.js";
import type { Point } from "./messages.js";
import type { ConsoleStore, FingerView } from "./state.js";
import { FLASH_MS } from "./state.js";

export interface SkeletonContext {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  lineCap: CanvasLineCap;
  font: string;
  globalAlpha: number;
}

export const ROLE_COLORS: Record<string, string> = {
  thumb: "#e4572e",
  index: "#2e86ab",
  middle: "#1b998b",
  ring: "#a846a0",
  little: "#f3a712",
};

export const GREYED_COLOR = "#8a8f98";
export const FALLBACK_COLOR = "#b0b6bf";
export const FLASH_COLOR = "#ffd166";

/** World-frame box the view must contain: every mount plus full reach. */
export interface ViewBox {
  minX: number;
  maxX: number;
  minY: number;
  maxY: number;
}

export function handBounds(fingers: FingerView[]): ViewBox {
  if (fingers.length === 0) {
    return { minX: -0.1, maxX: 0.1, minY: -0.1, maxY: 0.1 };
  }
  const box: ViewBox = {
    minX: Infinity,
    maxX: -Infinity,
    minY: Infinity,
    maxY: -Infinity,
  };
  for (const finger of fingers) {
    const reach = fingerReach(finger.links);
    box.minX = Math.min(box.minX, finger.mount.x - reach);
    box.maxX = Math.max(box.maxX, finger.mount.x + reach);
    box.minY = Math.min(box.minY, finger.mount.y - reach);
    box.maxY = Math.max(box.maxY, finger.mount.y + reach);
  }
  return box;
}

/** Uniform world→screen map. Canvas y runs down; the hand frame's y up. */
export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function fitView(
  box: ViewBox,
  width: number,
  height: number,
  marginPx = 24,
): ViewTransform {
  const spanX = Math.max(box.maxX - box.minX, 1e-6);
  const spanY = Math.max(box.maxY - box.minY, 1e-6);
  const scale = Math.min(
    (width - 2 * marginPx) / spanX,
    (height - 2 * marginPx) / spanY,
  );
  const midX = (box.minX + box.maxX) / 2;
  const midY = (box.minY + box.maxY) / 2;
  return {
    scale,
    offsetX: width / 2 - scale * midX,
    offsetY: height / 2 + scale * midY,
  };
}

export function toScreen(view: ViewTransform, point: Point): Point {
  return [
    view.offsetX + view.scale * point[0],
    view.offsetY - view.scale * point[1],
  ];
}

function drawFinger(
  ctx: SkeletonContext,
  view: ViewTransform,
  finger: FingerView,
  greyed: boolean,
): Point[] {
  const chain = fingerChain(finger.mount, finger.links, finger.angles ?? REST_ANGLES);
  const screen = chain.map((p) => toScreen(view, p));
  const color = greyed
    ? GREYED_COLOR
    : ROLE_COLORS[finger.role] ?? FALLBACK_COLOR;

  ctx.globalAlpha = greyed ? 0.45 : 1.0;
  ctx.strokeStyle = color;
  ctx.lineWidth = 3;
  ctx.lineCap = "round";
  ctx.beginPath();
  ctx.moveTo(screen[0][0], screen[0][1]);
  for (const [x, y] of screen.slice(1)) {
    ctx.lineTo(x, y);
  }
  ctx.stroke();

  ctx.fillStyle = color;
  for (const [x, y] of screen.slice(0, -1)) {
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  const [tipX, tipY] = screen[screen.length - 1];
  ctx.beginPath();
  ctx.arc(tipX, tipY, 4.5, 0, 2 * Math.PI);
  ctx.fill();

  const [baseX, baseY] = screen[0];
  ctx.font = "11px system-ui, sans-serif";
  ctx.fillText(finger.role, baseX + 6, baseY + 14);
  ctx.fillText(`${Math.round(finger.stalenessUs / 1000)} ms`, baseX + 6, baseY + 26);
  ctx.globalAlpha = 1.0;
  return chain;
}

function drawFlashes(
  ctx: SkeletonContext,
  view: ViewTransform,
  store: ConsoleStore,
  chains: Map<number, Point[]>,
  nowMs: number,
): void {
  for (const flash of store.activeFlashes(nowMs)) {
    const chain = chains.get(flash.fingerId);
    if (chain === undefined) {
      continue;
    }
    const age = Math.min(Math.max((nowMs - flash.shownAtMs) / FLASH_MS, 0), 1);
    const [x, y] = toScreen(view, jointPoint(chain, flash.joint));
    ctx.globalAlpha = 1 - age;
    ctx.strokeStyle = FLASH_COLOR;
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    ctx.arc(x, y, 6 + 18 * age, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.globalAlpha = 1.0;
  }
}

/** Paint one frame of the whole scene. */
export function drawHand(
  ctx: SkeletonContext,
  view: ViewTransform,
  store: ConsoleStore,
  width: number,
  height: number,
  nowMs: number,
): void {
  ctx.clearRect(0, 0, width, height);

  if (store.hello === null) {
    ctx.fillStyle = FALLBACK_COLOR;
    ctx.font = "14px system-ui, sans-serif";
    ctx.fillText("waiting for the bridge…", 16, 28);
    return;
  }

  const lost = store.connection !== "open";
  const chains = new Map<number, Point[]>();
  for (const finger of store.fingerViews()) {
    const greyed = lost || store.isGreyed(finger);
    chains.set(finger.fingerId, drawFinger(ctx, view, finger, greyed));
  }
  drawFlashes(ctx, view, store, chains, nowMs);

  ctx.fillStyle = FALLBACK_COLOR;
  ctx.font = "12px system-ui, sans-serif";
  const clock = `t = ${(store.tUs / 1e6).toFixed(2)} s`;
  const phase =
    store.grasp === null ? "" : `   ${store.grasp.name}: ${store.grasp.phase}`;
  ctx.fillText(clock + phase, 16, height - 14);
}

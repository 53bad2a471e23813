/** Canvas drawing for the environment geometry, gauges, and badges.
 * Works against a minimal 2D-context interface so tests can record calls. */

import { Geometry } from "./protocol.js";
import { SessionSnapshot } from "./session.js";

export interface Context2DLike {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

export interface Viewport {
  width: number;
  height: number;
  /** world units mapped to the full canvas extent */
  worldSpan: number;
}

/** World (y up, origin centered) to canvas pixels (y down). */
export function worldToCanvas(
  [x, y]: readonly [number, number],
  vp: Viewport,
): [number, number] {
  const scale = Math.min(vp.width, vp.height) / vp.worldSpan;
  return [vp.width / 2 + x * scale, vp.height / 2 - y * scale];
}

function circle(ctx: Context2DLike, vp: Viewport, at: readonly [number, number],
                worldR: number, color: string, outline = false): void {
  const [cx, cy] = worldToCanvas(at, vp);
  const scale = Math.min(vp.width, vp.height) / vp.worldSpan;
  ctx.beginPath();
  ctx.arc(cx, cy, Math.max(2, worldR * scale), 0, 2 * Math.PI);
  if (outline) {
    ctx.strokeStyle = color;
    ctx.stroke();
  } else {
    ctx.fillStyle = color;
    ctx.fill();
  }
}

function polyline(ctx: Context2DLike, vp: Viewport,
                  pts: readonly (readonly [number, number])[], color: string): void {
  if (pts.length === 0) return;
  ctx.beginPath();
  const [x0, y0] = worldToCanvas(pts[0]!, vp);
  ctx.moveTo(x0, y0);
  for (const p of pts.slice(1)) {
    const [x, y] = worldToCanvas(p, vp);
    ctx.lineTo(x, y);
  }
  ctx.strokeStyle = color;
  ctx.stroke();
}

export function drawGeometry(ctx: Context2DLike, geom: Geometry, vp: Viewport): void {
  ctx.clearRect(0, 0, vp.width, vp.height);
  switch (geom.kind) {
    case "pointpush":
      circle(ctx, vp, geom.goal, 0.06, "#2faf4e", true);
      circle(ctx, vp, geom.object, geom.contact_radius, "#d98a2b");
      circle(ctx, vp, geom.pusher, 0.04, "#3a76d0");
      break;
    case "pendulum":
      polyline(ctx, vp, [[0, 0], geom.tip], "#3a76d0");
      circle(ctx, vp, geom.tip, 0.06, "#3a76d0");
      circle(ctx, vp, [0, 0], 0.03, "#666666");
      break;
    case "multiarm":
      polyline(ctx, vp, geom.joints, "#3a76d0");
      for (const j of geom.joints) circle(ctx, vp, j, 0.025, "#3a76d0");
      circle(ctx, vp, geom.target, 0.05, "#2faf4e", true);
      break;
  }
}

/** Horizontal bar showing the expert's consensus weight w in [0, 1]. */
export function drawExpertGauge(
  ctx: Context2DLike,
  weight: number,
  x: number,
  y: number,
  width: number,
  height: number,
): void {
  const w = Math.min(1, Math.max(0, weight));
  ctx.strokeStyle = "#444444";
  ctx.strokeRect(x, y, width, height);
  ctx.fillStyle = "#b03a3a";
  ctx.fillRect(x, y, width * w, height);
  ctx.fillStyle = "#222222";
  ctx.fillText(`expert weight ${w.toFixed(2)}`, x, y + height + 12);
}

export function drawBadges(ctx: Context2DLike, snap: SessionSnapshot,
                           x: number, y: number): void {
  ctx.font = "14px sans-serif";
  ctx.fillStyle = "#222222";
  ctx.fillText(`condition: ${snap.condition}`, x, y);
  if (snap.paused) {
    ctx.fillStyle = "#b03a3a";
    ctx.fillText("PAUSED", x, y + 18);
  }
  if (snap.status === "incompatible") {
    ctx.fillStyle = "#b03a3a";
    ctx.fillText(`incompatible: ${snap.statusDetail}`, x, y + 36);
  } else if (snap.status !== "open") {
    ctx.fillStyle = "#b03a3a";
    ctx.fillText(`disconnected (${snap.status}) — retrying`, x, y + 36);
  }
}

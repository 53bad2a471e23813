/** Browser entry point: wires the websocket session to canvas rendering
 * and DOM input events. */

import { Connection } from "./connection.js";
import { drawBadges, drawExpertGauge, drawGeometry, Viewport } from "./render.js";
import { SessionView } from "./session.js";
import { RollingSeries } from "./plots.js";

function drawSeries(
  ctx: CanvasRenderingContext2D,
  series: RollingSeries,
  label: string,
  vpWidth: number,
  vpHeight: number,
): void {
  ctx.clearRect(0, 0, vpWidth, vpHeight);
  ctx.strokeStyle = "#cccccc";
  ctx.strokeRect(0.5, 0.5, vpWidth - 1, vpHeight - 1);
  const pts = series.data();
  if (pts.length > 1) {
    const { min, max } = series.range();
    const t0 = pts[0]!.tick;
    const t1 = pts[pts.length - 1]!.tick;
    const sx = vpWidth / Math.max(1, t1 - t0);
    const sy = (vpHeight - 8) / (max - min);
    ctx.beginPath();
    pts.forEach((p, i) => {
      const x = (p.tick - t0) * sx;
      const y = vpHeight - 4 - (p.value - min) * sy;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.strokeStyle = "#3a76d0";
    ctx.stroke();
  }
  ctx.fillStyle = "#222222";
  ctx.font = "12px sans-serif";
  ctx.fillText(label, 6, 14);
}

export function startApp(doc: Document, wsUrl: string, dims = 2): SessionView {
  const view = new SessionView(dims);
  const connection = new Connection(wsUrl, {
    onState: (s) => view.onState(s),
    onStatus: (st, d) => view.onStatus(st, d),
  });
  view.connection = connection;

  const envCanvas = doc.getElementById("env") as HTMLCanvasElement;
  const diffCanvas = doc.getElementById("diff") as HTMLCanvasElement;
  const scoreCanvas = doc.getElementById("score") as HTMLCanvasElement;
  const envCtx = envCanvas.getContext("2d")!;
  const diffCtx = diffCanvas.getContext("2d")!;
  const scoreCtx = scoreCanvas.getContext("2d")!;
  const vp: Viewport = { width: envCanvas.width, height: envCanvas.height, worldSpan: 2.6 };

  doc.addEventListener("keydown", (e) => view.input.keyDown(e.code));
  doc.addEventListener("keyup", (e) => view.input.keyUp(e.code));
  envCanvas.addEventListener("pointerdown", (e) => view.input.pointerDown(e.offsetX, e.offsetY));
  envCanvas.addEventListener("pointermove", (e) => view.input.pointerMove(e.offsetX, e.offsetY));
  envCanvas.addEventListener("pointerup", () => view.input.pointerUp());

  for (const cmd of ["start", "pause", "reset"] as const) {
    doc.getElementById(cmd)?.addEventListener("click", () => view.sendControl(cmd));
  }
  doc.getElementById("condition")?.addEventListener("change", (e) => {
    view.sendControl("set_condition", (e.target as HTMLSelectElement).value);
  });

  function frame(): void {
    const snap = view.snapshot();
    if (snap.state) drawGeometry(envCtx, snap.state.geometry, vp);
    drawExpertGauge(envCtx, snap.expertWeight, 10, vp.height - 30, 120, 10);
    drawBadges(envCtx, snap, 10, 20);
    drawSeries(diffCtx, view.diffSeries, "Diff", diffCanvas.width, diffCanvas.height);
    drawSeries(scoreCtx, view.scoreSeries, "Score", scoreCanvas.width, scoreCanvas.height);
    const hud = doc.getElementById("hud");
    if (hud && snap.state) {
      const a = snap.sentAction?.map((v) => v.toFixed(2)).join(", ") ?? "—";
      const st = snap.state.episode_stats;
      hud.textContent =
        `tick ${snap.state.tick} · episode ${st.episode} step ${st.step} · ` +
        `score ${st.score.toFixed(1)} · action [${a}]`;
    }
    requestAnimationFrame(frame);
  }

  connection.connect();
  requestAnimationFrame(frame);
  return view;
}

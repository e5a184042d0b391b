/** Canvas-side geometry: goal drafting in image pixels and overlay
 * rendering. Pure math lives here so it can be tested without a browser;
 * the render target is the minimal 2D-context surface we use.
 */

import { Overlays, Point, Polyline } from "./protocol.js";

export interface FitTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Uniform scale-to-fit of an image rectangle inside a canvas rectangle. */
export function fitImage(
  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
): FitTransform {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

export function toCanvas(p: Point, t: FitTransform): Point {
  return [p[0] * t.scale + t.offsetX, p[1] * t.scale + t.offsetY];
}

export function toImage(p: Point, t: FitTransform): Point {
  return [(p[0] - t.offsetX) / t.scale, (p[1] - t.offsetY) / t.scale];
}

/** Operator goal polyline under construction, in integer image pixels. */
export class GoalDraft {
  private pts: Point[] = [];

  constructor(
    readonly imageW: number,
    readonly imageH: number,
  ) {}

  addImagePoint(p: Point): boolean {
    const u = Math.round(p[0]);
    const v = Math.round(p[1]);
    if (u < 0 || v < 0 || u >= this.imageW || v >= this.imageH) return false;
    this.pts.push([u, v]);
    return true;
  }

  undo(): void {
    this.pts.pop();
  }

  clear(): void {
    this.pts = [];
  }

  get points(): Polyline {
    return this.pts.map((p) => [p[0], p[1]]);
  }

  get complete(): boolean {
    return this.pts.length >= 2;
  }
}

/** The slice of CanvasRenderingContext2D the renderer needs. */
export interface DrawSurface {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
}

export const OVERLAY_STYLE: Record<string, string> = {
  goals: "#ffd166",
  executed: "#06d6a0",
  severed: "#118ab2",
  skipped: "#ef476f",
  keypoints: "#cccccc",
  draft: "#ffffff",
};

function strokePolyline(
  ctx: DrawSurface,
  line: Polyline,
  t: FitTransform,
): void {
  ctx.beginPath();
  line.forEach((p, i) => {
    const [x, y] = toCanvas(p, t);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

function fillDots(
  ctx: DrawSurface,
  pts: Point[],
  t: FitTransform,
  r: number,
): void {
  for (const p of pts) {
    const [x, y] = toCanvas(p, t);
    ctx.beginPath();
    ctx.arc(x, y, r, 0, 2 * Math.PI);
    ctx.fill();
  }
}

export function renderOverlays(
  ctx: DrawSurface,
  overlays: Overlays,
  t: FitTransform,
): void {
  if (overlays.keypoints) {
    ctx.fillStyle = OVERLAY_STYLE.keypoints;
    fillDots(ctx, overlays.keypoints, t, 2);
  }
  for (const key of ["severed", "executed", "goals"] as const) {
    const lines = overlays[key];
    if (!lines) continue;
    ctx.strokeStyle = OVERLAY_STYLE[key];
    ctx.lineWidth = key === "goals" ? 2 : 1.5;
    for (const line of lines) strokePolyline(ctx, line, t);
  }
  if (overlays.skipped) {
    ctx.fillStyle = OVERLAY_STYLE.skipped;
    fillDots(ctx, overlays.skipped, t, 4);
  }
}

export function renderDraft(
  ctx: DrawSurface,
  draft: GoalDraft,
  t: FitTransform,
): void {
  const pts = draft.points;
  if (pts.length === 0) return;
  ctx.fillStyle = OVERLAY_STYLE.draft;
  fillDots(ctx, pts, t, 3);
  if (pts.length >= 2) {
    ctx.strokeStyle = OVERLAY_STYLE.draft;
    ctx.lineWidth = 1;
    strokePolyline(ctx, pts, t);
  }
}

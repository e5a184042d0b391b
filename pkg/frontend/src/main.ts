/** DOM wiring for the supervisor page. Everything testable lives in the
 * protocol/state/overlay modules; this file only connects them to the
 * browser.
 */

import { BridgeClient, SocketLike } from "./client.js";
import {
  FitTransform,
  GoalDraft,
  fitImage,
  renderDraft,
  renderOverlays,
  toImage,
} from "./overlay.js";
import { Point } from "./protocol.js";
import { SessionStore, SessionView } from "./state.js";

const IMAGE_W = 640;
const IMAGE_H = 480;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function wsUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${location.host}/ws`;
}

export function boot(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const status = el<HTMLElement>("status");
  const metrics = el<HTMLElement>("metrics");
  const store = new SessionStore();
  const client = new BridgeClient(
    store,
    (url) => new WebSocket(url) as unknown as SocketLike,
  );
  const draft = new GoalDraft(IMAGE_W, IMAGE_H);
  let grasp: Point | null = null;
  let graspMode = false;

  const fit: FitTransform = fitImage(
    IMAGE_W,
    IMAGE_H,
    canvas.width,
    canvas.height,
  );

  function redraw(view: SessionView): void {
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.fillStyle = "#1b1f24";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const frame = store.latestOverlays();
    if (frame) renderOverlays(ctx, frame.overlays, fit);
    renderDraft(ctx, draft, fit);
    if (grasp) {
      ctx.fillStyle = "#c77dff";
      const [x, y] = [
        grasp[0] * fit.scale + fit.offsetX,
        grasp[1] * fit.scale + fit.offsetY,
      ];
      ctx.beginPath();
      ctx.arc(x, y, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
    status.textContent = view.connected
      ? `phase: ${view.phase} (attempt ${view.attempt})`
      : "disconnected";
    if (view.lastError) {
      status.textContent += ` | ${view.lastError.code}: ${view.lastError.message}`;
    }
    if (view.result) {
      metrics.textContent = `success: ${view.result.success}  ${Object.entries(
        view.result.metrics,
      )
        .map(([k, v]) => `${k}=${v}`)
        .join("  ")}`;
    }
    el<HTMLButtonElement>("submit").disabled =
      !view.connected ||
      view.phase !== "awaiting_goal" ||
      !draft.complete ||
      !grasp;
    for (const action of ["step", "play"] as const) {
      el<HTMLButtonElement>(action).disabled = !store.canControl(action);
    }
    for (const d of ["approve", "edit", "reject"] as const) {
      el<HTMLButtonElement>(d).disabled = !store.canReview();
    }
  }

  store.subscribe(redraw);

  canvas.addEventListener("click", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const p = toImage(
      [ev.clientX - rect.left, ev.clientY - rect.top],
      fit,
    );
    if (graspMode) {
      grasp = [Math.round(p[0]), Math.round(p[1])];
      graspMode = false;
    } else {
      draft.addImagePoint(p);
    }
    redraw(store.snapshot());
  });

  el<HTMLButtonElement>("grasp").addEventListener("click", () => {
    graspMode = true;
  });
  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    draft.undo();
    redraw(store.snapshot());
  });
  el<HTMLButtonElement>("submit").addEventListener("click", () => {
    if (draft.complete && grasp) client.submitGoal(draft.points, grasp);
  });
  for (const action of ["step", "play", "pause", "abort"] as const) {
    el<HTMLButtonElement>(action).addEventListener("click", () =>
      client.control(action),
    );
  }
  el<HTMLButtonElement>("approve").addEventListener("click", () =>
    client.review("approve"),
  );
  el<HTMLButtonElement>("reject").addEventListener("click", () =>
    client.review("reject"),
  );
  el<HTMLButtonElement>("edit").addEventListener("click", () => {
    if (draft.complete) {
      client.review("edit", [draft.points]);
      draft.clear();
    }
  });
  el<HTMLButtonElement>("replay").addEventListener("click", () => {
    const name = el<HTMLInputElement>("log-name").value.trim();
    if (name) client.replay(name);
  });

  client.connect(wsUrl());
  redraw(store.snapshot());
}

boot();

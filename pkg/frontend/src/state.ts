/** Client-side mirror of the bridge session.
 *
 * The server is authoritative; this store only tracks what the server has
 * said so the UI can enable the right controls and render the latest
 * overlays. Illegal actions are also gated here to avoid a round trip for
 * the common cases, but the server re-checks everything.
 */

import {
  ControlAction,
  FrameMsg,
  Phase,
  ResultMsg,
  ServerMessage,
} from "./protocol.js";

export interface SessionView {
  phase: Phase;
  connected: boolean;
  attempt: number;
  frames: FrameMsg[];
  result: ResultMsg | null;
  lastError: { code: string; message: string } | null;
  goalAccepted: boolean;
}

export type Listener = (view: SessionView) => void;

export class SessionStore {
  private view: SessionView = {
    phase: "awaiting_goal",
    connected: false,
    attempt: 0,
    frames: [],
    result: null,
    lastError: null,
    goalAccepted: false,
  };
  private listeners: Listener[] = [];

  snapshot(): SessionView {
    return { ...this.view, frames: [...this.view.frames] };
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  setConnected(connected: boolean): void {
    this.view.connected = connected;
    this.emit();
  }

  apply(msg: ServerMessage): void {
    switch (msg.type) {
      case "phase":
        this.view.phase = msg.phase;
        this.view.attempt = msg.attempt;
        break;
      case "goal_ack":
        this.view.goalAccepted = true;
        this.view.lastError = null;
        break;
      case "frame":
        // Replayed frames rebuild the strip from scratch on attempt 1.
        if (msg.replay && msg.attempt === 1) this.view.frames = [];
        this.view.frames.push(msg);
        break;
      case "result":
        this.view.result = msg;
        break;
      case "error":
        this.view.lastError = { code: msg.code, message: msg.message };
        break;
    }
    this.emit();
  }

  // -- action gating --------------------------------------------------------

  canSubmitGoal(): boolean {
    return this.view.connected && this.view.phase === "awaiting_goal";
  }

  canControl(action: ControlAction): boolean {
    if (!this.view.connected) return false;
    if (action === "abort") return true;
    if (action === "pause") return true;
    return this.view.phase === "ready";
  }

  canReview(): boolean {
    return this.view.connected && this.view.phase === "awaiting_approval";
  }

  latestOverlays(): FrameMsg | null {
    const n = this.view.frames.length;
    return n > 0 ? this.view.frames[n - 1] : null;
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const fn of this.listeners) fn(snap);
  }
}

/** Versioned JSON protocol spoken with the supervisor bridge.
 *
 * Every frame carries `schema`; messages from an unknown schema are
 * rejected before they can touch client state.
 */

export const PROTOCOL_SCHEMA = 1;

export type Phase =
  | "awaiting_goal"
  | "ready"
  | "running"
  | "awaiting_approval"
  | "complete"
  | "aborted";

export const PHASES: readonly Phase[] = [
  "awaiting_goal",
  "ready",
  "running",
  "awaiting_approval",
  "complete",
  "aborted",
];

export type Point = [number, number];
export type Polyline = Point[];

export interface Overlays {
  goals?: Polyline[];
  executed?: Polyline[];
  severed?: Polyline[];
  skipped?: Point[];
  keypoints?: Point[];
  rho?: number[];
  [key: string]: unknown;
}

export interface PhaseMsg {
  type: "phase";
  phase: Phase;
  attempt: number;
}

export interface GoalAckMsg {
  type: "goal_ack";
  points: Polyline;
  grasp: Point;
}

export interface FrameMsg {
  type: "frame";
  attempt: number;
  overlays: Overlays;
  replay: boolean;
}

export interface ResultMsg {
  type: "result";
  success: boolean;
  metrics: Record<string, string>;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  message: string;
}

export type ServerMessage =
  | PhaseMsg
  | GoalAckMsg
  | FrameMsg
  | ResultMsg
  | ErrorMsg;

export type ControlAction = "step" | "play" | "pause" | "abort";
export type ReviewDecision = "approve" | "edit" | "reject";

export class ProtocolError extends Error {}

function isPoint(x: unknown): x is Point {
  return (
    Array.isArray(x) &&
    x.length === 2 &&
    typeof x[0] === "number" &&
    typeof x[1] === "number" &&
    Number.isFinite(x[0]) &&
    Number.isFinite(x[1])
  );
}

function isPolyline(x: unknown): x is Polyline {
  return Array.isArray(x) && x.length >= 2 && x.every(isPoint);
}

function fail(why: string): never {
  throw new ProtocolError(why);
}

/** Parse and validate one message off the wire. */
export function decodeServer(raw: string | unknown): ServerMessage {
  let msg: unknown = raw;
  if (typeof raw === "string") {
    try {
      msg = JSON.parse(raw);
    } catch {
      fail("not valid JSON");
    }
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    fail("message is not an object");
  }
  const m = msg as Record<string, unknown>;
  if (m.schema !== PROTOCOL_SCHEMA) {
    fail(`unsupported protocol schema ${String(m.schema)}`);
  }
  switch (m.type) {
    case "phase": {
      if (!PHASES.includes(m.phase as Phase)) {
        fail(`unknown phase ${String(m.phase)}`);
      }
      if (typeof m.attempt !== "number") fail("phase without attempt");
      return { type: "phase", phase: m.phase as Phase, attempt: m.attempt };
    }
    case "goal_ack": {
      if (!isPolyline(m.points)) fail("goal_ack without points");
      if (!isPoint(m.grasp)) fail("goal_ack without grasp");
      return { type: "goal_ack", points: m.points, grasp: m.grasp };
    }
    case "frame": {
      if (typeof m.attempt !== "number") fail("frame without attempt");
      const ov = m.overlays;
      if (typeof ov !== "object" || ov === null) fail("frame without overlays");
      return {
        type: "frame",
        attempt: m.attempt,
        overlays: ov as Overlays,
        replay: m.replay === true,
      };
    }
    case "result": {
      if (typeof m.success !== "boolean") fail("result without success");
      const metrics =
        typeof m.metrics === "object" && m.metrics !== null
          ? (m.metrics as Record<string, string>)
          : {};
      return { type: "result", success: m.success, metrics };
    }
    case "error": {
      if (typeof m.code !== "string") fail("error without code");
      return {
        type: "error",
        code: m.code,
        message: typeof m.message === "string" ? m.message : "",
      };
    }
    default:
      fail(`unknown message type ${String(m.type)}`);
  }
}

// -- outbound encoders ------------------------------------------------------

export function encodeSubmitGoal(points: Polyline, grasp: Point): string {
  if (!isPolyline(points)) throw new ProtocolError("goal needs >= 2 points");
  if (!isPoint(grasp)) throw new ProtocolError("grasp must be a pixel pair");
  return JSON.stringify({
    schema: PROTOCOL_SCHEMA,
    type: "submit_goal",
    points,
    grasp,
  });
}

export function encodeControl(action: ControlAction): string {
  return JSON.stringify({ schema: PROTOCOL_SCHEMA, type: "control", action });
}

export function encodeReview(
  decision: ReviewDecision,
  goals?: Polyline[],
): string {
  if (decision === "edit") {
    if (!goals || goals.length === 0 || !goals.every(isPolyline)) {
      throw new ProtocolError("edit needs at least one goal polyline");
    }
    return JSON.stringify({
      schema: PROTOCOL_SCHEMA,
      type: "review",
      decision,
      goals,
    });
  }
  return JSON.stringify({ schema: PROTOCOL_SCHEMA, type: "review", decision });
}

export function encodeReplay(log: string): string {
  if (!log) throw new ProtocolError("replay needs a log name");
  return JSON.stringify({ schema: PROTOCOL_SCHEMA, type: "replay", log });
}

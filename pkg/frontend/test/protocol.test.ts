import { describe, expect, it } from "vitest";

import {
  PROTOCOL_SCHEMA,
  ProtocolError,
  decodeServer,
  encodeControl,
  encodeReplay,
  encodeReview,
  encodeSubmitGoal,
} from "../src/protocol.js";

const S = { schema: PROTOCOL_SCHEMA };

describe("decodeServer", () => {
  it("accepts every server message kind", () => {
    expect(
      decodeServer({ ...S, type: "phase", phase: "ready", attempt: 2 }),
    ).toEqual({ type: "phase", phase: "ready", attempt: 2 });
    expect(
      decodeServer({
        ...S,
        type: "goal_ack",
        points: [
          [10, 20],
          [30, 40],
        ],
        grasp: [5, 6],
      }).type,
    ).toBe("goal_ack");
    const frame = decodeServer({
      ...S,
      type: "frame",
      attempt: 1,
      overlays: { goals: [[[0, 0], [1, 1]]] },
    });
    expect(frame).toMatchObject({ type: "frame", attempt: 1, replay: false });
    expect(
      decodeServer({ ...S, type: "result", success: true, metrics: {} }),
    ).toMatchObject({ success: true });
    expect(
      decodeServer({ ...S, type: "error", code: "bad_goal", message: "x" }),
    ).toMatchObject({ code: "bad_goal" });
  });

  it("parses raw JSON strings", () => {
    const msg = decodeServer(
      JSON.stringify({ ...S, type: "phase", phase: "complete", attempt: 3 }),
    );
    expect(msg.type).toBe("phase");
  });

  it("rejects wrong schema, unknown types, and malformed payloads", () => {
    expect(() =>
      decodeServer({ schema: 2, type: "phase", phase: "ready", attempt: 0 }),
    ).toThrow(ProtocolError);
    expect(() => decodeServer({ ...S, type: "warp" })).toThrow(ProtocolError);
    expect(() =>
      decodeServer({ ...S, type: "phase", phase: "levitating", attempt: 0 }),
    ).toThrow(ProtocolError);
    expect(() =>
      decodeServer({ ...S, type: "goal_ack", points: [[1, 2]], grasp: [0, 0] }),
    ).toThrow(ProtocolError);
    expect(() => decodeServer("{not json")).toThrow(ProtocolError);
    expect(() => decodeServer([1, 2, 3])).toThrow(ProtocolError);
  });

  it("flags replayed frames", () => {
    const frame = decodeServer({
      ...S,
      type: "frame",
      attempt: 1,
      overlays: {},
      replay: true,
    });
    expect(frame).toMatchObject({ replay: true });
  });
});

describe("encoders", () => {
  it("stamps the schema on every outbound message", () => {
    const encoded = [
      encodeSubmitGoal(
        [
          [1, 2],
          [3, 4],
        ],
        [5, 6],
      ),
      encodeControl("step"),
      encodeReview("approve"),
      encodeReplay("ep"),
    ];
    for (const raw of encoded) {
      expect(JSON.parse(raw).schema).toBe(PROTOCOL_SCHEMA);
    }
  });

  it("round trips a goal submission", () => {
    const raw = JSON.parse(
      encodeSubmitGoal(
        [
          [10, 20],
          [30, 40],
          [50, 60],
        ],
        [7, 8],
      ),
    );
    expect(raw.type).toBe("submit_goal");
    expect(raw.points).toHaveLength(3);
    expect(raw.grasp).toEqual([7, 8]);
  });

  it("requires at least two goal points", () => {
    expect(() => encodeSubmitGoal([[1, 2]], [0, 0])).toThrow(ProtocolError);
  });

  it("edit reviews carry goals, other decisions do not", () => {
    const edit = JSON.parse(
      encodeReview("edit", [
        [
          [0, 0],
          [9, 9],
        ],
      ]),
    );
    expect(edit.goals).toHaveLength(1);
    expect(() => encodeReview("edit")).toThrow(ProtocolError);
    expect(() => encodeReview("edit", [])).toThrow(ProtocolError);
    expect("goals" in JSON.parse(encodeReview("reject"))).toBe(false);
  });

  it("replay requires a log name", () => {
    expect(() => encodeReplay("")).toThrow(ProtocolError);
  });
});

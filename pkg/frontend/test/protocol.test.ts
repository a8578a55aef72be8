import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
  encodeClientMsg,
  parseServerFrame,
  stateFrameSchema,
} from "../src/protocol";

const fixture = readFileSync(
  new URL("./fixtures/state_frame.json", import.meta.url),
  "utf8",
);

describe("server frames", () => {
  it("accepts a frame recorded from the live server", () => {
    const frame = parseServerFrame(fixture);
    expect(frame.type).toBe("state");
    if (frame.type !== "state") return;
    expect(frame.bodies).toHaveLength(7);
    expect(frame.joints.q).toHaveLength(6);
    expect(frame.skill_probs).toHaveLength(3);
    expect(frame.terrain.polyline.length).toBeGreaterThan(10);
  });

  it("round-trips through serialization unchanged", () => {
    const frame = parseServerFrame(fixture);
    expect(parseServerFrame(JSON.stringify(frame))).toEqual(frame);
  });

  it("accepts an error frame", () => {
    const frame = parseServerFrame(
      JSON.stringify({ type: "error", code: "bad_message", message: "nope" }),
    );
    expect(frame.type).toBe("error");
  });

  it("rejects frames with a wrong shape", () => {
    expect(() => parseServerFrame('{"type":"state","tick":-1}')).toThrow();
    expect(() => parseServerFrame('{"type":"mystery"}')).toThrow();
    expect(() => parseServerFrame("not json")).toThrow();
  });

  it("rejects non-finite joint values", () => {
    const frame = JSON.parse(fixture);
    frame.joints.q[0] = null;
    expect(() => stateFrameSchema.parse(frame)).toThrow();
  });
});

describe("client messages", () => {
  it("encodes each message type", () => {
    expect(JSON.parse(encodeClientMsg({ type: "cmd", vx: 0 }))).toEqual({
      type: "cmd",
      vx: 0,
    });
    expect(
      JSON.parse(encodeClientMsg({ type: "override", skill: null })),
    ).toEqual({ type: "override", skill: null });
    expect(
      JSON.parse(
        encodeClientMsg({ type: "reset", task: "recovery", level: 2, seed: 5 }),
      ),
    ).toEqual({ type: "reset", task: "recovery", level: 2, seed: 5 });
    expect(JSON.parse(encodeClientMsg({ type: "pause", on: true }))).toEqual({
      type: "pause",
      on: true,
    });
  });

  it("refuses invalid outbound messages before they reach the wire", () => {
    expect(() => encodeClientMsg({ type: "cmd", vx: NaN })).toThrow();
    expect(() =>
      encodeClientMsg({ type: "override", skill: 5 } as never),
    ).toThrow();
    expect(() =>
      encodeClientMsg({ type: "reset", task: "flying", level: 1 } as never),
    ).toThrow();
  });
});

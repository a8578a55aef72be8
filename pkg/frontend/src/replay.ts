/**
 * Offline playback of recorded episode files (newline-delimited JSON, one
 * record per control step, with a single header line). Each step record is
 * lifted into a protocol state frame so the exact same renderer draws it.
 */

import { stateFrameSchema, type StateFrame } from "./protocol";

export interface ReplayHeader {
  task: string;
  kind: string;
  level: number;
  seed: number;
  cmd: number;
  ctrl_dt: number;
  terrain: {
    kind: string;
    level: number;
    x0: number;
    dx: number;
    heights: number[];
  };
}

export interface Replay {
  header: ReplayHeader;
  frames: StateFrame[];
}

export function parseReplay(text: string): Replay {
  const lines = text.split("\n").filter((l) => l.trim().length > 0);
  if (lines.length === 0) throw new Error("empty replay file");
  const header = JSON.parse(lines[0]) as ReplayHeader & { type?: string };
  if (header.type !== "header") throw new Error("not a replay file");
  const polyline: [number, number][] = header.terrain.heights.map((h, i) => [
    header.terrain.x0 + i * header.terrain.dx,
    h,
  ]);
  const onehot = { locomotion: 0, recovery: 1, platform: 2 } as const;
  const skill = onehot[header.task as keyof typeof onehot] ?? 0;
  const probs = [0, 0, 0];
  probs[skill] = 1;
  const frames = lines.slice(1).map((line) => {
    const rec = JSON.parse(line);
    return stateFrameSchema.parse({
      type: "state",
      tick: rec.tick,
      time_s: rec.time_s,
      bodies: rec.bodies,
      joints: rec.joints,
      skill_probs: probs,
      active_skill: skill,
      cmd_echo: header.cmd,
      reward_terms: rec.reward_terms,
      reward: rec.reward,
      costs: rec.costs,
      terrain: { kind: header.terrain.kind, level: header.terrain.level, polyline },
      task: header.task,
      level: header.level,
      paused: false,
    });
  });
  return { header, frames };
}

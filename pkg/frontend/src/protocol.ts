/**
 * Wire protocol between the teleop server and this console.
 *
 * Every inbound frame is validated before it reaches the UI, and every
 * outbound message is validated before it is sent, so a protocol drift on
 * either side fails loudly instead of rendering garbage.
 */

import { z } from "zod";

const finite = z.number().finite();

export const bodySchema = z.object({
  id: z.number().int(),
  x: finite,
  z: finite,
  theta: finite,
});

export const jointsSchema = z.object({
  q: z.array(finite).length(6),
  qd: z.array(finite).length(6),
  tau_applied: z.array(finite).length(6),
  tau_limit: z.array(finite).length(6),
});

export const terrainSchema = z.object({
  kind: z.string(),
  level: z.number().int(),
  polyline: z.array(z.tuple([finite, finite])),
});

export const stateFrameSchema = z.object({
  type: z.literal("state"),
  tick: z.number().int().nonnegative(),
  time_s: finite,
  bodies: z.array(bodySchema),
  joints: jointsSchema,
  skill_probs: z.array(finite).length(3),
  active_skill: z.number().int().min(0).max(2),
  cmd_echo: finite,
  reward_terms: z.record(z.string(), finite),
  reward: finite,
  costs: z.array(finite),
  terrain: terrainSchema,
  task: z.string(),
  level: z.number().int(),
  paused: z.boolean(),
});

export const errorFrameSchema = z.object({
  type: z.literal("error"),
  code: z.string(),
  message: z.string(),
});

export const serverFrameSchema = z.discriminatedUnion("type", [
  stateFrameSchema,
  errorFrameSchema,
]);

export type StateFrame = z.infer<typeof stateFrameSchema>;
export type ErrorFrame = z.infer<typeof errorFrameSchema>;
export type ServerFrame = z.infer<typeof serverFrameSchema>;

export const cmdMsgSchema = z.object({
  type: z.literal("cmd"),
  vx: finite,
});

export const overrideMsgSchema = z.object({
  type: z.literal("override"),
  skill: z.union([z.number().int().min(0).max(2), z.null()]),
});

export const resetMsgSchema = z.object({
  type: z.literal("reset"),
  task: z.enum(["locomotion", "recovery", "platform"]),
  level: z.number().int().min(1),
  seed: z.number().int().optional(),
});

export const pauseMsgSchema = z.object({
  type: z.literal("pause"),
  on: z.boolean(),
});

export const clientMsgSchema = z.discriminatedUnion("type", [
  cmdMsgSchema,
  overrideMsgSchema,
  resetMsgSchema,
  pauseMsgSchema,
]);

export type ClientMsg = z.infer<typeof clientMsgSchema>;

/** Parse one inbound text frame; throws on malformed JSON or schema drift. */
export function parseServerFrame(text: string): ServerFrame {
  return serverFrameSchema.parse(JSON.parse(text));
}

/** Serialize one outbound message, validating it first. */
export function encodeClientMsg(msg: ClientMsg): string {
  return JSON.stringify(clientMsgSchema.parse(msg));
}

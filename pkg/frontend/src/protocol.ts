/** Teleop websocket message schema (JSON, versioned with a `v` field). */

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

const point = z.tuple([z.number(), z.number()]);

export const GeometrySchema = z.discriminatedUnion("kind", [
  z.object({
    kind: z.literal("pointpush"),
    pusher: point,
    object: point,
    goal: point,
    contact_radius: z.number(),
  }),
  z.object({
    kind: z.literal("pendulum"),
    tip: point,
    theta: z.number(),
  }),
  z.object({
    kind: z.literal("multiarm"),
    joints: z.array(point),
    target: point,
  }),
]);
export type Geometry = z.infer<typeof GeometrySchema>;

export const ServerStateSchema = z
  .object({
    v: z.number(),
    type: z.literal("state"),
    tick: z.number(),
    env_state: z.array(z.number()),
    geometry: GeometrySchema,
    last_a_c: z.array(z.number()),
    last_diff: z.number(),
    expert_weight: z.number().nullable(),
    paused: z.boolean(),
    condition: z.string(),
    episode_stats: z.object({
      episode: z.number(),
      step: z.number(),
      score: z.number(),
      retention: z.number().nullable(),
    }),
  })
  .passthrough(); // unknown fields are ignored, per the wire contract
export type ServerState = z.infer<typeof ServerStateSchema>;

export const ServerErrorSchema = z
  .object({ type: z.literal("error"), message: z.string() })
  .passthrough();
export type ServerError = z.infer<typeof ServerErrorSchema>;

export interface ClientAction {
  v: number;
  type: "action";
  tick: number;
  expert_action: number[];
}

export interface ClientControl {
  v: number;
  type: "control";
  command: "start" | "pause" | "reset" | "set_condition";
  condition?: string;
}

export type ClientMessage = ClientAction | ClientControl;

export type ParsedServerMessage =
  | { kind: "state"; state: ServerState }
  | { kind: "error"; message: string }
  | { kind: "version-mismatch"; got: unknown }
  | { kind: "unknown" };

/** Decode one raw websocket payload; malformed input never throws. */
export function parseServerMessage(raw: string): ParsedServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return { kind: "unknown" };
  }
  const err = ServerErrorSchema.safeParse(data);
  if (err.success) return { kind: "error", message: err.data.message };
  const obj = data as Record<string, unknown> | null;
  if (obj && typeof obj === "object" && "v" in obj && obj.v !== PROTOCOL_VERSION) {
    return { kind: "version-mismatch", got: obj.v };
  }
  const state = ServerStateSchema.safeParse(data);
  if (state.success) return { kind: "state", state: state.data };
  return { kind: "unknown" };
}

export function actionMessage(tick: number, action: number[]): ClientAction {
  return { v: PROTOCOL_VERSION, type: "action", tick, expert_action: action };
}

export function controlMessage(
  command: ClientControl["command"],
  condition?: string,
): ClientControl {
  const msg: ClientControl = { v: PROTOCOL_VERSION, type: "control", command };
  if (condition !== undefined) msg.condition = condition;
  return msg;
}

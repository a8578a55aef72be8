/**
 * Client-side view of the session: the latest state frame (older frames are
 * discarded, they are never queued), connection status, the most recent
 * server error, and the skill-switch timeline.
 *
 * The view holds no physics of its own — everything rendered comes straight
 * from the most recent frame, so a reconnect reproduces the identical view
 * from the next frame onward.
 */

import type { ErrorFrame, ServerFrame, StateFrame } from "./protocol";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export interface SkillSwitch {
  tick: number;
  time_s: number;
  from: number;
  to: number;
}

export class SessionView {
  status: ConnectionStatus = "disconnected";
  latest: StateFrame | null = null;
  lastError: ErrorFrame | null = null;
  timeline: SkillSwitch[] = [];

  /** Absorb one validated frame; keeps only the newest state. */
  absorb(frame: ServerFrame): void {
    if (frame.type === "error") {
      this.lastError = frame;
      return;
    }
    const prev = this.latest;
    if (prev !== null && frame.tick < prev.tick) {
      return; // stale frame, drop it
    }
    if (prev !== null && frame.active_skill !== prev.active_skill) {
      this.timeline.push({
        tick: frame.tick,
        time_s: frame.time_s,
        from: prev.active_skill,
        to: frame.active_skill,
      });
    }
    this.latest = frame;
  }

  clearError(): void {
    this.lastError = null;
  }
}

/**
 * Skill panel: live probability bars, the active-skill highlight, a warning
 * when the probabilities do not sum to one, and the switch-event timeline.
 */

import type { StateFrame } from "./protocol";
import { SKILL_NAMES } from "./render";
import type { SkillSwitch } from "./session";

export const PROB_SUM_TOLERANCE = 1e-6;

/** True when the broadcast distribution is visibly non-normalized. */
export function probsNeedWarning(probs: readonly number[]): boolean {
  const sum = probs.reduce((a, b) => a + b, 0);
  return Math.abs(sum - 1) > PROB_SUM_TOLERANCE;
}

export function renderSkillPanel(
  root: HTMLElement,
  frame: StateFrame,
  timeline: readonly SkillSwitch[],
  override: number | null,
): void {
  const rows = frame.skill_probs
    .map((p, i) => {
      const active = i === frame.active_skill;
      const pct = Math.max(0, Math.min(1, p)) * 100;
      const mark = override === i ? " (override)" : "";
      return `
        <div class="skill-row${active ? " active" : ""}" data-skill="${i}">
          <span class="skill-name">${SKILL_NAMES[i]}${mark}</span>
          <span class="skill-bar"><span style="width:${pct.toFixed(1)}%"></span></span>
          <span class="skill-prob">${p.toFixed(3)}</span>
        </div>`;
    })
    .join("");
  const warning = probsNeedWarning(frame.skill_probs)
    ? `<div class="prob-warning">probabilities sum to ${frame.skill_probs
        .reduce((a, b) => a + b, 0)
        .toFixed(6)}</div>`
    : "";
  const events = timeline
    .slice(-8)
    .map(
      (e) =>
        `<li>t=${e.time_s.toFixed(2)}s ${SKILL_NAMES[e.from]} → ${SKILL_NAMES[e.to]}</li>`,
    )
    .join("");
  root.innerHTML = `
    ${rows}
    ${warning}
    <div class="timeline">
      <div class="timeline-title">switches: ${timeline.length}</div>
      <ul>${events}</ul>
    </div>`;
}

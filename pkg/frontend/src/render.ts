/**
 * Canvas 2D side view of the robot. Pure presentation: every quantity drawn
 * comes from the broadcast frame; there is no client-side physics. Link
 * dimensions are nominal display constants matching the simulated morphology.
 */

import type { StateFrame } from "./protocol";

export const DISPLAY = {
  baseHalfX: 0.4,
  baseHalfZ: 0.1,
  thighLen: 0.213,
  calfLen: 0.213,
  wheelRadius: 0.07,
  pixelsPerMeter: 170,
  contactTolerance: 0.012,
};

export const SKILL_NAMES = ["locomotion", "recovery", "platform"] as const;
const SKILL_COLORS = ["#3b82f6", "#f59e0b", "#10b981"];

/** Terrain height under x by linear interpolation, clamped at the ends. */
export function terrainHeightAt(
  polyline: readonly (readonly [number, number])[],
  x: number,
): number {
  if (polyline.length === 0) return 0;
  if (x <= polyline[0][0]) return polyline[0][1];
  const last = polyline[polyline.length - 1];
  if (x >= last[0]) return last[1];
  for (let i = 0; i < polyline.length - 1; i++) {
    const [x0, z0] = polyline[i];
    const [x1, z1] = polyline[i + 1];
    if (x >= x0 && x <= x1) {
      const f = x1 === x0 ? 0 : (x - x0) / (x1 - x0);
      return z0 * (1 - f) + z1 * f;
    }
  }
  return last[1];
}

/** |tau| / tau_limit with a zero-limit guard; the bar fill fraction. */
export function torqueRatio(tau: number, limit: number): number {
  if (limit <= 0) return tau === 0 ? 0 : 1;
  return Math.abs(tau) / limit;
}

/** Wheel body ids whose rim is within tolerance of the terrain surface. */
export function contactWheels(frame: StateFrame): number[] {
  const ids: number[] = [];
  for (const id of [3, 6]) {
    const b = frame.bodies[id];
    if (b === undefined) continue;
    const ground = terrainHeightAt(frame.terrain.polyline, b.x);
    if (b.z - DISPLAY.wheelRadius - ground < DISPLAY.contactTolerance) {
      ids.push(id);
    }
  }
  return ids;
}

interface Camera {
  cx: number; // world x at canvas center
  cz: number; // world z at canvas center
  scale: number;
  width: number;
  height: number;
}

function toScreen(cam: Camera, x: number, z: number): [number, number] {
  return [
    cam.width / 2 + (x - cam.cx) * cam.scale,
    cam.height / 2 - (z - cam.cz) * cam.scale,
  ];
}

function drawSegmentLink(
  ctx: CanvasRenderingContext2D,
  cam: Camera,
  x: number,
  z: number,
  theta: number,
  len: number,
): void {
  // the link's long axis is the body frame's z axis rotated by theta
  const ax = -Math.sin(theta) * (len / 2);
  const az = Math.cos(theta) * (len / 2);
  const [x0, y0] = toScreen(cam, x - ax, z - az);
  const [x1, y1] = toScreen(cam, x + ax, z + az);
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.stroke();
}

export function renderScene(
  ctx: CanvasRenderingContext2D,
  frame: StateFrame,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#0f172a";
  ctx.fillRect(0, 0, width, height);

  const base = frame.bodies[0];
  const cam: Camera = {
    cx: base !== undefined ? base.x : 0,
    cz: (base !== undefined ? base.z : 0) + 0.05,
    scale: DISPLAY.pixelsPerMeter,
    width,
    height,
  };

  // terrain (omitted when the polyline is empty; the robot still draws)
  if (frame.terrain.polyline.length > 1) {
    ctx.strokeStyle = "#64748b";
    ctx.lineWidth = 2;
    ctx.beginPath();
    frame.terrain.polyline.forEach(([x, z], i) => {
      const [sx, sy] = toScreen(cam, x, z);
      if (i === 0) ctx.moveTo(sx, sy);
      else ctx.lineTo(sx, sy);
    });
    ctx.stroke();
  }

  // thighs and calves
  ctx.strokeStyle = "#cbd5e1";
  ctx.lineWidth = 5;
  for (const id of [1, 4]) {
    const b = frame.bodies[id];
    if (b) drawSegmentLink(ctx, cam, b.x, b.z, b.theta, DISPLAY.thighLen);
  }
  for (const id of [2, 5]) {
    const b = frame.bodies[id];
    if (b) drawSegmentLink(ctx, cam, b.x, b.z, b.theta, DISPLAY.calfLen);
  }

  // base rectangle
  if (base !== undefined) {
    const [bx, by] = toScreen(cam, base.x, base.z);
    ctx.save();
    ctx.translate(bx, by);
    ctx.rotate(-base.theta);
    ctx.fillStyle = "#e2e8f0";
    ctx.fillRect(
      -DISPLAY.baseHalfX * cam.scale,
      -DISPLAY.baseHalfZ * cam.scale,
      2 * DISPLAY.baseHalfX * cam.scale,
      2 * DISPLAY.baseHalfZ * cam.scale,
    );
    ctx.restore();
  }

  // wheels, with a spoke showing spin and contact markers under the rim
  const contacts = new Set(contactWheels(frame));
  for (const id of [3, 6]) {
    const b = frame.bodies[id];
    if (!b) continue;
    const [wx, wy] = toScreen(cam, b.x, b.z);
    const r = DISPLAY.wheelRadius * cam.scale;
    ctx.strokeStyle = "#94a3b8";
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.arc(wx, wy, r, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(wx, wy);
    ctx.lineTo(wx + r * Math.cos(-b.theta), wy + r * Math.sin(-b.theta));
    ctx.stroke();
    if (contacts.has(id)) {
      ctx.fillStyle = "#fbbf24";
      ctx.beginPath();
      ctx.arc(wx, wy + r + 4, 3.5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }

  // command arrow from the base, length proportional to v_x
  if (base !== undefined && frame.cmd_echo !== 0) {
    const [ax, ay] = toScreen(cam, base.x, base.z + 0.25);
    const len = frame.cmd_echo * 0.4 * cam.scale;
    const head = Math.sign(len) * 8;
    ctx.strokeStyle = SKILL_COLORS[frame.active_skill];
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(ax, ay);
    ctx.lineTo(ax + len, ay);
    ctx.moveTo(ax + len - head, ay - 5);
    ctx.lineTo(ax + len, ay);
    ctx.lineTo(ax + len - head, ay + 5);
    ctx.stroke();
  }

  drawTorqueBars(ctx, frame, height);
  drawHud(ctx, frame, width);
}

const JOINT_LABELS = ["FH", "FK", "FW", "RH", "RK", "RW"];

function drawTorqueBars(
  ctx: CanvasRenderingContext2D,
  frame: StateFrame,
  height: number,
): void {
  const barW = 110;
  const barH = 12;
  const x0 = 12;
  const y0 = height - 6 * (barH + 6) - 10;
  ctx.font = "10px monospace";
  for (let j = 0; j < 6; j++) {
    const ratio = torqueRatio(
      frame.joints.tau_applied[j],
      frame.joints.tau_limit[j],
    );
    const y = y0 + j * (barH + 6);
    ctx.fillStyle = "#1e293b";
    ctx.fillRect(x0 + 24, y, barW, barH);
    ctx.fillStyle = ratio >= 1 ? "#ef4444" : "#38bdf8";
    ctx.fillRect(x0 + 24, y, Math.min(ratio, 1) * barW, barH);
    ctx.fillStyle = "#e2e8f0";
    ctx.fillText(JOINT_LABELS[j], x0, y + barH - 2);
  }
}

function drawHud(
  ctx: CanvasRenderingContext2D,
  frame: StateFrame,
  width: number,
): void {
  ctx.font = "12px monospace";
  ctx.fillStyle = "#e2e8f0";
  const lines = [
    `t=${frame.time_s.toFixed(2)}s tick=${frame.tick}${frame.paused ? " PAUSED" : ""}`,
    `task=${frame.task} terrain=${frame.terrain.kind} L${frame.terrain.level}`,
    `cmd=${frame.cmd_echo.toFixed(2)} m/s  skill=${SKILL_NAMES[frame.active_skill]}`,
    `reward=${frame.reward.toFixed(3)} costs=[${frame.costs.map((c) => c.toFixed(1)).join(", ")}]`,
  ];
  lines.forEach((s, i) => ctx.fillText(s, width - 320, 18 + 16 * i));
}

/**
 * Console wiring: one socket, one canvas, slider/buttons plus keyboard
 * bindings (arrows adjust v_x, 1/2/3 force a skill, 0 returns control to
 * the selector, R resets, space pauses). The render loop always draws the
 * latest frame; replay files reuse the same path with time-based playback.
 */

import { RateLimiter } from "./rate";
import { renderScene } from "./render";
import { parseReplay, type Replay } from "./replay";
import { SessionView } from "./session";
import { renderSkillPanel } from "./skills";
import { TeleopSocket } from "./socket";

const VX_MAX = 1.5;
const VX_STEP = 0.1;
const SEND_HZ = 20;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("canvas 2d unavailable");

  const view = new SessionView();
  const socket = new TeleopSocket(view);
  let vx = 0;
  let override: number | null = null;
  let replay: Replay | null = null;
  let replayStart = 0;

  const slider = el<HTMLInputElement>("vx");
  const vxLabel = el<HTMLSpanElement>("vx-label");
  const banner = el<HTMLDivElement>("banner");
  const status = el<HTMLSpanElement>("status");
  const panel = el<HTMLDivElement>("skills");

  const cmdLimiter = new RateLimiter<number>(SEND_HZ, (v) => {
    socket.send({ type: "cmd", vx: v });
  });

  function setVx(value: number): void {
    vx = Math.max(-VX_MAX, Math.min(VX_MAX, value));
    slider.value = String(vx);
    vxLabel.textContent = `${vx.toFixed(2)} m/s`;
    cmdLimiter.push(vx);
  }

  function setOverride(skill: number | null): void {
    override = skill;
    socket.send({ type: "override", skill });
  }

  function sendReset(): void {
    const task = el<HTMLSelectElement>("task").value as
      | "locomotion"
      | "recovery"
      | "platform";
    const level = parseInt(el<HTMLInputElement>("level").value, 10) || 1;
    const seedText = el<HTMLInputElement>("seed").value.trim();
    const msg =
      seedText === ""
        ? ({ type: "reset", task, level } as const)
        : ({ type: "reset", task, level, seed: parseInt(seedText, 10) } as const);
    socket.send(msg);
  }

  el<HTMLButtonElement>("connect").onclick = () => {
    replay = null;
    socket.connect(el<HTMLInputElement>("url").value);
  };
  el<HTMLButtonElement>("reset").onclick = sendReset;
  el<HTMLButtonElement>("pause").onclick = () => {
    const paused = view.latest?.paused ?? false;
    socket.send({ type: "pause", on: !paused });
  };
  slider.oninput = () => setVx(parseFloat(slider.value));
  for (const i of [0, 1, 2]) {
    el<HTMLButtonElement>(`ov-${i}`).onclick = () => setOverride(i);
  }
  el<HTMLButtonElement>("ov-auto").onclick = () => setOverride(null);

  el<HTMLInputElement>("replay-file").onchange = async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    socket.close();
    replay = parseReplay(await file.text());
    replayStart = performance.now();
    view.timeline = [];
  };

  window.addEventListener("keydown", (ev) => {
    if ((ev.target as HTMLElement)?.tagName === "INPUT") return;
    switch (ev.key) {
      case "ArrowRight":
        setVx(vx + VX_STEP);
        break;
      case "ArrowLeft":
        setVx(vx - VX_STEP);
        break;
      case "ArrowDown":
        setVx(0);
        break;
      case "1":
      case "2":
      case "3":
        setOverride(parseInt(ev.key, 10) - 1);
        break;
      case "0":
        setOverride(null);
        break;
      case "r":
      case "R":
        sendReset();
        break;
      default:
        return;
    }
    ev.preventDefault();
  });

  function frameForNow() {
    if (replay !== null && replay.frames.length > 0) {
      const t = (performance.now() - replayStart) / 1000;
      const idx = Math.floor(t / replay.header.ctrl_dt);
      if (idx >= replay.frames.length) replayStart = performance.now();
      return replay.frames[Math.min(idx, replay.frames.length - 1)];
    }
    return view.latest;
  }

  function loop(): void {
    status.textContent = replay !== null ? "replay" : view.status;
    const frame = frameForNow();
    if (frame !== null) {
      view.absorb(frame); // replay frames feed the same timeline bookkeeping
      renderScene(ctx as CanvasRenderingContext2D, frame, canvas.width, canvas.height);
      renderSkillPanel(panel, frame, view.timeline, override);
    }
    if (view.lastError !== null) {
      banner.textContent = `${view.lastError.code}: ${view.lastError.message}`;
      banner.style.display = "block";
    } else {
      banner.style.display = "none";
    }
    requestAnimationFrame(loop);
  }
  requestAnimationFrame(loop);
}

main();

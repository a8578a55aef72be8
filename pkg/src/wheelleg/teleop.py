"""Live teleoperation server: one simulated session over WebSocket.

The session logic (message handling, stepping, state frames) is plain
synchronous code so it can be tested without sockets; the async server
wraps it with a 50 Hz control loop that broadcasts at the configured rate
and idles completely while no client is connected.
"""

from __future__ import annotations

import asyncio
import functools
import http.server
import json
import os
import threading

import numpy as np

from .envs import SKILLS, EnvError
from .nets import ParamSet
from .selector import (
    NUM_SKILLS,
    hierarchical_step,
    make_hierarchical_runner,
    reset_hierarchical,
    selector_forward,
)

DEFAULT_TASK = "locomotion"
DEFAULT_KIND = "flat"


class TeleopSession:
    """One robot, one client-steerable episode."""

    def __init__(self, cfg: dict, low_params: ParamSet,
                 sel_params: ParamSet | None = None, seed: int = 0):
        self.cfg = cfg
        self.low_params = low_params
        self.sel_params = sel_params
        self.tick = 0  # monotonic across resets
        self.paused = False
        self.override: int | None = None
        self.task = DEFAULT_TASK
        self.kind = DEFAULT_KIND
        self.level = 1
        self.sel_rng = np.random.default_rng(seed + 1)
        self.runner = make_hierarchical_runner(
            cfg, np.random.default_rng(seed), self.kind, self.task, self.level)
        self.runner.env.max_steps = 10**9  # teleop episodes are open-ended
        self.last_record: dict = {}

    # -- message handling --------------------------------------------------

    def handle_message(self, msg: dict) -> dict | None:
        """Apply one client message; returns an error frame or None."""
        if not isinstance(msg, dict) or "type" not in msg:
            return _error("bad_message", "frames must be objects with a type")
        kind = msg["type"]
        try:
            if kind == "cmd":
                vx = float(msg["vx"])
                if not np.isfinite(vx):
                    raise ValueError("vx must be finite")
                self.runner.env.cmd = vx
            elif kind == "override":
                skill = msg["skill"]
                if skill is not None:
                    skill = int(skill)
                    if not 0 <= skill < NUM_SKILLS:
                        raise ValueError(f"skill must be 0..{NUM_SKILLS - 1}")
                self.override = skill
            elif kind == "reset":
                self.reset(msg.get("task", self.task),
                           int(msg.get("level", self.level)),
                           msg.get("seed"))
            elif kind == "pause":
                self.paused = bool(msg["on"])
            else:
                return _error("unknown_type", f"unknown message type: {kind}")
        except (KeyError, TypeError, ValueError) as e:
            return _error("bad_message", str(e))
        return None

    def reset(self, task: str, level: int, seed=None) -> None:
        if task not in SKILLS:
            raise ValueError(f"unknown task: {task}")
        self.task = task
        self.kind = DEFAULT_KIND if task != "platform" else "pit"
        self.level = level
        if seed is not None:
            self.runner.env.rng = np.random.default_rng(int(seed))
        reset_hierarchical(self.runner, self.cfg, self.kind, task, level)
        self.runner.env.max_steps = 10**9
        self.override = None

    # -- stepping ------------------------------------------------------------

    def _active_skill(self) -> int | None:
        """Forced indicator for this step, or None for selector control."""
        if self.override is not None:
            return self.override
        if self.sel_params is None:
            return SKILLS.index(self.task)
        return None

    def step(self) -> dict:
        """Advance one control step and build the broadcast frame."""
        forced = self._active_skill()
        try:
            rec = hierarchical_step(self.sel_params, self.low_params,
                                    self.cfg, self.runner, self.sel_rng,
                                    forced_skill=forced)
        except EnvError as e:
            self.reset(self.task, self.level)
            return _error("physics_reset", str(e))
        self.tick += 1
        self.last_record = rec
        return self.state_frame()

    def state_frame(self) -> dict:
        env = self.runner.env
        w = env.world
        if self.sel_params is not None:
            probs = selector_forward(
                self.sel_params, self.cfg,
                self.runner.sel_window.ravel()).value.tolist()
        else:
            probs = [0.0] * NUM_SKILLS
        terrain = env.terrain
        xs = terrain.x0 + terrain.dx * np.arange(len(terrain.heights))
        return {
            "type": "state",
            "tick": self.tick,
            "time_s": float(w.t),
            "bodies": [{"id": i, "x": float(w.pos[i, 0]),
                        "z": float(w.pos[i, 1]), "theta": float(w.angle[i])}
                       for i in range(w.pos.shape[0])],
            "joints": {
                "q": w.joint_q().tolist(),
                "qd": w.joint_qd().tolist(),
                "tau_applied": env.last_tau[-1].tolist(),
                "tau_limit": env.last_tau_limit[-1].tolist(),
            },
            "skill_probs": probs,
            "active_skill": int(self.runner.skill_idx),
            "cmd_echo": float(env.cmd),
            "reward_terms": {k: float(v) for k, v in
                             self.last_record.get("reward_terms", {}).items()},
            "reward": float(self.last_record.get("reward", 0.0)),
            "costs": [float(c) for c in
                      self.last_record.get("costs", (0.0, 0.0))],
            "terrain": {
                "kind": terrain.kind,
                "level": int(terrain.level),
                "polyline": [[float(x), float(h)]
                             for x, h in zip(xs, terrain.heights)],
            },
            "task": self.task,
            "level": int(self.level),
            "paused": self.paused,
        }


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


# ---- async server -----------------------------------------------------------------


async def serve(cfg: dict, low_params: ParamSet,
                sel_params: ParamSet | None = None,
                static_dir: str | None = None,
                ready_event: asyncio.Event | None = None,
                stop_event: asyncio.Event | None = None) -> None:
    """Run the WebSocket session server (and optional static file host)."""
    import websockets

    session = TeleopSession(cfg, low_params, sel_params,
                            seed=int(cfg["seed"]))
    clients: set = set()
    wake = asyncio.Event()

    async def handler(ws):
        clients.add(ws)
        wake.set()
        try:
            await ws.send(json.dumps(session.state_frame()))
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send(json.dumps(
                        _error("bad_json", "frame is not valid JSON")))
                    continue
                reply = session.handle_message(msg)
                if reply is not None:
                    await ws.send(json.dumps(reply))
        finally:
            clients.discard(ws)

    async def sim_loop():
        ctrl_dt = session.runner.env.ctrl_dt
        broadcast_s = 1.0 / float(cfg["teleop"]["broadcast_hz"])
        since_broadcast = broadcast_s  # broadcast immediately on wake
        while stop_event is None or not stop_event.is_set():
            if not clients or session.paused:
                # idle: no simulation compute while nobody is watching
                wake.clear()
                waiters = [asyncio.create_task(wake.wait())]
                if stop_event is not None:
                    waiters.append(asyncio.create_task(stop_event.wait()))
                done, pending = await asyncio.wait(
                    waiters, return_when=asyncio.FIRST_COMPLETED,
                    timeout=0.25)
                for p in pending:
                    p.cancel()
                continue
            frame = session.step()
            since_broadcast += ctrl_dt
            if since_broadcast >= broadcast_s:
                since_broadcast = 0.0
                payload = json.dumps(frame)
                for ws in list(clients):
                    try:
                        await asyncio.wait_for(ws.send(payload), timeout=0.1)
                    except Exception:
                        clients.discard(ws)  # drop slow or dead clients
            await asyncio.sleep(ctrl_dt)

    httpd = None
    if static_dir is not None and os.path.isdir(static_dir):
        handler_cls = functools.partial(
            http.server.SimpleHTTPRequestHandler, directory=static_dir)
        httpd = http.server.ThreadingHTTPServer(
            ("127.0.0.1", int(cfg["teleop"]["http_port"])), handler_cls)
        threading.Thread(target=httpd.serve_forever, daemon=True).start()

    try:
        async with websockets.serve(handler, "127.0.0.1",
                                    int(cfg["teleop"]["port"])):
            if ready_event is not None:
                ready_event.set()
            await sim_loop()
    finally:
        if httpd is not None:
            httpd.shutdown()

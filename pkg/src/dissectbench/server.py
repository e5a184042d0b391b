"""Supervisor bridge: WebSocket phase machine between the episode runner and
the browser UI.

The protocol is versioned JSON frames. The phase machine is authoritative on
the server: goals are only accepted while awaiting a goal, and corrective
goals only while awaiting approval; anything else is rejected without
touching episode state.
"""

import copy
import os

import numpy as np

from .config import validate_config
from .errors import DissectError
from .geometry import DissectionGoal
from .pipeline import EpisodeRunner, load_episode_overlays
from .scene import build_scene

PROTOCOL_SCHEMA = 1

AWAITING_GOAL = "awaiting_goal"
READY = "ready"
RUNNING = "running"
AWAITING_APPROVAL = "awaiting_approval"
COMPLETE = "complete"
ABORTED = "aborted"


class Session:
    """One supervised episode; single session per server process."""

    def __init__(self, cfg, log_root="runs"):
        self.cfg = cfg
        self.log_root = log_root
        self.phase = AWAITING_GOAL
        self.runner = None
        self.scene = None
        self.rejected_by_operator = False

    # -- message handlers; each returns a list of outbound messages --------

    def handle(self, msg):
        kind = msg.get("type")
        if msg.get("schema", PROTOCOL_SCHEMA) != PROTOCOL_SCHEMA:
            return [self._error("bad_schema", "unsupported protocol schema")]
        if kind == "submit_goal":
            return self.submit_goal(msg)
        if kind == "review":
            return self.review(msg)
        if kind == "control":
            return self.control(msg)
        if kind == "replay":
            return self.replay(msg)
        return [self._error("bad_type", f"unknown message type {kind!r}")]

    def submit_goal(self, msg):
        if self.phase != AWAITING_GOAL:
            return [self._error(
                "bad_phase",
                f"goal submission rejected in phase {self.phase}")]
        try:
            points = np.asarray(msg["points"], dtype=np.int64)
            grasp = [int(msg["grasp"][0]), int(msg["grasp"][1])]
            goal = DissectionGoal(points)
        except (KeyError, TypeError, ValueError, DissectError) as exc:
            return [self._error("bad_goal", str(exc))]
        cfg = copy.deepcopy(self.cfg)
        cfg["scene"]["goal_points"] = points.tolist()
        cfg["scene"]["grasp_px"] = grasp
        try:
            cfg = validate_config(cfg)
            self.scene = build_scene(cfg)
            self.runner = EpisodeRunner(self.scene, cfg)
        except DissectError as exc:
            return [self._error("bad_goal", str(exc))]
        self.cfg = cfg
        self.phase = READY
        ack = {"schema": PROTOCOL_SCHEMA, "type": "goal_ack",
               "points": goal.points.tolist(), "grasp": grasp}
        return [ack, self._phase()]

    def review(self, msg):
        if self.phase != AWAITING_APPROVAL:
            return [self._error(
                "bad_phase", f"review rejected in phase {self.phase}")]
        decision = msg.get("decision")
        if decision == "approve":
            self.phase = READY
            return [self._phase()]
        if decision == "edit":
            try:
                goals = [DissectionGoal(np.asarray(p, dtype=np.int64))
                         for p in msg["goals"]]
            except (KeyError, TypeError, ValueError, DissectError) as exc:
                return [self._error("bad_goal", str(exc))]
            self.runner.set_goals(goals)
            self.phase = READY
            return [self._phase()]
        if decision == "reject":
            self.rejected_by_operator = True
            self.phase = COMPLETE
            return [self._phase(), self._result(success=False)]
        return [self._error("bad_review", f"unknown decision {decision!r}")]

    def control(self, msg):
        action = msg.get("action")
        if action == "abort":
            self.phase = ABORTED
            return [self._phase()]
        if action == "pause":
            return [self._phase()]
        if action in ("step", "play"):
            if self.phase != READY:
                return [self._error(
                    "bad_phase", f"{action} rejected in phase {self.phase}")]
            out = []
            while True:
                out.extend(self._run_attempt())
                if self.phase != READY or action == "step":
                    break
            return out
        return [self._error("bad_control", f"unknown action {action!r}")]

    def replay(self, msg):
        log_dir = os.path.join(self.log_root, msg.get("log", ""))
        if not os.path.isdir(log_dir):
            return [self._error("bad_log", f"no episode log at {log_dir}")]
        out = []
        for item in load_episode_overlays(log_dir):
            out.append({"schema": PROTOCOL_SCHEMA, "type": "frame",
                        "attempt": item["index"],
                        "overlays": item["overlays"], "replay": True})
        return out

    def _run_attempt(self):
        self.phase = RUNNING
        out = [self._phase()]
        try:
            log = self.runner.step_attempt()
        except DissectError as exc:
            self.phase = COMPLETE
            return out + [self._error("episode_error", str(exc)),
                          self._phase(), self._result(success=False)]
        out.append({"schema": PROTOCOL_SCHEMA, "type": "frame",
                    "attempt": log.index, "overlays": log.overlays()})
        if self.runner.done:
            self.phase = COMPLETE
            out += [self._phase(),
                    self._result(success=log.metrics.success)]
        elif self.cfg["loop"]["human_gate"]:
            self.phase = AWAITING_APPROVAL
            out.append(self._phase())
        else:
            self.phase = READY
            out.append(self._phase())
        return out

    def _phase(self):
        attempt = len(self.runner.attempts) if self.runner else 0
        return {"schema": PROTOCOL_SCHEMA, "type": "phase",
                "phase": self.phase, "attempt": attempt}

    def _result(self, success):
        metrics = self.runner.attempts[-1].metrics.as_row() \
            if self.runner and self.runner.attempts else {}
        return {"schema": PROTOCOL_SCHEMA, "type": "result",
                "success": bool(success and not self.rejected_by_operator),
                "metrics": metrics}

    def _error(self, code, message):
        return {"schema": PROTOCOL_SCHEMA, "type": "error", "code": code,
                "message": message}


def create_app(cfg, log_root="runs"):
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="dissectbench supervisor bridge")
    app.state.session = Session(cfg, log_root=log_root)

    @app.get("/health")
    def health():
        return {"ok": True, "phase": app.state.session.phase,
                "schema": PROTOCOL_SCHEMA}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session = app.state.session
        await ws.send_json(session._phase())
        try:
            while True:
                msg = await ws.receive_json()
                for out in session.handle(msg):
                    await ws.send_json(out)
        except WebSocketDisconnect:
            pass

    static_dir = os.path.join(os.path.dirname(__file__), "..", "..",
                              "frontend", "dist")
    if os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    return app

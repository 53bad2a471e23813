"""Websocket teleoperation service: a human (or scripted client) supplies the
expert action stream while the interaction loop runs live.

Message schema (JSON, versioned with "v"; unknown fields are ignored):
    ServerState  {v, type: "state", tick, env_state, geometry, last_a_c,
                  last_diff, expert_weight, episode_stats, paused, condition}
    ClientAction {v, type: "action", tick, expert_action}
    Control      {v, type: "control", command: start|pause|reset|set_condition,
                  condition?}

Concurrency: the control loop is single-threaded; websocket ingress writes the
latest ClientAction into a single-slot mailbox (last-writer-wins).  If no
fresh action arrived within a tick the previous one is held (zero-order hold).
With tick_hz > 0 the loop runs on a timer; with tick_hz == 0 the loop runs in
lockstep, one tick per received message, which makes sessions deterministic
and testable.
"""

from __future__ import annotations

import asyncio
import contextlib
from dataclasses import dataclass, field

import numpy as np
import torch
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import ExperimentConfig
from .envs import make_env
from .loop import ConditionConfig, arbitrate
from .noise import noise_init
from .policy import Dataset, EnsemblePolicy, train_epoch

PROTOCOL_VERSION = 1


def _geometry(task: str, env) -> dict:
    """2-D renderable geometry for the browser canvas."""
    if task == "pointpush":
        return {
            "kind": "pointpush",
            "pusher": env.p.tolist(),
            "object": env.o.tolist(),
            "goal": env.GOAL.tolist(),
            "contact_radius": env.CONTACT_R,
        }
    if task == "pendulum":
        theta = float(env.theta)
        return {
            "kind": "pendulum",
            "tip": [float(np.sin(theta)), float(np.cos(theta))],
            "theta": theta,
        }
    # multiarm: joint chain positions
    pts = [[0.0, 0.0]]
    acc = 0.0
    for qi in env.q:
        acc += float(qi)
        last = pts[-1]
        pts.append([last[0] + env.LINK * np.cos(acc), last[1] + env.LINK * np.sin(acc)])
    return {"kind": "multiarm", "joints": pts, "target": env.target.tolist()}


@dataclass
class TeleopSession:
    """Deterministic interaction-loop state machine driven tick by tick.

    The session mirrors the headless harness: per-episode environment seeds,
    training rng, and the exploration-noise stream derive from the same seed
    streams, so a client that replays the scripted expert reproduces the
    headless run.
    """

    config: ExperimentConfig = field(default_factory=ExperimentConfig)
    condition_name: str = "C3"
    seed: int = 0
    max_episodes: int | None = None

    def __post_init__(self):
        torch.set_num_threads(1)
        self.env = make_env(self.config.task)
        self.condition = ConditionConfig.from_name(
            self.condition_name, noise_T=self.config.noise_T)
        kw = self.config.policy_kw()
        kw.setdefault("K", 10)
        self.policy = EnsemblePolicy(
            self.env.spec.state_dim, self.env.spec.action_dim,
            sigma_bar=self.condition.sigma_bar, seed=self.seed, **kw)
        self.optimizer = torch.optim.Adam(self.policy.parameters(),
                                          lr=self.config.learning_rate)
        self.dataset = Dataset()
        self.ccfg = self.config.consensus_config()
        self.tick = 0
        self.paused = True
        self.episode = 0
        self.step_in_episode = 0
        self.score = 0.0
        self.episode_scores: list[float] = []
        self.last_a_c = np.zeros(self.env.spec.action_dim)
        self.last_diff = 0.0
        self.last_expert_weight = 0.0
        self.held_action = np.zeros(self.env.spec.action_dim)
        self._reset_noise()
        self._reset_env()

    # -- seed streams (identical to the headless harness) ------------------

    def _reset_noise(self):
        self.noise_state = None
        if self.condition.noise_T > 0:
            self.noise_state = noise_init(
                self.policy.K, self.env.spec.action_dim, self.env.spec.dt,
                self.condition.noise_T,
                int(np.random.SeedSequence([self.seed, 303]).generate_state(1)[0]))

    def _reset_env(self):
        env_seed = int(np.random.SeedSequence(
            [self.seed, 404, self.episode]).generate_state(1)[0])
        self.state = self.env.reset(env_seed)
        self.step_in_episode = 0
        self.score = 0.0

    # -- controls -----------------------------------------------------------

    def start(self):
        self.paused = False

    def pause(self):
        self.paused = True

    def reset(self):
        self.episode = 0
        self.episode_scores = []
        self.dataset = Dataset()
        self._reset_noise()
        self._reset_env()
        self.paused = True

    def set_condition(self, name: str):
        """Switch arbitration condition; resets the constraint heads and the
        exploration-noise stream (documented behavior)."""
        self.condition = ConditionConfig.from_name(name, noise_T=self.config.noise_T)
        with torch.no_grad():
            self.policy.lambda_head.weight.zero_()
            self.policy.lambda_head.bias.zero_()
            self.policy.delta_head.weight.zero_()
            self.policy.delta_head.bias.zero_()
        self._reset_noise()

    def apply_control(self, msg: dict):
        command = msg.get("command")
        if command == "start":
            self.start()
        elif command == "pause":
            self.pause()
        elif command == "reset":
            self.reset()
        elif command == "set_condition":
            self.set_condition(msg["condition"])

    # -- stepping -----------------------------------------------------------

    def submit_action(self, expert_action):
        a = np.asarray(expert_action, dtype=float).reshape(-1)
        if a.shape != (self.env.spec.action_dim,):
            raise ValueError(
                f"expected action of dim {self.env.spec.action_dim}, got {a.shape}")
        self.held_action = np.clip(a, -1.0, 1.0)

    def advance(self) -> dict:
        """One control tick: arbitrate with the held expert action, step the
        environment, train at episode boundaries.  Paused sessions idle."""
        if not self.paused and not self._done():
            a = self.held_action
            act_out = self.policy.act(self.state)
            a_c, info = arbitrate(self.condition, act_out, a, self.noise_state,
                                  self.ccfg, return_info=True)
            self.dataset.add(self.state, a)
            self.last_a_c = a_c
            self.last_diff = float(np.mean(np.abs(a - a_c)))
            self.last_expert_weight = float(info["expert_weight"])
            self.state, r, term, trunc = self.env.step(a_c)
            self.score += r
            self.step_in_episode += 1
            if term or trunc:
                self._finish_episode()
        self.tick += 1
        return self.server_state()

    def _finish_episode(self):
        self.episode_scores.append(self.score)
        train_rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, 505, self.episode]))
        if len(self.dataset):
            train_epoch(self.policy, self.dataset, self.config.batch_size,
                        self.optimizer, train_rng,
                        use_ctrl=self.condition.use_ctrl_loss)
        self.episode += 1
        if self._done():
            self.paused = True
        else:
            self._reset_env()

    def _done(self) -> bool:
        return self.max_episodes is not None and self.episode >= self.max_episodes

    @property
    def retention(self) -> float:
        return float(np.mean(self.episode_scores)) if self.episode_scores else float("nan")

    def server_state(self) -> dict:
        # strict JSON for browser clients: NaN (no finished episode yet) -> null
        retention = self.retention
        return {
            "v": PROTOCOL_VERSION,
            "type": "state",
            "tick": self.tick,
            "env_state": self.state.tolist(),
            "geometry": _geometry(self.config.task, self.env),
            "last_a_c": self.last_a_c.tolist(),
            "last_diff": self.last_diff,
            "expert_weight": self.last_expert_weight,
            "paused": self.paused,
            "condition": self.condition.name,
            "episode_stats": {
                "episode": self.episode,
                "step": self.step_in_episode,
                "score": self.score,
                "retention": None if np.isnan(retention) else retention,
            },
        }


def handle_message(session: TeleopSession, msg: dict):
    """Route one decoded client message; unknown types/fields are ignored."""
    if not isinstance(msg, dict):
        return
    if msg.get("v") not in (None, PROTOCOL_VERSION):
        raise ValueError(f"unsupported protocol version {msg.get('v')!r}")
    mtype = msg.get("type")
    if mtype == "action":
        session.submit_action(msg["expert_action"])
    elif mtype == "control":
        session.apply_control(msg)


def create_app(session: TeleopSession, tick_hz: float = 20.0):
    """FastAPI app exposing the session at ws /ws.

    tick_hz > 0: timed loop; the socket ingress only fills the mailbox.
    tick_hz == 0: lockstep — every received message triggers exactly one tick
    and one ServerState reply (deterministic; used by tests).
    """
    app = FastAPI()
    app.state.session = session

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        await ws.send_json(session.server_state())
        if tick_hz <= 0:
            try:
                while True:
                    msg = await ws.receive_json()
                    try:
                        handle_message(session, msg)
                    except ValueError as exc:
                        await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                            "message": str(exc)})
                        continue
                    # actions drive the loop one tick; control messages only
                    # report state so episode step counts stay aligned
                    if msg.get("type") == "action":
                        await ws.send_json(session.advance())
                    else:
                        await ws.send_json(session.server_state())
            except WebSocketDisconnect:
                session.pause()
            return

        period = 1.0 / tick_hz

        async def pump():
            while True:
                state = session.advance()
                await ws.send_json(state)
                await asyncio.sleep(period)

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                msg = await ws.receive_json()
                try:
                    handle_message(session, msg)
                except ValueError as exc:
                    await ws.send_json({"v": PROTOCOL_VERSION, "type": "error",
                                        "message": str(exc)})
        except WebSocketDisconnect:
            session.pause()
        finally:
            pump_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await pump_task
    return app


def teleop_serve(config: ExperimentConfig, host: str = "127.0.0.1",
                 port: int = 8731, tick_hz: float = 20.0):
    """Blocking entry point used by the CLI."""
    import uvicorn

    condition = config.conditions[0] if config.conditions else "C3"
    seed = config.seeds[0] if config.seeds else 0
    session = TeleopSession(config=config, condition_name=condition, seed=seed)
    app = create_app(session, tick_hz=tick_hz)
    uvicorn.run(app, host=host, port=port)

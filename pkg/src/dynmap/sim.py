"""Deterministic waypoint-following crowd simulator.

Agents steer toward their current waypoint with Gaussian heading noise and
stop short of any wall they would otherwise cross. Each step emits one
detection per moving agent, with the motion direction taken from the
displacement between consecutive frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, TimeOutOfRange
from .geometry import segment_hits, walls_array
from .grid import Detection, PoseStamped, wrap_angle

PATTERNS = ("waypoint_loop", "l_path", "queue_then_go")
MIN_DISPLACEMENT = 1e-4
WALL_MARGIN = 1e-3
DEFAULT_TOLERANCE = 0.15  # half of the default 0.30 m cell


@dataclass
class AgentSpec:
    pattern: str
    waypoints: list
    speed: float
    heading_noise_sigma: float = 0.0
    dwell_time: float = 0.0
    start_offset: float = 0.0
    # waypoint indices where queue_then_go agents wait; default: the last one
    dwell_at: Optional[tuple] = None

    def dwell_indices(self) -> tuple:
        if self.pattern != "queue_then_go" or self.dwell_time <= 0:
            return ()
        if self.dwell_at is None:
            return (len(self.waypoints) - 1,)
        return tuple(self.dwell_at)


@dataclass
class Scene:
    name: str
    walls: list
    agents: list
    seed: int = 0
    bounds: Optional[tuple] = None  # (xmin, ymin, xmax, ymax)

    def extent(self) -> tuple:
        if self.bounds is not None:
            return tuple(float(v) for v in self.bounds)
        pts = [p for a in self.agents for p in a.waypoints]
        w = walls_array(self.walls)
        xs = [p[0] for p in pts] + list(w[:, 0]) + list(w[:, 2])
        ys = [p[1] for p in pts] + list(w[:, 1]) + list(w[:, 3])
        return min(xs), min(ys), max(xs), max(ys)


@dataclass
class SensorNoise:
    position_sigma: float = 0.3
    miss_rate: float = 0.5
    heading_sigma: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ConfigError("noise.miss_rate", "must lie in [0, 1]")
        if self.position_sigma < 0:
            raise ConfigError("noise.position_sigma", "must be >= 0")
        if self.heading_sigma < 0:
            raise ConfigError("noise.heading_sigma", "must be >= 0")


def validate_scene(scene: Scene) -> None:
    """Raise :class:`ConfigError` naming the first invalid field."""
    if not isinstance(scene.name, str) or not scene.name:
        raise ConfigError("name", "must be a non-empty string")
    for i, wall in enumerate(scene.walls):
        vals = list(np.ravel(wall))
        if len(vals) != 4 or not all(math.isfinite(float(v)) for v in vals):
            raise ConfigError(f"walls[{i}]", "must be four finite numbers x1, y1, x2, y2")
    if not scene.agents:
        raise ConfigError("agents", "at least one agent is required")
    for i, a in enumerate(scene.agents):
        p = f"agents[{i}]"
        if a.pattern not in PATTERNS:
            raise ConfigError(f"{p}.pattern", f"must be one of {PATTERNS}")
        if len(a.waypoints) < 2:
            raise ConfigError(f"{p}.waypoints", "need at least 2 waypoints")
        for j, w in enumerate(a.waypoints):
            if len(w) != 2 or not all(math.isfinite(float(v)) for v in w):
                raise ConfigError(f"{p}.waypoints[{j}]", "must be a finite (x, y) pair")
        if not (isinstance(a.speed, (int, float)) and a.speed > 0):
            raise ConfigError(f"{p}.speed", "must be > 0")
        if a.heading_noise_sigma < 0:
            raise ConfigError(f"{p}.heading_noise_sigma", "must be >= 0")
        if a.dwell_time < 0:
            raise ConfigError(f"{p}.dwell_time", "must be >= 0")
        if a.start_offset < 0:
            raise ConfigError(f"{p}.start_offset", "must be >= 0")
        for j in a.dwell_indices():
            if not 0 <= j < len(a.waypoints):
                raise ConfigError(f"{p}.dwell_at", f"index {j} out of range")


def _slerp(q0: np.ndarray, q1: np.ndarray, u: float) -> np.ndarray:
    dot = float(np.dot(q0, q1))
    if dot < 0:
        q1, dot = -q1, -dot
    if dot > 0.9995:
        q = q0 + u * (q1 - q0)
    else:
        theta = math.acos(dot)
        q = (math.sin((1 - u) * theta) * q0 + math.sin(u * theta) * q1) / math.sin(theta)
    return q / np.linalg.norm(q)


@dataclass
class RobotPath:
    """Timed robot keyframes, interpolated linearly in position and by slerp in heading."""

    poses: list

    def __post_init__(self):
        if not self.poses:
            raise ConfigError("poses", "robot path needs at least one pose")
        ts = [p.t for p in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("poses", "timestamps must be strictly increasing")
        self._t = np.array(ts)

    @property
    def t_start(self) -> float:
        return self.poses[0].t

    @property
    def t_end(self) -> float:
        return self.poses[-1].t

    def pose_at(self, t: float) -> PoseStamped:
        if t < self.t_start - 1e-9 or t > self.t_end + 1e-9:
            raise TimeOutOfRange(f"t={t} outside robot path span "
                                 f"[{self.t_start}, {self.t_end}]")
        k = int(np.searchsorted(self._t, t, side="right")) - 1
        k = min(max(k, 0), len(self.poses) - 1)
        a = self.poses[k]
        if k == len(self.poses) - 1 or t <= a.t:
            return PoseStamped(t, a.x, a.y, a.z, a.qx, a.qy, a.qz, a.qw)
        b = self.poses[k + 1]
        u = (t - a.t) / (b.t - a.t)
        pa, pb = a.as_vector(), b.as_vector()
        xyz = pa[:3] + u * (pb[:3] - pa[:3])
        q = _slerp(pa[3:], pb[3:], u)
        return PoseStamped(t, *xyz, *q)

    @classmethod
    def from_waypoints(cls, waypoints: Sequence, speed: float, t_start: float = 0.0,
                       duration: Optional[float] = None, loop: bool = True,
                       turn_time: float = 1.0) -> "RobotPath":
        """Keyframes for a robot driving ``waypoints`` at ``speed``.

        The robot turns in place for ``turn_time`` at each corner. With
        ``loop`` the route repeats until ``duration`` is covered.
        """
        if speed <= 0:
            raise ConfigError("speed", "must be > 0")
        pts = [np.asarray(p, dtype=float) for p in waypoints]
        if len(pts) < 2:
            raise ConfigError("waypoints", "need at least 2 waypoints")
        route = pts + [pts[0]] if loop else pts
        end = t_start + duration if duration is not None else None
        poses = []
        t = t_start
        heading = math.atan2(*(route[1] - route[0])[::-1])
        poses.append(PoseStamped.from_yaw(t, *route[0], heading))
        while True:
            for a, b in zip(route, route[1:]):
                new_heading = math.atan2(*(b - a)[::-1])
                if abs(wrap_angle(new_heading - heading + math.pi) - math.pi) > 1e-9:
                    t += turn_time
                    poses.append(PoseStamped.from_yaw(t, *a, new_heading))
                heading = new_heading
                t += float(np.linalg.norm(b - a)) / speed
                poses.append(PoseStamped.from_yaw(t, *b, heading))
                if end is not None and t >= end:
                    return cls(poses)
            if not loop or end is None:
                return cls(poses)


@dataclass
class SimState:
    t: float
    pos: np.ndarray        # (N, 2)
    target: np.ndarray     # (N,) waypoint index being approached
    direction: np.ndarray  # (N,) +1/-1, traversal sense for l_path
    dwell_left: np.ndarray  # (N,) seconds still to wait
    present: np.ndarray    # (N,) agent has entered the scene

    def copy(self) -> "SimState":
        return SimState(self.t, self.pos.copy(), self.target.copy(), self.direction.copy(),
                        self.dwell_left.copy(), self.present.copy())


def initial_state(scene: Scene) -> SimState:
    n = len(scene.agents)
    pos = np.array([a.waypoints[0] for a in scene.agents], dtype=float).reshape(n, 2)
    return SimState(
        t=0.0,
        pos=pos,
        target=np.ones(n, dtype=np.int64),
        direction=np.ones(n, dtype=np.int64),
        dwell_left=np.zeros(n),
        present=np.array([a.start_offset <= 0.0 for a in scene.agents], dtype=bool),
    )


def _advance(agent: AgentSpec, state: SimState, i: int) -> None:
    n = len(agent.waypoints)
    reached = int(state.target[i])
    if agent.pattern == "l_path":
        nxt = reached + state.direction[i]
        if not 0 <= nxt < n:
            state.direction[i] = -state.direction[i]
            nxt = reached + state.direction[i]
        state.target[i] = nxt
    else:
        state.target[i] = (reached + 1) % n
    if reached in agent.dwell_indices():
        state.dwell_left[i] = agent.dwell_time


def step(scene: Scene, state: SimState, dt: float, rng: np.random.Generator,
         tolerance: float = DEFAULT_TOLERANCE) -> SimState:
    """Advance every agent by one fixed step of ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    new = state.copy()
    new.t = state.t + dt
    walls = walls_array(scene.walls)
    # one draw per agent per step, used or not, keeps RNG consumption fixed
    noise = rng.standard_normal(len(scene.agents))
    movers, starts, ends, lengths = [], [], [], []
    for i, agent in enumerate(scene.agents):
        new.present[i] = new.t >= agent.start_offset - 1e-12
        if not state.present[i]:
            continue
        if new.dwell_left[i] > 0:
            new.dwell_left[i] = max(0.0, new.dwell_left[i] - dt)
            continue
        pos = new.pos[i]
        if math.hypot(*(np.asarray(agent.waypoints[new.target[i]]) - pos)) <= tolerance:
            _advance(agent, new, i)
            if new.dwell_left[i] > 0:
                new.dwell_left[i] = max(0.0, new.dwell_left[i] - dt)
                continue
        gx, gy = agent.waypoints[new.target[i]]
        dx, dy = gx - pos[0], gy - pos[1]
        dist = math.hypot(dx, dy)
        if dist == 0.0:
            continue
        heading = math.atan2(dy, dx) + agent.heading_noise_sigma * noise[i]
        length = min(agent.speed * dt, dist)
        movers.append(i)
        starts.append(pos.copy())
        ends.append(pos + length * np.array([math.cos(heading), math.sin(heading)]))
        lengths.append(length)
    if not movers:
        return new
    starts = np.array(starts)
    ends = np.array(ends)
    hits = segment_hits(starts, ends, walls) if len(walls) else np.full(len(movers), np.inf)
    for k, i in enumerate(movers):
        moved = ends[k]
        if np.isfinite(hits[k]):
            keep = max(hits[k] * lengths[k] - WALL_MARGIN, 0.0)
            moved = starts[k] + (keep / lengths[k]) * (ends[k] - starts[k])
        new.pos[i] = moved
        gx, gy = scene.agents[i].waypoints[new.target[i]]
        if math.hypot(gx - moved[0], gy - moved[1]) <= tolerance:
            _advance(scene.agents[i], new, i)
    return new


def _greedy_match(prev: np.ndarray, cur: np.ndarray, gate: float) -> dict:
    """Closest-pair-first one-to-one matching; returns {cur_index: prev_index}."""
    if len(prev) == 0 or len(cur) == 0:
        return {}
    d = np.hypot(cur[:, None, 0] - prev[None, :, 0], cur[:, None, 1] - prev[None, :, 1])
    order = np.lexsort((np.indices(d.shape)[1].ravel(), np.indices(d.shape)[0].ravel(), d.ravel()))
    used_c, used_p, match = set(), set(), {}
    for flat in order:
        c, p = divmod(int(flat), d.shape[1])
        if d[c, p] > gate:
            break
        if c in used_c or p in used_p:
            continue
        used_c.add(c)
        used_p.add(p)
        match[c] = p
    return match


def emit_detections(prev: SimState, state: SimState, dt: float, mode: str = "exact",
                    gate: Optional[float] = None) -> list:
    """Detections at ``state.t`` for agents that moved since ``prev``.

    ``mode="exact"`` uses the simulator's identities. ``mode="associated"``
    drops them and pairs frames by greedy nearest neighbour within ``gate``
    metres before differencing.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    out = []
    if mode == "exact":
        for i in range(len(state.pos)):
            if not (prev.present[i] and state.present[i]):
                continue
            dx, dy = state.pos[i] - prev.pos[i]
            if math.hypot(dx, dy) < MIN_DISPLACEMENT:
                continue
            out.append(Detection(state.t, float(state.pos[i, 0]), float(state.pos[i, 1]),
                                 wrap_angle(math.atan2(dy, dx)), i))
        return out
    if mode != "associated":
        raise ValueError(f"unknown association mode {mode!r}")
    if gate is None:
        raise ValueError("associated mode needs a gate distance")
    cur_idx = np.flatnonzero(state.present)
    prev_idx = np.flatnonzero(prev.present)
    cur = state.pos[cur_idx]
    match = _greedy_match(prev.pos[prev_idx], cur, gate)
    for c in range(len(cur)):
        if c not in match:
            continue
        dx, dy = cur[c] - prev.pos[prev_idx[match[c]]]
        if math.hypot(dx, dy) < MIN_DISPLACEMENT:
            continue
        out.append(Detection(state.t, float(cur[c, 0]), float(cur[c, 1]),
                             wrap_angle(math.atan2(dy, dx)), None))
    return out


def corrupt(detections: Sequence[Detection], noise: SensorNoise) -> list:
    """Drop and jitter detections to mimic an imperfect person detector."""
    rng = np.random.default_rng(noise.seed)
    n = len(detections)
    u = rng.random(n)
    ex = rng.standard_normal(n) * noise.position_sigma
    ey = rng.standard_normal(n) * noise.position_sigma
    ea = rng.standard_normal(n) * noise.heading_sigma
    out = []
    for k, d in enumerate(detections):
        if u[k] < noise.miss_rate:
            continue
        out.append(Detection(d.t, d.x + float(ex[k]), d.y + float(ey[k]),
                             wrap_angle(d.alpha + float(ea[k])), d.agent_id))
    return out


@dataclass
class SimDataset:
    detections: list
    poses: list
    scene: Scene
    robot_path: RobotPath
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return float(self.meta["duration"])


def run(scene: Scene, robot_path: RobotPath, duration: float, dt: float = 0.1,
        noise: Optional[SensorNoise] = None, seed: Optional[int] = None,
        association: str = "exact", tolerance: float = DEFAULT_TOLERANCE) -> SimDataset:
    """Fixed-step rollout. Identical inputs give bit-identical output."""
    validate_scene(scene)
    if not duration > 0:
        raise ConfigError("duration", "must be > 0")
    if not dt > 0:
        raise ConfigError("dt", "must be > 0")
    steps = int(round(duration / dt))
    if abs(steps * dt - duration) > 1e-9 * max(1.0, duration):
        raise ConfigError("duration", f"must be a whole number of dt={dt} steps")
    if robot_path.t_start > dt + 1e-9 or robot_path.t_end < steps * dt - 1e-9:
        raise ConfigError("robot_path", f"must cover [{dt}, {steps * dt}] s")
    seed = scene.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    gate = 2.0 * max(a.speed for a in scene.agents) * dt
    state = initial_state(scene)
    detections, poses = [], []
    for k in range(steps):
        new = step(scene, state, dt, rng, tolerance)
        new.t = (k + 1) * dt
        detections.extend(emit_detections(state, new, dt, association, gate))
        poses.append(robot_path.pose_at(new.t))
        state = new
    if noise is not None:
        detections = corrupt(detections, noise)
    meta = {
        "version": 1,
        "seed": int(seed),
        "dt": dt,
        "duration": steps * dt,
        "steps": steps,
        "association": association,
        "noise": None if noise is None else {
            "position_sigma": noise.position_sigma, "miss_rate": noise.miss_rate,
            "heading_sigma": noise.heading_sigma, "seed": noise.seed},
    }
    return SimDataset(detections, poses, scene, robot_path, meta)

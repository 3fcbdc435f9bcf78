"""Reset-free, non-stationary environments with ground-truth cloneable models.

Two worlds are provided:

* a 2D point-mass maze on the unit square (dense or sparse reward), with
  procedurally generated axis-aligned walls and a goal that is always part of
  the observation;
* a 1D velocity-tracking chain with a pseudo-terminal "fail band": exceeding a
  velocity limit caps the achievable reward for a fixed number of recovery
  steps.

There is deliberately no reset API. The real environment advances only through
`step`; scheduled world changes swap dynamics/reward parameters atomically at
the start of the scheduled timestep, before the agent plans. Model snapshots
(`env.model()`) reproduce `step` bit for bit in a frozen world and never touch
the real environment.

The inner dynamics are numba-jitted; the scalar step used by the real
environment and the batched rollout used by the planner share one kernel so
the ground-truth contract holds bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .trajectory import Trajectory

__all__ = [
    "MazeState",
    "MazeModel",
    "MazeLifelongEnv",
    "SinkState",
    "SinkChainModel",
    "SinkChainLifelongEnv",
    "WorldSchedule",
    "StepResult",
    "schedule_worlds",
    "model_rollout",
]

# Maze dynamics constants. The source material gives none for the maze, so
# these are pinned here once and serialized with every schedule.
MAZE_DT = 0.05
MAZE_VMAX = 1.0
MAZE_AMAX = 1.0
GOAL_RADIUS = 0.1
# Consecutive in-goal steps before the goal swaps to its alternate location.
# An anti-camping backstop: scheduled world changes already alternate the
# active goal every period (forcing a commute), so this only fires in long
# frozen stretches. Intra-period values (tried: 50, 400) phase-lock with the
# schedule and either keep the agent commuting nonstop or park it at the goal
# the next world activates.
LOITER_LIMIT = 1200
WALL_THICKNESS = 0.08
N_WALLS = 6
GRID_N = 25  # occupancy grid used by the connectivity check

SINK_DT = 0.1
SINK_VMAX = 6.0
SINK_FAIL_BAND = 4.0
SINK_RECOVER_STEPS = 100
SINK_RECOVER_CAP = -1.0
SINK_TARGETS = (1.0, 2.0, 3.0)


# --------------------------------------------------------------------------
# jitted kernels
# --------------------------------------------------------------------------


@nb.njit(cache=True)
def _maze_step_scalar(px, py, vx, vy, ax, ay, active, loiter, walls, goals, dense):
    """One maze transition. Returns (px, py, vx, vy, active, loiter, reward,
    contact, clamped)."""
    clamped = False
    if ax > MAZE_AMAX:
        ax = MAZE_AMAX
        clamped = True
    elif ax < -MAZE_AMAX:
        ax = -MAZE_AMAX
        clamped = True
    if ay > MAZE_AMAX:
        ay = MAZE_AMAX
        clamped = True
    elif ay < -MAZE_AMAX:
        ay = -MAZE_AMAX
        clamped = True

    vx = vx + ax * MAZE_DT
    vy = vy + ay * MAZE_DT
    if vx > MAZE_VMAX:
        vx = MAZE_VMAX
    elif vx < -MAZE_VMAX:
        vx = -MAZE_VMAX
    if vy > MAZE_VMAX:
        vy = MAZE_VMAX
    elif vy < -MAZE_VMAX:
        vy = -MAZE_VMAX
    px = px + vx * MAZE_DT
    py = py + vy * MAZE_DT

    contact = False
    # The arena boundary counts as wall surface: clamp-project and kill the
    # normal velocity component.
    if px < 0.0:
        px = 0.0
        vx = 0.0
        contact = True
    elif px > 1.0:
        px = 1.0
        vx = 0.0
        contact = True
    if py < 0.0:
        py = 0.0
        vy = 0.0
        contact = True
    elif py > 1.0:
        py = 1.0
        vy = 0.0
        contact = True
    for w in range(walls.shape[0]):
        x0 = walls[w, 0]
        y0 = walls[w, 1]
        x1 = walls[w, 2]
        y1 = walls[w, 3]
        if px > x0 and px < x1 and py > y0 and py < y1:
            contact = True
            # project out through the nearest face; ties resolve in the fixed
            # order left, right, bottom, top
            dxl = px - x0
            dxr = x1 - px
            dyl = py - y0
            dyr = y1 - py
            m = dxl
            if dxr < m:
                m = dxr
            if dyl < m:
                m = dyl
            if dyr < m:
                m = dyr
            if m == dxl:
                px = x0
                vx = 0.0
            elif m == dxr:
                px = x1
                vx = 0.0
            elif m == dyl:
                py = y0
                vy = 0.0
            else:
                py = y1
                vy = 0.0

    gx = goals[active, 0]
    gy = goals[active, 1]
    dist = np.sqrt((px - gx) ** 2 + (py - gy) ** 2)
    inside = dist <= GOAL_RADIUS
    if dense:
        reward = -dist - (1.0 if contact else 0.0)
    else:
        reward = (1.0 if inside else 0.0) - (1.0 if contact else 0.0)

    if inside:
        loiter += 1
    else:
        loiter = 0
    if loiter >= LOITER_LIMIT:
        active = 1 - active
        loiter = 0
    return px, py, vx, vy, active, loiter, reward, contact, clamped


@nb.njit(cache=True)
def _maze_rollout(phys0, active0, loiter0, actions, walls, goals, dense):
    """Roll a population of action sequences. actions: (P, H, 2).

    Returns observations (P, H+1, 4), rewards (P, H), final physical states
    (P, 4), final active indices (P,), final loiter counters (P,).
    """
    pop, horizon, _ = actions.shape
    obs = np.empty((pop, horizon + 1, 4))
    rew = np.empty((pop, horizon))
    phys_end = np.empty((pop, 4))
    active_end = np.empty(pop, dtype=np.int64)
    loiter_end = np.empty(pop, dtype=np.int64)
    for p in range(pop):
        px = phys0[0]
        py = phys0[1]
        vx = phys0[2]
        vy = phys0[3]
        active = active0
        loiter = loiter0
        obs[p, 0, 0] = px
        obs[p, 0, 1] = py
        obs[p, 0, 2] = goals[active, 0]
        obs[p, 0, 3] = goals[active, 1]
        for k in range(horizon):
            px, py, vx, vy, active, loiter, r, contact, clamped = _maze_step_scalar(
                px, py, vx, vy, actions[p, k, 0], actions[p, k, 1], active, loiter, walls, goals, dense
            )
            rew[p, k] = r
            obs[p, k + 1, 0] = px
            obs[p, k + 1, 1] = py
            obs[p, k + 1, 2] = goals[active, 0]
            obs[p, k + 1, 3] = goals[active, 1]
        phys_end[p, 0] = px
        phys_end[p, 1] = py
        phys_end[p, 2] = vx
        phys_end[p, 3] = vy
        active_end[p] = active
        loiter_end[p] = loiter
    return obs, rew, phys_end, active_end, loiter_end


@nb.njit(cache=True)
def _sink_step_scalar(x, v, countdown, a, target):
    """One sink-chain transition. Returns (x, v, countdown, reward, clamped)."""
    clamped = False
    if a > 1.0:
        a = 1.0
        clamped = True
    elif a < -1.0:
        a = -1.0
        clamped = True
    v = v + a * SINK_DT
    if v > SINK_VMAX:
        v = SINK_VMAX
    elif v < -SINK_VMAX:
        v = -SINK_VMAX
    x = x + v * SINK_DT
    if v > SINK_FAIL_BAND or v < -SINK_FAIL_BAND:
        countdown = SINK_RECOVER_STEPS
    elif countdown > 0:
        countdown -= 1
    reward = -abs(v - target)
    if countdown > 0 and reward > SINK_RECOVER_CAP:
        reward = SINK_RECOVER_CAP
    return x, v, countdown, reward, clamped


@nb.njit(cache=True)
def _sink_rollout(x0, v0, countdown0, actions, target):
    """actions: (P, H, 1). Returns obs (P, H+1, 2), rewards (P, H), finals."""
    pop, horizon, _ = actions.shape
    obs = np.empty((pop, horizon + 1, 2))
    rew = np.empty((pop, horizon))
    x_end = np.empty(pop)
    v_end = np.empty(pop)
    cd_end = np.empty(pop, dtype=np.int64)
    for p in range(pop):
        x = x0
        v = v0
        cd = countdown0
        obs[p, 0, 0] = v
        obs[p, 0, 1] = 1.0 if cd > 0 else 0.0
        for k in range(horizon):
            x, v, cd, r, clamped = _sink_step_scalar(x, v, cd, actions[p, k, 0], target)
            rew[p, k] = r
            obs[p, k + 1, 0] = v
            obs[p, k + 1, 1] = 1.0 if cd > 0 else 0.0
        x_end[p] = x
        v_end[p] = v
        cd_end[p] = cd
    return obs, rew, x_end, v_end, cd_end


# --------------------------------------------------------------------------
# world schedule generation
# --------------------------------------------------------------------------


@dataclass
class WorldEntry:
    """One scheduled world: parameters that become live at `timestep`."""

    timestep: int
    params: dict

    def to_doc(self) -> dict:
        return {"timestep": self.timestep, "params": self.params}


@dataclass
class WorldSchedule:
    """Seed-deterministic list of world change points, JSON round-trippable."""

    env_kind: str  # "maze" | "sink-chain"
    kind: str  # "ns" | "cw"
    period: int
    seed: int
    entries: list[WorldEntry] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "env_kind": self.env_kind,
                "kind": self.kind,
                "period": self.period,
                "seed": self.seed,
                "entries": [e.to_doc() for e in self.entries],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "WorldSchedule":
        doc = json.loads(text)
        return cls(
            env_kind=doc["env_kind"],
            kind=doc["kind"],
            period=int(doc["period"]),
            seed=int(doc["seed"]),
            entries=[WorldEntry(int(e["timestep"]), e["params"]) for e in doc["entries"]],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "WorldSchedule":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _rects_intersect(a, b) -> bool:
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def _point_clear_of_walls(p, walls, margin) -> bool:
    rect = (p[0] - margin, p[1] - margin, p[0] + margin, p[1] + margin)
    return not any(_rects_intersect(rect, w) for w in walls)


def _free_space_connected(walls) -> bool:
    """Flood fill an occupancy grid; require a single free component."""
    n = GRID_N
    cell = 1.0 / n
    blocked = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            rect = (i * cell, j * cell, (i + 1) * cell, (j + 1) * cell)
            for w in walls:
                if _rects_intersect(rect, w):
                    blocked[i, j] = True
                    break
    free = [(i, j) for i in range(n) for j in range(n) if not blocked[i, j]]
    if not free:
        return False
    seen = np.zeros((n, n), dtype=bool)
    stack = [free[0]]
    seen[free[0]] = True
    count = 0
    while stack:
        i, j = stack.pop()
        count += 1
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < n and 0 <= b < n and not blocked[a, b] and not seen[a, b]:
                seen[a, b] = True
                stack.append((a, b))
    return count == len(free)


def _generate_goal_pair(rng: np.random.Generator) -> np.ndarray:
    while True:
        g = rng.uniform(0.15, 0.85, size=(2, 2))
        if np.linalg.norm(g[0] - g[1]) >= 0.4:
            return g


def _generate_walls(rng: np.random.Generator, goals: np.ndarray, n_walls: int = N_WALLS):
    """Random non-overlapping axis-aligned walls keeping the free space
    connected and the goals (plus the canonical start point) clear."""
    keep_clear = [goals[0], goals[1], np.array([0.5, 0.5])]
    for _ in range(200):
        walls: list[tuple] = []
        tries = 0
        while len(walls) < n_walls and tries < 200:
            tries += 1
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            half = rng.uniform(0.1, 0.3)
            if rng.uniform() < 0.5:
                rect = (cx - half, cy - WALL_THICKNESS / 2, cx + half, cy + WALL_THICKNESS / 2)
            else:
                rect = (cx - WALL_THICKNESS / 2, cy - half, cx + WALL_THICKNESS / 2, cy + half)
            rect = (max(rect[0], 0.0), max(rect[1], 0.0), min(rect[2], 1.0), min(rect[3], 1.0))
            if any(_rects_intersect(rect, w) for w in walls):
                continue
            if not all(_point_clear_of_walls(p, [rect], GOAL_RADIUS + 0.06) for p in keep_clear):
                continue
            walls.append(rect)
        if len(walls) == n_walls and _free_space_connected(walls):
            return np.asarray(walls, dtype=np.float64)
    raise RuntimeError("maze generation failed to find a connected layout")


def schedule_worlds(
    kind: str,
    period: int,
    seed: int,
    n_periods: int = 10,
    env_kind: str = "maze",
    n_walls: int = N_WALLS,
) -> WorldSchedule:
    """Build a deterministic world-change schedule.

    Maze, novel-states: one wall layout for the whole lifetime, a fresh goal
    pair every period. Maze, changing-worlds: one goal pair for the whole
    lifetime, fresh walls every period, active goal alternating. Sink chain:
    the hidden target velocity cycles through a seeded permutation.
    """
    if period <= 0:
        raise ValueError(f"period must be positive, got {period}")
    if kind not in ("ns", "cw"):
        raise ValueError(f"kind must be 'ns' or 'cw', got {kind!r}")
    rng = np.random.default_rng(seed)
    entries: list[WorldEntry] = []
    if env_kind == "maze":
        if kind == "ns":
            first_goals = _generate_goal_pair(rng)
            walls = _generate_walls(rng, first_goals, n_walls)
            wall_doc = walls.tolist()
            goals = first_goals
            for i in range(n_periods):
                if i > 0:
                    goals = _generate_goal_pair(rng)
                    # new goals must be reachable in the fixed maze
                    if not all(_point_clear_of_walls(g, walls.tolist(), GOAL_RADIUS + 0.02) for g in goals):
                        goals = _regen_clear_goals(rng, walls)
                entries.append(
                    WorldEntry(i * period, {"walls": wall_doc, "goals": goals.tolist(), "active": 0})
                )
        else:
            goals = _generate_goal_pair(rng)
            for i in range(n_periods):
                walls = _generate_walls(rng, goals, n_walls)
                entries.append(
                    WorldEntry(
                        i * period,
                        {"walls": walls.tolist(), "goals": goals.tolist(), "active": i % 2},
                    )
                )
    elif env_kind == "sink-chain":
        targets = list(SINK_TARGETS)
        for i in range(n_periods):
            if i % len(targets) == 0:
                order = rng.permutation(len(targets))
            target = targets[int(order[i % len(targets)])]
            entries.append(WorldEntry(i * period, {"target": target}))
    else:
        raise ValueError(f"unknown env_kind {env_kind!r}")
    return WorldSchedule(env_kind=env_kind, kind=kind, period=period, seed=seed, entries=entries)


def _regen_clear_goals(rng: np.random.Generator, walls: np.ndarray) -> np.ndarray:
    for _ in range(500):
        goals = _generate_goal_pair(rng)
        if all(_point_clear_of_walls(g, walls.tolist(), GOAL_RADIUS + 0.02) for g in goals):
            return goals
    raise RuntimeError("could not place goals clear of walls")


# --------------------------------------------------------------------------
# maze environment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MazeState:
    """Full dynamics state: position/velocity plus goal-swap bookkeeping."""

    phys: np.ndarray  # (4,) x, y, vx, vy
    active: int
    loiter: int


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    contact: bool
    clamped: bool
    world_index: int


class MazeModel:
    """Immutable snapshot of the current (T, R): the agent's perfect local model.

    Rollouts start from the snapshot state by default and never touch the real
    environment. The same jitted kernel drives `MazeLifelongEnv.step`, so a
    frozen-world rollout reproduces real steps bit for bit.
    """

    obs_dim = 4
    action_dim = 2

    def __init__(self, walls: np.ndarray, goals: np.ndarray, state: MazeState, dense: bool):
        self.walls = np.array(walls, dtype=np.float64).reshape(-1, 4)
        self.goals = np.array(goals, dtype=np.float64).reshape(2, 2)
        self.state = MazeState(np.array(state.phys, dtype=np.float64), int(state.active), int(state.loiter))
        self.dense = bool(dense)

    def observe(self, state: MazeState | None = None) -> np.ndarray:
        s = self.state if state is None else state
        g = self.goals[s.active]
        return np.array([s.phys[0], s.phys[1], g[0], g[1]])

    def rollout_population(self, actions: np.ndarray, state: MazeState | None = None):
        """actions (P, H, 2) -> (obs (P, H+1, 4), rewards (P, H))."""
        s = self.state if state is None else state
        actions = np.ascontiguousarray(actions, dtype=np.float64)
        obs, rew, _, _, _ = _maze_rollout(
            s.phys, s.active, s.loiter, actions, self.walls, self.goals, self.dense
        )
        return obs, rew

    def rollout(self, actions: np.ndarray, state: MazeState | None = None):
        """Single action sequence (H, 2) -> (obs (H+1, 4), rewards (H,), end MazeState)."""
        s = self.state if state is None else state
        actions = np.ascontiguousarray(actions, dtype=np.float64).reshape(-1, 2)
        obs, rew, phys_end, active_end, loiter_end = _maze_rollout(
            s.phys, s.active, s.loiter, actions[None, :, :], self.walls, self.goals, self.dense
        )
        end = MazeState(phys_end[0], int(active_end[0]), int(loiter_end[0]))
        return obs[0], rew[0], end

    def rollout_policy(self, policy_fn, horizon: int, state: MazeState | None = None):
        """Closed-loop rollout: policy_fn(k, obs) -> action. Returns
        (obs (H+1, 4), actions (H, 2), rewards (H,))."""
        s = self.state if state is None else state
        px, py, vx, vy = s.phys
        active, loiter = s.active, s.loiter
        obs = np.empty((horizon + 1, 4))
        acts = np.empty((horizon, 2))
        rew = np.empty(horizon)
        obs[0] = [px, py, self.goals[active, 0], self.goals[active, 1]]
        for k in range(horizon):
            a = np.asarray(policy_fn(k, obs[k]), dtype=np.float64)
            a = np.clip(a, -MAZE_AMAX, MAZE_AMAX)
            acts[k] = a
            px, py, vx, vy, active, loiter, r, _, _ = _maze_step_scalar(
                px, py, vx, vy, a[0], a[1], active, loiter, self.walls, self.goals, self.dense
            )
            rew[k] = r
            obs[k + 1] = [px, py, self.goals[active, 0], self.goals[active, 1]]
        return obs, acts, rew


class MazeLifelongEnv:
    """Reset-free 2D point-mass maze with a scheduled non-stationary world.

    Observation is 4-D (agent position, active goal position); velocity and
    walls are hidden. Scheduled entries become live at the start of their
    timestep, before the agent plans, so `model()` always reflects the world
    the coming transition will use. There is no reset API.
    """

    obs_dim = 4
    action_dim = 2

    def __init__(self, schedule: WorldSchedule, reward_mode: str = "dense", start=(0.5, 0.5)):
        if schedule.env_kind != "maze":
            raise ValueError(f"schedule is for {schedule.env_kind!r}, not maze")
        if reward_mode not in ("dense", "sparse"):
            raise ValueError(f"reward_mode must be dense|sparse, got {reward_mode!r}")
        self.schedule = schedule
        self.dense = reward_mode == "dense"
        self.phys = np.array([start[0], start[1], 0.0, 0.0], dtype=np.float64)
        self.active = 0
        self.loiter = 0
        self.walls = np.zeros((0, 4))
        self.goals = np.zeros((2, 2))
        self.world_clock = 0
        self.world_index = -1
        self._pending = sorted(schedule.entries, key=lambda e: e.timestep)
        self._apply_due_changes()
        if self.world_index < 0:
            raise ValueError("schedule has no entry at timestep 0")

    def _apply_due_changes(self) -> None:
        while self._pending and self._pending[0].timestep <= self.world_clock:
            entry = self._pending.pop(0)
            p = entry.params
            self.walls = np.asarray(p["walls"], dtype=np.float64).reshape(-1, 4)
            self.goals = np.asarray(p["goals"], dtype=np.float64).reshape(2, 2)
            self.active = int(p["active"])
            self.loiter = 0
            self.world_index += 1

    def observe(self) -> np.ndarray:
        g = self.goals[self.active]
        return np.array([self.phys[0], self.phys[1], g[0], g[1]])

    def state(self) -> MazeState:
        return MazeState(self.phys.copy(), self.active, self.loiter)

    def model(self) -> MazeModel:
        return MazeModel(self.walls.copy(), self.goals.copy(), self.state(), self.dense)

    def step(self, action) -> StepResult:
        a = np.asarray(action, dtype=np.float64).reshape(2)
        px, py, vx, vy, active, loiter, reward, contact, clamped = _maze_step_scalar(
            self.phys[0], self.phys[1], self.phys[2], self.phys[3],
            a[0], a[1], self.active, self.loiter, self.walls, self.goals, self.dense,
        )
        self.phys = np.array([px, py, vx, vy])
        self.active = int(active)
        self.loiter = int(loiter)
        transition_world = self.world_index
        self.world_clock += 1
        self._apply_due_changes()  # next observation reflects the new world
        return StepResult(
            obs=self.observe(),
            reward=float(reward),
            contact=bool(contact),
            clamped=bool(clamped),
            world_index=transition_world,
        )


# --------------------------------------------------------------------------
# sink chain environment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SinkState:
    x: float
    v: float
    countdown: int


class SinkChainModel:
    """Snapshot model for the 1D velocity-tracking chain."""

    obs_dim = 2
    action_dim = 1

    def __init__(self, target: float, state: SinkState):
        self.target = float(target)
        self.state = state

    def observe(self, state: SinkState | None = None) -> np.ndarray:
        s = self.state if state is None else state
        return np.array([s.v, 1.0 if s.countdown > 0 else 0.0])

    def rollout_population(self, actions: np.ndarray, state: SinkState | None = None):
        s = self.state if state is None else state
        actions = np.ascontiguousarray(actions, dtype=np.float64)
        obs, rew, _, _, _ = _sink_rollout(s.x, s.v, s.countdown, actions, self.target)
        return obs, rew

    def rollout(self, actions: np.ndarray, state: SinkState | None = None):
        s = self.state if state is None else state
        actions = np.ascontiguousarray(actions, dtype=np.float64).reshape(-1, 1)
        obs, rew, x_end, v_end, cd_end = _sink_rollout(
            s.x, s.v, s.countdown, actions[None, :, :], self.target
        )
        return obs[0], rew[0], SinkState(float(x_end[0]), float(v_end[0]), int(cd_end[0]))

    def rollout_policy(self, policy_fn, horizon: int, state: SinkState | None = None):
        s = self.state if state is None else state
        x, v, cd = s.x, s.v, s.countdown
        obs = np.empty((horizon + 1, 2))
        acts = np.empty((horizon, 1))
        rew = np.empty(horizon)
        obs[0] = [v, 1.0 if cd > 0 else 0.0]
        for k in range(horizon):
            a = np.asarray(policy_fn(k, obs[k]), dtype=np.float64).reshape(1)
            a = np.clip(a, -1.0, 1.0)
            acts[k] = a
            x, v, cd, r, _ = _sink_step_scalar(x, v, cd, a[0], self.target)
            rew[k] = r
            obs[k + 1] = [v, 1.0 if cd > 0 else 0.0]
        return obs, acts, rew


class SinkChainLifelongEnv:
    """Reset-free 1D chain whose fail band mimics a pseudo-terminal sink:
    once |v| exceeds the band, per-step reward is capped below the optimum for
    at least SINK_RECOVER_STEPS steps."""

    obs_dim = 2
    action_dim = 1

    def __init__(self, schedule: WorldSchedule):
        if schedule.env_kind != "sink-chain":
            raise ValueError(f"schedule is for {schedule.env_kind!r}, not sink-chain")
        self.schedule = schedule
        self.x = 0.0
        self.v = 0.0
        self.countdown = 0
        self.target = SINK_TARGETS[0]
        self.world_clock = 0
        self.world_index = -1
        self._pending = sorted(schedule.entries, key=lambda e: e.timestep)
        self._apply_due_changes()

    def _apply_due_changes(self) -> None:
        while self._pending and self._pending[0].timestep <= self.world_clock:
            entry = self._pending.pop(0)
            self.target = float(entry.params["target"])
            self.world_index += 1

    def observe(self) -> np.ndarray:
        return np.array([self.v, 1.0 if self.countdown > 0 else 0.0])

    def state(self) -> SinkState:
        return SinkState(self.x, self.v, self.countdown)

    def model(self) -> SinkChainModel:
        return SinkChainModel(self.target, self.state())

    def step(self, action) -> StepResult:
        a = float(np.asarray(action, dtype=np.float64).reshape(1)[0])
        x, v, cd, reward, clamped = _sink_step_scalar(self.x, self.v, self.countdown, a, self.target)
        self.x, self.v, self.countdown = float(x), float(v), int(cd)
        transition_world = self.world_index
        self.world_clock += 1
        self._apply_due_changes()
        return StepResult(
            obs=self.observe(),
            reward=float(reward),
            contact=False,
            clamped=bool(clamped),
            world_index=transition_world,
        )


def model_rollout(model, start_state, actions) -> Trajectory:
    """Roll an open-loop action sequence through a model snapshot.

    `start_state` of None means the snapshot's own state. The trajectory is
    unscored; planners attach a return estimate.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape[0] == 0:
        obs0 = model.observe(start_state)
        return Trajectory(obs0[None, :], actions.reshape(0, model.action_dim), np.zeros(0))
    obs, rew, _ = model.rollout(actions, state=start_state)
    return Trajectory(obs, actions.reshape(-1, model.action_dim), rew)

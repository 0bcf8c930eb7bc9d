"""Rover-navigation grid world benchmark family.

An M x N grid of cells, four compass actions, slip to the two
perpendicular neighbors, and obstacle cells that are expensive but
neither absorbing nor blocking.  Row 0 is the bottom of the map; the
agent starts bottom-left and the goal is top-right by default.  Cell
(r, c) becomes the MDP state named "r,c" in row-major order.

Obstacle layouts are generated from a seed; a designated subset of
obstacles is "uncertain" and can be displaced to a neighboring cell by
perturb_obstacles, which is what the robustness evaluation randomizes
between episodes.  Displacing obstacles changes only costs and the
collision set, never the transition kernel, so kernels are cached per
(rows, cols, slip).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import UnreachableGoalError
from .mdp import Mdp, require_valid, unreachable_states
from .rng import SplitMix64

ACTIONS = ("E", "W", "N", "S")
_DELTAS = {"E": (0, 1), "W": (0, -1), "N": (1, 0), "S": (-1, 0)}
_PERP = {"E": ("N", "S"), "W": ("N", "S"), "N": ("E", "W"), "S": ("E", "W")}

DEFAULT_OBSTACLE_COST = 5.0
DEFAULT_STEP_COST = 1.0


def cell_name(cell) -> str:
    return f"{cell[0]},{cell[1]}"


@dataclass(frozen=True)
class GridWorldSpec:
    rows: int
    cols: int
    obstacles: frozenset
    uncertain_obstacles: frozenset = frozenset()
    slip: float = 0.1
    obstacle_cost: float = DEFAULT_OBSTACLE_COST
    step_cost: float = DEFAULT_STEP_COST
    cost_mode: str = "fuel"    # "fuel" | "min_time"
    start: tuple = (0, 0)
    goal: tuple | None = None  # defaults to the top-right cell

    def __post_init__(self):
        if self.goal is None:
            object.__setattr__(self, "goal", (self.rows - 1, self.cols - 1))
        object.__setattr__(self, "obstacles",
                           frozenset(tuple(c) for c in self.obstacles))
        object.__setattr__(self, "uncertain_obstacles",
                           frozenset(tuple(c) for c in self.uncertain_obstacles))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise ValueError("grid must contain at least two cells")
        if not (0.0 <= self.slip < 0.5):
            raise ValueError(f"slip must lie in [0, 0.5): {self.slip}")
        if self.cost_mode not in ("fuel", "min_time"):
            raise ValueError(f"unknown cost_mode: {self.cost_mode}")
        if self.obstacle_cost < 0 or self.step_cost < 0:
            raise ValueError("costs must be non-negative")
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not self._in_grid(cell):
                raise ValueError(f"{name} cell {cell} outside the grid")
        if self.start == self.goal:
            raise ValueError("start equals goal")
        if self.start in self.obstacles or self.goal in self.obstacles:
            raise ValueError("start and goal must not be obstacles")
        if not self.uncertain_obstacles <= self.obstacles:
            raise ValueError("uncertain obstacles must be obstacles")
        for cell in self.obstacles:
            if not self._in_grid(cell):
                raise ValueError(f"obstacle {cell} outside the grid")

    def _in_grid(self, cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols

    @property
    def start_state(self) -> str:
        return cell_name(self.start)

    @property
    def goal_state(self) -> str:
        return cell_name(self.goal)

    def obstacle_states(self) -> frozenset:
        return frozenset(cell_name(c) for c in self.obstacles)

    def to_json_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "obstacles": sorted(list(c) for c in self.obstacles),
            "uncertain_obstacles": sorted(list(c) for c in self.uncertain_obstacles),
            "slip": self.slip,
            "obstacle_cost": self.obstacle_cost,
            "step_cost": self.step_cost,
            "cost_mode": self.cost_mode,
            "start": list(self.start),
            "goal": list(self.goal),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GridWorldSpec":
        return cls(
            rows=doc["rows"], cols=doc["cols"],
            obstacles=frozenset(tuple(c) for c in doc["obstacles"]),
            uncertain_obstacles=frozenset(
                tuple(c) for c in doc.get("uncertain_obstacles", [])),
            slip=doc.get("slip", 0.1),
            obstacle_cost=doc.get("obstacle_cost", DEFAULT_OBSTACLE_COST),
            step_cost=doc.get("step_cost", DEFAULT_STEP_COST),
            cost_mode=doc.get("cost_mode", "fuel"),
            start=tuple(doc.get("start", (0, 0))),
            goal=tuple(doc["goal"]) if "goal" in doc else None,
        )

    @classmethod
    def load(cls, path) -> "GridWorldSpec":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def default_uncertain_count(rows: int, cols: int) -> int:
    """2 / 4 / 8 uncertain obstacles by benchmark scale (20 / 100 / 200 cells)."""
    cells = rows * cols
    if cells <= 20:
        return 2
    if cells <= 100:
        return 4
    return 8


def generate_gridworld_spec(rows: int, cols: int, seed: int, *,
                            n_obstacles: int | None = None,
                            n_uncertain: int | None = None,
                            slip: float = 0.1,
                            obstacle_cost: float = DEFAULT_OBSTACLE_COST,
                            step_cost: float = DEFAULT_STEP_COST,
                            cost_mode: str = "fuel") -> GridWorldSpec:
    """Seeded random layout: floor(0.25 * rows * cols) obstacles by
    default, never on start or goal, resampled (up to 100 draws) in the
    unlikely event the goal ends up unreachable."""
    if n_obstacles is None:
        n_obstacles = int(0.25 * rows * cols)
    if n_uncertain is None:
        n_uncertain = min(default_uncertain_count(rows, cols), n_obstacles)
    if n_uncertain > n_obstacles:
        raise ValueError("n_uncertain exceeds n_obstacles")

    start = (0, 0)
    goal = (rows - 1, cols - 1)
    free = [(r, c) for r in range(rows) for c in range(cols)
            if (r, c) not in (start, goal)]
    if n_obstacles > len(free):
        raise ValueError("more obstacles than available cells")

    rng = SplitMix64(seed)
    for _ in range(100):
        pool = list(free)
        chosen = []
        for _ in range(n_obstacles):
            chosen.append(pool.pop(rng.randrange(len(pool))))
        uncertain = []
        upool = list(chosen)
        for _ in range(n_uncertain):
            uncertain.append(upool.pop(rng.randrange(len(upool))))
        spec = GridWorldSpec(rows=rows, cols=cols,
                             obstacles=frozenset(chosen),
                             uncertain_obstacles=frozenset(uncertain),
                             slip=slip, obstacle_cost=obstacle_cost,
                             step_cost=step_cost, cost_mode=cost_mode,
                             start=start, goal=goal)
        mdp = _mdp_from_kernel(spec)
        if not unreachable_states(mdp):
            return spec
    raise UnreachableGoalError(
        "unreachable-goal: no admissible layout found in 100 draws")


# kernels depend only on geometry and slip, never on obstacles
_KERNEL_CACHE: dict = {}


def _grid_kernel(rows: int, cols: int, slip: float):
    key = (rows, cols, slip)
    cached = _KERNEL_CACHE.get(key)
    if cached is not None:
        return cached

    def index(r, c):
        return r * cols + c

    sup_idx, sup_p = [], []
    for r in range(rows):
        for c in range(cols):
            row_i, row_p = [], []
            for action in ACTIONS:
                mass: dict = {}

                def put(direction, p):
                    dr, dc = _DELTAS[direction]
                    nr, nc = r + dr, c + dc
                    if not (0 <= nr < rows and 0 <= nc < cols):
                        nr, nc = r, c  # off-grid mass stays in place
                    j = index(nr, nc)
                    mass[j] = mass.get(j, 0.0) + p

                put(action, 1.0 - 2.0 * slip)
                if slip > 0.0:
                    for perp in _PERP[action]:
                        put(perp, slip)
                items = sorted(mass.items())
                row_i.append(tuple(j for j, _ in items))
                row_p.append(tuple(p for _, p in items))
            sup_idx.append(tuple(row_i))
            sup_p.append(tuple(row_p))
    result = (tuple(sup_idx), tuple(sup_p))
    _KERNEL_CACHE[key] = result
    return result


def _mdp_from_kernel(spec: GridWorldSpec) -> Mdp:
    """Assemble the Mdp without revalidating; costs are rebuilt fresh,
    the kernel rows come from the geometry cache."""
    rows, cols = spec.rows, spec.cols
    sup_idx, sup_p = _grid_kernel(rows, cols, spec.slip)
    n = rows * cols
    goal_idx = spec.goal[0] * cols + spec.goal[1]

    # absorbing goal overrides the geometric row
    goal_row_i = tuple((goal_idx,) for _ in ACTIONS)
    goal_row_p = tuple((1.0,) for _ in ACTIONS)
    sup_idx = sup_idx[:goal_idx] + (goal_row_i,) + sup_idx[goal_idx + 1:]
    sup_p = sup_p[:goal_idx] + (goal_row_p,) + sup_p[goal_idx + 1:]

    cost = np.empty((n, len(ACTIONS)))
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            if s == goal_idx:
                cell_cost = 0.0
            elif spec.cost_mode == "min_time":
                cell_cost = 1.0
            elif (r, c) in spec.obstacles:
                cell_cost = spec.obstacle_cost
            else:
                cell_cost = spec.step_cost
            cost[s, :] = cell_cost

    states = tuple(cell_name((r, c)) for r in range(rows) for c in range(cols))
    return Mdp(states=states, actions=ACTIONS, support_idx=sup_idx,
               support_p=sup_p, cost=cost,
               initial=spec.start[0] * cols + spec.start[1], goal=goal_idx)


def build_gridworld(spec: GridWorldSpec) -> Mdp:
    """Build and validate the benchmark MDP for a spec.

    Raises UnreachableGoalError when some cell cannot reach the goal
    under any policy (cannot happen with the compass motion model, but
    the check keeps hand-written specs honest).
    """
    mdp = _mdp_from_kernel(spec)
    require_valid(mdp)
    dead = unreachable_states(mdp)
    if dead:
        raise UnreachableGoalError(f"unreachable-goal: {sorted(dead)}")
    return mdp


def perturb_obstacles(spec: GridWorldSpec, rng: SplitMix64,
                      move_prob: float = 0.2) -> GridWorldSpec:
    """Independently displace each uncertain obstacle with probability
    move_prob to a uniformly random in-grid neighbor; draws landing on
    the start or goal are redrawn among the remaining neighbors (the
    obstacle stays put if none remain).  Static obstacles never move.
    Obstacles are processed in sorted cell order so a given rng stream
    always yields the same map.
    """
    static = spec.obstacles - spec.uncertain_obstacles
    moved = set()
    for cell in sorted(spec.uncertain_obstacles):
        new_cell = cell
        if move_prob > 0.0 and rng.random() < move_prob:
            r, c = cell
            candidates = [(r + dr, c + dc) for dr, dc in
                          (_DELTAS["E"], _DELTAS["W"], _DELTAS["N"], _DELTAS["S"])
                          if 0 <= r + dr < spec.rows and 0 <= c + dc < spec.cols]
            while candidates:
                pick = candidates.pop(rng.randrange(len(candidates)))
                if pick != spec.start and pick != spec.goal:
                    new_cell = pick
                    break
        moved.add(new_cell)
    return replace(spec, obstacles=frozenset(static | moved),
                   uncertain_obstacles=frozenset(moved))

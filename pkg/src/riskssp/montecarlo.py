"""Seeded trajectory simulation and the map-perturbation robustness test.

Episodes are driven by the package's SplitMix64 streams: episode i of a
batch always runs on substream(master_seed, i), so results are
identical regardless of execution order or parallelism, and a single
episode can be replayed in isolation.

The robustness evaluation fixes a policy solved on the unperturbed map,
redraws the uncertain obstacles each episode, and counts episodes that
end in a collision (first entry into any obstacle cell, static or
moved).
Obstacle displacement never changes the transition kernel, only costs
and the collision set, so rebuilding the map per episode is cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UndefinedPolicyStateError
from .gridworld import GridWorldSpec, _mdp_from_kernel, perturb_obstacles
from .mdp import Mdp
from .rng import SplitMix64, substream
from .solver import Policy


class Outcome(str, Enum):
    REACHED_GOAL = "ReachedGoal"
    COLLISION = "Collision"
    HORIZON_EXCEEDED = "HorizonExceeded"


@dataclass
class Trajectory:
    states: list
    actions: list
    total_cost: float
    outcome: Outcome


@dataclass
class RobustnessReport:
    runs: int
    failures: int
    failure_rate: float
    cost_mean: float
    cost_p95: float
    seed: int
    horizon_exceeded: int = 0

    def to_json_dict(self) -> dict:
        return {
            "runs": self.runs,
            "failures": self.failures,
            "failure_rate": self.failure_rate,
            "cost_mean": self.cost_mean,
            "cost_p95": self.cost_p95,
            "seed": self.seed,
            "horizon_exceeded": self.horizon_exceeded,
        }


def simulate(mdp: Mdp, policy: Policy, start, horizon: int,
             rng: SplitMix64, collision_states=frozenset()) -> Trajectory:
    """Roll out the policy from `start` until the goal is reached, a
    collision state is entered, or `horizon` actions have been taken.

    collision_states is domain metadata (obstacle cells for grid
    worlds); with the default empty set the episode only ends at the
    goal or the horizon, which is the pure MDP cost semantics.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    choice = policy.choice
    s = mdp.state_index(start)
    goal = mdp.goal
    collision_idx = {mdp.state_index(name) for name in collision_states}

    states = [mdp.states[s]]
    actions: list = []
    total_cost = 0.0
    outcome = Outcome.HORIZON_EXCEEDED
    if s == goal:
        outcome = Outcome.REACHED_GOAL
    elif s in collision_idx:
        outcome = Outcome.COLLISION
    else:
        for _ in range(horizon):
            name = mdp.states[s]
            if name not in choice:
                raise UndefinedPolicyStateError(
                    f"undefined-policy-state: {name}")
            a = mdp.action_index(choice[name])
            total_cost += float(mdp.cost[s, a])
            idx, probs = mdp.row(s, a)
            u = rng.random()
            acc = 0.0
            nxt = idx[-1]
            for j, p in zip(idx, probs):
                acc += p
                if u < acc:
                    nxt = j
                    break
            s = nxt
            actions.append(mdp.actions[a])
            states.append(mdp.states[s])
            if s == goal:
                outcome = Outcome.REACHED_GOAL
                break
            if s in collision_idx:
                outcome = Outcome.COLLISION
                break
    return Trajectory(states=states, actions=actions,
                      total_cost=total_cost, outcome=outcome)


def default_horizon(spec: GridWorldSpec) -> int:
    """Ten times the grid semiperimeter; generous vs. the diameter."""
    return 10 * (spec.rows + spec.cols)


def robustness_eval(base_spec: GridWorldSpec, policy: Policy, runs: int,
                    perturb_prob: float, rng_seed: int, *,
                    horizon: int | None = None,
                    redraw_per_episode: bool = True) -> RobustnessReport:
    """Failure rate of a fixed policy when the map wobbles under it.

    Per episode: draw a perturbed obstacle layout, rebuild the map,
    roll the policy out from the start cell, and record whether the
    episode ended in a collision.  With redraw_per_episode=False a
    single perturbed layout (drawn from substream index `runs`) is used
    for the whole batch instead.  Horizon overruns are tallied
    separately and are not failures.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if horizon is None:
        horizon = default_horizon(base_spec)

    fixed_spec = None
    if not redraw_per_episode:
        fixed_spec = perturb_obstacles(base_spec, substream(rng_seed, runs),
                                       move_prob=perturb_prob)

    failures = 0
    overruns = 0
    costs = np.empty(runs)
    for i in range(runs):
        rng = substream(rng_seed, i)
        spec = fixed_spec if fixed_spec is not None else \
            perturb_obstacles(base_spec, rng, move_prob=perturb_prob)
        mdp = _mdp_from_kernel(spec)
        traj = simulate(mdp, policy, spec.start_state, horizon, rng,
                        collision_states=spec.obstacle_states())
        if traj.outcome is Outcome.COLLISION:
            failures += 1
        elif traj.outcome is Outcome.HORIZON_EXCEEDED:
            overruns += 1
        costs[i] = traj.total_cost

    return RobustnessReport(
        runs=runs,
        failures=failures,
        failure_rate=failures / runs,
        cost_mean=float(np.sum(costs) / runs),
        cost_p95=float(np.percentile(costs, 95)),
        seed=rng_seed,
        horizon_exceeded=overruns,
    )

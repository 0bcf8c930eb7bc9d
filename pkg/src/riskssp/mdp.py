"""Finite transient MDPs with a cost-free absorbing goal state.

States and actions carry external string identifiers; internally both
are indexed contiguously from 0 and the transition kernel is stored
row-wise per (state, action) as explicit support lists, which is what
the solver's one-step risk evaluators iterate over.

An Mdp is immutable after construction and safe to share across
threads.  Construction is permissive: structurally broken instances can
be built in memory so that validate_mdp can report every violation;
JSON ingestion, by contrast, rejects invalid input outright.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import Assumption1Violated, ValidationError

ROW_SUM_TOL = 1e-12


@dataclass
class Mdp:
    states: tuple
    actions: tuple
    support_idx: tuple   # [s][a] -> tuple of next-state indices
    support_p: tuple     # [s][a] -> tuple of probabilities, aligned with support_idx
    cost: np.ndarray     # shape (|S|, |A|), non-negative
    initial: int
    goal: int
    _state_index: dict = field(default_factory=dict, repr=False)
    _action_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._state_index = {name: i for i, name in enumerate(self.states)}
        self._action_index = {name: i for i, name in enumerate(self.actions)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def state_index(self, name) -> int:
        return self._state_index[name]

    def action_index(self, name) -> int:
        return self._action_index[name]

    @property
    def c_bar(self) -> float:
        """Largest immediate cost."""
        return float(self.cost.max())

    def row(self, s: int, a: int):
        """Support indices and probabilities of T(.|s, a)."""
        return self.support_idx[s][a], self.support_p[s][a]

    def dense_kernel(self) -> np.ndarray:
        """Dense T[s, a, s'] array; convenience for oracles and I/O."""
        n, m = self.n_states, self.n_actions
        T = np.zeros((n, m, n))
        for s in range(n):
            for a in range(m):
                for j, p in zip(self.support_idx[s][a], self.support_p[s][a]):
                    T[s, a, j] += p
        return T

    # -- construction ------------------------------------------------

    @classmethod
    def from_tables(cls, states, actions, transitions, costs, initial, goal) -> "Mdp":
        """Build from name-keyed tables.

        `transitions` maps (state, action) to {next_state: prob};
        `costs` maps (state, action) to a float.  Rows whose sum is
        within ROW_SUM_TOL of 1 are renormalized to sum exactly 1;
        out-of-tolerance rows are kept raw for validate_mdp to report.
        """
        states = tuple(states)
        actions = tuple(actions)
        sidx = {name: i for i, name in enumerate(states)}
        aidx = {name: i for i, name in enumerate(actions)}
        n, m = len(states), len(actions)

        sup_idx = [[() for _ in range(m)] for _ in range(n)]
        sup_p = [[() for _ in range(m)] for _ in range(n)]
        cost = np.zeros((n, m))
        for (sname, aname), row in transitions.items():
            s, a = sidx[sname], aidx[aname]
            items = sorted((sidx[t], float(p)) for t, p in row.items())
            idx = tuple(i for i, _ in items)
            probs = [p for _, p in items]
            total = sum(probs)
            if abs(total - 1.0) <= ROW_SUM_TOL and total > 0:
                probs = [p / total for p in probs]
            sup_idx[s][a] = idx
            sup_p[s][a] = tuple(probs)
        for (sname, aname), c in costs.items():
            cost[sidx[sname], aidx[aname]] = float(c)

        return cls(
            states=states,
            actions=actions,
            support_idx=tuple(tuple(r) for r in sup_idx),
            support_p=tuple(tuple(r) for r in sup_p),
            cost=cost,
            initial=sidx[initial],
            goal=sidx[goal],
        )

    @classmethod
    def from_dense(cls, T, cost, initial: int, goal: int,
                   states=None, actions=None) -> "Mdp":
        """Build from a dense kernel T[s, a, s'] and cost[s, a]."""
        T = np.asarray(T, dtype=float)
        cost = np.asarray(cost, dtype=float)
        n, m, _ = T.shape
        states = tuple(states) if states is not None else tuple(f"s{i}" for i in range(n))
        actions = tuple(actions) if actions is not None else tuple(f"a{k}" for k in range(m))
        sup_idx, sup_p = [], []
        for s in range(n):
            row_i, row_p = [], []
            for a in range(m):
                nz = np.nonzero(T[s, a])[0]
                probs = T[s, a, nz]
                total = probs.sum()
                if abs(total - 1.0) <= ROW_SUM_TOL and total > 0:
                    probs = probs / total
                row_i.append(tuple(int(j) for j in nz))
                row_p.append(tuple(float(p) for p in probs))
            sup_idx.append(tuple(row_i))
            sup_p.append(tuple(row_p))
        return cls(states, actions, tuple(sup_idx), tuple(sup_p),
                   cost, int(initial), int(goal))


# -- validation ------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_mdp(mdp: Mdp) -> ValidationReport:
    """Check every structural invariant; never raises.

    Returns a report listing each violation with its (state, action)
    location; an empty list means the instance is well-formed.
    """
    v = []
    if mdp.n_states < 2:
        v.append(f"state set too small: |S|={mdp.n_states} < 2")
    if mdp.n_actions < 1:
        v.append("action set is empty")
    if mdp.initial == mdp.goal:
        v.append("initial state equals goal state")

    for s in range(mdp.n_states):
        sname = mdp.states[s]
        for a in range(mdp.n_actions):
            aname = mdp.actions[a]
            idx, probs = mdp.row(s, a)
            if len(idx) == 0:
                v.append(f"no transition row at ({sname}, {aname})")
                continue
            total = sum(probs)
            if abs(total - 1.0) > ROW_SUM_TOL:
                v.append(f"row sum != 1 at ({sname}, {aname}): {total!r}")
            if any(p < 0 for p in probs):
                v.append(f"negative probability at ({sname}, {aname})")
            c = float(mdp.cost[s, a])
            if c < 0:
                v.append(f"negative cost at ({sname}, {aname}): {c!r}")
            if s == mdp.goal:
                if c != 0.0:
                    v.append(f"goal cost nonzero at ({sname}, {aname}): {c!r}")
                absorbed = dict(zip(idx, probs)).get(mdp.goal, 0.0)
                if abs(absorbed - 1.0) > ROW_SUM_TOL:
                    v.append(f"goal not absorbing at ({sname}, {aname}): "
                             f"T(goal|goal)={absorbed!r}")
    return ValidationReport(v)


def require_valid(mdp: Mdp) -> None:
    report = validate_mdp(mdp)
    if not report.valid:
        raise ValidationError(report.violations)


# -- goal avoidance / properness -------------------------------------


def goal_avoidance_fixpoint(mdp: Mdp) -> set:
    """States from which some policy avoids the goal with certainty.

    Greatest fixpoint of: keep s in C (C excluding the goal) iff some
    action's full support stays inside C.  Computed on supports only,
    so it is exact regardless of floating-point probabilities.  The
    all-policies reachability assumption holds iff the result is empty.
    Returns external state names.
    """
    C = set(range(mdp.n_states)) - {mdp.goal}
    changed = True
    while changed:
        changed = False
        for s in sorted(C):
            keep = False
            for a in range(mdp.n_actions):
                idx, _ = mdp.row(s, a)
                if idx and all(j in C for j in idx):
                    keep = True
                    break
            if not keep:
                C.discard(s)
                changed = True
    return {mdp.states[s] for s in C}


def unreachable_states(mdp: Mdp) -> set:
    """States from which no policy reaches the goal at all (dead ends).

    Backward reachability of the goal over the union support graph;
    everything outside that closure is returned, as external names.
    """
    reach = {mdp.goal}
    frontier = [mdp.goal]
    incoming = [[] for _ in range(mdp.n_states)]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for j in mdp.support_idx[s][a]:
                incoming[j].append(s)
    while frontier:
        j = frontier.pop()
        for s in incoming[j]:
            if s not in reach:
                reach.add(s)
                frontier.append(s)
    return {mdp.states[s] for s in range(mdp.n_states) if s not in reach}


@dataclass
class PropernessCertificate:
    """Horizon tau, residual avoidance probability p, and the resulting
    cost ceiling tau * c_bar / (1 - p).

    coverage notes which policy class the avoidance maximization ranged
    over: "all-policies" is the strict certificate; "best-policy" is
    the weaker reachability variant used only to scale the solver's
    divergence tripwire when the strict certificate does not exist.
    """
    tau: int
    p: float
    c_bar: float
    upper_bound: float
    coverage: str = "all-policies"

    def to_json_dict(self) -> dict:
        return {
            "tau": self.tau,
            "p": self.p,
            "c_bar": self.c_bar,
            "upper_bound": self.upper_bound,
            "coverage": self.coverage,
        }


def _avoidance_dp(mdp: Mdp, maximize: bool):
    """Shared DP for tau and p.

    u_0 = 1 off-goal; u_{t+1}(s) = opt_a sum T(s'|s,a) u_t(s') with opt
    either max (avoidance by an adversarial policy) or min (best
    goal-seeking policy).  The set {u_t = 1} is tracked combinatorially
    on supports so that floating-point row sums cannot fake an escape.
    Returns (tau, p) or raises if some u stays at 1 past |S| stages.
    """
    n = mdp.n_states
    u = np.ones(n)
    u[mdp.goal] = 0.0
    ones = set(range(n)) - {mdp.goal}

    for t in range(1, n + 1):
        new_ones = set()
        for s in ones:
            rows = (all(j in ones for j in mdp.support_idx[s][a])
                    for a in range(mdp.n_actions))
            if (any(rows) if maximize else all(rows)):
                new_ones.add(s)
        nu = np.empty(n)
        nu[mdp.goal] = 0.0
        for s in range(n):
            if s == mdp.goal:
                continue
            vals = [sum(p * u[j] for j, p in zip(*mdp.row(s, a)))
                    for a in range(mdp.n_actions)]
            nu[s] = max(vals) if maximize else min(vals)
        for s in new_ones:
            nu[s] = 1.0
        if np.any(nu > u + 1e-12):
            raise AssertionError("avoidance DP is not monotone")
        u = np.minimum(nu, u)
        ones = new_ones
        if not ones:
            return t, float(u.max())
    raise Assumption1Violated(
        "assumption-1 violated: some state keeps avoidance probability 1 "
        f"beyond {n} stages")


def properness_certificate(mdp: Mdp) -> PropernessCertificate:
    """Strict certificate: every policy reaches the goal with positive
    probability within tau stages; p maximizes avoidance over all
    policies.  Requires goal_avoidance_fixpoint(mdp) to be empty.
    """
    avoid = goal_avoidance_fixpoint(mdp)
    if avoid:
        raise Assumption1Violated(
            "assumption-1 violated: goal can be avoided surely from "
            f"{sorted(avoid)}")
    tau, p = _avoidance_dp(mdp, maximize=True)
    c_bar = mdp.c_bar
    return PropernessCertificate(tau, p, c_bar, tau * c_bar / (1.0 - p))


def reachability_certificate(mdp: Mdp) -> PropernessCertificate:
    """Weaker certificate over the best goal-seeking policy.

    tau is the first stage by which an optimally-steered agent has
    positive goal probability from every state; p is the worst residual
    avoidance under that steering.  Exists whenever there are no dead
    ends.  Only meaningful as a magnitude scale, not as the
    all-policies guarantee.
    """
    dead = unreachable_states(mdp)
    if dead:
        raise Assumption1Violated(
            f"assumption-1 violated: goal unreachable from {sorted(dead)}")
    tau, p = _avoidance_dp(mdp, maximize=False)
    c_bar = mdp.c_bar
    return PropernessCertificate(tau, p, c_bar, tau * c_bar / (1.0 - p),
                                 coverage="best-policy")


# -- JSON interchange -------------------------------------------------


def _require(cond: bool, path: str, msg: str, errors: list) -> bool:
    if not cond:
        errors.append(f"{path}: {msg}")
    return cond


def mdp_from_json_dict(doc: dict) -> Mdp:
    """Ingest the documented JSON schema; raises ValidationError with
    JSON-path locations on structural problems.

    Schema: {"states": [..], "actions": [..],
             "transitions": [{"from","action","to","p"}, ...],
             "costs": [{"state","action","c"}, ...],
             "initial": s, "goal": s or [s, ...]}
    Unlisted (from, action, to) triples have probability zero; every
    (state, action) pair must appear in "costs".  A list-valued "goal"
    merges all listed states into the first one, which becomes the
    single absorbing goal.
    """
    errors: list = []
    if not isinstance(doc, dict):
        raise ValidationError(["$: document must be a JSON object"])
    for key in ("states", "actions", "transitions", "costs", "initial", "goal"):
        _require(key in doc, f"$.{key}", "missing required field", errors)
    if errors:
        raise ValidationError(errors)

    states = doc["states"]
    actions = doc["actions"]
    _require(isinstance(states, list) and len(states) >= 2 and
             all(isinstance(s, str) for s in states),
             "$.states", "must be a list of >= 2 state names", errors)
    _require(isinstance(actions, list) and len(actions) >= 1 and
             all(isinstance(a, str) for a in actions),
             "$.actions", "must be a non-empty list of action names", errors)
    if errors:
        raise ValidationError(errors)
    _require(len(set(states)) == len(states), "$.states", "duplicate names", errors)
    _require(len(set(actions)) == len(actions), "$.actions", "duplicate names", errors)

    goal_field = doc["goal"]
    goals = goal_field if isinstance(goal_field, list) else [goal_field]
    _require(len(goals) >= 1 and all(g in states for g in goals),
             "$.goal", "must name existing state(s)", errors)
    _require(doc["initial"] in states, "$.initial", "must name an existing state", errors)
    if errors:
        raise ValidationError(errors)

    goal = goals[0]
    merged = set(goals[1:])
    _require(doc["initial"] not in set(goals), "$.initial",
             "initial state may not be a goal state", errors)
    if errors:
        raise ValidationError(errors)
    kept_states = [s for s in states if s not in merged]

    transitions: dict = {}
    for i, t in enumerate(doc["transitions"]):
        path = f"$.transitions[{i}]"
        if not _require(isinstance(t, dict), path, "must be an object", errors):
            continue
        ok = True
        for key in ("from", "action", "to", "p"):
            ok &= _require(key in t, f"{path}.{key}", "missing field", errors)
        if not ok:
            continue
        ok = _require(t["from"] in states, f"{path}.from", "unknown state", errors)
        ok &= _require(t["to"] in states, f"{path}.to", "unknown state", errors)
        ok &= _require(t["action"] in actions, f"{path}.action", "unknown action", errors)
        ok &= _require(isinstance(t["p"], (int, float)) and not isinstance(t["p"], bool),
                       f"{path}.p", "must be a number", errors)
        if not ok:
            continue
        src = t["from"]
        if src in merged:
            continue  # rows out of merged goals are dropped
        dst = goal if t["to"] in merged or t["to"] == goal else t["to"]
        row = transitions.setdefault((src, t["action"]), {})
        row[dst] = row.get(dst, 0.0) + float(t["p"])

    costs: dict = {}
    for i, c in enumerate(doc["costs"]):
        path = f"$.costs[{i}]"
        if not _require(isinstance(c, dict), path, "must be an object", errors):
            continue
        ok = True
        for key in ("state", "action", "c"):
            ok &= _require(key in c, f"{path}.{key}", "missing field", errors)
        if not ok:
            continue
        ok = _require(c["state"] in states, f"{path}.state", "unknown state", errors)
        ok &= _require(c["action"] in actions, f"{path}.action", "unknown action", errors)
        ok &= _require(isinstance(c["c"], (int, float)) and not isinstance(c["c"], bool),
                       f"{path}.c", "must be a number", errors)
        if ok and c["state"] not in merged:
            costs[(c["state"], c["action"])] = float(c["c"])
    if errors:
        raise ValidationError(errors)

    for s in kept_states:
        for a in actions:
            if s == goal:
                transitions[(s, a)] = {goal: 1.0}
                costs[(s, a)] = 0.0
                continue
            if (s, a) not in costs:
                errors.append(f"$.costs: missing cost for ({s}, {a})")
            if (s, a) not in transitions:
                errors.append(f"$.transitions: no outgoing row for ({s}, {a})")
    if errors:
        raise ValidationError(errors)

    mdp = Mdp.from_tables(kept_states, actions, transitions, costs,
                          doc["initial"], goal)
    require_valid(mdp)
    return mdp


def load_mdp(path) -> Mdp:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError([f"$: invalid JSON at line {e.lineno} "
                                   f"column {e.colno}: {e.msg}"]) from e
    return mdp_from_json_dict(doc)


def mdp_to_json_dict(mdp: Mdp) -> dict:
    transitions = []
    costs = []
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for j, p in zip(*mdp.row(s, a)):
                transitions.append({"from": mdp.states[s],
                                    "action": mdp.actions[a],
                                    "to": mdp.states[j], "p": p})
            costs.append({"state": mdp.states[s], "action": mdp.actions[a],
                          "c": float(mdp.cost[s, a])})
    return {
        "states": list(mdp.states),
        "actions": list(mdp.actions),
        "transitions": transitions,
        "costs": costs,
        "initial": mdp.states[mdp.initial],
        "goal": mdp.states[mdp.goal],
    }

"""Brute-force references for tests: exhaustive enumeration and exact solving.

Nothing here shares code with the value-iteration planner; policies are
evaluated by direct linear solves.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import Environment, GroundState, PalmError

MAX_STATES = 100_000
MAX_DENSE_STATES = 6_000


class OracleRefusal(PalmError):
    pass


@dataclass
class EnumeratedMdp:
    states: list
    actions: list[str]
    P: np.ndarray  # (S, A, S)
    R: np.ndarray  # (S, A, S) reward on each transition
    terminal: np.ndarray  # (S,) bool
    index: dict

    @property
    def expected_reward(self) -> np.ndarray:
        return (self.P * self.R).sum(axis=2)

    def check(self) -> None:
        rows = self.P.sum(axis=2)
        if not np.allclose(rows, 1.0, atol=1e-12):
            raise OracleRefusal("transition rows do not sum to one")


def _dense(states, actions, transitions, terminal) -> EnumeratedMdp:
    n, k = len(states), len(actions)
    if n > MAX_DENSE_STATES:
        raise OracleRefusal(f"{n} states is too many for a dense model")
    P = np.zeros((n, k, n))
    R = np.zeros((n, k, n))
    for (i, a), outs in transitions.items():
        for j, p, r in outs:
            P[i, a, j] += p
            R[i, a, j] = r
    for i in range(n):
        if terminal[i]:
            P[i, :, :] = 0.0
            P[i, :, i] = 1.0
            R[i, :, :] = 0.0
    return EnumeratedMdp(list(states), list(actions), P, R, np.array(terminal, dtype=bool),
                         {s: i for i, s in enumerate(states)})


def enumerate_mdp(env: Environment, start: GroundState | None = None,
                  max_states: int = MAX_STATES, reward: str = "ground") -> EnumeratedMdp:
    """Breadth-first expansion of every state reachable from ``start``.

    ``reward`` is ``"ground"`` for the domain reward or ``"steps"`` for -1
    per transition (used for shortest expected episode length).
    """
    start = env.initial_state() if start is None else start
    actions = [a.id for a in env.primitive_actions()]
    index = {start: 0}
    states = [start]
    terminal = [env.is_goal(start)]
    transitions = {}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        if terminal[i]:
            continue
        s = states[i]
        for ai, a in enumerate(actions):
            outs = []
            for p, outcome in env.outcomes(s, a):
                j = index.get(outcome.next_state)
                if j is None:
                    j = len(states)
                    if j >= max_states:
                        raise OracleRefusal(f"more than {max_states} reachable states")
                    index[outcome.next_state] = j
                    states.append(outcome.next_state)
                    terminal.append(env.is_goal(outcome.next_state))
                    queue.append(j)
                r = outcome.reward if reward == "ground" else -1.0
                outs.append((j, p, r))
            transitions[(i, ai)] = outs
    return _dense(states, actions, transitions, terminal)


def _evaluate(mdp: EnumeratedMdp, policy: np.ndarray, gamma: float) -> np.ndarray:
    n = len(mdp.states)
    rows = np.arange(n)
    P = mdp.P[rows, policy]  # (S, S)
    r = mdp.expected_reward[rows, policy]
    live = ~mdp.terminal
    v = np.zeros(n)
    A = np.eye(live.sum()) - gamma * P[np.ix_(live, live)]
    v[live] = np.linalg.solve(A, r[live])
    return v


def _q(mdp: EnumeratedMdp, v: np.ndarray, gamma: float) -> np.ndarray:
    q = mdp.expected_reward + gamma * np.einsum("sat,t->sa", mdp.P, v)
    q[mdp.terminal] = 0.0
    return q


def exact_solve(mdp: EnumeratedMdp, gamma: float, max_rounds: int = 10_000):
    """Policy iteration with exact linear-solve evaluation.

    Returns ``(values, policy, q)``; the policy only switches on strict
    improvement, so it terminates.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    n = len(mdp.states)
    policy = np.zeros(n, dtype=np.int64)
    for _ in range(max_rounds):
        v = _evaluate(mdp, policy, gamma)
        q = _q(mdp, v, gamma)
        best = q.max(axis=1)
        current = q[np.arange(n), policy]
        improve = best > current + 1e-12 * np.maximum(1.0, np.abs(best))
        if not improve.any():
            return v, policy, q
        policy = np.where(improve, q.argmax(axis=1), policy)
    raise OracleRefusal("policy iteration did not stabilise")


def optimal_actions(q: np.ndarray, i: int, tolerance: float = 1e-9) -> set[int]:
    return set(np.flatnonzero(q[i] >= q[i].max() - tolerance).tolist())


def min_expected_steps(mdp: EnumeratedMdp, gamma_seed: float = 0.999) -> np.ndarray:
    """Minimum expected number of steps to a terminal state, per state.

    A discounted solve provides a proper starting policy; undiscounted
    policy iteration on unit step costs then finishes the job.
    """
    n = len(mdp.states)
    unit = EnumeratedMdp(mdp.states, mdp.actions, mdp.P, -np.ones_like(mdp.R), mdp.terminal, mdp.index)
    _, policy, _ = exact_solve(unit, gamma_seed)
    live = ~mdp.terminal
    rows = np.arange(n)
    for _ in range(10_000):
        P = mdp.P[rows, policy]
        steps = np.zeros(n)
        A = np.eye(live.sum()) - P[np.ix_(live, live)]
        steps[live] = np.linalg.solve(A, np.ones(live.sum()))
        cost = 1.0 + np.einsum("sat,t->sa", mdp.P, steps)
        cost[mdp.terminal] = 0.0
        best = cost.min(axis=1)
        improve = best < cost[rows, policy] - 1e-9
        if not improve.any():
            return steps
        policy = np.where(improve, cost.argmin(axis=1), policy)
    raise OracleRefusal("undiscounted policy iteration did not stabilise")


def optimal_episode_length(env: Environment, start: GroundState | None = None) -> float:
    mdp = enumerate_mdp(env, start, reward="steps")
    return float(min_expected_steps(mdp)[0])


def random_mdp(rng: np.random.Generator, n_states: int = 20, n_actions: int = 4,
               branching: int = 3, terminal_fraction: float = 0.1) -> EnumeratedMdp:
    """A random stochastic MDP with rewards in [-1, 1]."""
    P = np.zeros((n_states, n_actions, n_states))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=min(branching, n_states), replace=False)
            w = rng.dirichlet(np.ones(len(succ)))
            P[s, a, succ] = w
    terminal = rng.random(n_states) < terminal_fraction
    terminal[0] = False
    for s in np.flatnonzero(terminal):
        P[s] = 0.0
        P[s, :, s] = 1.0
        R[s] = 0.0
    return EnumeratedMdp(list(range(n_states)), [f"a{i}" for i in range(n_actions)], P, R,
                         terminal, {i: i for i in range(n_states)})


def _closure(ctx, grounding, starts) -> tuple[dict, dict, dict]:
    """Abstract states reached from ``starts`` by trying every available child.

    Returns members (abstract state -> ground states), outcomes
    ((abstract state, label) -> set of next abstract states) and, per
    child label, the ground states it was invoked from.
    """
    members: dict[tuple, list[GroundState]] = {}
    outcomes: dict[tuple, set] = {}
    invoked: dict[str, set] = {}
    seen: set = set()
    queue = deque(starts)
    while queue:
        s = queue.popleft()
        if s in seen:
            continue
        seen.add(s)
        sv = grounding.project(s)
        members.setdefault(sv, []).append(s)
        if grounding.is_terminal(sv) or ctx.env.is_goal(s):
            continue
        for child in grounding.child_actions(sv):
            invoked.setdefault(child.label, set()).add(s)
            end = ctx.simulate(child, s, require_known=True)
            outcomes.setdefault((sv, child.label), set()).add(grounding.project(end))
            queue.append(end)
    return members, outcomes, invoked


def invocation_starts(ctx, start: GroundState | None = None) -> dict[str, set]:
    """Ground states each grounded subtask can be entered from, trying every choice top-down."""
    start = ctx.start_state if start is None else start
    h = ctx.hierarchy
    starts: dict[str, set] = {ctx.root.label: {start}}
    for name in reversed(h.order):
        if h.nodes[name].is_wrapper:
            continue
        for g in ctx.grounded[name]:
            if g.label not in starts:
                continue
            _, _, invoked = _closure(ctx, g, starts[g.label])
            for label, states in invoked.items():
                starts.setdefault(label, set()).update(states)
    return starts


def true_abstract_mdp(ctx, grounding, start: GroundState | None = None,
                      starts: dict[str, set] | None = None) -> EnumeratedMdp:
    """Exact abstract model of one grounded subtask given its children's current behaviour.

    The subtask's abstract states are those reachable from every ground
    state it can be entered from (see :func:`invocation_starts`) by running
    each available child to termination. Only deterministic domains are
    supported; an abstract pair whose members disagree on the outcome is
    reported rather than averaged.
    """
    if starts is None:
        ground_mdp = enumerate_mdp(ctx.env, ctx.start_state if start is None else start)
        if not np.all((ground_mdp.P == 0) | (ground_mdp.P == 1)):
            raise OracleRefusal("exact abstract models need a deterministic domain")
        starts = invocation_starts(ctx, start)
    if grounding.label not in starts:
        raise OracleRefusal(f"{grounding.label} is never entered from this start")
    members, outcomes, _ = _closure(ctx, grounding, starts[grounding.label])
    labels = [c.label for c in grounding.children]
    states = list(members)
    index = {s: i for i, s in enumerate(states)}
    terminal = [grounding.is_terminal(sv) for sv in states]
    transitions = {}
    for sv in states:
        i = index[sv]
        if terminal[i]:
            continue
        for ai, label in enumerate(labels):
            nxt = outcomes.get((sv, label))
            if nxt is None:  # unavailable here
                transitions[(i, ai)] = [(i, 1.0, grounding.node.pseudo_reward.default)]
                continue
            if len(nxt) != 1:
                raise OracleRefusal(f"{grounding.label}: {label} is not deterministic at the abstract level")
            (s2,) = nxt
            transitions[(i, ai)] = [(index[s2], 1.0, grounding.pseudo_reward(sv, label, s2))]
    return _dense(states, labels, transitions, terminal)

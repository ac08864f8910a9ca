"""Flat learners on the ground MDP: tabular Q-learning and flat R-MAX."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import Environment, GroundState, Terminal
from .executor import DEFAULT_EPISODE_BUDGET, EpisodeRecord, ExecutionContext
from .lamdp.build import flat_hierarchy

DEFAULT_ALPHA = 0.1
DEFAULT_EPSILON = 0.1


@dataclass
class QTable:
    """Action values keyed by frozen ground state; unseen entries are 0."""

    actions: tuple[str, ...]
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    q: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.actions = tuple(self.actions)

    def row(self, key) -> np.ndarray:
        r = self.q.get(key)
        if r is None:
            r = self.q[key] = np.zeros(len(self.actions))
        return r

    def value(self, key, action: str) -> float:
        r = self.q.get(key)
        return 0.0 if r is None else float(r[self.actions.index(action)])

    def choose(self, key, rng: np.random.Generator) -> int:
        """Epsilon-greedy; ties among greedy actions are broken uniformly."""
        if rng.random() < self.epsilon:
            return int(rng.integers(len(self.actions)))
        r = self.row(key)
        best = np.flatnonzero(r == r.max())
        return int(best[0] if len(best) == 1 else rng.choice(best))

    def update(self, key, a: int, reward: float, next_key, terminal: bool, gamma: float) -> None:
        target = reward if terminal else reward + gamma * float(self.row(next_key).max())
        r = self.row(key)
        r[a] += self.alpha * (target - r[a])


def qlearning_episode(env: Environment, table: QTable, gamma: float, rng: np.random.Generator,
                      budget: int = DEFAULT_EPISODE_BUDGET, episode: int = 0,
                      start: GroundState | None = None) -> EpisodeRecord:
    s = env.initial_state() if start is None else start
    steps, total = 0, 0.0
    began = time.perf_counter()
    done = env.is_goal(s)
    while not done and steps < budget:
        key = s.frozen()
        a = table.choose(key, rng)
        outcome = env.step(s, table.actions[a], rng)
        done = outcome.terminal is Terminal.GOAL
        table.update(key, a, outcome.reward, outcome.next_state.frozen(), done, gamma)
        s = outcome.next_state
        steps += 1
        total += outcome.reward
    wall_ms = (time.perf_counter() - began) * 1000.0
    return EpisodeRecord(episode, steps, total, wall_ms, 0, "goal" if done else "budget_exhausted")


class QLearningAgent:
    """Episode-by-episode wrapper with the same surface as an execution context."""

    def __init__(self, env: Environment, rng: np.random.Generator, alpha: float = DEFAULT_ALPHA,
                 epsilon: float = DEFAULT_EPSILON, episode_budget: int = DEFAULT_EPISODE_BUDGET):
        self.env = env
        self.rng = rng
        self.table = QTable(tuple(a.id for a in env.primitive_actions()), alpha, epsilon)
        self.episode_budget = episode_budget
        self.start_state = env.initial_state()
        self.models: dict = {}

    def set_task(self, env: Environment, start: GroundState | None = None) -> None:
        self.env = env
        self.start_state = start if start is not None else env.initial_state()

    def run_episode(self, episode: int = 0, start: GroundState | None = None) -> EpisodeRecord:
        s0 = start if start is not None else self.start_state
        return qlearning_episode(self.env, self.table, self.env.discount, self.rng,
                                 self.episode_budget, episode, s0)


def flat_rmax_context(env: Environment, rng: np.random.Generator, **kwargs) -> ExecutionContext:
    """R-MAX on the ground MDP: PALM over a one-node hierarchy with identity abstraction."""
    h = flat_hierarchy([a.id for a in env.primitive_actions()], env.domain)
    return ExecutionContext(h, env, rng, **kwargs)


def flat_rmax_episode(ctx: ExecutionContext, episode: int = 0,
                      start: GroundState | None = None) -> EpisodeRecord:
    return ctx.run_episode(episode, start)

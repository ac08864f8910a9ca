"""Value iteration over the discovered abstract states of one subtask.

Unknown pairs back up to ``gamma * value_max`` (a move into an absorbing
state worth ``value_max``); terminal states are pinned at 0 because their
reward is earned on entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import PalmError
from .rmax import OPTIMISTIC, TabularModel

TIE_TOLERANCE = 1e-9


class DeadEndError(PalmError):
    """No action is available in a non-terminal state."""


@dataclass
class ValueTable:
    values: dict
    residual: float
    iterations: int
    converged: bool
    gamma: float = 0.95
    default_reward: float = 0.0

    def __getitem__(self, s) -> float:
        return self.values.get(s, 0.0)


class CompiledAmdp:
    """Array form of a subtask's learned model over its planning states.

    The planning set is every state handed to :meth:`ensure` plus
    everything reachable from them under known transitions. The arrays
    follow the model incrementally through its change log.
    """

    def __init__(self, model: TabularModel, gamma: float,
                 available: Callable[[tuple], Sequence[str]],
                 is_terminal: Callable[[tuple], bool],
                 default_reward: float = 0.0,
                 tolerance: float = 1e-6, max_iterations: int = 10_000):
        if not 0.0 < gamma < 1.0:
            raise ValueError("value iteration needs gamma in (0, 1)")
        if tolerance <= 0:
            raise ValueError("tolerance must be positive")
        self.model = model
        self.gamma = gamma
        self.available = available
        self.is_terminal = is_terminal
        self.default_reward = default_reward
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.states: list[tuple] = []
        self.index: dict[tuple, int] = {}
        self.pair_range: list[tuple[int, int]] = []
        self.pair_action: list[str] = []
        self.pair_of: dict[tuple[int, str], int] = {}
        self._K = 1
        self._succ = np.zeros((64, 1), dtype=np.int64)
        self._prob = np.zeros((64, 1))
        self._rew = np.zeros((64, 1))
        self._unknown = np.zeros(64, dtype=bool)
        self.values = np.zeros(64)
        self._cursor = len(model.log)
        self.dirty = True
        self.solves = 0
        self.last_residual = 0.0
        self.last_iterations = 0
        self.last_converged = True

    # -- construction -------------------------------------------------------

    @property
    def n_pairs(self) -> int:
        return len(self.pair_action)

    def _grow_pairs(self, need: int, width: int) -> None:
        cap = self._succ.shape[0]
        if need > cap or width > self._K:
            new_cap = max(cap, 1)
            while new_cap < need:
                new_cap *= 2
            k = max(width, self._K)
            succ = np.zeros((new_cap, k), dtype=np.int64)
            prob = np.zeros((new_cap, k))
            rew = np.zeros((new_cap, k))
            unknown = np.zeros(new_cap, dtype=bool)
            n = self.n_pairs
            succ[:n, :self._K] = self._succ[:n]
            prob[:n, :self._K] = self._prob[:n]
            rew[:n, :self._K] = self._rew[:n]
            unknown[:n] = self._unknown[:n]
            self._succ, self._prob, self._rew, self._unknown, self._K = succ, prob, rew, unknown, k

    def _fill(self, p: int, i: int, a: str, pending: list) -> None:
        pred = self.model.predicted(self.states[i], a)
        self._succ[p] = i
        self._prob[p] = 0.0
        self._rew[p] = 0.0
        if pred is OPTIMISTIC:
            self._unknown[p] = True
            return
        self._unknown[p] = False
        if not pred:  # frozen model, unrecorded pair
            self._prob[p, 0] = 1.0
            self._rew[p, 0] = self.default_reward
            return
        if len(pred) > self._K:
            self._grow_pairs(self.n_pairs, len(pred))
        for k, tr in enumerate(pred):
            j = self.index.get(tr.next_state)
            if j is None:
                j = self._add_state(tr.next_state, pending)
            self._succ[p, k] = j
            self._prob[p, k] = tr.probability
            self._rew[p, k] = tr.reward

    def _add_state(self, s: tuple, pending: list) -> int:
        i = len(self.states)
        self.states.append(s)
        self.index[s] = i
        if i >= self.values.shape[0]:
            values = np.zeros(self.values.shape[0] * 2)
            values[:i] = self.values[:i]
            self.values = values
        self.values[i] = 0.0
        self.pair_range.append((0, 0))
        pending.append(i)
        self.dirty = True
        return i

    def _expand(self, pending: list) -> None:
        while pending:
            i = pending.pop()
            s = self.states[i]
            if self.is_terminal(s):
                continue
            actions = list(self.available(s))
            start = self.n_pairs
            self._grow_pairs(start + len(actions), self._K)
            self.pair_range[i] = (start, start + len(actions))
            for a in actions:
                p = self.n_pairs
                self.pair_action.append(a)
                self.pair_of[(i, a)] = p
            for a in actions:
                self._fill(self.pair_of[(i, a)], i, a, pending)

    def ensure(self, s: tuple) -> int:
        i = self.index.get(s)
        if i is None:
            pending: list = []
            i = self._add_state(s, pending)
            self._expand(pending)
        return i

    def sync(self) -> None:
        """Apply model changes recorded since the last sync."""
        log = self.model.log
        if self._cursor == len(log):
            return
        pending: list = []
        changed = log[self._cursor:]
        self._cursor = len(log)
        if any(k is None for k in changed):
            targets = list(self.pair_of.items())
        else:
            targets = []
            for s, a in set(changed):
                i = self.index.get(s)
                if i is not None and (i, a) in self.pair_of:
                    targets.append(((i, a), self.pair_of[(i, a)]))
        for (i, a), p in targets:
            self._fill(p, i, a, pending)
        if targets:
            self.dirty = True
        self._expand(pending)

    # -- solving --------------------------------------------------------------

    def _arrays(self):
        n, P = len(self.states), self.n_pairs
        # pair blocks tile [0, P); reduceat needs them in increasing start order
        owners = sorted((i for i in range(n) if self.pair_range[i][1] > self.pair_range[i][0]),
                        key=lambda i: self.pair_range[i][0])
        starts = np.array([self.pair_range[i][0] for i in owners], dtype=np.int64)
        return n, P, np.array(owners, dtype=np.int64), starts

    def solve(self, warm_start: bool = True) -> None:
        n, P, owners, starts = self._arrays()
        self.solves += 1
        self.dirty = False
        if P == 0:
            self.values[:n] = 0.0
            self.last_residual, self.last_iterations, self.last_converged = 0.0, 0, True
            return
        gamma = self.gamma
        succ, prob, rew = self._succ[:P], self._prob[:P], self._rew[:P]
        unknown = self._unknown[:P]
        optimistic = gamma * self.model.value_max
        base = (prob * rew).sum(axis=1)
        gprob = gamma * prob
        v = self.values[:n].copy() if warm_start else np.zeros(n)
        residual = np.inf
        it = 0
        while it < self.max_iterations:
            it += 1
            q = base + (gprob * v[succ]).sum(axis=1)
            q[unknown] = optimistic
            new = np.zeros(n)
            new[owners] = np.maximum.reduceat(q, starts)
            residual = float(np.max(np.abs(new - v))) if n else 0.0
            v = new
            if residual < self.tolerance:
                break
        self.values[:n] = v
        self.last_residual = residual
        self.last_iterations = it
        self.last_converged = residual < self.tolerance

    def q_values(self, i: int) -> np.ndarray:
        start, end = self.pair_range[i]
        if end == start:
            return np.zeros(0)
        v = self.values
        q = (self._prob[start:end] * (self._rew[start:end] + self.gamma * v[self._succ[start:end]])).sum(axis=1)
        q[self._unknown[start:end]] = self.gamma * self.model.value_max
        return q

    def greedy(self, s: tuple) -> str:
        i = self.ensure(s)
        self.sync()
        if self.dirty:
            self.solve()
        q = self.q_values(i)
        if q.size == 0:
            raise DeadEndError(f"no available action in {s!r}")
        start, _ = self.pair_range[i]
        best = int(np.argmax(q >= q.max() - TIE_TOLERANCE))
        return self.pair_action[start + best]

    def value_table(self) -> ValueTable:
        n = len(self.states)
        return ValueTable(
            {s: float(self.values[i]) for i, s in enumerate(self.states)},
            self.last_residual, self.last_iterations, self.last_converged,
            self.gamma, self.default_reward,
        )

    def unknown_pairs(self) -> Iterable[tuple[tuple, str]]:
        for (i, a), p in self.pair_of.items():
            if self._unknown[p]:
                yield self.states[i], a


def _recorded_actions(model: TabularModel) -> Callable[[tuple], list[str]]:
    by_state: dict[tuple, list[str]] = {}
    for s, a in model.pairs():
        by_state.setdefault(s, []).append(a)
    return lambda s: by_state.get(s, [])


def solve(model: TabularModel, states: Iterable[tuple], terminals: Iterable[tuple], gamma: float,
          tolerance: float = 1e-6, max_iterations: int = 10_000,
          actions: Callable[[tuple], Sequence[str]] | None = None,
          default_reward: float = 0.0) -> ValueTable:
    """Bellman-optimal values over ``states`` (plus states reachable in the model).

    ``actions`` gives the available actions per state; by default the
    actions the model has records for. Returns a table flagged
    non-converged if ``max_iterations`` is hit first.
    """
    terminal_set = set(terminals)
    compiled = CompiledAmdp(
        model, gamma,
        actions if actions is not None else _recorded_actions(model),
        terminal_set.__contains__, default_reward, tolerance, max_iterations,
    )
    for s in states:
        compiled.ensure(s)
    for s in terminal_set:
        compiled.ensure(s)
    compiled.solve(warm_start=False)
    return compiled.value_table()


def greedy_action(table: ValueTable, model: TabularModel, s: tuple, available: Sequence[str]) -> str:
    """Argmax of the one-step backup; the first action wins ties."""
    if not available:
        raise DeadEndError(f"no available action in {s!r}")
    gamma = table.gamma
    best, best_q = None, -np.inf
    for a in available:
        pred = model.predicted(s, a)
        if pred is OPTIMISTIC:
            q = gamma * model.value_max
        elif not pred:
            q = table.default_reward + gamma * table[s]
        else:
            q = sum(tr.probability * (tr.reward + gamma * table[tr.next_state]) for tr in pred)
        if best is None or q > best_q + TIE_TOLERANCE:
            best, best_q = a, q
    return best

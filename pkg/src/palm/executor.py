"""The recursive plan/execute/learn loop over a grounded hierarchy."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, Environment, GroundState, PalmError, Terminal, canonical_key
from .lamdp.ground import GroundedAmdp, encode_values, ground
from .lamdp.types import Hierarchy
from .planner import CompiledAmdp
from .rmax import TabularModel

DEFAULT_EPISODE_BUDGET = 2000
DEFAULT_CALL_BUDGET = 500


class TransferError(PalmError):
    pass


class Outcome(enum.Enum):
    GOAL = "goal"
    FAIL = "fail"
    BUDGET = "budget_exhausted"


@dataclass
class SubtaskReturn:
    ground_state: GroundState
    all_known: bool
    outcome: Outcome


@dataclass
class AuditRecord:
    depth: int
    amdp: str
    s: str
    action: str
    s_next: str
    reward: float
    was_known: bool
    child_known: bool
    counted: bool
    t: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    reward: float
    wall_ms: float
    unknown_total: int
    outcome: str
    unknown_by_lamdp: dict = field(default_factory=dict)
    unknown_selections: dict = field(default_factory=dict)
    trajectory: list | None = None
    audit: list | None = None


def dominance_holds(node, gamma: float) -> bool:
    """Whether any unknown action strictly beats every known one.

    Known backups are bounded by max(goal, fail, default + gamma^2 vmax)
    while unknown ones are worth gamma * vmax, so with gamma > 1/2 and a
    non-positive default the first unknown action is always the argmax.
    """
    pr = node.pseudo_reward
    vmax = pr.goal / (1.0 - gamma)
    bound = max(pr.goal, pr.fail, pr.default + gamma * gamma * vmax)
    return pr.goal > 0 and pr.default <= 0 and bound < gamma * vmax


class ExecutionContext:
    """Everything one trial needs: hierarchy, task, models and budgets."""

    def __init__(self, hierarchy: Hierarchy, env: Environment, rng: np.random.Generator,
                 m: int = 1, gating: bool = True,
                 episode_budget: int = DEFAULT_EPISODE_BUDGET, call_budget: int = DEFAULT_CALL_BUDGET,
                 tolerance: float = 1e-6, max_iterations: int = 10_000,
                 audit: bool = False, record_trajectory: bool = False,
                 models: dict[str, TabularModel] | None = None):
        self.hierarchy = hierarchy
        self.gamma = env.discount
        self.m = m
        self.gating = gating
        self.episode_budget = episode_budget
        self.call_budget = call_budget
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.audit_enabled = audit
        self.record_trajectory = record_trajectory
        self.rng = rng
        self.models: dict[str, TabularModel] = dict(models or {})
        for name, node in hierarchy.nodes.items():
            if not node.is_wrapper and name not in self.models:
                self.models[name] = TabularModel.for_subtask(node, m, self.gamma)
        self._dominance = {
            name: dominance_holds(node, self.gamma)
            for name, node in hierarchy.nodes.items() if not node.is_wrapper
        }
        self.set_task(env)
        self.t = 0

    # -- task and model management -------------------------------------------

    def set_task(self, env: Environment, start: GroundState | None = None) -> None:
        """Ground the hierarchy on ``env``; learned models carry over."""
        if self.hierarchy.domain not in ("any", env.domain):
            raise ConfigurationError(
                f"hierarchy is declared for {self.hierarchy.domain!r}, task is {env.domain!r}")
        if env.discount != self.gamma:
            raise ConfigurationError("all tasks in a context must share the discount")
        self.env = env
        self.start_state = start if start is not None else env.initial_state()
        self.grounded = ground(self.hierarchy, env)
        (self.root,) = self.grounded[self.hierarchy.root]
        self._compiled: dict[int, CompiledAmdp] = {}
        self._by_label: dict[int, dict[str, GroundedAmdp]] = {}

    def attach_transferred_model(self, lamdp_name: str, model: TabularModel | str | Path,
                                 frozen: bool = True) -> None:
        if not isinstance(model, TabularModel):
            model = TabularModel.deserialize(Path(model).read_bytes())
        node = self.hierarchy.nodes.get(lamdp_name)
        if node is None or node.is_wrapper:
            raise TransferError(f"hierarchy has no subtask named {lamdp_name!r}")
        if model.name != lamdp_name or model.phi_signature != node.phi_signature():
            raise TransferError(f"model for {model.name!r} does not match subtask {lamdp_name!r}")
        if abs(model.gamma - self.gamma) > 1e-12:
            raise TransferError("model was learned with a different discount")
        if frozen and not model.frozen:
            model.freeze()
        self.models[lamdp_name] = model
        for g in self.grounded[lamdp_name]:
            self._compiled.pop(id(g), None)

    # -- planning ---------------------------------------------------------------

    def _compiled_for(self, g: GroundedAmdp) -> CompiledAmdp:
        c = self._compiled.get(id(g))
        if c is None:
            c = CompiledAmdp(
                self.models[g.name], self.gamma,
                lambda s, g=g: [child.label for child in g.child_actions(s)],
                g.is_terminal, g.node.pseudo_reward.default,
                self.tolerance, self.max_iterations,
            )
            self._compiled[id(g)] = c
            self._by_label[id(g)] = {child.label: child for child in g.children}
        return c

    def plan(self, g: GroundedAmdp, s: tuple, actions: list[GroundedAmdp]) -> GroundedAmdp:
        model = self.models[g.name]
        if self._dominance[g.name] and not model.frozen:
            for child in actions:
                if not model.is_known(s, child.label):
                    self._unknown_selections[g.name] = self._unknown_selections.get(g.name, 0) + 1
                    return child
        label = self._compiled_for(g).greedy(s)
        if not model.is_known(s, label):
            self._unknown_selections[g.name] = self._unknown_selections.get(g.name, 0) + 1
        return self._by_label[id(g)][label]

    # -- execution ----------------------------------------------------------------

    def execute_primitive(self, action_id: str, s: GroundState) -> GroundState:
        outcome = self.env.step(s, action_id, self.rng)
        self.t += 1
        self.episode_reward += outcome.reward
        if self.record_trajectory:
            self.trajectory.append((canonical_key(s), action_id, canonical_key(outcome.next_state), outcome.reward))
        if outcome.terminal is Terminal.GOAL:
            self.done = True
        return outcome.next_state

    def palm(self, g: GroundedAmdp, s: GroundState, depth: int = 0) -> SubtaskReturn:
        if g.node.is_wrapper:
            for a in g.primitives:
                if self.done:
                    break
                if self.t >= self.episode_budget:
                    return SubtaskReturn(s, True, Outcome.BUDGET)
                s = self.execute_primitive(a, s)
            return SubtaskReturn(s, True, Outcome.GOAL)

        model = self.models[g.name]
        sv = g.project(s)
        all_known = True
        iterations = 0
        while True:
            kind = g.classify(sv)
            if kind or self.done:
                break
            if self.t >= self.episode_budget or (depth > 0 and iterations >= self.call_budget):
                return SubtaskReturn(s, all_known, Outcome.BUDGET)
            g.discovered.add(sv)
            actions = g.child_actions(sv)
            if not actions:
                return SubtaskReturn(s, all_known, Outcome.FAIL)
            child = self.plan(g, sv, actions)
            ret = self.palm(child, s, depth + 1)
            if ret.outcome is Outcome.BUDGET and self.t >= self.episode_budget:
                # episode truncated mid-child: the transition is incomplete
                return SubtaskReturn(ret.ground_state, all_known, Outcome.BUDGET)
            s_next = ret.ground_state
            sv_next = g.project(s_next)
            r = g.pseudo_reward(sv, child.label, sv_next)
            child_known = ret.all_known or not self.gating
            was_known = model.observe(sv, child.label, sv_next, r, child_known)
            if self.audit_enabled:
                self.audit_log.append(AuditRecord(
                    depth, g.label, encode_values(sv), child.label, encode_values(sv_next), r,
                    was_known, ret.all_known, child_known and not model.frozen, self.t))
            all_known = all_known and was_known
            s, sv = s_next, sv_next
            iterations += 1
        outcome = Outcome.GOAL if kind == 1 else Outcome.FAIL
        return SubtaskReturn(s, all_known, outcome)

    def unknown_counts(self) -> dict[str, int]:
        """Distinct unknown (state, action) pairs over discovered states, per subtask."""
        counts = {}
        for name, groundings in self.grounded.items():
            if self.hierarchy.nodes[name].is_wrapper:
                continue
            model = self.models[name]
            pairs = set()
            for g in groundings:
                for sv in g.discovered:
                    if g.is_terminal(sv):
                        continue
                    for child in g.child_actions(sv):
                        if not model.is_known(sv, child.label):
                            pairs.add((sv, child.label))
            counts[name] = len(pairs)
        return counts

    def run_episode(self, episode: int = 0, start: GroundState | None = None) -> EpisodeRecord:
        s0 = start if start is not None else self.start_state
        self.t = 0
        self.done = self.env.is_goal(s0)
        self.episode_reward = 0.0
        self.audit_log: list[AuditRecord] = []
        self.trajectory: list = []
        self._unknown_selections: dict[str, int] = {}
        began = time.perf_counter()
        ret = self.palm(self.root, s0, 0)
        wall_ms = (time.perf_counter() - began) * 1000.0
        if self.env.is_goal(ret.ground_state):
            outcome = "goal"
        elif ret.outcome is Outcome.BUDGET:
            outcome = "budget_exhausted"
        else:
            outcome = "fail"
        unknown = self.unknown_counts()
        return EpisodeRecord(
            episode, self.t, self.episode_reward, wall_ms, sum(unknown.values()), outcome,
            unknown, dict(self._unknown_selections),
            list(self.trajectory) if self.record_trajectory else None,
            list(self.audit_log) if self.audit_enabled else None,
        )

    # -- inspection -----------------------------------------------------------------

    def greedy_policy(self, g: GroundedAmdp) -> dict[tuple, str]:
        """Greedy action (by label) on every discovered non-terminal state of ``g``."""
        compiled = self._compiled_for(g)
        out = {}
        for sv in sorted(g.discovered, key=encode_values):
            if g.is_terminal(sv) or not g.child_actions(sv):
                continue
            out[sv] = compiled.greedy(sv)
        return out

    def simulate(self, g: GroundedAmdp, s: GroundState, limit: int = 10_000,
                 require_known: bool = False) -> GroundState:
        """Run ``g``'s current greedy behaviour from ``s`` without learning (deterministic tasks).

        With ``require_known`` an unknown greedy choice raises instead of
        being followed.
        """
        if g.node.is_wrapper:
            for a in g.primitives:
                s = self.env.outcomes(s, a)[0][1].next_state
            return s
        compiled = self._compiled_for(g)
        model = self.models[g.name]
        sv = g.project(s)
        for _ in range(limit):
            if g.is_terminal(sv) or self.env.is_goal(s):
                return s
            if not g.child_actions(sv):
                return s
            label = compiled.greedy(sv)
            if require_known and not model.is_known(sv, label):
                raise PalmError(f"{g.label}: not converged at {sv} (unknown choice {label})")
            s = self.simulate(self._by_label[id(g)][label], s, limit, require_known)
            sv = g.project(s)
        raise PalmError(f"{g.label}: simulation did not terminate")


def start(hierarchy: Hierarchy, env: Environment, s0: GroundState | None = None,
          rng: np.random.Generator | None = None, **kwargs) -> EpisodeRecord:
    """Fresh models, one episode from ``s0``."""
    ctx = ExecutionContext(hierarchy, env, rng if rng is not None else np.random.default_rng(0), **kwargs)
    return ctx.run_episode(0, s0)


def attach_transferred_model(ctx: ExecutionContext, lamdp_name: str, model_file, frozen: bool = True):
    ctx.attach_transferred_model(lamdp_name, model_file, frozen)
    return ctx


def drop_subtask_actions(models: dict[str, TabularModel], hierarchy: Hierarchy, removed: str) -> None:
    """Delete learned transitions that used a pruned subtask as an action."""
    for model in models.values():
        for a in {a for _, a in model.pairs()}:
            if a == removed or a.startswith(removed + "("):
                model.remove_action(a)

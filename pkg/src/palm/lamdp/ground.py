"""Grounding lifted subtasks against a concrete task, abstraction and predicates."""

from __future__ import annotations

import itertools
import json
from typing import Any, Callable, Iterable, Sequence

from ..core import DomainContractError, Environment, GroundState, Value
from .types import (
    ARG_FEATURE,
    AbstractionError,
    AbstractState,
    FeatureRef,
    GroundingError,
    Hierarchy,
    LAmdp,
    Predicate,
)


def _encode(value: Any) -> Any:
    if isinstance(value, bool):
        return {"b": value}
    if isinstance(value, tuple):
        return [_encode(v) for v in value]
    return value


def _decode(value: Any) -> Any:
    if isinstance(value, dict):
        return bool(value["b"])
    if isinstance(value, list):
        return tuple(_decode(v) for v in value)
    return value


def encode_values(values: tuple) -> str:
    """Canonical string for an abstract state (or any nested tuple of values)."""
    return json.dumps(_encode(values), separators=(",", ":"))


def decode_values(text: str) -> tuple:
    return _decode(json.loads(text))


def _constant(token: str) -> Value:
    if token == "true":
        return True
    if token == "false":
        return False
    if token.lstrip("-").isdigit():
        return int(token)
    return token


_TRUTHY = object()


class GroundedAmdp:
    """One binding of a lifted subtask on a concrete task.

    Abstract states are plain tuples in ``phi`` order. The discovered set
    and the goal/fail sets grow lazily as states are classified.
    """

    def __init__(self, node: LAmdp, binding: dict[str, Value], env: Environment):
        self.node = node
        self.name = node.name
        self.binding = dict(binding)
        self.env = env
        values = [str(binding[p]) for p in node.param_names]
        self.label = f"{node.name}({','.join(values)})" if values else node.name
        self.children: list[GroundedAmdp] = []
        self._shielded: list[tuple[GroundedAmdp, list | None]] = []
        self.discovered: set[tuple] = set()
        self.goal_states: set[tuple] = set()
        self.fail_states: set[tuple] = set()
        self._classified: dict[tuple, int] = {}
        self.feature_index: dict[tuple, int] = {}
        self._extractors: list[tuple[Callable, tuple]] = []
        if not node.is_wrapper:
            self._compile_phi()
            self._goal = self.compile_predicate(node.goal, self.binding, self.feature_index)
            self._fail = self.compile_predicate(node.fail, self.binding, self.feature_index)
        self.primitives: list[str] = []
        if node.is_wrapper:
            if node.macro:
                args = [binding[a] for a in node.wraps_args]
                self.primitives = list(env.macro(node.wraps, args))
            else:
                self.primitives = [node.wraps]
            for a in self.primitives:
                env.action(a)

    def __repr__(self) -> str:
        return f"GroundedAmdp({self.label})"

    # -- abstraction --------------------------------------------------------

    def _resolve_args(self, ref: FeatureRef, kinds: Sequence[str]) -> list[tuple]:
        choices = []
        for arg, kind in zip(ref.args, kinds):
            if arg == "*":
                choices.append(self.env.param_domain(kind))
            elif arg in self.binding:
                choices.append([self.binding[arg]])
            else:
                value = _constant(arg)
                if value not in self.env.param_domain(kind):
                    raise GroundingError(f"{self.label}: {value!r} is not a {kind} of this task")
                choices.append([value])
        return [tuple(c) for c in itertools.product(*choices)]

    def _compile_phi(self) -> None:
        for ref in self.node.phi:
            if ref.name == ARG_FEATURE:
                value = self.binding[ref.args[0]]
                key = (ARG_FEATURE, (ref.args[0],))
                self.feature_index[key] = len(self._extractors)
                self._extractors.append((None, (value,)))
                continue
            try:
                feature = self.env.features[ref.name]
            except KeyError:
                raise GroundingError(f"{self.label}: {self.env.domain} has no feature {ref.name!r}") from None
            if len(feature.arg_kinds) != len(ref.args):
                raise GroundingError(f"{self.label}: wrong arity for {ref}")
            for args in self._resolve_args(ref, feature.arg_kinds):
                key = (ref.name, args)
                if key in self.feature_index:
                    continue
                self.feature_index[key] = len(self._extractors)
                self._extractors.append((feature.fn, args))

    def project(self, state: GroundState) -> tuple:
        env = self.env
        try:
            return tuple(
                args[0] if fn is None else fn(env, state, *args)
                for fn, args in self._extractors
            )
        except (KeyError, DomainContractError) as exc:
            raise AbstractionError(f"{self.label}: cannot abstract state ({exc})") from exc

    def abstract_state(self, state: GroundState) -> AbstractState:
        values = self.project(state)
        return AbstractState(values, encode_values(values))

    # -- predicates ---------------------------------------------------------

    def compile_predicate(self, pred: Predicate, binding: dict, index: dict) -> list:
        compiled = []
        for conj in pred:
            lits = []
            for lit in conj:
                ref = lit.feature
                if ref.name == ARG_FEATURE:
                    key = (ARG_FEATURE, ref.args)
                else:
                    kinds = self.env.features[ref.name].arg_kinds if ref.name in self.env.features else ()
                    args = tuple(binding[a] if a in binding else _constant_checked(self.env, a, k)
                                 for a, k in zip(ref.args, kinds))
                    key = (ref.name, args)
                if key not in index:
                    raise GroundingError(f"{self.label}: literal {lit} uses a feature outside phi")
                if lit.value is None:
                    expected = _TRUTHY
                elif lit.value in binding:
                    expected = binding[lit.value]
                else:
                    expected = _constant(lit.value)
                lits.append((index[key], lit.negated, expected))
            compiled.append(lits)
        return compiled

    @staticmethod
    def eval_compiled(compiled: list, values: tuple) -> bool:
        for conj in compiled:
            for idx, negated, expected in conj:
                v = values[idx]
                holds = bool(v) if expected is _TRUTHY else v == expected
                if holds == negated:
                    break
            else:
                return True
        return False

    def eval_goal(self, s: tuple) -> bool:
        return self.eval_compiled(self._goal, s)

    def eval_fail(self, s: tuple) -> bool:
        return self.eval_compiled(self._fail, s)

    def classify(self, s: tuple) -> int:
        """0 non-terminal, 1 goal, 2 fail; records terminal states as found."""
        kind = self._classified.get(s)
        if kind is None:
            if self.eval_goal(s):
                kind = 1
                self.goal_states.add(s)
            elif self.eval_fail(s):
                kind = 2
                self.fail_states.add(s)
            else:
                kind = 0
            self._classified[s] = kind
        return kind

    def is_terminal(self, s: tuple) -> bool:
        return self.classify(s) != 0

    def pseudo_reward(self, s: tuple, action: str | None, s_next: tuple) -> float:
        config = self.node.pseudo_reward
        kind = self.classify(s_next)
        if kind == 1:
            return config.goal
        if kind == 2:
            return config.fail
        return config.default

    # -- actions ------------------------------------------------------------

    def link(self, children: list[GroundedAmdp]) -> None:
        self.children = children
        self._shielded = []
        for child in children:
            req = None
            if self.node.shield and child.node.requires:
                req = self.compile_predicate(child.node.requires, child.binding, self.feature_index)
            self._shielded.append((child, req))

    def child_actions(self, s: tuple) -> list[GroundedAmdp]:
        if not self.node.shield:
            return self.children
        return [c for c, req in self._shielded if req is None or self.eval_compiled(req, s)]


def _constant_checked(env: Environment, token: str, kind: str) -> Value:
    value = _constant(token)
    if value not in env.param_domain(kind):
        raise GroundingError(f"{value!r} is not a {kind} of this task")
    return value


def bindings(node: LAmdp, env: Environment) -> list[dict[str, Value]]:
    domains = []
    for name, kind in node.params:
        try:
            values = env.param_domain(kind, wrapped=node.wraps)
        except DomainContractError as exc:
            raise GroundingError(f"{node.name}: {exc}") from exc
        if not values:
            raise GroundingError(f"{node.name}: parameter {name} ({kind}) has an empty domain")
        domains.append(values)
    return [dict(zip(node.param_names, combo)) for combo in itertools.product(*domains)]


def ground(hierarchy: Hierarchy, env: Environment) -> dict[str, list[GroundedAmdp]]:
    """Every binding of every subtask, children grounded before parents."""
    grounded: dict[str, list[GroundedAmdp]] = {}
    for name in hierarchy.order:
        node = hierarchy.nodes[name]
        grounded[name] = [GroundedAmdp(node, b, env) for b in bindings(node, env)]
        for g in grounded[name]:
            if not node.is_wrapper:
                g.link([c for child in node.children for c in grounded[child]])
    return grounded


def abstract(node: LAmdp, binding: dict[str, Value], state: GroundState, env: Environment) -> AbstractState:
    return GroundedAmdp(node, binding, env).abstract_state(state)


def eval_goal(amdp: GroundedAmdp, s: tuple) -> bool:
    return amdp.eval_goal(s)


def eval_fail(amdp: GroundedAmdp, s: tuple) -> bool:
    return amdp.eval_fail(s)


def pseudo_reward(amdp: GroundedAmdp, s: tuple, action, s_next: tuple) -> float:
    return amdp.pseudo_reward(s, action, s_next)


def child_actions(amdp: GroundedAmdp, s: tuple) -> list[GroundedAmdp]:
    return amdp.child_actions(s)


def label_index(groundings: Iterable[GroundedAmdp]) -> dict[str, GroundedAmdp]:
    return {g.label: g for g in groundings}

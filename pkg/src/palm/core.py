"""Factored MDP building blocks shared by domains, subtasks and baselines."""

from __future__ import annotations

import enum
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

Value = int | bool | str


class PalmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidActionError(PalmError):
    pass


class DomainContractError(PalmError):
    pass


class ConfigurationError(PalmError):
    pass


class Terminal(enum.Enum):
    NONE = "none"
    GOAL = "goal"
    FAIL = "fail"


class ActionKind(enum.Enum):
    PRIMITIVE = "primitive"
    ABSTRACT = "abstract-reference"


@dataclass(frozen=True)
class Action:
    id: str
    kind: ActionKind = ActionKind.PRIMITIVE

    def __str__(self) -> str:
        return self.id


class GroundState:
    """Immutable object -> attribute -> value map.

    Inner dicts are shared between successive states and must never be
    mutated; use :meth:`replace` to derive a new state.
    """

    __slots__ = ("_objects", "_frozen", "_hash")

    def __init__(self, objects: Mapping[str, Mapping[str, Value]]):
        for attrs in objects.values():
            for value in attrs.values():
                if not isinstance(value, (int, str)):  # bool is an int subclass
                    raise DomainContractError(f"attribute value {value!r} is not int/bool/str")
        self._objects = {oid: dict(attrs) for oid, attrs in objects.items()}
        self._frozen = None
        self._hash = None

    @classmethod
    def _trusted(cls, objects: dict[str, dict[str, Value]]) -> GroundState:
        state = cls.__new__(cls)
        state._objects = objects
        state._frozen = None
        state._hash = None
        return state

    def __getitem__(self, oid: str) -> Mapping[str, Value]:
        return self._objects[oid]

    def __contains__(self, oid: str) -> bool:
        return oid in self._objects

    def get(self, oid: str, attr: str) -> Value:
        try:
            return self._objects[oid][attr]
        except KeyError as exc:
            raise DomainContractError(f"state has no attribute {oid}.{attr}") from exc

    @property
    def objects(self) -> Mapping[str, Mapping[str, Value]]:
        return self._objects

    def replace(self, changes: Mapping[str, Mapping[str, Value]]) -> GroundState:
        objects = dict(self._objects)
        for oid, attrs in changes.items():
            merged = dict(objects[oid])
            merged.update(attrs)
            objects[oid] = merged
        return GroundState._trusted(objects)

    def frozen(self) -> tuple:
        """Sorted nested tuple view; used for hashing, equality and identity abstraction."""
        if self._frozen is None:
            self._frozen = tuple(
                (oid, tuple(sorted(attrs.items())))
                for oid, attrs in sorted(self._objects.items())
            )
        return self._frozen

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.frozen())
        return self._hash

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroundState):
            return NotImplemented
        return self is other or self.frozen() == other.frozen()

    def __repr__(self) -> str:
        return f"GroundState({canonical_key(self)})"


def _typed(value: Value) -> Any:
    # bools and ints must not collide in the serialized form
    if isinstance(value, bool):
        return {"b": value}
    return value


def canonical_key(state: GroundState) -> str:
    """Deterministic, injective string form of a ground state."""
    payload = [
        [oid, [[attr, _typed(value)] for attr, value in attrs]]
        for oid, attrs in state.frozen()
    ]
    return json.dumps(payload, separators=(",", ":"))


@dataclass(frozen=True)
class StepOutcome:
    next_state: GroundState
    reward: float
    terminal: Terminal = Terminal.NONE


@dataclass(frozen=True)
class TaskSpec:
    domain: str
    parameters: Mapping[str, Any] = field(default_factory=dict)
    discount: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.domain not in ("taxi", "cleanup"):
            raise ConfigurationError(f"unknown domain {self.domain!r}")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigurationError("discount must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigurationError("seed must be unsigned")


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def split_rng(seed: int, n: int) -> list[np.random.Generator]:
    """Independent generators for ``n`` parallel consumers."""
    return [make_rng(child) for child in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class Feature:
    """A named state feature: ``fn(env, state, *args) -> value``."""

    name: str
    arg_kinds: tuple[str, ...]
    fn: Callable[..., Any]


class Environment(ABC):
    """A concrete task instance: static layout plus dynamics.

    Environments hold no mutable state; all randomness comes from the
    generator passed to :meth:`step`.
    """

    domain: str = ""
    goal_feature: str = ""

    def __init__(self, discount: float = 0.95):
        self.discount = discount
        self._actions: list[Action] = []
        self._action_index: dict[str, Action] = {}
        self.features: dict[str, Feature] = {}
        self.register_feature("task_goal", (), lambda env, s: env.is_goal(s))
        self.register_feature("ground", (), lambda env, s: s.frozen())
        self.register_feature("always", (), lambda env, s: True)

    def _set_actions(self, ids: Sequence[str]) -> None:
        if len(set(ids)) != len(ids):
            raise DomainContractError("primitive action ids must be unique")
        self._actions = [Action(i) for i in ids]
        self._action_index = {a.id: a for a in self._actions}

    def register_feature(self, name: str, arg_kinds: Iterable[str], fn: Callable[..., Any]) -> None:
        self.features[name] = Feature(name, tuple(arg_kinds), fn)

    def primitive_actions(self) -> list[Action]:
        return list(self._actions)

    def action(self, action_id: str) -> Action:
        try:
            return self._action_index[action_id]
        except KeyError:
            raise InvalidActionError(f"unknown action {action_id!r} for {self.domain}") from None

    def check_action(self, action: Action | str) -> str:
        action_id = action if isinstance(action, str) else action.id
        if isinstance(action, Action) and action.kind is not ActionKind.PRIMITIVE:
            raise InvalidActionError(f"{action_id!r} is not a primitive action")
        if action_id not in self._action_index:
            raise InvalidActionError(f"unknown action {action_id!r} for {self.domain}")
        return action_id

    @abstractmethod
    def initial_state(self) -> GroundState:
        """The start state of this task instance."""

    @abstractmethod
    def outcomes(self, state: GroundState, action: Action | str) -> list[tuple[float, StepOutcome]]:
        """Exact next-state distribution as ``(probability, outcome)`` pairs."""

    @abstractmethod
    def is_goal(self, state: GroundState) -> bool:
        ...

    @abstractmethod
    def param_domain(self, kind: str, wrapped: str | None = None) -> list[Value]:
        """Values a subtask parameter of ``kind`` ranges over in this task."""

    def macro(self, name: str, args: Sequence[Value]) -> list[str]:
        raise DomainContractError(f"{self.domain} has no macro {name!r}")

    def ground_reward_range(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def step(self, state: GroundState, action: Action | str, rng: np.random.Generator) -> StepOutcome:
        dist = self.outcomes(state, action)
        if len(dist) == 1:
            return dist[0][1]
        u = rng.random()
        acc = 0.0
        for prob, outcome in dist:
            acc += prob
            if u < acc:
                return outcome
        return dist[-1][1]


def primitive_actions(env: Environment) -> list[Action]:
    return env.primitive_actions()


def step(env: Environment, state: GroundState, action: Action | str,
         rng: np.random.Generator) -> StepOutcome:
    return env.step(state, action, rng)

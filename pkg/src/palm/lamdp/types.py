"""Lifted abstract MDP subtasks and the hierarchy connecting them."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Mapping

from ..core import PalmError, Value


class HierarchyError(PalmError):
    """Structural problem found while building or editing a hierarchy."""


class HierarchyParseError(HierarchyError):
    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = f"line {line}: " if line is not None else ""
        if field_name:
            where += f"{field_name}: "
        super().__init__(where + message)
        self.line = line
        self.field = field_name


class GroundingError(PalmError):
    pass


class AbstractionError(PalmError):
    pass


ARG_FEATURE = "arg"  # built-in feature whose value is the bound parameter itself


@dataclass(frozen=True)
class FeatureRef:
    """A feature with argument slots: parameter names, constants, or ``*``."""

    name: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"{self.name}({','.join(self.args)})" if self.args else self.name


@dataclass(frozen=True)
class Literal:
    """``feature`` is truthy, or equals ``value`` (a parameter name or constant)."""

    feature: FeatureRef
    negated: bool = False
    value: str | None = None

    def __str__(self) -> str:
        text = str(self.feature)
        if self.value is not None:
            text += f"={self.value}"
        return ("!" if self.negated else "") + text


# disjunction of conjunctions; the empty disjunction never holds
Predicate = tuple[tuple[Literal, ...], ...]


def predicate_features(pred: Predicate) -> list[FeatureRef]:
    return [lit.feature for conj in pred for lit in conj]


def predicate_text(pred: Predicate) -> list[str]:
    return [" ".join(str(lit) for lit in conj) for conj in pred]


@dataclass(frozen=True)
class PseudoRewardConfig:
    goal: float = 1.0
    fail: float = -1.0
    default: float = 0.0


@dataclass(frozen=True)
class LAmdp:
    """A lifted subtask. Primitive wrappers set ``wraps`` and have no children."""

    name: str
    params: tuple[tuple[str, str], ...] = ()  # (name, kind)
    goal: Predicate = ()
    fail: Predicate = ()
    phi: tuple[FeatureRef, ...] = ()
    children: tuple[str, ...] = ()
    pseudo_reward: PseudoRewardConfig = PseudoRewardConfig()
    wraps: str | None = None
    wraps_args: tuple[str, ...] = ()
    macro: bool = False
    requires: Predicate = ()
    shield: bool = False
    line: int | None = field(default=None, compare=False)

    @property
    def is_wrapper(self) -> bool:
        return self.wraps is not None

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.params)

    def param_kind(self, name: str) -> str:
        for p, kind in self.params:
            if p == name:
                return kind
        raise KeyError(name)

    def definition(self) -> str:
        """Canonical text of the node's structure (used for equality checks and dumps)."""
        from .hierfile import dump_node

        return dump_node(self)

    def phi_signature(self) -> str:
        """Digest of what a learned model for this node depends on."""
        text = "\n".join([
            self.name,
            " ".join(f"{p}:{k}" for p, k in self.params),
            " ".join(str(f) for f in self.phi),
            " | ".join(predicate_text(self.goal)),
            " | ".join(predicate_text(self.fail)),
            repr(self.pseudo_reward),
        ])
        return hashlib.sha256(text.encode()).hexdigest()

    def with_children(self, children) -> LAmdp:
        return replace(self, children=tuple(children))


@dataclass(frozen=True)
class TaskGraphSpec:
    """Declared subtask graph prior to construction."""

    domain: str
    root: str
    nodes: tuple[LAmdp, ...]


@dataclass(frozen=True)
class Hierarchy:
    nodes: Mapping[str, LAmdp]
    root: str
    primitives: frozenset[str]
    domain: str = "any"
    order: tuple[str, ...] = ()  # construction order: leaves first, root last

    def __getitem__(self, name: str) -> LAmdp:
        return self.nodes[name]

    def parents_of(self, name: str) -> list[str]:
        return [n for n, node in self.nodes.items() if name in node.children]

    @property
    def root_node(self) -> LAmdp:
        return self.nodes[self.root]


@dataclass(frozen=True)
class AbstractState:
    values: tuple[Value, ...]
    key: str

"""Construction of a hierarchy from a task graph, plus subtask add/prune edits."""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable

from .types import (
    ARG_FEATURE,
    FeatureRef,
    Hierarchy,
    HierarchyError,
    LAmdp,
    Literal,
    TaskGraphSpec,
)


def _find_cycle(nodes: dict[str, LAmdp]) -> list[str] | None:
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(name: str) -> list[str] | None:
        color[name] = 1
        stack.append(name)
        for child in nodes[name].children:
            if child not in nodes:
                continue
            if color.get(child) == 1:
                return stack[stack.index(child):] + [child]
            if child not in color:
                found = visit(child)
                if found:
                    return found
        stack.pop()
        color[name] = 2
        return None

    for name in nodes:
        if name not in color:
            found = visit(name)
            if found:
                return found
    return None


def _postorder(nodes: dict[str, LAmdp], roots: Iterable[str]) -> list[str]:
    order: list[str] = []
    seen: set[str] = set()

    def visit(name: str) -> None:
        seen.add(name)
        for child in nodes[name].children:
            if child in nodes and child not in seen:
                visit(child)
        order.append(name)

    for r in roots:
        if r not in seen:
            visit(r)
    return order


def _check_references(node: LAmdp, catalog) -> None:
    params = set(node.param_names)
    if catalog is not None:
        for _, kind in node.params:
            if kind not in catalog.param_kinds:
                raise HierarchyError(f"{node.name}: unknown parameter kind {kind!r}")

    def check_feature(ref: FeatureRef, where: str, allow_star: bool) -> None:
        if ref.name == ARG_FEATURE:
            if len(ref.args) != 1 or ref.args[0] not in params:
                raise HierarchyError(f"{node.name}.{where}: arg() takes one parameter name, got {ref}")
            return
        if "*" in ref.args and not allow_star:
            raise HierarchyError(f"{node.name}.{where}: '*' is only allowed in phi ({ref})")
        if catalog is None:
            return
        if ref.name not in catalog.features:
            raise HierarchyError(f"{node.name}.{where}: unresolved feature {ref.name!r}")
        kinds = catalog.features[ref.name]
        if len(kinds) != len(ref.args):
            raise HierarchyError(
                f"{node.name}.{where}: feature {ref.name} takes {len(kinds)} argument(s), got {len(ref.args)}")
        for arg, kind in zip(ref.args, kinds):
            if arg in params and node.param_kind(arg) != kind:
                raise HierarchyError(
                    f"{node.name}.{where}: parameter {arg} is a {node.param_kind(arg)}, "
                    f"{ref.name} expects a {kind}")

    def check_literals(pred, where: str) -> None:
        for conj in pred:
            for lit in conj:
                check_feature(lit.feature, where, allow_star=False)

    for ref in node.phi:
        check_feature(ref, "phi", allow_star=True)
    check_literals(node.goal, "goal")
    check_literals(node.fail, "fail")
    check_literals(node.requires, "requires")
    if node.is_wrapper and catalog is not None:
        if node.macro:
            if node.wraps not in catalog.macros:
                raise HierarchyError(f"{node.name}: unresolved macro {node.wraps!r}")
            for arg in node.wraps_args:
                if arg not in params:
                    raise HierarchyError(f"{node.name}: macro argument {arg!r} is not a parameter")
        elif node.wraps not in catalog.actions:
            raise HierarchyError(f"{node.name}: unresolved primitive {node.wraps!r}")


def primitive_wrapper(action_id: str) -> LAmdp:
    return LAmdp(action_id, wraps=action_id)


def build_hierarchy(task_graph: TaskGraphSpec, catalog=None) -> Hierarchy:
    """Wrap primitive leaves, then add composite nodes children-first.

    ``catalog`` (see :func:`palm.domains.catalog`) enables checks of
    primitive, feature and parameter-kind references.
    """
    declared = {n.name: n for n in task_graph.nodes}
    if len(declared) != len(task_graph.nodes):
        raise HierarchyError("duplicate node names")
    if task_graph.root not in declared:
        raise HierarchyError(f"root {task_graph.root!r} is not a declared node")
    primitives: list[str] = []
    for node in task_graph.nodes:
        if node.is_wrapper:
            if node.children:
                raise HierarchyError(f"{node.name}: a wrapper subtask has no children")
        elif not node.children:
            raise HierarchyError(f"{node.name}: children must be nonempty")
        if node.name in node.children:
            raise HierarchyError(f"{node.name}: a subtask cannot be its own child")
        for child in node.children:
            if child in declared:
                continue
            if catalog is not None and child not in catalog.actions:
                raise HierarchyError(f"{node.name}: unresolved child {child!r}")
            if child not in primitives:
                primitives.append(child)
        _check_references(node, catalog)
    if catalog is not None:
        for prim in primitives:
            if prim in declared:
                raise HierarchyError(f"{prim!r} is both a node and a primitive")
    cycle = _find_cycle(declared)
    if cycle:
        raise HierarchyError("task graph has a cycle: " + " -> ".join(cycle))

    nodes: dict[str, LAmdp] = {}
    for prim in primitives:
        nodes[prim] = primitive_wrapper(prim)
    order = _postorder(declared, [task_graph.root] + list(declared))
    for name in order:
        nodes[name] = declared[name]
    return Hierarchy(nodes, task_graph.root, frozenset(primitives), task_graph.domain,
                     tuple(primitives) + tuple(order))


def to_task_graph(h: Hierarchy) -> TaskGraphSpec:
    return TaskGraphSpec(h.domain, h.root, tuple(h.nodes[n] for n in h.order if n not in h.primitives))


def add_subtask(h: Hierarchy, new: LAmdp, parent: str, catalog=None) -> Hierarchy:
    """Link ``new`` under ``parent``; no other node changes."""
    if new.name in h.nodes:
        raise HierarchyError(f"a subtask named {new.name!r} already exists")
    if parent not in h.nodes or h.nodes[parent].is_wrapper:
        raise HierarchyError(f"{parent!r} is not a composite subtask of this hierarchy")
    for child in new.children:
        if child not in h.nodes:
            raise HierarchyError(f"{new.name}: child {child!r} does not exist in the hierarchy")
    if new.name in new.children:
        raise HierarchyError(f"{new.name}: a subtask cannot be its own child")
    _check_references(new, catalog)
    nodes = dict(h.nodes)
    nodes[new.name] = new
    nodes[parent] = nodes[parent].with_children(nodes[parent].children + (new.name,))
    cycle = _find_cycle(nodes)
    if cycle:
        raise HierarchyError("edit creates a cycle: " + " -> ".join(cycle))
    order = list(h.order)
    order.insert(order.index(parent), new.name)
    return replace(h, nodes=nodes, order=tuple(order))


def prune_subtask(h: Hierarchy, name: str) -> Hierarchy:
    """Remove ``name`` from every parent; drop nodes no longer reachable from the root."""
    if name == h.root:
        raise HierarchyError("cannot prune the root subtask")
    if name not in h.nodes:
        raise HierarchyError(f"no subtask named {name!r}")
    nodes = dict(h.nodes)
    for parent in h.parents_of(name):
        children = tuple(c for c in nodes[parent].children if c != name)
        if not children:
            raise HierarchyError(f"pruning {name} would leave {parent} without children")
        nodes[parent] = nodes[parent].with_children(children)
    reachable = set(_postorder(nodes, [h.root]))
    nodes = {n: node for n, node in nodes.items() if n in reachable}
    return replace(
        h,
        nodes=nodes,
        primitives=frozenset(p for p in h.primitives if p in reachable),
        order=tuple(n for n in h.order if n in reachable),
    )


def flat_hierarchy(actions: Iterable[str], domain: str = "any") -> Hierarchy:
    """A single root over all primitives with the identity abstraction."""
    goal = ((Literal(FeatureRef("task_goal")),),)
    root = LAmdp("Root", goal=goal, phi=(FeatureRef("ground"), FeatureRef("task_goal")),
                 children=tuple(actions))
    return build_hierarchy(TaskGraphSpec(domain, "Root", (root,)))

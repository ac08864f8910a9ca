"""Reader and writer for the line-oriented hierarchy file format.

A file starts with ``palm-hierarchy 1`` followed by ``domain`` and
``root`` lines and one ``node`` block per composite subtask::

    node Navigate
      params loc:depot
      goal taxi_at(loc)
      phi taxi_x taxi_y depot_x(loc) depot_y(loc) taxi_at(loc)
      children north south east west

Each ``goal``/``fail``/``requires`` line is a conjunction of literals;
repeating the line adds a disjunct. Literals are ``f(args)``, ``!f(args)``
or ``f(args)=value``. ``#`` starts a comment.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from .types import (
    FeatureRef,
    HierarchyParseError,
    LAmdp,
    Literal,
    PseudoRewardConfig,
    TaskGraphSpec,
    predicate_text,
)

FORMAT_HEADER = "palm-hierarchy"
FORMAT_VERSION = "1"
NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
TOKEN_RE = re.compile(r"^(!?)([A-Za-z_][A-Za-z0-9_]*)(?:\(([^()]*)\))?(?:=(\S+))?$")
NODE_KEYS = ("params", "goal", "fail", "phi", "children", "wraps", "requires", "shield", "reward")


def _parse_token(token: str, line: int, key: str, allow_value: bool = True) -> Literal:
    match = TOKEN_RE.match(token)
    if not match:
        raise HierarchyParseError(f"cannot parse {token!r}", line, key)
    neg, name, args, value = match.groups()
    arg_list = tuple(a.strip() for a in args.split(",")) if args else ()
    if any(not a for a in arg_list):
        raise HierarchyParseError(f"empty argument in {token!r}", line, key)
    if value is not None and not allow_value:
        raise HierarchyParseError(f"unexpected value in {token!r}", line, key)
    return Literal(FeatureRef(name, arg_list), bool(neg), value)


class _NodeBuilder:
    def __init__(self, name: str, line: int):
        self.name = name
        self.line = line
        self.fields: dict = {"goal": [], "fail": [], "requires": []}
        self.seen: set[str] = set()

    def add(self, key: str, rest: list[str], line: int) -> None:
        if key in ("goal", "fail", "requires"):
            if not rest:
                raise HierarchyParseError("expected at least one literal", line, key)
            self.fields[key].append(tuple(_parse_token(t, line, key) for t in rest))
            return
        if key in self.seen:
            raise HierarchyParseError(f"duplicate '{key}' in node {self.name}", line, key)
        self.seen.add(key)
        if key == "params":
            params = []
            for tok in rest:
                name, sep, kind = tok.partition(":")
                if not sep or not NAME_RE.match(name) or not NAME_RE.match(kind):
                    raise HierarchyParseError(f"parameter must be name:kind, got {tok!r}", line, key)
                params.append((name, kind))
            if len({p for p, _ in params}) != len(params):
                raise HierarchyParseError("duplicate parameter name", line, key)
            self.fields["params"] = tuple(params)
        elif key == "phi":
            feats = []
            for tok in rest:
                lit = _parse_token(tok, line, key, allow_value=False)
                if lit.negated:
                    raise HierarchyParseError(f"negation not allowed in phi: {tok!r}", line, key)
                feats.append(lit.feature)
            self.fields["phi"] = tuple(feats)
        elif key == "children":
            for tok in rest:
                if not NAME_RE.match(tok):
                    raise HierarchyParseError(f"bad child name {tok!r}", line, key)
            if len(set(rest)) != len(rest):
                raise HierarchyParseError("duplicate child", line, key)
            self.fields["children"] = tuple(rest)
        elif key == "wraps":
            macro = bool(rest) and rest[0] == "macro"
            body = rest[1:] if macro else rest
            if len(body) != 1:
                raise HierarchyParseError("expected 'wraps <primitive>' or 'wraps macro <name>(args)'", line, key)
            lit = _parse_token(body[0], line, key, allow_value=False)
            if lit.negated:
                raise HierarchyParseError("negation not allowed", line, key)
            if lit.feature.args and not macro:
                raise HierarchyParseError("only macros take arguments", line, key)
            self.fields["wraps"] = lit.feature.name
            self.fields["wraps_args"] = lit.feature.args
            self.fields["macro"] = macro
        elif key == "shield":
            if rest:
                raise HierarchyParseError("'shield' takes no arguments", line, key)
            self.fields["shield"] = True
        elif key == "reward":
            values = {}
            for tok in rest:
                name, sep, num = tok.partition("=")
                if not sep or name not in ("goal", "fail", "default"):
                    raise HierarchyParseError(f"expected goal=/fail=/default=, got {tok!r}", line, key)
                try:
                    values[name] = float(num)
                except ValueError:
                    raise HierarchyParseError(f"not a number: {num!r}", line, key) from None
            self.fields["pseudo_reward"] = PseudoRewardConfig(**values)

    def build(self) -> LAmdp:
        f = dict(self.fields)
        goal, fail, requires = (tuple(f.pop(k)) for k in ("goal", "fail", "requires"))
        return LAmdp(self.name, goal=goal, fail=fail, requires=requires, line=self.line, **f)


def parse_hierarchy(text: str) -> TaskGraphSpec:
    header_seen = False
    domain = None
    root = None
    nodes: list[_NodeBuilder] = []
    current: _NodeBuilder | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        key, rest = words[0], words[1:]
        if not header_seen:
            if key != FORMAT_HEADER:
                raise HierarchyParseError(f"expected '{FORMAT_HEADER} {FORMAT_VERSION}' header", lineno)
            if rest != [FORMAT_VERSION]:
                raise HierarchyParseError(f"unsupported format version {' '.join(rest)!r}", lineno)
            header_seen = True
            continue
        if key == "domain":
            if len(rest) != 1 or domain is not None:
                raise HierarchyParseError("expected a single 'domain <name>' line", lineno, "domain")
            domain = rest[0]
        elif key == "root":
            if len(rest) != 1 or root is not None:
                raise HierarchyParseError("expected a single 'root <name>' line", lineno, "root")
            root = rest[0]
        elif key == "node":
            if len(rest) != 1 or not NAME_RE.match(rest[0]):
                raise HierarchyParseError("expected 'node <Name>'", lineno, "node")
            if any(n.name == rest[0] for n in nodes):
                raise HierarchyParseError(f"node {rest[0]} declared twice", lineno, "node")
            current = _NodeBuilder(rest[0], lineno)
            nodes.append(current)
        elif key in NODE_KEYS:
            if current is None:
                raise HierarchyParseError(f"'{key}' outside of a node block", lineno, key)
            current.add(key, rest, lineno)
        else:
            raise HierarchyParseError(f"unknown keyword {key!r}", lineno)
    if not header_seen:
        raise HierarchyParseError("empty hierarchy file")
    if domain is None:
        raise HierarchyParseError("missing 'domain' line", None, "domain")
    if root is None:
        raise HierarchyParseError("missing 'root' line", None, "root")
    return TaskGraphSpec(domain, root, tuple(n.build() for n in nodes))


def dump_node(node: LAmdp) -> str:
    lines = [f"node {node.name}"]
    if node.params:
        lines.append("  params " + " ".join(f"{p}:{k}" for p, k in node.params))
    if node.wraps is not None:
        target = node.wraps + (f"({','.join(node.wraps_args)})" if node.wraps_args else "")
        lines.append("  wraps " + ("macro " if node.macro else "") + target)
    for key, pred in (("goal", node.goal), ("fail", node.fail), ("requires", node.requires)):
        lines.extend(f"  {key} {conj}" for conj in predicate_text(pred))
    if node.phi:
        lines.append("  phi " + " ".join(str(f) for f in node.phi))
    if node.children:
        lines.append("  children " + " ".join(node.children))
    if node.shield:
        lines.append("  shield")
    if node.pseudo_reward != PseudoRewardConfig():
        pr = node.pseudo_reward
        lines.append(f"  reward goal={pr.goal!r} fail={pr.fail!r} default={pr.default!r}")
    return "\n".join(lines) + "\n"


def dump_hierarchy(spec: TaskGraphSpec) -> str:
    out = [f"{FORMAT_HEADER} {FORMAT_VERSION}", f"domain {spec.domain}", f"root {spec.root}", ""]
    for node in spec.nodes:
        out.append(dump_node(node))
    return "\n".join(out)


def shipped_hierarchies() -> list[str]:
    root = resources.files("palm.data.hierarchies")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".hier"))


def read_hierarchy_text(source: str | Path) -> str:
    """Read a hierarchy file by path, falling back to the shipped files by name."""
    path = Path(source)
    if path.exists():
        return path.read_text()
    if path.name in shipped_hierarchies() and path.parent == Path("."):
        return resources.files("palm.data.hierarchies").joinpath(path.name).read_text()
    raise FileNotFoundError(f"hierarchy file not found: {source}")

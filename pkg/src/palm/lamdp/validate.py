"""Static and sampled checks of a hierarchy against a domain."""

from __future__ import annotations

import numpy as np

from ..core import Environment, GroundState, PalmError
from .build import _check_references, _find_cycle, _postorder
from .ground import ground
from .types import ARG_FEATURE, FeatureRef, Hierarchy, HierarchyError, predicate_features

_SAMPLE_VARIANTS = {
    "taxi": ("taxi-small", "taxi-classic-2p"),
    "cleanup": ("cleanup-small", "cleanup-2r2b1t-5x5"),
}


def _covered(ref: FeatureRef, phi: tuple[FeatureRef, ...]) -> bool:
    for f in phi:
        if f.name == ref.name and len(f.args) == len(ref.args) and all(
            a == b or a == "*" for a, b in zip(f.args, ref.args)
        ):
            return True
    return False


def structural_violations(h: Hierarchy, catalog=None) -> list[str]:
    out: list[str] = []
    cycle = _find_cycle(dict(h.nodes))
    if cycle:
        out.append("children relation has a cycle: " + " -> ".join(cycle))
        return out
    reachable = set(_postorder(dict(h.nodes), [h.root]))
    for name in h.nodes:
        if name not in reachable:
            out.append(f"{name}: not reachable from the root")
    for name, node in h.nodes.items():
        if node.is_wrapper:
            continue
        if not node.children:
            out.append(f"{name}: children must be nonempty")
        for child in node.children:
            if child not in h.nodes:
                out.append(f"{name}: unresolved child {child!r}")
        for ref in predicate_features(node.goal) + predicate_features(node.fail):
            if not _covered(ref, node.phi):
                out.append(f"{name}: φ must include all predicate features (missing {ref})")
        used = {a for f in node.phi for a in f.args}
        for p in node.param_names:
            if p not in used:
                out.append(f"{name}: φ must include all parameters (missing {p})")
        if node.shield:
            for child in node.children:
                for ref in predicate_features(h.nodes[child].requires) if child in h.nodes else []:
                    if ref.name != ARG_FEATURE and not any(f.name == ref.name for f in node.phi):
                        out.append(f"{name}: φ must include shield feature {ref.name} required by {child}")
        try:
            _check_references(node, catalog)
        except HierarchyError as exc:
            out.append(str(exc))
    root = h.root_node
    if not root.goal:
        out.append(f"{h.root}: root goal must match the task goal (no goal declared)")
    return out


def sample_states(env: Environment, rng: np.random.Generator, steps: int = 400) -> list[GroundState]:
    """States along a random walk that restarts at the goal."""
    actions = env.primitive_actions()
    s = env.initial_state()
    states = [s]
    for _ in range(steps):
        a = actions[int(rng.integers(len(actions)))]
        s = env.step(s, a, rng).next_state
        states.append(s)
        if env.is_goal(s):
            s = env.initial_state()
    return states


def sampled_violations(h: Hierarchy, env: Environment, rng: np.random.Generator,
                       steps: int = 400) -> list[str]:
    out: list[str] = []
    try:
        grounded = ground(h, env)
    except PalmError as exc:
        return [f"grounding failed: {exc}"]
    states = sample_states(env, rng, steps)
    (root,) = grounded[h.root]
    seen_goal = set()
    for s in states:
        try:
            sr = root.project(s)
        except PalmError as exc:
            out.append(str(exc))
            break
        goal = env.is_goal(s)
        if root.eval_goal(sr) != goal:
            out.append(f"{h.root}: root goal must match the task goal (differs on a sampled state)")
            break
        if root.eval_fail(sr):
            out.append(f"{h.root}: root fail holds on a sampled state but the task has no failure terminal")
            break
        seen_goal.add(goal)
    for name in h.order:
        if h.nodes[name].is_wrapper:
            continue
        for g in grounded[name]:
            for s in states:
                sv = g.project(s)
                if g.eval_goal(sv) and g.eval_fail(sv):
                    out.append(f"{g.label}: goal and fail hold together on a sampled state")
                    break
    return out


def validate_hierarchy(h: Hierarchy, target: Environment | str, seed: int = 0) -> list[str]:
    """All violations found for ``h`` on a task instance, domain or variant name."""
    from .. import domains

    if isinstance(target, Environment):
        envs = [target]
        domain = target.domain
    else:
        domain = domains.domain_of(target) if target not in _SAMPLE_VARIANTS else target
        names = _SAMPLE_VARIANTS[domain] if target in _SAMPLE_VARIANTS else (target,)
        rng = np.random.default_rng(seed)
        envs = [domains.make_task(n, rng)[0] for n in names]
    out: list[str] = []
    if h.domain not in ("any", domain):
        out.append(f"hierarchy is declared for {h.domain!r}, not {domain!r}")
    out += structural_violations(h, domains.catalog(domain))
    if out:
        return out
    rng = np.random.default_rng(seed)
    for env in envs:
        for v in sampled_violations(h, env, rng):
            if v not in out:
                out.append(v)
    return out

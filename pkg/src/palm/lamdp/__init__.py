"""Lifted abstract MDP subtasks: file format, construction, grounding, validation."""

from .build import add_subtask, build_hierarchy, flat_hierarchy, prune_subtask, to_task_graph
from .ground import (
    GroundedAmdp,
    abstract,
    child_actions,
    decode_values,
    encode_values,
    eval_fail,
    eval_goal,
    ground,
    pseudo_reward,
)
from .hierfile import dump_hierarchy, dump_node, parse_hierarchy, read_hierarchy_text, shipped_hierarchies
from .types import (
    AbstractionError,
    AbstractState,
    FeatureRef,
    GroundingError,
    Hierarchy,
    HierarchyError,
    HierarchyParseError,
    LAmdp,
    Literal,
    PseudoRewardConfig,
    TaskGraphSpec,
)
from .validate import validate_hierarchy


def load_hierarchy(source, catalog=None) -> Hierarchy:
    """Parse a hierarchy file (path or shipped name) and build it.

    When ``catalog`` is None the catalog of the file's declared domain is
    used for reference checks.
    """
    from .. import domains

    spec = parse_hierarchy(read_hierarchy_text(source))
    if catalog is None and spec.domain in ("taxi", "cleanup"):
        catalog = domains.catalog(spec.domain)
    return build_hierarchy(spec, catalog)

"""Cleanup: a Sokoban-like house of colored rooms joined by doors.

The agent pushes blocks by walking into them and pulls the block it is
facing by stepping backward. Target blocks must end up inside a room of
their own color. Door cells belong to no room.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from ..core import (
    Action,
    ConfigurationError,
    DomainContractError,
    Environment,
    GroundState,
    StepOutcome,
    Terminal,
)

MOVES = {"north": (0, 1), "south": (0, -1), "east": (1, 0), "west": (-1, 0)}
OPPOSITE = {"north": "south", "south": "north", "east": "west", "west": "east"}
PERPENDICULAR = {
    "north": ("east", "west"),
    "south": ("east", "west"),
    "east": ("north", "south"),
    "west": ("north", "south"),
}
DIRECTIONS = tuple(MOVES)
ACTIONS = ("north", "south", "east", "west", "pull")
GOAL_REWARD = 1.0

WALL = "#"
DOOR = "D"


def offset_tag(dx: int, dy: int) -> str:
    return f"{dx},{dy}"


@dataclass(frozen=True)
class BlockSpec:
    id: str
    color: str
    target: bool = True
    position: tuple[int, int] | None = None


@dataclass(frozen=True)
class CleanupLayout:
    """Static geometry: which room (or door/wall) each cell belongs to."""

    name: str
    width: int
    height: int
    cells: Mapping[tuple[int, int], str]  # cell -> room id, DOOR or WALL
    room_colors: Mapping[str, str]
    blocks: tuple[BlockSpec, ...] = ()
    agent: tuple[int, int] | None = None
    movement_noise: float = 0.0

    @classmethod
    def from_rows(cls, name: str, rows: Sequence[str], room_colors: Mapping[str, str],
                  blocks: Iterable[BlockSpec] = (), **kwargs) -> CleanupLayout:
        """Build from a character map; the first row is the northmost (largest y)."""
        height = len(rows)
        if height == 0 or len({len(r) for r in rows}) != 1:
            raise ConfigurationError(f"{name}: rows must be non-empty and of equal length")
        width = len(rows[0])
        cells = {}
        for i, row in enumerate(rows):
            y = height - 1 - i
            for x, ch in enumerate(row):
                if ch not in (WALL, DOOR) and ch not in room_colors:
                    raise ConfigurationError(f"{name}: cell ({x},{y}) uses undeclared room {ch!r}")
                cells[(x, y)] = ch
        layout = cls(name, width, height, cells, dict(room_colors), tuple(blocks), **kwargs)
        layout.validate()
        return layout

    @classmethod
    def from_rooms(cls, name: str, width: int, height: int, rooms: Sequence[Mapping],
                   doors: Iterable[tuple[int, int]] = (), blocks: Iterable[BlockSpec] = (),
                   **kwargs) -> CleanupLayout:
        """Build from room rectangles ``{id, color, rect: (x0, y0, x1, y1)}`` (inclusive)."""
        cells: dict[tuple[int, int], str] = {}
        colors = {}
        for room in rooms:
            x0, y0, x1, y1 = room["rect"]
            colors[room["id"]] = room["color"]
            for x in range(x0, x1 + 1):
                for y in range(y0, y1 + 1):
                    if (x, y) in cells:
                        raise ConfigurationError(
                            f"{name}: rooms {cells[(x, y)]!r} and {room['id']!r} overlap at ({x},{y})")
                    cells[(x, y)] = room["id"]
        for door in doors:
            door = tuple(door)
            if door in cells:
                raise ConfigurationError(f"{name}: door {door} overlaps room {cells[door]!r}")
            cells[door] = DOOR
        for x in range(width):
            for y in range(height):
                cells.setdefault((x, y), WALL)
        if len(cells) != width * height:
            raise ConfigurationError(f"{name}: regions extend beyond the {width}x{height} grid")
        layout = cls(name, width, height, cells, colors, tuple(blocks), **kwargs)
        layout.validate()
        return layout

    def validate(self) -> None:
        for (x, y), kind in self.cells.items():
            if kind != DOOR:
                continue
            regions = {
                self.cells[n] for n in _neighbors(x, y, self.width, self.height)
                if self.cells[n] not in (WALL, DOOR)
            }
            if len(regions) != 2:
                raise ConfigurationError(
                    f"{self.name}: door ({x},{y}) must adjoin exactly two rooms, found {sorted(regions)}")
        for block in self.blocks:
            if block.color not in set(self.room_colors.values()) and block.target:
                raise ConfigurationError(f"{self.name}: no room matches target block color {block.color!r}")

    def free_cells(self) -> list[tuple[int, int]]:
        return sorted((c for c, k in self.cells.items() if k != WALL), key=lambda c: (c[1], c[0]))


def _neighbors(x: int, y: int, w: int, h: int):
    for dx, dy in MOVES.values():
        nx, ny = x + dx, y + dy
        if 0 <= nx < w and 0 <= ny < h:
            yield (nx, ny)


@lru_cache(maxsize=None)
def _layout_file() -> dict:
    text = resources.files("palm.data.layouts").joinpath("cleanup.yaml").read_text()
    data = yaml.safe_load(text)
    if data.get("version") != 1:
        raise ConfigurationError("unsupported cleanup layout file version")
    return data["layouts"]


def layout_names() -> list[str]:
    return sorted(_layout_file())


def load_layout(name: str) -> CleanupLayout:
    try:
        entry = _layout_file()[name]
    except KeyError:
        raise ConfigurationError(f"unknown cleanup layout {name!r}") from None
    blocks = [
        BlockSpec(b["id"], b["color"], b.get("target", True),
                  tuple(b["position"]) if "position" in b else None)
        for b in entry["blocks"]
    ]
    agent = tuple(entry["agent"]) if "agent" in entry else None
    return CleanupLayout.from_rows(name, entry["rows"], entry["rooms"], blocks, agent=agent,
                                   movement_noise=entry.get("movement_noise", 0.0))


class CleanupEnv(Environment):
    domain = "cleanup"
    goal_feature = "all_targets_home"
    param_kinds = ("block", "room", "direction", "offset")
    macros = {"look": ("direction",)}

    def __init__(self, layout: CleanupLayout, start: GroundState, discount: float = 0.95):
        super().__init__(discount)
        self.layout = layout
        self.width, self.height = layout.width, layout.height
        self.cells = dict(layout.cells)
        self.room_colors = dict(layout.room_colors)
        self.block_ids = [b.id for b in layout.blocks]
        self.block_colors = {b.id: b.color for b in layout.blocks}
        self.targets = frozenset(b.id for b in layout.blocks if b.target)
        self.room_ids = sorted(self.room_colors)
        self._start = start
        self._set_actions(ACTIONS)
        self._register_features()

    # -- geometry -----------------------------------------------------------

    def room_of(self, x: int, y: int) -> str | None:
        kind = self.cells.get((x, y), WALL)
        return None if kind in (WALL, DOOR) else kind

    def passable(self, a: tuple[int, int], b: tuple[int, int]) -> bool:
        ka = self.cells.get(a, WALL)
        kb = self.cells.get(b, WALL)
        if ka == WALL or kb == WALL:
            return False
        return ka == kb or ka == DOOR or kb == DOOR

    def _block_at(self, state: GroundState) -> dict[tuple[int, int], str]:
        return {(state[b]["x"], state[b]["y"]): b for b in self.block_ids}

    # -- dynamics -----------------------------------------------------------

    def initial_state(self) -> GroundState:
        return self._start

    def in_matching_room(self, state: GroundState, b: str) -> bool:
        room = self.room_of(state[b]["x"], state[b]["y"])
        return room is not None and self.room_colors[room] == self.block_colors[b]

    def is_goal(self, state: GroundState) -> bool:
        return all(self.in_matching_room(state, b) for b in self.targets)

    def outcomes(self, state: GroundState, action: Action | str) -> list[tuple[float, StepOutcome]]:
        action_id = self.check_action(action)
        if "agent" not in state:
            raise DomainContractError("not a cleanup state")
        if action_id == "pull":
            return [(1.0, self._outcome(self._pull(state)))]
        noise = self.layout.movement_noise
        if noise <= 0:
            return [(1.0, self._outcome(self._move(state, action_id)))]
        merged: dict[GroundState, float] = {}
        side_a, side_b = PERPENDICULAR[action_id]
        for prob, direction in ((1 - noise, action_id), (noise / 2, side_a), (noise / 2, side_b)):
            nxt = self._move(state, direction)
            merged[nxt] = merged.get(nxt, 0.0) + prob
        return [(p, self._outcome(s)) for s, p in merged.items()]

    def _outcome(self, nxt: GroundState) -> StepOutcome:
        if self.is_goal(nxt):
            return StepOutcome(nxt, GOAL_REWARD, Terminal.GOAL)
        return StepOutcome(nxt, 0.0, Terminal.NONE)

    def _move(self, state: GroundState, direction: str) -> GroundState:
        agent = state["agent"]
        a = (agent["x"], agent["y"])
        dx, dy = MOVES[direction]
        c = (a[0] + dx, a[1] + dy)
        if not self.passable(a, c):
            return state
        blocks = self._block_at(state)
        if c not in blocks:
            return state.replace({"agent": {"x": c[0], "y": c[1], "facing": direction}})
        e = (c[0] + dx, c[1] + dy)
        if not self.passable(c, e) or e in blocks:
            return state
        return state.replace({
            "agent": {"x": c[0], "y": c[1], "facing": direction},
            blocks[c]: {"x": e[0], "y": e[1]},
        })

    def _pull(self, state: GroundState) -> GroundState:
        agent = state["agent"]
        a = (agent["x"], agent["y"])
        dx, dy = MOVES[agent["facing"]]
        faced = (a[0] + dx, a[1] + dy)
        back = (a[0] - dx, a[1] - dy)
        blocks = self._block_at(state)
        if faced not in blocks or not self.passable(a, faced):
            return state
        if not self.passable(a, back) or back in blocks:
            return state
        return state.replace({
            "agent": {"x": back[0], "y": back[1]},
            blocks[faced]: {"x": a[0], "y": a[1]},
        })

    # -- subtask support ----------------------------------------------------

    def displacement(self, state: GroundState, action_id: str) -> str:
        """Agent offset produced by a primitive, or ``"none"`` for a self-transition."""
        nxt = self._pull(state) if action_id == "pull" else self._move(state, action_id)
        if nxt is state:
            return "none"
        return offset_tag(nxt["agent"]["x"] - state["agent"]["x"], nxt["agent"]["y"] - state["agent"]["y"])

    def can_look(self, state: GroundState, direction: str) -> bool:
        """Whether stepping back then forth ends on the same cell facing ``direction``."""
        agent = state["agent"]
        if agent["facing"] == direction:
            return False
        a = (agent["x"], agent["y"])
        dx, dy = MOVES[direction]
        faced = (a[0] + dx, a[1] + dy)
        back = (a[0] - dx, a[1] - dy)
        blocks = self._block_at(state)
        return (faced in blocks and self.passable(a, faced)
                and self.passable(a, back) and back not in blocks)

    def param_domain(self, kind: str, wrapped: str | None = None) -> list:
        if kind == "block":
            return list(self.block_ids)
        if kind == "room":
            return list(self.room_ids)
        if kind == "direction":
            return list(DIRECTIONS)
        if kind == "offset":
            if wrapped in MOVES:
                dx, dy = MOVES[wrapped]
                return [offset_tag(dx, dy)]
            if wrapped == "pull":
                return [offset_tag(-dx, -dy) for dx, dy in MOVES.values()]
            raise DomainContractError(f"offset parameters need a wrapped primitive, got {wrapped!r}")
        raise DomainContractError(f"cleanup has no parameter kind {kind!r}")

    def macro(self, name: str, args: Sequence) -> list[str]:
        if name == "look":
            (direction,) = args
            return [OPPOSITE[direction], direction]
        return super().macro(name, args)

    def _register_features(self) -> None:
        reg = self.register_feature
        reg("agent_x", (), lambda env, s: s["agent"]["x"])
        reg("agent_y", (), lambda env, s: s["agent"]["y"])
        reg("agent_facing", (), lambda env, s: s["agent"]["facing"])
        reg("block_x", ("block",), lambda env, s, b: s[b]["x"])
        reg("block_y", ("block",), lambda env, s, b: s[b]["y"])
        reg("block_room", ("block",), lambda env, s, b: env.room_of(s[b]["x"], s[b]["y"]) or "none")
        reg("block_in_room", ("block", "room"),
            lambda env, s, b, r: env.room_of(s[b]["x"], s[b]["y"]) == r)
        reg("block_in_matching_room", ("block",), lambda env, s, b: env.in_matching_room(s, b))
        reg("agent_adjacent", ("block",),
            lambda env, s, b: abs(s[b]["x"] - s["agent"]["x"]) + abs(s[b]["y"] - s["agent"]["y"]) == 1)
        reg("all_targets_home", (), lambda env, s: env.is_goal(s))
        reg("moves", ("direction",), lambda env, s, d: env.displacement(s, d))
        reg("can_pull", (), lambda env, s: env.displacement(s, "pull") != "none")
        reg("pull_moves", (), lambda env, s: env.displacement(s, "pull"))
        reg("can_look", ("direction",), lambda env, s, d: env.can_look(s, d))


def _state(layout: CleanupLayout, agent: tuple[int, int], blocks: Mapping[str, tuple[int, int]]) -> GroundState:
    objects = {"agent": {"x": agent[0], "y": agent[1], "facing": "north"}}
    for spec in layout.blocks:
        x, y = blocks[spec.id]
        objects[spec.id] = {"x": x, "y": y, "color": spec.color}
    return GroundState(objects)


def solvable(env: CleanupEnv, start: GroundState, limit: int = 200_000) -> bool:
    """Breadth-first reachability of a goal state (deterministic dynamics)."""
    if env.is_goal(start):
        return True
    seen = {start}
    frontier = deque([start])
    while frontier:
        s = frontier.popleft()
        for a in ACTIONS:
            nxt = env._pull(s) if a == "pull" else env._move(s, a)
            if nxt in seen:
                continue
            if env.is_goal(nxt):
                return True
            seen.add(nxt)
            if len(seen) > limit:
                raise ConfigurationError(f"{env.layout.name}: solvability check exceeded {limit} states")
            frontier.append(nxt)
    return False


def make_cleanup_task(spec: CleanupLayout | str, rng: np.random.Generator, discount: float = 0.95,
                      max_attempts: int = 1000) -> tuple[CleanupEnv, GroundState]:
    """Place blocks and the agent; random placements are redrawn until solvable and unsolved."""
    layout = load_layout(spec) if isinstance(spec, str) else spec
    layout.validate()
    if not layout.blocks:
        raise ConfigurationError(f"{layout.name}: at least one block is required")
    free = [c for c in layout.free_cells() if layout.cells[c] != DOOR]
    for _ in range(max_attempts):
        taken: set[tuple[int, int]] = set()
        forced_home = False
        positions: dict[str, tuple[int, int]] = {}
        for block in layout.blocks:
            if block.position is not None:
                positions[block.id] = block.position
            else:
                options = [c for c in free if c not in taken]
                if block.target:
                    # start target blocks outside their home rooms when possible
                    away = [c for c in options if layout.room_colors.get(layout.cells[c]) != block.color]
                    forced_home |= not away
                    options = away or options
                positions[block.id] = options[int(rng.integers(len(options)))]
            taken.add(positions[block.id])
        if len(taken) != len(layout.blocks):
            raise ConfigurationError(f"{layout.name}: blocks share a cell")
        if layout.agent is not None:
            agent = layout.agent
        else:
            options = [c for c in layout.free_cells() if c not in taken]
            agent = options[int(rng.integers(len(options)))]
        if agent in taken:
            raise ConfigurationError(f"{layout.name}: agent placed on a block")
        start = _state(layout, agent, positions)
        env = CleanupEnv(layout, start, discount)
        if (forced_home or not env.is_goal(start)) and solvable(env, start):
            return env, start
        if all(b.position is not None for b in layout.blocks) and layout.agent is not None:
            break
    raise ConfigurationError(f"{layout.name}: could not draw a solvable unsolved instance")


VARIANTS = (
    "cleanup-small",
    "cleanup-3r1b-5x7",
    "cleanup-3r1b-7x7",
    "cleanup-2r2b1t-5x5",
    "cleanup-2r2b2t-5x5",
    "cleanup-1r1b",
)

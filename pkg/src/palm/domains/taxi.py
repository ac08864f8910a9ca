"""Taxi: a taxi ferries passengers between colored depots on a walled grid.

Coordinates are ``(x, y)`` with ``y`` growing northward. Movement noise
realizes a perpendicular direction (half each side); a fickle passenger
may switch destination on the first movement action after pickup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

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
PERPENDICULAR = {
    "north": ("east", "west"),
    "south": ("east", "west"),
    "east": ("north", "south"),
    "west": ("north", "south"),
}
ACTIONS = ("north", "south", "east", "west", "pickup", "putdown")

STEP_REWARD = -1.0
DELIVERY_REWARD = 20.0
ILLEGAL_REWARD = -10.0


def _wall(a: tuple[int, int], b: tuple[int, int]) -> tuple:
    return (a, b) if a <= b else (b, a)


def _vertical_walls(x_left: int, ys: Sequence[int]) -> list[tuple]:
    """Walls on the edge between column ``x_left`` and ``x_left + 1``."""
    return [_wall((x_left, y), (x_left + 1, y)) for y in ys]


# depot id -> (x, y, color)
LAYOUTS = {
    "small": {
        "size": (1, 5),
        "depots": {"R": (0, 4, "red"), "G": (0, 3, "green"), "Y": (0, 1, "yellow"), "B": (0, 0, "blue")},
        "walls": [],
    },
    "classic": {
        "size": (5, 5),
        "depots": {"R": (0, 4, "red"), "G": (4, 4, "green"), "Y": (0, 0, "yellow"), "B": (3, 0, "blue")},
        "walls": _vertical_walls(1, (3, 4)) + _vertical_walls(0, (0, 1)) + _vertical_walls(2, (0, 1)),
    },
    "large": {
        "size": (20, 20),
        "depots": {"R": (0, 19, "red"), "G": (19, 19, "green"), "Y": (0, 0, "yellow"), "B": (19, 0, "blue")},
        "walls": [],
    },
}


@dataclass(frozen=True)
class TaxiVariant:
    grid: tuple[int, int]
    passengers: int = 1
    movement_noise: float = 0.0
    fickle_probability: float = 0.0
    layout: str = "classic"

    @property
    def stochastic(self) -> bool:
        return self.movement_noise > 0 or self.fickle_probability > 0


VARIANTS = {
    "taxi-small": TaxiVariant((1, 5), 1, 0.0, 0.0, "small"),
    "taxi-classic": TaxiVariant((5, 5), 1, 0.2, 0.3, "classic"),
    "taxi-classic-2p": TaxiVariant((5, 5), 2, 0.2, 0.3, "classic"),
    "taxi-large": TaxiVariant((20, 20), 1, 0.0, 0.0, "large"),
    "taxi-classic-deterministic": TaxiVariant((5, 5), 1, 0.0, 0.0, "classic"),
}


class TaxiEnv(Environment):
    domain = "taxi"
    goal_feature = "all_delivered"
    param_kinds = ("passenger", "depot")
    macros: dict = {}

    def __init__(self, variant: TaxiVariant, start: GroundState, discount: float = 0.95):
        super().__init__(discount)
        layout = LAYOUTS[variant.layout]
        if tuple(layout["size"]) != tuple(variant.grid):
            raise ConfigurationError(f"layout {variant.layout!r} is {layout['size']}, not {variant.grid}")
        self.variant = variant
        self.width, self.height = variant.grid
        self.depots = {d: (x, y) for d, (x, y, _) in layout["depots"].items()}
        self.depot_at = {xy: d for d, xy in self.depots.items()}
        self.walls = frozenset(layout["walls"])
        self.passenger_ids = [f"p{i + 1}" for i in range(variant.passengers)]
        self._start = start
        self._set_actions(ACTIONS)
        self._register_features()

    # -- dynamics ---------------------------------------------------------

    def initial_state(self) -> GroundState:
        return self._start

    def is_goal(self, state: GroundState) -> bool:
        for p in self.passenger_ids:
            attrs = state[p]
            if attrs["in_taxi"] or self.depots[attrs["goal"]] != (attrs["x"], attrs["y"]):
                return False
        return True

    def blocked(self, x: int, y: int, direction: str) -> bool:
        dx, dy = MOVES[direction]
        nx, ny = x + dx, y + dy
        if not (0 <= nx < self.width and 0 <= ny < self.height):
            return True
        return _wall((x, y), (nx, ny)) in self.walls

    def _carried(self, state: GroundState) -> str | None:
        for p in self.passenger_ids:
            if state[p]["in_taxi"]:
                return p
        return None

    def _delivered(self, state: GroundState, p: str) -> bool:
        attrs = state[p]
        return not attrs["in_taxi"] and self.depots[attrs["goal"]] == (attrs["x"], attrs["y"])

    def outcomes(self, state: GroundState, action: Action | str) -> list[tuple[float, StepOutcome]]:
        action_id = self.check_action(action)
        if "taxi" not in state:
            raise DomainContractError("not a taxi state")
        if action_id in MOVES:
            return self._move_outcomes(state, action_id)
        if action_id == "pickup":
            return [(1.0, self._pickup(state))]
        return [(1.0, self._putdown(state))]

    def _move_outcomes(self, state: GroundState, action_id: str) -> list[tuple[float, StepOutcome]]:
        noise = self.variant.movement_noise
        directions = [(1.0 - noise, action_id)]
        if noise > 0:
            side_a, side_b = PERPENDICULAR[action_id]
            directions += [(noise / 2, side_a), (noise / 2, side_b)]

        carried = self._carried(state)
        armed = carried is not None and state[carried]["armed"]
        fickle = self.variant.fickle_probability if armed else 0.0
        if armed:
            current_goal = state[carried]["goal"]
            others = [d for d in self.depots if d != current_goal]
            goals = [(1.0 - fickle, current_goal)] + [(fickle / len(others), d) for d in others]
        else:
            goals = [(1.0, None)]

        merged: dict[GroundState, float] = {}
        order: list[GroundState] = []
        x, y = state["taxi"]["x"], state["taxi"]["y"]
        for p_dir, direction in directions:
            if p_dir <= 0:
                continue
            if self.blocked(x, y, direction):
                nx, ny = x, y
            else:
                dx, dy = MOVES[direction]
                nx, ny = x + dx, y + dy
            for p_goal, goal in goals:
                if p_goal <= 0:
                    continue
                changes = {"taxi": {"x": nx, "y": ny}}
                if carried is not None:
                    passenger = {"x": nx, "y": ny}
                    if armed:
                        passenger["armed"] = False
                        passenger["goal"] = goal
                    changes[carried] = passenger
                nxt = state.replace(changes) if (nx, ny) != (x, y) or carried is not None else state
                if nxt not in merged:
                    order.append(nxt)
                    merged[nxt] = 0.0
                merged[nxt] += p_dir * p_goal
        return [(merged[s], StepOutcome(s, STEP_REWARD, Terminal.NONE)) for s in order]

    def _pickup(self, state: GroundState) -> StepOutcome:
        if self._carried(state) is None:
            x, y = state["taxi"]["x"], state["taxi"]["y"]
            for p in self.passenger_ids:
                attrs = state[p]
                if (attrs["x"], attrs["y"]) == (x, y) and not self._delivered(state, p):
                    nxt = state.replace({p: {"in_taxi": True, "armed": self.variant.fickle_probability > 0}})
                    return StepOutcome(nxt, STEP_REWARD, Terminal.NONE)
        return StepOutcome(state, ILLEGAL_REWARD, Terminal.NONE)

    def _putdown(self, state: GroundState) -> StepOutcome:
        carried = self._carried(state)
        x, y = state["taxi"]["x"], state["taxi"]["y"]
        if carried is None or (x, y) not in self.depot_at:
            return StepOutcome(state, ILLEGAL_REWARD, Terminal.NONE)
        nxt = state.replace({carried: {"in_taxi": False, "armed": False, "x": x, "y": y}})
        if self.is_goal(nxt):
            return StepOutcome(nxt, DELIVERY_REWARD, Terminal.GOAL)
        return StepOutcome(nxt, STEP_REWARD, Terminal.NONE)

    def ground_reward_range(self) -> tuple[float, float]:
        return (ILLEGAL_REWARD, DELIVERY_REWARD)

    # -- subtask support ----------------------------------------------------

    def param_domain(self, kind: str, wrapped: str | None = None) -> list:
        if kind == "passenger":
            return list(self.passenger_ids)
        if kind == "depot":
            return list(self.depots)
        raise DomainContractError(f"taxi has no parameter kind {kind!r}")

    def _register_features(self) -> None:
        reg = self.register_feature
        reg("taxi_x", (), lambda env, s: s["taxi"]["x"])
        reg("taxi_y", (), lambda env, s: s["taxi"]["y"])
        reg("depot_x", ("depot",), lambda env, s, d: env.depots[d][0])
        reg("depot_y", ("depot",), lambda env, s, d: env.depots[d][1])
        reg("taxi_at", ("depot",), lambda env, s, d: (s["taxi"]["x"], s["taxi"]["y"]) == env.depots[d])
        reg("taxi_depot", (), lambda env, s: env.depot_at.get((s["taxi"]["x"], s["taxi"]["y"]), "none"))
        reg("in_taxi", ("passenger",), lambda env, s, p: s[p]["in_taxi"])
        reg("delivered", ("passenger",), lambda env, s, p: env._delivered(s, p))
        reg("carrying", (), lambda env, s: env._carried(s) is not None)
        reg("carrying_other", ("passenger",),
            lambda env, s, p: any(s[q]["in_taxi"] for q in env.passenger_ids if q != p))
        reg("passenger_loc", ("passenger",), _passenger_loc)
        reg("passenger_dest", ("passenger",), lambda env, s, p: s[p]["goal"])
        reg("fickle_pending", ("passenger",), lambda env, s, p: s[p]["armed"])
        reg("all_delivered", (), lambda env, s: env.is_goal(s))


def _passenger_loc(env: TaxiEnv, s: GroundState, p: str) -> str:
    attrs = s[p]
    if attrs["in_taxi"]:
        return "taxi"
    return env.depot_at.get((attrs["x"], attrs["y"]), "none")


def make_taxi_task(variant: TaxiVariant | str, rng: np.random.Generator,
                   discount: float = 0.95) -> tuple[TaxiEnv, GroundState]:
    """Sample a task instance: passenger starts, destinations and taxi start."""
    if isinstance(variant, str):
        try:
            variant = VARIANTS[variant]
        except KeyError:
            raise ConfigurationError(f"unknown taxi variant {variant!r}") from None
    if variant.passengers < 1:
        raise ConfigurationError("need at least one passenger")
    if variant.grid[0] < 1 or variant.grid[1] < 1:
        raise ConfigurationError("grid dimensions must be positive")
    if variant.layout not in LAYOUTS:
        raise ConfigurationError(f"unknown taxi layout {variant.layout!r}")
    depots = LAYOUTS[variant.layout]["depots"]
    if variant.passengers > len(depots):
        raise ConfigurationError("more passengers than depots")

    ids = list(depots)
    objects: dict[str, dict] = {}
    for d, (x, y, color) in depots.items():
        objects[d] = {"x": x, "y": y, "color": color}
    for i in range(variant.passengers):
        start = ids[int(rng.integers(len(ids)))]
        others = [d for d in ids if d != start]
        goal = others[int(rng.integers(len(others)))]
        sx, sy, _ = depots[start]
        objects[f"p{i + 1}"] = {"x": sx, "y": sy, "in_taxi": False, "goal": goal, "armed": False}
    w, h = variant.grid
    cell = int(rng.integers(w * h))
    objects["taxi"] = {"x": cell % w, "y": cell // w}
    start_state = GroundState(objects)
    env = TaxiEnv(variant, start_state, discount)
    return env, start_state

"""Turn rules and topology constraints for the four model variants."""
from __future__ import annotations

import enum
from typing import NamedTuple

from .environment import (
    Axis,
    Environment,
    ModelKind,
    MirrorState,
    RotatingOverlay,
    Topology,
    Vertex,
    effective_mirror,
    record_flip,
)

__all__ = [
    "Direction",
    "ModelKind",
    "ModelTopologyError",
    "LaneInvariantError",
    "RayState",
    "reflect",
    "turn_rule",
    "validate_model_topology",
    "initial_state",
    "lane_heading",
]


class Direction(enum.IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def dx(self) -> int:
        return _DX[self]

    @property
    def dy(self) -> int:
        return _DY[self]

    def reverse(self) -> "Direction":
        return Direction((self + 2) % 4)

    @property
    def horizontal(self) -> bool:
        return self in (Direction.E, Direction.W)


_DX = (0, 1, 0, -1)
_DY = (1, 0, -1, 0)


class RayState(NamedTuple):
    """The ray sits at ``pos`` and will next traverse the edge towards ``heading``."""

    pos: Vertex
    heading: Direction


class ModelTopologyError(ValueError):
    pass


class LaneInvariantError(RuntimeError):
    """A Manhattan state travels against its lane; always a bug, never user error."""


def reflect(m: MirrorState, d: Direction) -> Direction:
    # NE is "/": N<->E, S<->W.  NW is "\": N<->W, E<->S.
    if m is MirrorState.NE:
        return Direction(d ^ 1)
    if m is MirrorState.NW:
        return Direction(3 - d)
    return d


def lane_heading(env: Environment, pos: Vertex, axis: Axis) -> Direction:
    if axis is Axis.HORIZONTAL:
        return Direction.E if env.street(Axis.HORIZONTAL, pos[1]) > 0 else Direction.W
    return Direction.N if env.street(Axis.VERTICAL, pos[0]) > 0 else Direction.S


def check_lane(env: Environment, pos: Vertex, heading: Direction) -> None:
    axis = Axis.HORIZONTAL if heading.horizontal else Axis.VERTICAL
    if lane_heading(env, pos, axis) is not heading:
        raise LaneInvariantError(f"heading {heading.name} at {pos} runs against the {axis.value} lane")


def turn_rule(
    env: Environment,
    arrival: Vertex,
    incoming: Direction,
    overlay: RotatingOverlay | None = None,
) -> Direction:
    """Outgoing heading for a ray arriving at ``arrival`` with ``incoming``.

    The rotating model flips the mirror it just used, so ``overlay`` is
    mutated in that case.
    """
    kind = env.model
    if kind is ModelKind.MIRROR:
        return reflect(env.mirror(arrival), incoming)
    if kind is ModelKind.ROTATING:
        if overlay is None:
            raise ValueError("the rotating model needs a RotatingOverlay")
        m = effective_mirror(overlay, arrival)
        if m is MirrorState.EMPTY:
            return incoming
        record_flip(overlay, arrival)
        return reflect(m, incoming)
    check_lane(env, arrival, incoming)
    if env.mirror(arrival) is MirrorState.EMPTY:
        return incoming
    crossing = Axis.VERTICAL if incoming.horizontal else Axis.HORIZONTAL
    return lane_heading(env, arrival, crossing)


def validate_model_topology(kind: ModelKind | str, topology: Topology) -> None:
    kind = ModelKind(kind)
    if kind is ModelKind.MANHATTAN_PERIODIC and topology.is_cylinder:
        raise ModelTopologyError(
            "manhattan_periodic cannot be placed on a cylinder of odd circumference "
            f"{topology.circumference}: alternating lane orientations need an even period"
        )


def initial_state(env: Environment, heading: Direction = Direction.E) -> RayState:
    """Start at the origin; Manhattan rays take the orientation of lane y = 0."""
    if env.model.is_manhattan:
        return RayState((0, 0), lane_heading(env, (0, 0), Axis.HORIZONTAL))
    return RayState((0, 0), Direction(heading))

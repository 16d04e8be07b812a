"""Deterministic ray dynamics on directed-edge states, plus the trajectory tracer."""
from __future__ import annotations

from dataclasses import dataclass, field

from .environment import (
    Axis,
    Environment,
    ModelKind,
    MirrorState,
    RotatingOverlay,
    Vertex,
    canonicalize,
)
from .models import Direction, RayState, lane_heading, reflect, turn_rule


@dataclass(frozen=True)
class Region:
    """Escape predicate.

    ``box``: escaped once the ray leaves [-radius, radius]^2.
    ``strip``: escaped once |x| > radius (the natural choice on a cylinder).
    """

    kind: str
    radius: int

    def __post_init__(self):
        if self.kind not in ("box", "strip"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.radius < 0:
            raise ValueError("region radius must be nonnegative")

    @classmethod
    def box(cls, n: int) -> "Region":
        return cls("box", n)

    @classmethod
    def strip(cls, length: int) -> "Region":
        return cls("strip", length)

    def escaped(self, pos: Vertex) -> bool:
        if self.kind == "strip":
            return abs(pos[0]) > self.radius
        return abs(pos[0]) > self.radius or abs(pos[1]) > self.radius

    def state_count(self, circumference: int | None = None) -> int:
        width = 2 * self.radius + 1
        if self.kind == "strip":
            if circumference is None:
                raise ValueError("a strip region is only finite on a cylinder")
            return 4 * width * circumference
        return 4 * width * width


def default_region(env: Environment, n: int) -> Region:
    return Region.strip(n) if env.topology.is_cylinder else Region.box(n)


@dataclass
class TraceOutcome:
    outcome: str  # "escaped" | "periodic" | "truncated"
    steps: int
    exit_state: RayState | None = None
    period: int | None = None
    cap: int | None = None
    column0_crossings: int = 0
    visited_undirected_edges: int = 0
    returns_to_start: int = 0
    path: list[RayState] | None = None
    overlay: RotatingOverlay | None = field(default=None, repr=False)

    @property
    def escaped(self) -> bool:
        return self.outcome == "escaped"

    def to_dict(self) -> dict:
        d: dict = {"outcome": self.outcome, "steps": self.steps}
        if self.exit_state is not None:
            (x, y), h = self.exit_state
            d["exit"] = {"x": x, "y": y, "heading": h.name}
        if self.period is not None:
            d["period"] = self.period
        if self.cap is not None:
            d["cap"] = self.cap
        d["column0_crossings"] = self.column0_crossings
        d["visited_undirected_edges"] = self.visited_undirected_edges
        d["returns_to_start"] = self.returns_to_start
        if self.path is not None:
            d["path"] = [[x, y, h.name] for (x, y), h in self.path]
        return d


def step(env: Environment, s: RayState, overlay: RotatingOverlay | None = None) -> RayState:
    (x, y), d = s
    u = canonicalize(env.topology, (x + d.dx, y + d.dy))
    return RayState(u, turn_rule(env, u, d, overlay))


def inverse_step(env: Environment, s: RayState) -> RayState:
    """The unique state ``t`` with ``step(env, t) == s``."""
    kind = env.model
    if kind is ModelKind.ROTATING:
        raise ValueError("inverse_step is not available for the rotating model")
    pos, d = s
    if kind is ModelKind.MIRROR:
        incoming = reflect(env.mirror(pos), d)
    elif env.mirror(pos) is MirrorState.EMPTY:
        incoming = d
    else:
        # came in along the lane crossing the one we leave on
        axis = Axis.VERTICAL if d.horizontal else Axis.HORIZONTAL
        incoming = lane_heading(env, pos, axis)
    prev = canonicalize(env.topology, (pos[0] - incoming.dx, pos[1] - incoming.dy))
    return RayState(prev, incoming)


def edge_key(src: Vertex, heading: Direction, dst: Vertex) -> tuple[Vertex, Direction]:
    if heading in (Direction.N, Direction.E):
        return (src, heading)
    return (dst, heading.reverse())


def crosses_column0(src: Vertex, heading: Direction) -> bool:
    return (src[0] == 0 and heading is Direction.E) or (src[0] == 1 and heading is Direction.W)


def trace(
    env: Environment,
    start: RayState,
    region: Region,
    max_steps: int,
    *,
    dump_path: bool = False,
    overlay: RotatingOverlay | None = None,
) -> TraceOutcome:
    """Follow the ray from ``start`` until it escapes, closes its orbit or hits the cap.

    Non-rotating dynamics are injective, so the first repeated state is the
    start itself and comparing against it is enough to detect periodicity.
    The rotating model is only ever escaped or truncated; returns to the
    start state are counted instead.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    start = RayState(canonicalize(env.topology, start.pos), Direction(start.heading))
    if region.escaped(start.pos):
        raise ValueError(f"start {start.pos} already lies outside the region")
    rotating = env.model is ModelKind.ROTATING
    if rotating and overlay is None:
        overlay = RotatingOverlay(env)

    s = start
    crossings = 0
    returns = 0
    edges: set = set()
    path = [start] if dump_path else None
    steps = 0

    def finish(outcome: str, **kw) -> TraceOutcome:
        return TraceOutcome(
            outcome,
            steps=steps,
            column0_crossings=crossings,
            visited_undirected_edges=len(edges),
            returns_to_start=returns,
            path=path,
            overlay=overlay,
            **kw,
        )

    while True:
        nxt = step(env, s, overlay)
        steps += 1
        if crosses_column0(s.pos, s.heading):
            crossings += 1
        edges.add(edge_key(s.pos, s.heading, nxt.pos))
        s = nxt
        if path is not None:
            path.append(s)
        if region.escaped(s.pos):
            return finish("escaped", exit_state=s)
        if s == start:
            if not rotating:
                return finish("periodic", period=steps)
            returns += 1
        if steps >= max_steps:
            return finish("truncated", cap=max_steps)

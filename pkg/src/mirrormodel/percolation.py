"""Vacant *-clusters of the Manhattan obstacle field and the confinement check."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .dynamics import TraceOutcome
from .environment import Environment, MirrorState, Vertex

FINITE = "finite"
REACHED_BOUND = "reached_bound"
ORIGIN_BLOCKED = "origin_blocked"

_STAR = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]


@dataclass
class ClusterResult:
    vertices: frozenset[Vertex]
    status: str
    bound: int

    @property
    def finite(self) -> bool:
        return self.status == FINITE


def vacant_star_cluster(env: Environment, bound: int) -> ClusterResult:
    """8-connected component of obstacle-free vertices around the origin, inside [-bound, bound]^2.

    The status is ``finite`` only when no cluster vertex touches the edge of
    the box, so the true (untruncated) cluster is known to be exactly this set.
    """
    if bound < 1:
        raise ValueError("bound must be at least 1")
    if env.mirror((0, 0)) is not MirrorState.EMPTY:
        return ClusterResult(frozenset(), ORIGIN_BLOCKED, bound)
    seen = {(0, 0)}
    queue = deque(seen)
    touched = False
    while queue:
        x, y = queue.popleft()
        if abs(x) == bound or abs(y) == bound:
            touched = True
        for dx, dy in _STAR:
            v = (x + dx, y + dy)
            if v in seen or abs(v[0]) > bound or abs(v[1]) > bound:
                continue
            if env.mirror(v) is MirrorState.EMPTY:
                seen.add(v)
                queue.append(v)
    return ClusterResult(frozenset(seen), REACHED_BOUND if touched else FINITE, bound)


@dataclass
class ConfinementVerdict:
    passed: bool
    applicable: bool
    reason: str
    witnesses: dict = field(default_factory=dict)


def confinement_check(cluster: ClusterResult, n: int, outcome: TraceOutcome) -> ConfinementVerdict:
    """An origin enclosed by obstacles inside Q(n-1) must not let the ray out of Q(n)."""
    if cluster.status == ORIGIN_BLOCKED:
        return ConfinementVerdict(True, False, "origin carries an obstacle; cluster undefined")
    if not cluster.finite:
        return ConfinementVerdict(True, False, "cluster reaches the bounding box; check is vacuous")
    if any(max(abs(x), abs(y)) > n - 1 for x, y in cluster.vertices):
        return ConfinementVerdict(True, False, "cluster is not contained in Q(n-1)")
    if outcome.outcome == "periodic":
        return ConfinementVerdict(True, True, "enclosed and periodic")
    witnesses = {"cluster_size": len(cluster.vertices), "outcome": outcome.to_dict()}
    return ConfinementVerdict(False, True, f"enclosed cluster but trace was {outcome.outcome}", witnesses)

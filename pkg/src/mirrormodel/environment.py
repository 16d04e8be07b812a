"""Lazily evaluated quenched environments for the mirror and Manhattan models.

Every random choice is a pure function of ``(seed, coordinates, stream tag)``
computed with a splitmix64-style hash, so an environment on an unbounded
lattice costs no memory and gives the same answer in any query order.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Stream tags keep the different random fields statistically independent.
TAG_PRESENCE = 0x243F6A8885A308D3
TAG_ORIENTATION = 0x13198A2E03707344
TAG_STREET_H = 0xA4093822299F31D0
TAG_STREET_V = 0x082EFA98EC4E6C89
TAG_TRIAL = 0x452821E638D01377

INV_2_53 = 1.0 / (1 << 53)

Vertex = tuple[int, int]


def fmix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit unsigned integer."""
    z &= MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK64
    z ^= z >> 31
    return z


def _mix(v: int) -> int:
    return fmix64((v + GOLDEN_GAMMA) & MASK64)


def _rotl32(z: int) -> int:
    return ((z << 32) | (z >> 32)) & MASK64


def hash_point(seed: int, x: int, y: int, tag: int) -> int:
    return fmix64((seed & MASK64) ^ _mix(x) ^ _rotl32(_mix(y)) ^ tag)


def uniform(seed: int, x: int, y: int, tag: int) -> float:
    """Uniform variate in [0, 1) from the top 53 bits of the point hash."""
    return (hash_point(seed, x, y, tag) >> 11) * INV_2_53


def trial_seed(master_seed: int, index: int) -> int:
    return hash_point(master_seed, index, 0, TAG_TRIAL)


class ModelKind(str, enum.Enum):
    MIRROR = "mirror"
    MANHATTAN_PERIODIC = "manhattan_periodic"
    MANHATTAN_RANDOM = "manhattan_random"
    ROTATING = "rotating"

    @property
    def is_manhattan(self) -> bool:
        return self in (ModelKind.MANHATTAN_PERIODIC, ModelKind.MANHATTAN_RANDOM)


class MirrorState(enum.IntEnum):
    EMPTY = 0
    NE = 1
    NW = 2
    OBSTACLE = 3

    def flipped(self) -> "MirrorState":
        if self is MirrorState.NE:
            return MirrorState.NW
        if self is MirrorState.NW:
            return MirrorState.NE
        return self


class Axis(str, enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class Topology:
    """Plane (``circumference is None``) or cylinder Z x S_C with odd C."""

    circumference: int | None = None

    def __post_init__(self):
        c = self.circumference
        if c is not None and (c < 1 or c % 2 == 0):
            raise ValueError(f"cylinder circumference must be a positive odd integer, got {c}")

    @classmethod
    def plane(cls) -> "Topology":
        return cls(None)

    @classmethod
    def cylinder(cls, circumference: int) -> "Topology":
        return cls(circumference)

    @property
    def is_cylinder(self) -> bool:
        return self.circumference is not None

    @property
    def kind(self) -> str:
        return "cylinder" if self.is_cylinder else "plane"

    def to_dict(self) -> dict:
        if self.is_cylinder:
            return {"kind": "cylinder", "circumference": self.circumference}
        return {"kind": "plane"}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        if d["kind"] == "plane":
            return cls.plane()
        if d["kind"] == "cylinder":
            return cls.cylinder(int(d["circumference"]))
        raise ValueError(f"unknown topology kind {d['kind']!r}")

    def __str__(self):
        return f"cylinder{self.circumference}" if self.is_cylinder else "plane"


def canonicalize(topology: Topology, v: Vertex) -> Vertex:
    if topology.circumference is None:
        return v
    return (v[0], v[1] % topology.circumference)


def lattice_key(topology: Topology, y: int) -> int:
    """Plane coordinate used to hash row ``y``.

    Cylinder rows are hashed at their centred representative in
    [-(C // 2), C // 2], so the cylinder sees exactly the plane environment
    inside the strip |y| <= C // 2.
    """
    c = topology.circumference
    if c is None:
        return y
    y %= c
    return y - c if y > c // 2 else y


@dataclass(frozen=True)
class EnvironmentSpec:
    model: ModelKind = ModelKind.MIRROR
    p: float = 0.5
    q: float = 0.5
    seed: int = 0
    topology: Topology = field(default_factory=Topology.plane)

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model))
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"density p must lie in [0, 1], got {self.p}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"orientation bias q must lie in [0, 1], got {self.q}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> "EnvironmentSpec":
        return EnvironmentSpec(self.model, self.p, self.q, seed, self.topology)

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "p": self.p,
            "q": self.q,
            "seed": self.seed,
            "topology": self.topology.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentSpec":
        return cls(
            model=ModelKind(d["model"]),
            p=float(d["p"]),
            q=float(d.get("q", 0.5)),
            seed=int(d["seed"]),
            topology=Topology.from_dict(d["topology"]),
        )


def mirror_at(spec: EnvironmentSpec, v: Vertex) -> MirrorState:
    """State of the scatterer at canonical vertex ``v``.

    Manhattan models only know EMPTY/OBSTACLE; ``q`` is ignored for them.
    """
    x, y = v
    ky = lattice_key(spec.topology, y)
    if uniform(spec.seed, x, ky, TAG_PRESENCE) >= spec.p:
        return MirrorState.EMPTY
    if spec.model.is_manhattan:
        return MirrorState.OBSTACLE
    if uniform(spec.seed, x, ky, TAG_ORIENTATION) < spec.q:
        return MirrorState.NE
    return MirrorState.NW


def street_orientation(spec: EnvironmentSpec, line_index: int, axis: Axis | str) -> int:
    """Direction sign of a one-way lane: +1 is East/North, -1 is West/South.

    Horizontal lanes are indexed by their y coordinate, vertical lanes by x.
    """
    axis = Axis(axis)
    if spec.model is ModelKind.MANHATTAN_PERIODIC:
        return 1 if line_index % 2 == 0 else -1
    if spec.model is ModelKind.MANHATTAN_RANDOM:
        if axis is Axis.HORIZONTAL:
            key = lattice_key(spec.topology, line_index)
            u = uniform(spec.seed, key, 0, TAG_STREET_H)
        else:
            u = uniform(spec.seed, line_index, 0, TAG_STREET_V)
        return 1 if u < 0.5 else -1
    raise ValueError(f"street orientations are undefined for model {spec.model.value!r}")


class Environment:
    """A realized environment: lazily hashed from ``spec`` unless overridden.

    ``overrides`` and ``street_overrides`` pin individual vertices or lanes,
    which is how hand-built test configurations and the exact enumerator
    inject states. ``default`` (if given) replaces the hashed field entirely
    for vertices absent from ``overrides``.
    """

    def __init__(
        self,
        spec: EnvironmentSpec,
        overrides: dict[Vertex, MirrorState] | None = None,
        street_overrides: dict[tuple[Axis, int], int] | None = None,
        default: MirrorState | None = None,
    ):
        self.spec = spec
        self.overrides = dict(overrides or {})
        self.street_overrides = dict(street_overrides or {})
        self.default = default

    @property
    def topology(self) -> Topology:
        return self.spec.topology

    @property
    def model(self) -> ModelKind:
        return self.spec.model

    def mirror(self, v: Vertex) -> MirrorState:
        m = self.overrides.get(v)
        if m is not None:
            return m
        if self.default is not None:
            return self.default
        return mirror_at(self.spec, v)

    def street(self, axis: Axis, index: int) -> int:
        if self.topology.is_cylinder and axis is Axis.HORIZONTAL:
            index %= self.topology.circumference
        s = self.street_overrides.get((axis, index))
        if s is not None:
            return s
        return street_orientation(self.spec, index, axis)


@dataclass
class RotatingOverlay:
    """Flip parities layered over a base environment (rotating mirrors)."""

    base: Environment
    flips: set[Vertex] = field(default_factory=set)

    def parity(self, v: Vertex) -> int:
        return 1 if v in self.flips else 0


def effective_mirror(overlay: RotatingOverlay, v: Vertex) -> MirrorState:
    m = overlay.base.mirror(v)
    return m.flipped() if v in overlay.flips else m


def record_flip(overlay: RotatingOverlay, v: Vertex) -> RotatingOverlay:
    if overlay.base.mirror(v) not in (MirrorState.NE, MirrorState.NW):
        raise ValueError(f"cannot flip vertex {v}: no mirror there")
    overlay.flips ^= {v}
    return overlay

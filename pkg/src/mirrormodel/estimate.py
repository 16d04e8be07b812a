"""Escape-probability estimation, exact small-box enumeration and the cylinder parity check."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from . import _kernels as K
from .environment import EnvironmentSpec, ModelKind, Topology
from .models import validate_model_topology

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.001
DEFAULT_ROTATING_CAP = 10_000_000
CHUNK = 1 << 14
MAX_EXACT_N = 4

CSV_COLUMNS = [
    "model", "p", "q", "topology", "n", "L", "trials", "escapes",
    "p_hat", "cp_lower", "cp_upper", "bound", "verdict",
]

_MODEL_CODES = {
    ModelKind.MIRROR: K.MIRROR,
    ModelKind.MANHATTAN_PERIODIC: K.MANHATTAN_PERIODIC,
    ModelKind.MANHATTAN_RANDOM: K.MANHATTAN_RANDOM,
    ModelKind.ROTATING: K.ROTATING,
}


class InternalConsistencyError(RuntimeError):
    """A non-rotating orbit outlived the size of its finite state space."""


def theorem_bound(n: int) -> Fraction:
    if n < 0:
        raise ValueError("n must be nonnegative")
    return Fraction(1, 2 * n + 1)


# --- Clopper-Pearson -------------------------------------------------------

def _log_cdf(x: int, trials: int, theta: float) -> float:
    """log P[Bin(trials, theta) <= x], summed in log space over the non-negligible window."""
    mode = trials * theta
    width = int(40.0 * math.sqrt(trials * theta * (1.0 - theta)) + 50)
    lo = max(0, min(x, int(mode)) - width)
    k = np.arange(lo, x + 1, dtype=np.float64)
    return _logsumexp_terms(k, trials, theta)


def _log_sf(x: int, trials: int, theta: float) -> float:
    """log P[Bin(trials, theta) >= x]."""
    mode = trials * theta
    width = int(40.0 * math.sqrt(trials * theta * (1.0 - theta)) + 50)
    hi = min(trials, max(x, int(mode) + 1) + width)
    k = np.arange(x, hi + 1, dtype=np.float64)
    return _logsumexp_terms(k, trials, theta)


def _logsumexp_terms(k: np.ndarray, trials: int, theta: float) -> float:
    terms = (
        gammaln(trials + 1.0) - gammaln(k + 1.0) - gammaln(trials - k + 1.0)
        + k * math.log(theta) + (trials - k) * math.log1p(-theta)
    )
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


def clopper_pearson(successes: int, trials: int, alpha: float = DEFAULT_ALPHA, side: str = "upper") -> float:
    """One-sided exact binomial confidence bound at level 1 - alpha.

    The upper bound solves P[Bin(T, u) <= x] = alpha and the lower bound
    solves P[Bin(T, l) >= x] = alpha, both by bisection on the tail
    probability to a relative tolerance of 1e-10.
    """
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials and trials >= 1, got {successes}/{trials}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")

    x, t = successes, trials
    log_alpha = math.log(alpha)
    if side == "upper":
        if x == t:
            return 1.0
        lo, hi = x / t, 1.0
        # tail decreases in theta: above the root it is below alpha
        below = lambda th: _log_cdf(x, t, th) < log_alpha  # noqa: E731
    else:
        if x == 0:
            return 0.0
        lo, hi = 0.0, x / t
        below = lambda th: _log_sf(x, t, th) >= log_alpha  # noqa: E731

    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if below(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-10 * hi * 1e-2:
            break
    return 0.5 * (lo + hi)


# --- Monte Carlo -----------------------------------------------------------

@dataclass
class Estimate:
    spec: EnvironmentSpec
    n: int
    trials: int
    escapes: int
    cp_lower: float
    cp_upper: float
    alpha: float = DEFAULT_ALPHA
    L: int | None = None
    master_seed: int = 0
    truncated: int = 0
    mean_steps: float = 0.0

    @property
    def p_hat(self) -> float:
        return self.escapes / self.trials

    @property
    def bound(self) -> Fraction:
        return theorem_bound(self.n)

    @property
    def verdict(self) -> str:
        return check_bound(self)

    def row(self) -> dict:
        spec = self.spec
        return {
            "model": spec.model.value,
            "p": repr(spec.p),
            "q": repr(spec.q),
            "topology": str(spec.topology),
            "n": str(self.n),
            "L": "" if self.L is None else str(self.L),
            "trials": str(self.trials),
            "escapes": str(self.escapes),
            "p_hat": repr(self.p_hat),
            "cp_lower": repr(self.cp_lower),
            "cp_upper": repr(self.cp_upper),
            "bound": repr(float(self.bound)),
            "verdict": self.verdict,
        }

    def to_dict(self) -> dict:
        d = {
            "model": self.spec.model.value,
            "p": self.spec.p,
            "q": self.spec.q,
            "topology": self.spec.topology.to_dict(),
            "n": self.n,
            "L": self.L,
            "trials": self.trials,
            "escapes": self.escapes,
            "p_hat": self.p_hat,
            "cp_lower": self.cp_lower,
            "cp_upper": self.cp_upper,
            "bound": float(self.bound),
            "bound_exact": str(self.bound),
            "verdict": self.verdict,
            "alpha": self.alpha,
            "master_seed": self.master_seed,
            "truncated": self.truncated,
            "mean_steps": self.mean_steps,
        }
        return d


def check_bound(est: Estimate) -> str:
    """'violation' iff the data refute P >= 1/(2n+1) at confidence 1 - alpha."""
    return "violation" if Fraction(est.cp_upper) < est.bound else "pass"


def max_jobs() -> int:
    return os.cpu_count() or 1


def _chunks(total: int, size: int = CHUNK):
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def count_escapes(
    spec: EnvironmentSpec,
    n: int,
    trials: int,
    master_seed: int,
    *,
    heading: int = 1,
    L: int | None = None,
    max_steps: int | None = None,
    jobs: int = 1,
) -> tuple[int, int, int]:
    """(escapes, truncated, total_steps) over trials 0..trials-1.

    Trials are split into fixed-size chunks independent of ``jobs`` and
    reduced by integer addition, so the result does not depend on scheduling.
    """
    validate_model_topology(spec.model, spec.topology)
    code = _MODEL_CODES[spec.model]
    circ = spec.topology.circumference or 0
    radius = (n if L is None else L) if circ else n
    if spec.model is ModelKind.ROTATING:
        cap = DEFAULT_ROTATING_CAP if max_steps is None else max_steps
    else:
        states = 4 * (2 * radius + 1) * (circ if circ else 2 * radius + 1)
        cap = states + 1 if max_steps is None else max_steps

    def work(chunk):
        a, b = chunk
        return K.escape_count_kernel(code, spec.p, spec.q, master_seed, circ, radius, heading, a, b, cap)

    chunks = _chunks(trials)
    if jobs <= 1 or len(chunks) == 1:
        results = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, chunks))
    escapes = sum(int(r[0]) for r in results)
    truncated = sum(int(r[1]) for r in results)
    steps = sum(int(r[2]) for r in results)
    if truncated and spec.model is not ModelKind.ROTATING and max_steps is None:
        raise InternalConsistencyError(
            f"{truncated} orbits exceeded the {cap}-step state-space bound; the dynamics are not injective"
        )
    return escapes, truncated, steps


def escape_probability(
    spec: EnvironmentSpec,
    n: int,
    trials: int,
    master_seed: int,
    *,
    alpha: float = DEFAULT_ALPHA,
    heading: int = 1,
    L: int | None = None,
    max_steps: int | None = None,
    jobs: int = 1,
) -> Estimate:
    """Monte Carlo estimate of P(ray from the origin leaves Q(n)).

    Each trial draws a fresh environment seeded from ``master_seed`` and the
    trial index, so ``spec.seed`` is ignored. On a cylinder the escape
    region is the strip |x| <= L (default ``n``).
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if n < 0:
        raise ValueError("n must be nonnegative")
    escapes, truncated, steps = count_escapes(
        spec, n, trials, master_seed, heading=heading, L=L, max_steps=max_steps, jobs=jobs
    )
    if spec.topology.is_cylinder and L is None:
        L = n
    return Estimate(
        spec=spec,
        n=n,
        trials=trials,
        escapes=escapes,
        cp_lower=clopper_pearson(escapes, trials, alpha, "lower"),
        cp_upper=clopper_pearson(escapes, trials, alpha, "upper"),
        alpha=alpha,
        L=L if spec.topology.is_cylinder else None,
        master_seed=master_seed,
        truncated=truncated,
        mean_steps=steps / trials,
    )


@dataclass
class SweepRow:
    estimate: Estimate | None
    model: str
    p: float
    q: float
    topology: Topology
    n: int
    error: str | None = None

    def row(self) -> dict:
        if self.estimate is not None:
            return self.estimate.row()
        blank = dict.fromkeys(CSV_COLUMNS, "")
        blank.update(model=self.model, p=repr(self.p), q=repr(self.q),
                     topology=str(self.topology), n=str(self.n), verdict="rejected")
        return blank

    @property
    def verdict(self) -> str:
        return self.row()["verdict"]


def sweep(
    grid,
    trials: int,
    master_seed: int,
    *,
    q: float = 0.5,
    topology: Topology | None = None,
    alpha: float = DEFAULT_ALPHA,
    jobs: int = 1,
    max_steps: int | None = None,
) -> list[SweepRow]:
    """One estimate per ``(model, p, n)`` cell; invalid cells are recorded, not raised."""
    topology = topology or Topology.plane()
    rows = []
    for model, p, n in grid:
        try:
            spec = EnvironmentSpec(ModelKind(model), float(p), q, 0, topology)
            validate_model_topology(spec.model, topology)
            est = escape_probability(spec, int(n), trials, master_seed,
                                     alpha=alpha, jobs=jobs, max_steps=max_steps)
            rows.append(SweepRow(est, spec.model.value, spec.p, q, topology, int(n)))
        except ValueError as exc:
            log.warning("cell (%s, %s, %s) rejected: %s", model, p, n, exc)
            rows.append(SweepRow(None, str(model), float(p), q, topology, int(n), error=str(exc)))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r.row())
    return buf.getvalue()


# --- cylinder parity -------------------------------------------------------

@dataclass
class ParityReport:
    circumference: int
    L: int
    outcomes: list[dict] = field(default_factory=list)

    @property
    def escaped_count(self) -> int:
        return sum(o["outcome"] == "escaped" for o in self.outcomes)

    @property
    def periodic_crossing_parities(self) -> list[int]:
        return [o["column0_crossings"] for o in self.outcomes if o["outcome"] == "periodic"]

    @property
    def truncated_count(self) -> int:
        return sum(o["outcome"] == "truncated" for o in self.outcomes)

    @property
    def ok(self) -> bool:
        return (
            self.escaped_count >= 1
            and self.truncated_count == 0
            and all(c % 2 == 0 for c in self.periodic_crossing_parities)
        )

    def to_dict(self) -> dict:
        return {
            "circumference": self.circumference,
            "L": self.L,
            "escaped_count": self.escaped_count,
            "periodic_crossing_parities": self.periodic_crossing_parities,
            "ok": self.ok,
            "outcomes": self.outcomes,
        }


_OUTCOME_NAMES = {K.ESCAPED: "escaped", K.PERIODIC: "periodic", K.TRUNCATED: "truncated"}
_HEADING_NAMES = "NESW"


def cylinder_parity_check(spec: EnvironmentSpec, L: int = 200, cap: int | None = None) -> ParityReport:
    """Trace every start on the column-0 edges of an odd cylinder.

    Each start traverses the edge {(0, y), (1, y)}: eastward from (0, y), or
    westward from (1, y) when a Manhattan lane runs west.
    """
    topo = spec.topology
    if not topo.is_cylinder:
        raise ValueError("cylinder_parity_check needs a cylinder topology")
    if spec.model not in (ModelKind.MIRROR, ModelKind.MANHATTAN_RANDOM):
        raise ValueError(f"cylinder_parity_check supports mirror and manhattan_random, not {spec.model.value}")
    if L < 1:
        raise ValueError("L must be at least 1")
    c = topo.circumference
    code = _MODEL_CODES[spec.model]
    if cap is None:
        cap = 4 * (2 * L + 1) * c + 1
    dummy = np.zeros((1, 1), dtype=np.uint8)
    seed = np.uint64(spec.seed)
    report = ParityReport(c, L)
    for y in range(c):
        if spec.model is ModelKind.MANHATTAN_RANDOM and K.lane_heading(code, seed, True, 0, y, c) == 3:
            sx, sd = 1, 3
        else:
            sx, sd = 0, 1
        out, steps, ex, ey, ed, crossings, _ = K.trace_kernel(
            code, spec.p, spec.q, seed, c, sx, y, sd, True, L, cap, dummy, 0, 0
        )
        rec = {"start": [sx, y, _HEADING_NAMES[sd]], "outcome": _OUTCOME_NAMES[out],
               "steps": int(steps), "column0_crossings": int(crossings)}
        if out == K.ESCAPED:
            rec["exit"] = {"x": int(ex), "y": int(ey), "heading": _HEADING_NAMES[ed]}
        report.outcomes.append(rec)
    return report


# --- exact enumeration -----------------------------------------------------

@dataclass
class ExactResult:
    model: ModelKind
    n: int
    p: Fraction
    q: Fraction
    probability: Fraction
    configurations_explored: int
    total_weight: Fraction

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "n": self.n,
            "p": str(self.p),
            "q": str(self.q),
            "probability": str(self.probability),
            "probability_float": float(self.probability),
            "bound": str(theorem_bound(self.n)),
            "meets_bound": self.probability >= theorem_bound(self.n),
            "configurations_explored": self.configurations_explored,
        }


_DX = (0, 1, 0, -1)
_DY = (1, 0, -1, 0)


@lru_cache(maxsize=None)
def _enumerate_leaves(model: ModelKind, n: int, heading: int, allowed: tuple[bool, bool, bool]):
    """Counters of escaping and of all leaves, keyed by branch-weight exponents.

    A key ``(a, b, c, d)`` stands for the weight w0^a w1^b w2^c (1/2)^d, with
    (w0, w1, w2) the probabilities of empty / NE-or-obstacle / NW cells and
    ``d`` the number of fair lane-orientation coins consumed.
    """
    manhattan = model.is_manhattan
    coin_lanes = model is ModelKind.MANHATTAN_RANDOM
    cells: dict = {}
    lanes: dict = {}
    escaped: Counter = Counter()
    leaves: Counter = Counter()
    expo = [0, 0, 0, 0]
    options = [k for k in ((0, 1, 2) if not manhattan else (0, 1)) if allowed[k]]

    def lane(horizontal: bool, index: int):
        key = (horizontal, index)
        if key in lanes:
            return lanes[key]
        if not coin_lanes:
            return 1 if index % 2 == 0 else -1
        return None

    def heading_on(horizontal: bool, sign: int) -> int:
        if horizontal:
            return 1 if sign > 0 else 3
        return 0 if sign > 0 else 2

    def run(x: int, y: int, d: int, start: tuple) -> None:
        while True:
            ux, uy = x + _DX[d], y + _DY[d]
            if abs(ux) > n or abs(uy) > n:
                escaped[tuple(expo)] += 1
                leaves[tuple(expo)] += 1
                return
            m = cells.get((ux, uy))
            if m is None:
                for k in options:
                    cells[(ux, uy)] = k
                    expo[k] += 1
                    run(x, y, d, start)
                    expo[k] -= 1
                del cells[(ux, uy)]
                return
            if manhattan:
                if m == 1:
                    horizontal = d in (1, 3)
                    idx = uy if not horizontal else ux
                    # crossing lane: vertical when arriving horizontally
                    sign = lane(not horizontal, idx)
                    if sign is None:
                        for s in (1, -1):
                            lanes[(not horizontal, idx)] = s
                            expo[3] += 1
                            run(x, y, d, start)
                            expo[3] -= 1
                        del lanes[(not horizontal, idx)]
                        return
                    d = heading_on(not horizontal, sign)
            elif m == 1:
                d ^= 1
            elif m == 2:
                d = 3 - d
            x, y = ux, uy
            if (x, y, d) == start:
                leaves[tuple(expo)] += 1
                return

    if manhattan:
        sign = lane(True, 0)
        if sign is None:
            for s in (1, -1):
                lanes[(True, 0)] = s
                expo[3] += 1
                d0 = heading_on(True, s)
                run(0, 0, d0, (0, 0, d0))
                expo[3] -= 1
            del lanes[(True, 0)]
        else:
            d0 = heading_on(True, sign)
            run(0, 0, d0, (0, 0, d0))
    else:
        run(0, 0, heading, (0, 0, heading))
    return dict(escaped), dict(leaves)


def _weigh(counter: dict, w: tuple[Fraction, Fraction, Fraction]) -> Fraction:
    total = Fraction(0)
    half = Fraction(1, 2)
    for (a, b, c, d), count in counter.items():
        total += count * w[0] ** a * w[1] ** b * w[2] ** c * half ** d
    return total


def exact_escape_probability(
    model: ModelKind | str,
    n: int,
    p,
    q=Fraction(1, 2),
    heading: int = 1,
) -> ExactResult:
    """Exact P(escape from Q(n)) on the plane by branching on cells as the ray first meets them.

    ``p`` and ``q`` are converted with ``Fraction`` (strings like "1/3" work);
    the result is exact for rational inputs. Cells are only branched when
    the ray arrives inside Q(n): the cell it escapes onto never matters.
    """
    model = ModelKind(model)
    if model is ModelKind.ROTATING:
        raise ValueError("exact enumeration is only defined for non-rotating models")
    if not 0 <= n <= MAX_EXACT_N:
        raise ValueError(f"exact enumeration is limited to 0 <= n <= {MAX_EXACT_N}, got n={n}")
    p, q = Fraction(p), Fraction(q)
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise ValueError("p and q must lie in [0, 1]")
    if model.is_manhattan:
        w = (1 - p, p, Fraction(0))
    else:
        w = (1 - p, p * q, p * (1 - q))
    allowed = tuple(x != 0 for x in w)
    esc, leaves = _enumerate_leaves(model, n, heading if not model.is_manhattan else 1, allowed)
    return ExactResult(
        model=model,
        n=n,
        p=p,
        q=q,
        probability=_weigh(esc, w),
        configurations_explored=sum(leaves.values()),
        total_weight=_weigh(leaves, w),
    )

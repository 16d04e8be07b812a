import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import beta

from mirrormodel.dynamics import Region, trace
from mirrormodel.environment import Axis, Environment, EnvironmentSpec, MirrorState, ModelKind, Topology
from mirrormodel.estimate import (
    CSV_COLUMNS,
    Estimate,
    MAX_EXACT_N,
    check_bound,
    clopper_pearson,
    cylinder_parity_check,
    escape_probability,
    exact_escape_probability,
    max_jobs,
    rows_to_csv,
    sweep,
    theorem_bound,
)
from mirrormodel.models import Direction, RayState, initial_state

ALPHA = 0.001


def test_theorem_bound():
    assert theorem_bound(0) == 1
    assert theorem_bound(1) == Fraction(1, 3)
    assert theorem_bound(10) == Fraction(1, 21)
    with pytest.raises(ValueError):
        theorem_bound(-1)


# --- Clopper-Pearson -------------------------------------------------------

def test_clopper_pearson_boundaries():
    assert clopper_pearson(10, 10, ALPHA, "upper") == 1.0
    assert clopper_pearson(0, 10, ALPHA, "lower") == 0.0


@pytest.mark.parametrize("trials", [1, 100, 10**4, 10**6])
def test_clopper_pearson_zero_successes_closed_form(trials):
    expected = 1 - ALPHA ** (1 / trials)
    assert clopper_pearson(0, trials, ALPHA, "upper") == pytest.approx(expected, rel=1e-9)
    assert clopper_pearson(0, 100, ALPHA, "upper") == pytest.approx(0.0667, abs=5e-5)


@pytest.mark.parametrize("trials", [1, 50, 10**5])
def test_clopper_pearson_all_successes_closed_form(trials):
    assert clopper_pearson(trials, trials, ALPHA, "lower") == pytest.approx(ALPHA ** (1 / trials), rel=1e-9)


def test_clopper_pearson_against_beta_quantiles():
    rng = random.Random(4)
    cases = [(rng.randint(1, t - 1), t) for t in (10, 1000, 10**5, 10**6) for _ in range(10)]
    for alpha in (0.001, 0.05):
        for x, t in cases:
            assert clopper_pearson(x, t, alpha, "upper") == pytest.approx(beta.ppf(1 - alpha, x + 1, t - x), rel=1e-8)
            assert clopper_pearson(x, t, alpha, "lower") == pytest.approx(beta.ppf(alpha, x, t - x + 1), rel=1e-8)


@pytest.mark.parametrize("args", [(-1, 10, ALPHA, "upper"), (11, 10, ALPHA, "upper"), (1, 0, ALPHA, "upper"),
                                  (1, 10, 0.0, "upper"), (1, 10, 1.0, "lower"), (1, 10, ALPHA, "both")])
def test_clopper_pearson_rejects_bad_parameters(args):
    with pytest.raises(ValueError):
        clopper_pearson(*args)


# --- Monte Carlo -----------------------------------------------------------

@pytest.mark.parametrize("n", [0, 1, 7])
def test_free_flight_always_escapes(n):
    est = escape_probability(EnvironmentSpec(p=0.0), n, 10**4, 1)
    assert est.escapes == 10**4 and est.p_hat == 1.0
    assert est.verdict == "pass"


@pytest.mark.parametrize("model", ["mirror", "manhattan_periodic", "manhattan_random", "rotating"])
@pytest.mark.parametrize("p", [0.3, 1.0])
def test_box_of_radius_zero_is_always_left(model, p):
    est = escape_probability(EnvironmentSpec(ModelKind(model), p), 0, 10**4, 2)
    assert est.p_hat == 1.0 == theorem_bound(0)


def test_estimate_invariants():
    est = escape_probability(EnvironmentSpec(p=1.0), 3, 20_000, 5)
    assert 0 <= est.cp_lower <= est.p_hat <= est.cp_upper <= 1
    assert est.truncated == 0
    assert set(est.row()) == set(CSV_COLUMNS)


def test_monte_carlo_matches_exact_value():
    exact = exact_escape_probability("mirror", 1, 1, Fraction(1, 2)).probability
    assert exact == Fraction(55, 64)
    est = escape_probability(EnvironmentSpec(p=1.0, q=0.5), 1, 10**6, 2718)
    assert est.cp_lower <= exact <= est.cp_upper


@pytest.mark.parametrize("model", ["mirror", "manhattan_random", "rotating"])
def test_results_do_not_depend_on_worker_count(model):
    spec = EnvironmentSpec(ModelKind(model), 0.6, 0.5)
    counts = {jobs: escape_probability(spec, 4, 70_000, 31, jobs=jobs).escapes for jobs in (1, 4, max_jobs())}
    assert len(set(counts.values())) == 1


def test_cylinder_estimate_uses_strip():
    spec = EnvironmentSpec(p=0.5, topology=Topology.cylinder(5))
    est = escape_probability(spec, 2, 20_000, 3)
    assert est.L == 2
    assert est.verdict == "pass"


def test_invalid_model_topology_rejected_before_work():
    spec = EnvironmentSpec(ModelKind.MANHATTAN_PERIODIC, 0.5, topology=Topology.cylinder(5))
    with pytest.raises(ValueError):
        escape_probability(spec, 2, 10, 0)


def test_check_bound():
    spec = EnvironmentSpec(p=1.0)
    assert check_bound(Estimate(spec, 4, 100, 100, 0.9, 1.0)) == "pass"
    cp_upper = clopper_pearson(0, 10**6, ALPHA, "upper")
    assert cp_upper == pytest.approx(1 - ALPHA ** 1e-6, rel=1e-9)
    assert check_bound(Estimate(spec, 1, 10**6, 0, 0.0, cp_upper)) == "violation"
    assert check_bound(Estimate(spec, 1, 1000, 300, 0.2, 0.34)) == "pass"
    assert check_bound(Estimate(spec, 1, 1000, 300, 0.2, 0.33)) == "violation"


# --- cylinder parity -------------------------------------------------------

@pytest.mark.parametrize("c", [1, 3, 7])
def test_parity_free_flight_all_escape(c):
    rep = cylinder_parity_check(EnvironmentSpec(p=0.0, topology=Topology.cylinder(c)), 50)
    assert rep.escaped_count == c
    assert rep.ok


@pytest.mark.parametrize("model", ["mirror", "manhattan_random"])
def test_parity_randomised(model):
    rng = random.Random(11)
    periodic = 0
    for _ in range(1500):
        n = rng.choice([1, 2, 3, 5, 10])
        spec = EnvironmentSpec(ModelKind(model), rng.choice([0.2, 0.5, 0.8, 1.0]), 0.5, rng.getrandbits(64),
                               Topology.cylinder(2 * n + 1))
        rep = cylinder_parity_check(spec, rng.choice([1, 10, 200]))
        assert rep.escaped_count >= 1
        assert all(c % 2 == 0 for c in rep.periodic_crossing_parities)
        periodic += len(rep.periodic_crossing_parities)
    assert periodic > 1000


def test_parity_outcomes_match_reference_tracer():
    rng = random.Random(5)
    for _ in range(100):
        spec = EnvironmentSpec(ModelKind.MIRROR, 0.7, 0.5, rng.getrandbits(64), Topology.cylinder(5))
        rep = cylinder_parity_check(spec, 20)
        env = Environment(spec)
        for y, rec in enumerate(rep.outcomes):
            ref = trace(env, RayState((0, y), Direction.E), Region.strip(20), 4 * 41 * 5 + 1)
            assert rec["outcome"] == ref.outcome
            assert rec["column0_crossings"] == ref.column0_crossings


def test_parity_check_rejections():
    with pytest.raises(ValueError):
        cylinder_parity_check(EnvironmentSpec(p=0.5), 10)
    with pytest.raises(ValueError):
        cylinder_parity_check(EnvironmentSpec(ModelKind.ROTATING, 1.0, topology=Topology.cylinder(3)), 10)
    with pytest.raises(ValueError):
        cylinder_parity_check(EnvironmentSpec(p=0.5, topology=Topology.cylinder(3)), 0)
    with pytest.raises(ValueError):
        EnvironmentSpec(p=0.5, topology=Topology.cylinder(4))


# --- exact enumeration -----------------------------------------------------

def brute_force_mirror(n, p, q, heading=Direction.E):
    """Sum over every assignment of Q(n) with the reference tracer."""
    box = [(x, y) for x in range(-n, n + 1) for y in range(-n, n + 1)]
    states = [(MirrorState.EMPTY, 1 - p), (MirrorState.NE, p * q), (MirrorState.NW, p * (1 - q))]
    states = [s for s in states if s[1] != 0]
    spec = EnvironmentSpec(ModelKind.MIRROR, 0.5)
    total = Fraction(0)
    region = Region.box(n)
    for combo in itertools.product(states, repeat=len(box)):
        weight = Fraction(1)
        for _, w in combo:
            weight *= w
        env = Environment(spec, dict(zip(box, (m for m, _ in combo))), default=MirrorState.EMPTY)
        if trace(env, RayState((0, 0), heading), region, 4 * len(box) + 1).escaped:
            total += weight
    return total


def brute_force_manhattan(kind, n, p):
    box = [(x, y) for x in range(-n, n + 1) for y in range(-n, n + 1)]
    lanes = [(Axis.HORIZONTAL, i) for i in range(-n, n + 1)] + [(Axis.VERTICAL, i) for i in range(-n, n + 1)]
    lane_choices = [(1, -1)] * len(lanes) if kind is ModelKind.MANHATTAN_RANDOM else [None]
    spec = EnvironmentSpec(kind, 0.5)
    total = Fraction(0)
    for cells in itertools.product([(MirrorState.EMPTY, 1 - p), (MirrorState.OBSTACLE, p)], repeat=len(box)):
        weight = Fraction(1)
        for _, w in cells:
            weight *= w
        if weight == 0:
            continue
        for signs in (itertools.product(*lane_choices) if lane_choices != [None] else [None]):
            streets = dict(zip(lanes, signs)) if signs else {}
            w = weight * (Fraction(1, 2) ** len(lanes) if signs else 1)
            env = Environment(spec, dict(zip(box, (m for m, _ in cells))), streets, default=MirrorState.EMPTY)
            if trace(env, initial_state(env), Region.box(n), 4 * len(box) + 1).escaped:
                total += w
    return total


@pytest.mark.parametrize("p", [Fraction(0), Fraction(1, 3), Fraction(1)])
def test_exact_n0_is_one(p):
    res = exact_escape_probability("mirror", 0, p)
    assert res.probability == 1


def test_exact_p0_single_branch():
    res = exact_escape_probability("mirror", 3, 0)
    assert res.probability == 1
    assert res.configurations_explored == 1


@pytest.mark.parametrize("p,q", [(Fraction(1), Fraction(1, 2)), (Fraction(1, 2), Fraction(1, 2)),
                                 (Fraction(3, 4), Fraction(1, 4)), (Fraction(1), Fraction(1))])
def test_exact_n1_matches_full_enumeration(p, q):
    res = exact_escape_probability("mirror", 1, p, q)
    assert res.total_weight == 1
    assert res.probability == brute_force_mirror(1, p, q)


def test_exact_n1_matches_full_enumeration_other_heading():
    p, q = Fraction(2, 3), Fraction(1, 3)
    assert exact_escape_probability("mirror", 1, p, q, heading=Direction.N).probability == \
        brute_force_mirror(1, p, q, Direction.N)


@pytest.mark.parametrize("kind", [ModelKind.MANHATTAN_PERIODIC, ModelKind.MANHATTAN_RANDOM])
@pytest.mark.parametrize("p", [Fraction(1, 2), Fraction(1)])
def test_exact_manhattan_n1_matches_full_enumeration(kind, p):
    res = exact_escape_probability(kind, 1, p)
    assert res.total_weight == 1
    assert res.probability == brute_force_manhattan(kind, 1, p)


def test_exact_guards():
    with pytest.raises(ValueError, match="limited"):
        exact_escape_probability("mirror", MAX_EXACT_N + 1, Fraction(1, 2))
    with pytest.raises(ValueError):
        exact_escape_probability("rotating", 1, 1)
    with pytest.raises(ValueError):
        exact_escape_probability("mirror", 1, Fraction(3, 2))


def test_exact_accepts_strings():
    assert exact_escape_probability("mirror", 1, "1", "1/2").probability == Fraction(55, 64)


@pytest.mark.parametrize("p", [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)])
def test_exact_direction_symmetry_n1(p):
    values = {exact_escape_probability("mirror", 1, p, Fraction(1, 2), heading=d).probability for d in Direction}
    assert len(values) == 1


def test_exact_direction_symmetry_n2_full_density():
    values = {exact_escape_probability("mirror", 2, 1, Fraction(1, 2), heading=d).probability for d in Direction}
    assert len(values) == 1


def test_exact_values_inside_monte_carlo_intervals():
    """Calibration: the exact value should sit inside the CI for >= 95% of master seeds."""
    cells = [(p, q, n) for p in (0.25, 0.5, 0.75, 1.0) for q in (0.25, 0.5) for n in (0, 1, 2)]
    for p, q, n in cells:
        exact = exact_escape_probability("mirror", n, Fraction(p), Fraction(q)).probability
        assert exact >= theorem_bound(n)
        hits = 0
        for seed in range(20):
            est = escape_probability(EnvironmentSpec(p=p, q=q), n, 10**5, 1000 + seed)
            assert est.cp_lower <= est.p_hat <= est.cp_upper
            hits += est.cp_lower <= exact <= est.cp_upper
        assert hits >= 19, (p, q, n, hits)


# --- sweep -----------------------------------------------------------------

def test_sweep_free_flight_rows():
    rows = sweep([("mirror", 0.0, n) for n in (1, 2, 3)], 1000, 9)
    assert [r.estimate.p_hat for r in rows] == [1.0, 1.0, 1.0]
    assert all(r.verdict == "pass" for r in rows)


def test_sweep_records_rejections():
    rows = sweep([("manhattan_periodic", 0.5, 2), ("mirror", 0.5, 2)], 1000, 1, topology=Topology.cylinder(5))
    assert rows[0].estimate is None and rows[0].verdict == "rejected"
    assert "odd" in rows[0].error
    assert rows[1].verdict == "pass"


def test_sweep_csv_layout_is_fixed():
    text = rows_to_csv(sweep([("mirror", 0.5, 1), ("manhattan_random", 0.5, 2)], 500, 4))
    lines = text.splitlines()
    assert lines[0] == "model,p,q,topology,n,L,trials,escapes,p_hat,cp_lower,cp_upper,bound,verdict"
    assert len(lines) == 3
    assert lines[1].startswith("mirror,0.5,0.5,plane,1,,500,")
    assert text == rows_to_csv(sweep([("mirror", 0.5, 1), ("manhattan_random", 0.5, 2)], 500, 4))


def test_periodic_manhattan_decays_above_site_threshold():
    ns = (2, 4, 6, 8, 10, 14)
    rows = sweep([("manhattan_periodic", 0.65, n) for n in ns], 50_000, 77)
    p_hats = [r.estimate.p_hat for r in rows]
    assert all(a >= b for a, b in zip(p_hats, p_hats[1:]))
    slope = np.polyfit(ns, np.log(p_hats), 1)[0]
    assert slope < -0.2
    # well past the crossover the mirror-model bound is refuted
    assert rows[-1].estimate.cp_upper < 1 / 29

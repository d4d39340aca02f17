import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import lsq_linear

from plasmonqd.model import ConfigurationError
from plasmonqd.optimizer import (
    Bounds,
    ConcurrenceObjective,
    EvaluatedPoint,
    TRConfig,
    cluster_basins,
    multistart,
    sample_uniform,
    solve_least_squares,
)


def rosenbrock(x):
    return np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])


def two_wells(x):
    """Minima at (0.25, 0.5) (value 0) and (0.75, 0.5) (value 0.01)."""
    a = math.hypot(x[0] - 0.25, x[1] - 0.5)
    b = math.hypot(x[0] - 0.75, x[1] - 0.5) + 0.1
    return np.array([min(a, b)])


def evaluated(bounds, xs, fn):
    out = []
    for x in xs:
        r = np.atleast_1d(fn(x))
        out.append(EvaluatedPoint(x=x, u=bounds.to_unit(x), residuals=r, objective=float(r @ r)))
    return out


# -- bounds and sampling --------------------------------------------------------


def test_table_bounds():
    b = Bounds.table(2)
    assert b.names == ("g1", "g2", "fluence", "tau", "gamma_d", "gamma_s")
    np.testing.assert_array_equal(b.lower, [0, 0, 0, 10, 0, 100])
    np.testing.assert_array_equal(b.upper, [25, 25, 700, 200, 5, 300])


def test_sampling_within_bounds_and_deterministic():
    b = Bounds.table(3)
    xs = sample_uniform(b, 100, seed=4)
    assert xs.shape == (100, 7)
    assert np.all(xs >= b.lower) and np.all(xs <= b.upper)
    np.testing.assert_array_equal(xs, sample_uniform(b, 100, seed=4))
    assert not np.array_equal(xs, sample_uniform(b, 100, seed=5))


def test_sampling_holds_fixed_values():
    b = Bounds.table(3, fixed={"gamma_d": 0.2})
    xs = sample_uniform(b, 50, seed=0)
    assert np.all(xs[:, b.names.index("gamma_d")] == 0.2)
    assert b.n_free == 6


def test_bounds_validation():
    with pytest.raises(ConfigurationError):
        Bounds.from_arrays([1.0], [0.0])
    with pytest.raises(ConfigurationError):
        Bounds(("a",), np.zeros(1), np.ones(1), {"a": 0.5})
    with pytest.raises(ConfigurationError):
        Bounds(("a",), np.zeros(1), np.ones(1), {"b": 0.5})
    with pytest.raises(ValueError):
        sample_uniform(Bounds.table(2), 0, seed=0)


@given(st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_unit_scaling_round_trip(u):
    b = Bounds.table(2)
    np.testing.assert_allclose(b.to_unit(b.from_unit(np.array(u))), u, atol=1e-12)


# -- clustering -----------------------------------------------------------------


def test_single_basin_large_radius():
    b = Bounds.from_arrays([0, 0], [1, 1])
    pts = evaluated(b, sample_uniform(b, 300, 1), lambda x: np.array([x[0] + x[1]]))
    assert cluster_basins(pts, 0.5).n_clusters == 1


def test_two_basins():
    b = Bounds.from_arrays([0, 0], [1, 1])
    pts = evaluated(b, sample_uniform(b, 2000, 1), two_wells)
    cs = cluster_basins(pts, 0.1)
    assert cs.n_clusters == 2
    best = sorted((pts[i].x for i in cs.best), key=lambda x: x[0])
    np.testing.assert_allclose(best[0], [0.25, 0.5], atol=0.05)
    np.testing.assert_allclose(best[1], [0.75, 0.5], atol=0.05)


def test_diameter_radius_gives_one_cluster():
    b = Bounds.from_arrays([0, 0, 0], [1, 1, 1])
    pts = evaluated(b, sample_uniform(b, 100, 3), lambda x: np.array([np.sin(9 * x).sum()]))
    assert cluster_basins(pts, math.sqrt(3)).n_clusters == 1


@given(st.integers(0, 10_000), st.floats(0.02, 0.6))
@settings(max_examples=25, deadline=None)
def test_cluster_invariants(seed, d):
    b = Bounds.from_arrays([0, 0], [1, 1])
    pts = evaluated(b, sample_uniform(b, 80, seed), lambda x: np.array([np.cos(7 * x[0]) * np.sin(5 * x[1])]))
    cs = cluster_basins(pts, d)
    members = sorted(i for m in cs.members for i in m)
    assert members == list(range(len(pts)))
    f = np.array([p.objective for p in pts])
    u = np.array([p.u for p in pts])
    for i in cs.best:
        dist = np.linalg.norm(u - u[i], axis=1)
        better = (f < f[i]) | ((f == f[i]) & (np.arange(len(pts)) < i))
        assert not np.any(better & (dist <= d))


def test_cluster_assignment_invariant_under_rescaling():
    b1 = Bounds.from_arrays([0, 0], [1, 1])
    b2 = Bounds.from_arrays([-5, 10], [15, 11])
    u = sample_uniform(b1, 200, 9)
    fn = lambda v: np.array([np.sin(6 * v[0]) + v[1] ** 2])
    p1 = evaluated(b1, u, fn)
    p2 = evaluated(b2, b2.from_unit(u), lambda x: fn(b2.to_unit(x)))
    np.testing.assert_array_equal(cluster_basins(p1, 0.1).labels, cluster_basins(p2, 0.1).labels)


# -- local solver ---------------------------------------------------------------


def test_rosenbrock():
    b = Bounds.from_arrays([-2, -2], [2, 2])
    res = solve_least_squares(rosenbrock, [-1.2, 1.0], b, TRConfig(max_evals=150))
    assert res.best.objective < 1e-8
    np.testing.assert_allclose(res.best.x, [1, 1], atol=1e-4)
    assert res.n_evals <= 150


def test_linear_least_squares_matches_reference():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    lo, hi = -np.ones(3), np.ones(3)
    ref = lsq_linear(a, y, bounds=(lo, hi), tol=1e-14).x
    res = solve_least_squares(lambda x: a @ x - y, np.zeros(3), Bounds.from_arrays(lo, hi))
    np.testing.assert_allclose(res.best.x, ref, atol=1e-8)


def test_minimizer_outside_bounds():
    b = Bounds.from_arrays([0, 0], [1, 1])
    fn = lambda x: np.array([x[0] - 2.0, x[1] - 0.3])
    seen = []
    res = solve_least_squares(lambda x: (seen.append(x.copy()), fn(x))[1], [0.5, 0.5], b)
    np.testing.assert_allclose(res.best.x, [1.0, 0.3], atol=1e-6)
    grad = 2 * np.array([res.best.x[0] - 2.0, res.best.x[1] - 0.3])
    projected = np.clip(res.best.x - grad, 0, 1) - res.best.x
    assert np.linalg.norm(projected) < 1e-6
    seen = np.array(seen)
    assert np.all(seen >= 0) and np.all(seen <= 1)


def test_failed_evaluations_are_penalized():
    b = Bounds.from_arrays([-2, -2], [2, 2])

    def flaky(x):
        if x[0] > 1.05:
            raise RuntimeError("solver blew up")
        return rosenbrock(x)

    res = solve_least_squares(flaky, [-1.2, 1.0], b)
    assert res.best.objective < 1e-8
    assert not res.best.failed


def test_budget_flag():
    b = Bounds.from_arrays([-2, -2], [2, 2])
    res = solve_least_squares(rosenbrock, [-1.2, 1.0], b, TRConfig(max_evals=8))
    assert res.budget_exhausted and res.n_evals == 8
    assert res.best.objective <= float(rosenbrock([-1.2, 1.0]) @ rosenbrock([-1.2, 1.0]))


def test_start_outside_bounds():
    with pytest.raises(ValueError):
        solve_least_squares(rosenbrock, [3.0, 0.0], Bounds.from_arrays([-2, -2], [2, 2]))


# -- multistart -----------------------------------------------------------------


def test_multistart_finds_both_wells():
    b = Bounds.from_arrays([0, 0], [1, 1])
    res = multistart(two_wells, b, sample_count=60, d=0.3, seed=2, budget=400, local_budget=60)
    assert len(res.optima) >= 2
    np.testing.assert_allclose(res.best.x, [0.25, 0.5], atol=1e-4)
    assert res.optima[0].objective <= res.optima[1].objective
    assert len(res.log) <= 400


def test_multistart_constant_objective():
    b = Bounds.from_arrays([0, 0], [1, 1])
    res = multistart(lambda x: np.array([1.0]), b, sample_count=20, d=2.0, seed=0, budget=200)
    assert res.clusters.n_clusters == 1
    assert len(res.optima) == 1
    start = res.samples[res.clusters.best[0]]
    np.testing.assert_array_equal(res.best.x, start.x)


def test_multistart_budget_error():
    with pytest.raises(ConfigurationError):
        multistart(two_wells, Bounds.from_arrays([0, 0], [1, 1]), sample_count=10, budget=0)


def test_multistart_deterministic():
    b = Bounds.from_arrays([0, 0], [1, 1])
    r1 = multistart(two_wells, b, sample_count=30, d=0.2, seed=7, budget=150)
    r2 = multistart(two_wells, b, sample_count=30, d=0.2, seed=7, budget=150)
    np.testing.assert_array_equal([p.objective for p in r1.log.points], [p.objective for p in r2.log.points])


def test_evaluation_log_csv(tmp_path):
    b = Bounds.from_arrays([0, 0], [1, 1], names=("a", "b"))
    res = multistart(two_wells, b, sample_count=10, d=0.2, seed=1, budget=40, local_budget=20)
    path = tmp_path / "log.csv"
    res.log.to_csv(path, b.names, ["seed 1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed 1"
    assert lines[1] == "eval_id,a,b,r1,objective,phase,cluster_id"
    assert len(lines) == 2 + len(res.log)
    phases = {line.split(",")[-2] for line in lines[2:]}
    assert phases == {"sample", "local"}


# -- concurrence objective ------------------------------------------------------


def test_objective_pickles_and_sizes_levels():
    obj = ConcurrenceObjective(n_qds=2, t_end=100.0, window=(0.0, 100.0))
    clone = pickle.loads(pickle.dumps(obj))
    assert clone == obj
    x = np.array([12.8, 24.9, 30.0, 12.5, 0.0, 186.0])
    spec, pulse = obj.system(x)
    assert spec.n_levels >= 4 and pulse.fluence == 30.0
    with pytest.raises(ValueError):
        obj.system(x[:5])


def test_objective_residuals_match_direct_run():
    from plasmonqd.dynamics import IntegratorConfig, PulseSpec, initial_state, propagate
    from plasmonqd.model import SystemSpec

    obj = ConcurrenceObjective(n_qds=2, n_levels=14, t_end=150.0, window=(0.0, 150.0))
    x = np.array([12.8, 24.9, 30.0, 12.5, 0.5, 186.0])
    spec = SystemSpec.create([12.8, 24.9], gamma_s=186.0, gamma_d=0.5, n_levels=14)
    traj = propagate(initial_state("ground", spec), spec, PulseSpec(30.0, 12.5), IntegratorConfig(t_end=150.0))
    np.testing.assert_allclose(obj(x), [1 - traj.max_concurrence()[0, 1]], atol=1e-12)

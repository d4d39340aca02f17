"""Derivative-free least squares and multistart basin clustering.

The local solver builds quadratic models of each residual from past
evaluations only.  The multistart driver samples the box, groups samples
into basins and starts one local run per basin.
"""

import numpy as np

from plasmonqd.optimizer import (
    Bounds,
    ConcurrenceObjective,
    TRConfig,
    multistart,
    solve_least_squares,
)


def rosenbrock(x):
    return np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])


res = solve_least_squares(rosenbrock, [-1.2, 1.0], Bounds.from_arrays([-2, -2], [2, 2]), TRConfig())
print(f"Rosenbrock: f = {res.best.objective:.2e} at {np.round(res.best.x, 6)} after {res.n_evals} evaluations")


def two_wells(x):
    return np.array([min(np.hypot(x[0] - 0.25, x[1] - 0.5), np.hypot(x[0] - 0.75, x[1] - 0.5) + 0.1)])


ms = multistart(two_wells, Bounds.from_arrays([0, 0], [1, 1]), sample_count=60, d=0.3, seed=1,
                budget=300, local_budget=60)
print(f"two wells: {ms.clusters.n_clusters} basins, optima:")
for p in ms.optima:
    print("  ", np.round(p.x, 4), round(p.objective, 6))

# A small pulsed campaign: pulse length and losses fixed, short window.
objective = ConcurrenceObjective(n_qds=2, t_end=400.0, window=(0.0, 400.0))
bounds = Bounds.table(2, {"tau": 12.5, "gamma_d": 0.0, "gamma_s": 186.0})
bounds = Bounds(bounds.names, bounds.lower, np.minimum(bounds.upper, [25, 25, 300, 200, 5, 300]), bounds.fixed)
ms = multistart(objective, bounds, sample_count=12, d=0.3, seed=0, budget=40, local_budget=14)
best = ms.best
print(f"\npulsed pair: C12 = {1 - best.residuals[0]:.4f} at", {k: round(v, 2) for k, v in bounds.as_dict(best.x).items()})

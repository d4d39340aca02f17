"""Bounded multistart optimization of summed pairwise concurrence.

Global phase: uniform samples, grouped into basins by proximity to better
points.  Local phase: a derivative-free, model-based trust-region method for
sums of squares.  Each residual gets its own quadratic interpolation model
(minimum-Frobenius-norm Hessian when there are fewer points than a full
quadratic needs), and the models are combined into one Gauss-Newton-like
model of the objective ``sum r_k^2``.

All geometry (distances, trust-region radii) lives in the unit hypercube
obtained by scaling each free parameter by its bounds.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import ConfigurationError

__all__ = [
    "Bounds",
    "EvaluatedPoint",
    "ClusterSet",
    "TRConfig",
    "LocalResult",
    "MultistartResult",
    "EvaluationLog",
    "sample_uniform",
    "cluster_basins",
    "solve_least_squares",
    "multistart",
    "ConcurrenceObjective",
]

log = logging.getLogger(__name__)

#: Residual assigned to points whose evaluation failed.
PENALTY_RESIDUAL = 1e3


@dataclass(frozen=True)
class Bounds:
    """Box bounds over named parameters; some may be held fixed."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "fixed", dict(self.fixed))
        if lo.shape != hi.shape or lo.shape != (len(self.names),):
            raise ConfigurationError("bounds and names must have equal length")
        if np.any(lo > hi):
            raise ConfigurationError("lower bound above upper bound")
        unknown = set(self.fixed) - set(self.names)
        if unknown:
            raise ConfigurationError(f"unknown fixed parameters {sorted(unknown)}")
        if not np.any(self.free_mask):
            raise ConfigurationError("no free parameters")

    @classmethod
    def from_arrays(cls, lower, upper, names=None):
        lower = np.asarray(lower, dtype=float)
        names = names or tuple(f"x{k}" for k in range(len(lower)))
        return cls(names, lower, np.asarray(upper, dtype=float))

    @classmethod
    def table(cls, n_qds: int, fixed: Mapping[str, float] | None = None, g_max: float = 25.0):
        """Couplings (meV), fluence (nJ/cm^2), duration (fs) and rates (meV)."""
        names = [f"g{k + 1}" for k in range(n_qds)] + ["fluence", "tau", "gamma_d", "gamma_s"]
        lower = [0.0] * n_qds + [0.0, 10.0, 0.0, 100.0]
        upper = [g_max] * n_qds + [700.0, 200.0, 5.0, 300.0]
        return cls(tuple(names), np.array(lower), np.array(upper), dict(fixed or {}))

    @property
    def free_mask(self) -> np.ndarray:
        return np.array(
            [n not in self.fixed and hi > lo for n, lo, hi in zip(self.names, self.lower, self.upper)]
        )

    @property
    def n_free(self) -> int:
        return int(self.free_mask.sum())

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n, m in zip(self.names, self.free_mask) if m)

    def base_vector(self) -> np.ndarray:
        """Full vector with fixed values in place and free entries at mid-box."""
        x = 0.5 * (self.lower + self.upper)
        for k, n in enumerate(self.names):
            if n in self.fixed:
                x[k] = self.fixed[n]
        return x

    def to_unit(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self.free_mask
        return (x[..., m] - self.lower[m]) / (self.upper[m] - self.lower[m])

    def from_unit(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        m = self.free_mask
        x = np.broadcast_to(self.base_vector(), u.shape[:-1] + (len(self.names),)).copy()
        x[..., m] = self.lower[m] + u * (self.upper[m] - self.lower[m])
        return x

    def as_dict(self, x) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, x)}


@dataclass
class EvaluatedPoint:
    x: np.ndarray
    u: np.ndarray
    residuals: np.ndarray
    objective: float
    eval_id: int = -1
    phase: str = "sample"
    cluster_id: int = -1
    failed: bool = False


@dataclass
class ClusterSet:
    members: list[list[int]]
    best: list[int]
    labels: np.ndarray
    radius: float

    @property
    def n_clusters(self) -> int:
        return len(self.best)


class EvaluationLog:
    """Append-only record of every objective evaluation."""

    def __init__(self):
        self.points: list[EvaluatedPoint] = []

    def add(self, point: EvaluatedPoint) -> EvaluatedPoint:
        point.eval_id = len(self.points)
        self.points.append(point)
        return point

    def __len__(self):
        return len(self.points)

    def to_csv(self, path, names: Sequence[str], header_lines: Sequence[str] = ()):
        n_res = max((len(p.residuals) for p in self.points), default=0)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["eval_id", *names, *(f"r{k + 1}" for k in range(n_res)), "objective", "phase", "cluster_id"]
            )
            for p in self.points:
                w.writerow(
                    [p.eval_id, *map(repr, map(float, p.x)), *map(repr, map(float, p.residuals)),
                     repr(float(p.objective)), p.phase, p.cluster_id]
                )


def _evaluate(fn, x):
    try:
        r = np.atleast_1d(np.asarray(fn(x), dtype=float))
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite residual")
        return r, False
    except Exception as exc:  # noqa: BLE001 -- any failure becomes a penalty point
        log.warning("evaluation failed at %s: %s", x, exc)
        return None, True


def _make_point(bounds, x, r, failed, phase, n_res=1):
    if failed:
        r = np.full(n_res, PENALTY_RESIDUAL)
    return EvaluatedPoint(
        x=np.asarray(x, dtype=float),
        u=bounds.to_unit(x),
        residuals=r,
        objective=float(r @ r),
        phase=phase,
        failed=failed,
    )


def sample_uniform(bounds: Bounds, count: int, seed: int) -> np.ndarray:
    """``count`` full parameter vectors, uniform over the free box."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(count, bounds.n_free))
    return bounds.from_unit(u)


def cluster_basins(points: Sequence[EvaluatedPoint], d: float) -> ClusterSet:
    """Group points into basins.

    Points are visited from best to worst (ties by position).  A point with
    no better point within distance ``d`` starts a cluster; any other point
    joins the cluster of its nearest better point within ``d``, so every
    member is linked to its cluster best by a chain of hops no longer than ``d``.
    """
    n = len(points)
    if n == 0:
        return ClusterSet([], [], np.zeros(0, dtype=int), d)
    u = np.array([p.u for p in points])
    f = np.array([p.objective for p in points])
    order = np.lexsort((np.arange(n), f))
    labels = np.full(n, -1, dtype=int)
    best, members = [], []
    for rank, i in enumerate(order):
        better = order[:rank]
        if len(better):
            dist = np.linalg.norm(u[better] - u[i], axis=1)
            near = dist <= d
        else:
            near = np.zeros(0, dtype=bool)
        if not np.any(near):
            labels[i] = len(best)
            best.append(int(i))
            members.append([int(i)])
        else:
            j = better[near][np.argmin(dist[near])]
            labels[i] = labels[j]
            members[labels[j]].append(int(i))
    for p, lab in zip(points, labels):
        p.cluster_id = int(lab)
    return ClusterSet(members, best, labels, d)


@dataclass
class TRConfig:
    """Trust-region settings; radii are in unit-hypercube coordinates."""

    radius_init: float = 0.1
    radius_min: float = 1e-6
    radius_max: float = 0.5
    max_evals: int = 150
    accept: float = 0.1
    expand: float = 0.75
    expand_factor: float = 2.0
    shrink_factor: float = 0.5
    affine_radius: float = 2.0
    curvature_radius: float = 4.0
    pivot_tol: float = 1e-3
    f_target: float = 0.0
    criticality_tol: float = 1e-10


@dataclass
class LocalResult:
    best: EvaluatedPoint
    n_evals: int
    radius: float
    converged: bool
    budget_exhausted: bool
    history: list[EvaluatedPoint]


class _LocalSolver:
    def __init__(self, fn, bounds, cfg, log_, phase):
        self.fn = fn
        self.bounds = bounds
        self.cfg = cfg
        self.log = log_
        self.phase = phase
        self.U: list[np.ndarray] = []
        self.R: list[np.ndarray] = []
        self.F: list[float] = []
        self.history: list[EvaluatedPoint] = []
        self.n_res = None

    @property
    def n_evals(self):
        return len(self.history)

    def evaluate(self, u):
        u = np.clip(u, 0.0, 1.0)
        for k, uk in enumerate(self.U):
            if np.max(np.abs(uk - u)) < 1e-12:
                return k
        x = self.bounds.from_unit(u)
        r, failed = _evaluate(self.fn, x)
        if self.n_res is None and r is not None:
            self.n_res = len(r)
        pt = _make_point(self.bounds, x, r, failed, self.phase, self.n_res or 1)
        pt.u = u
        if self.log is not None:
            self.log.add(pt)
        self.history.append(pt)
        if failed:
            return None
        self.U.append(u)
        self.R.append(pt.residuals)
        self.F.append(pt.objective)
        return len(self.U) - 1

    # -- interpolation set -------------------------------------------------
    def affine_set(self, center, radius):
        """Indices of points giving well-spread independent directions."""
        n = len(center)
        chosen, q = [], np.zeros((n, 0))
        d = np.array([np.linalg.norm(u - center) for u in self.U])
        for k in np.argsort(d):
            if d[k] == 0 or d[k] > radius:
                continue
            y = (self.U[k] - center) / radius
            resid = y - q @ (q.T @ y)
            if np.linalg.norm(resid) >= self.cfg.pivot_tol:
                chosen.append(int(k))
                q = np.column_stack([q, resid / np.linalg.norm(resid)])
                if len(chosen) == n:
                    break
        return chosen, q

    def fill_geometry(self, center, radius, chosen, q):
        """Evaluate new points along directions missing from ``q``."""
        n = len(center)
        full_q, _ = np.linalg.qr(np.column_stack([q, np.eye(n)]))
        comp = full_q[:, q.shape[1]:n]
        for col in comp.T:
            if self.n_evals >= self.cfg.max_evals:
                return False
            best_u, best_len = None, -1.0
            for sign in (1.0, -1.0):
                cand = np.clip(center + sign * radius * col, 0.0, 1.0)
                step = cand - center
                resid = step - q @ (q.T @ step)
                if np.linalg.norm(resid) > best_len:
                    best_len, best_u = np.linalg.norm(resid), cand
            if best_len < self.cfg.pivot_tol * radius:
                # direction blocked by bounds; fall back to its main axis
                i = int(np.argmax(np.abs(col)))
                e = np.zeros(n)
                e[i] = radius if center[i] + radius <= 1.0 else -radius
                best_u = np.clip(center + e, 0.0, 1.0)
            k = self.evaluate(best_u)
            if k is None:
                continue
            y = (self.U[k] - center) / radius
            resid = y - q @ (q.T @ y)
            if np.linalg.norm(resid) >= self.cfg.pivot_tol:
                chosen.append(k)
                q = np.column_stack([q, resid / np.linalg.norm(resid)])
        return len(chosen) == n

    def build_models(self, kc, radius, affine):
        """Per-residual quadratic models around point ``kc``.

        Returns ``(c, G, H)`` with shapes (m,), (n, m), (m, n, n) in unit
        coordinates.
        """
        center = self.U[kc]
        n = len(center)
        p_max = (n + 1) * (n + 2) // 2
        idx = [kc] + list(affine)
        d = np.array([np.linalg.norm(u - center) for u in self.U])
        for k in np.argsort(d):
            if len(idx) >= p_max:
                break
            if k in idx or d[k] > self.cfg.curvature_radius * radius:
                continue
            trial = idx + [int(k)]
            if _mfn_condition(self._scaled(trial, center, radius)) < 1e12:
                idx = trial
        y = self._scaled(idx, center, radius)
        rv = np.array([self.R[k] for k in idx])
        c, g, h = _mfn_fit(y, rv)
        return c, g / radius, h / radius**2

    def _scaled(self, idx, center, radius):
        return np.array([(self.U[k] - center) / radius for k in idx])


def _mfn_system(y):
    p, n = y.shape
    a = 0.5 * (y @ y.T) ** 2
    phi = np.column_stack([np.ones(p), y])
    kkt = np.zeros((p + n + 1, p + n + 1))
    kkt[:p, :p] = a
    kkt[:p, p:] = phi
    kkt[p:, :p] = phi.T
    return kkt


def _mfn_condition(y):
    return np.linalg.cond(_mfn_system(y))


def _mfn_fit(y, rv):
    """Minimum-Frobenius-norm quadratic interpolation of every column of ``rv``.

    Fits ``r(s) = c + g.s + s.H.s/2`` through the points ``y`` with the
    smallest ``||H||_F``; with a full quadratic's worth of poised points this
    is plain quadratic interpolation.
    """
    p, n = y.shape
    kkt = _mfn_system(y)
    rhs = np.zeros((p + n + 1, rv.shape[1]))
    rhs[:p] = rv
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    lam = sol[:p]
    c = sol[p]
    g = sol[p + 1:]
    h = np.einsum("pk,pi,pj->kij", lam, y, y)
    return c, g, h


def _solve_box_qp(grad, hess, lo, hi):
    """Approximately minimize ``g.s + s.B.s/2`` over the box ``lo <= s <= hi``."""

    def val(s):
        return grad @ s + 0.5 * s @ hess @ s

    def jac(s):
        return grad + hess @ s

    box = list(zip(lo, hi))
    starts = [np.zeros_like(grad)]
    # projected Cauchy point
    gg = grad @ grad
    if gg > 0:
        curv = grad @ hess @ grad
        tmax = np.inf
        for gi, l, h in zip(-grad, lo, hi):
            if gi > 0:
                tmax = min(tmax, h / gi)
            elif gi < 0:
                tmax = min(tmax, l / gi)
        t = tmax if curv <= 0 else min(gg / curv, tmax)
        starts.append(np.clip(-t * grad, lo, hi))
    best, best_val = np.zeros_like(grad), 0.0
    for s0 in starts:
        res = minimize(val, s0, jac=jac, method="L-BFGS-B", bounds=box,
                       options={"maxiter": 200, "gtol": 1e-12, "ftol": 1e-15})
        s = np.clip(res.x, lo, hi)
        if val(s) < best_val:
            best, best_val = s, val(s)
    return best, -best_val


def solve_least_squares(
    residual_fn: Callable,
    x0,
    bounds: Bounds,
    config: TRConfig | None = None,
    log_: EvaluationLog | None = None,
    phase: str = "local",
) -> LocalResult:
    """Minimize ``sum r(x)^2`` within ``bounds`` starting from ``x0``.

    ``residual_fn`` takes the full parameter vector.  The returned point is
    always one that was actually evaluated.
    """
    cfg = config or TRConfig()
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < bounds.lower - 1e-12) or np.any(x0 > bounds.upper + 1e-12):
        raise ValueError("starting point outside bounds")
    solver = _LocalSolver(residual_fn, bounds, cfg, log_, phase)
    u0 = bounds.to_unit(x0)
    n = len(u0)
    k0 = solver.evaluate(u0)
    if k0 is None:
        raise ValueError("residual function fails at the starting point")
    radius = min(cfg.radius_init, cfg.radius_max)
    kc = k0
    converged = False

    while True:
        if solver.F[kc] <= cfg.f_target:
            converged = True
            break
        if solver.n_evals >= cfg.max_evals:
            break
        center = solver.U[kc]
        chosen, q = solver.affine_set(center, cfg.affine_radius * radius)
        if len(chosen) < n:
            chosen, q = solver.affine_set(center, radius)
            if not solver.fill_geometry(center, radius, chosen, q):
                break
            # a geometry point may have improved on the center
            kbest = int(np.argmin(solver.F))
            if solver.F[kbest] < solver.F[kc]:
                kc = kbest
                continue
        chosen, _ = solver.affine_set(center, cfg.affine_radius * radius)
        c, g, h = solver.build_models(kc, radius, chosen)
        r0 = solver.R[kc]
        grad = 2.0 * g @ r0
        hess = 2.0 * (g @ g.T + np.einsum("k,kij->ij", r0, h))
        hess = 0.5 * (hess + hess.T)

        pg = np.clip(center - grad, 0.0, 1.0) - center
        if np.linalg.norm(pg) < cfg.criticality_tol and radius <= cfg.radius_min * 10:
            converged = True
            break

        lo = np.maximum(-radius, -center)
        hi = np.minimum(radius, 1.0 - center)
        step, pred = _solve_box_qp(grad, hess, lo, hi)
        if pred <= 0 or np.max(np.abs(step)) < 1e-3 * radius:
            radius *= cfg.shrink_factor
        else:
            if solver.n_evals >= cfg.max_evals:
                break
            k = solver.evaluate(center + step)
            if k is None:
                radius *= cfg.shrink_factor
            else:
                ratio = (solver.F[kc] - solver.F[k]) / pred
                if ratio > cfg.accept:
                    kc = k
                    if ratio > cfg.expand and np.max(np.abs(step)) >= 0.99 * radius:
                        radius = min(cfg.expand_factor * radius, cfg.radius_max)
                else:
                    radius *= cfg.shrink_factor
        if radius < cfg.radius_min:
            converged = True
            break

    evaluated = [p for p in solver.history if not p.failed]
    best = min(evaluated, key=lambda p: p.objective)
    return LocalResult(
        best=best,
        n_evals=solver.n_evals,
        radius=radius,
        converged=converged,
        budget_exhausted=solver.n_evals >= cfg.max_evals and not converged,
        history=solver.history,
    )


@dataclass
class MultistartResult:
    optima: list[EvaluatedPoint]
    samples: list[EvaluatedPoint]
    clusters: ClusterSet
    local_runs: list[LocalResult]
    log: EvaluationLog

    @property
    def best(self) -> EvaluatedPoint:
        return self.optima[0]


def _evaluate_many(fn, xs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_evaluate, [fn] * len(xs), xs))
    out = []
    for k, x in enumerate(xs, 1):
        out.append(_evaluate(fn, x))
        if k % 20 == 0:
            log.info("evaluated %d/%d samples", k, len(xs))
    return out


def multistart(
    residual_fn: Callable,
    bounds: Bounds,
    sample_count: int = 200,
    d: float = 0.1,
    seed: int = 0,
    budget: int = 800,
    local_budget: int = 150,
    workers: int = 1,
    config: TRConfig | None = None,
    dedup_tol: float = 1e-3,
) -> MultistartResult:
    """Sample, cluster, then run a local solve from each cluster's best point.

    ``budget`` caps the total number of evaluations (samples included).
    Local runs start from cluster bests in order of objective until the
    budget runs out.  Optima closer than ``dedup_tol`` (unit-cube distance)
    are merged, and the list is ranked best first.
    """
    n_free = bounds.n_free
    if budget < sample_count + n_free + 2:
        raise ConfigurationError(
            f"budget {budget} does not cover {sample_count} samples and one local run"
        )
    cfg = config or TRConfig()
    elog = EvaluationLog()
    xs = sample_uniform(bounds, sample_count, seed)
    results = _evaluate_many(residual_fn, list(xs), workers)
    n_res = next((len(r) for r, failed in results if not failed), 1)
    samples = []
    for x, (r, failed) in zip(xs, results):
        samples.append(elog.add(_make_point(bounds, x, r, failed, "sample", n_res)))
    good = [p for p in samples if not p.failed]
    clusters = cluster_basins(good, d)
    log.info("sampled %d points (%d failed), %d clusters", len(samples),
             len(samples) - len(good), clusters.n_clusters)

    local_runs = []
    for b in sorted(clusters.best, key=lambda i: (good[i].objective, i)):
        remaining = budget - len(elog)
        if remaining < n_free + 2:
            break
        local_cfg = TRConfig(**{**cfg.__dict__, "max_evals": min(local_budget, remaining)})
        start = len(elog)
        run = solve_least_squares(residual_fn, good[b].x, bounds, local_cfg, elog)
        for p in elog.points[start:]:
            p.cluster_id = good[b].cluster_id
        local_runs.append(run)
        log.info("local run %d from eval %d: objective %.6g -> %.6g in %d evals",
                 len(local_runs), good[b].eval_id, good[b].objective, run.best.objective, run.n_evals)

    candidates = sorted((r.best for r in local_runs), key=lambda p: (p.objective, p.eval_id))
    optima: list[EvaluatedPoint] = []
    for p in candidates:
        if all(np.linalg.norm(p.u - q.u) > dedup_tol for q in optima):
            optima.append(p)
    if not optima:
        optima = sorted(good, key=lambda p: p.objective)[:1]
    return MultistartResult(optima, samples, clusters, local_runs, elog)


@dataclass(frozen=True)
class ConcurrenceObjective:
    """Residuals ``1 - max_t C_ij`` of a pulsed run from the ground state.

    Called with a full parameter vector laid out as in :meth:`Bounds.table`
    (couplings, fluence, tau, gamma_d, gamma_s).  The plasmon truncation is
    sized per point with :func:`suggest_levels` unless ``n_levels`` is set.
    Plain data only, so instances pickle for process pools.
    """

    n_qds: int
    n_levels: int | None = None
    max_levels: int = 80
    t_end: float = 2000.0
    window: tuple[float, float] = (0.0, 2000.0)
    rtol: float = 1e-8
    atol: float = 1e-10
    gamma_p: float = 190e-6

    def system(self, x):
        from .dynamics import PulseSpec, suggest_levels
        from .model import SystemSpec

        x = np.asarray(x, dtype=float)
        n = self.n_qds
        if x.shape != (n + 4,):
            raise ValueError(f"expected {n + 4} parameters, got {x.shape}")
        fluence, tau, gamma_d, gamma_s = x[n:]
        pulse = PulseSpec(fluence=float(fluence), tau=float(tau))
        spec = SystemSpec.create(
            list(x[:n]), gamma_s=float(gamma_s), gamma_d=float(gamma_d), gamma_p=self.gamma_p,
            n_levels=self.n_levels or 2,
        )
        if self.n_levels is None:
            levels = suggest_levels(spec, pulse, max_levels=self.max_levels)
            spec = SystemSpec.create(
                list(x[:n]), gamma_s=float(gamma_s), gamma_d=float(gamma_d),
                gamma_p=self.gamma_p, n_levels=levels,
            )
        return spec, pulse

    def simulate(self, x, **integ_kw):
        import warnings

        from .dynamics import IntegratorConfig, TruncationWarning, initial_state, propagate

        spec, pulse = self.system(x)
        cfg = IntegratorConfig(t_end=self.t_end, rtol=self.rtol, atol=self.atol, **integ_kw)
        with warnings.catch_warnings():
            # truncation is checked by callers through top_level_population
            warnings.simplefilter("ignore", TruncationWarning)
            return propagate(initial_state("ground", spec), spec, pulse, cfg)

    def __call__(self, x):
        from .entanglement import pair_residuals

        traj = self.simulate(x)
        return pair_residuals(traj.max_concurrence(self.window))

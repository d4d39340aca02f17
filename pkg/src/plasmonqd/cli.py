"""Config-driven command line entry points.

Usage::

    plasmonqd simulate|sweep|optimize|analytic --config FILE --out DIR [--seed N] [--threads K]

The config is a flat ``key = value`` file; ``#`` starts a comment.  Keys are
dotted, e.g. ``qd.1.g_mev = 12.5``.  QDs are numbered from 1.  See
``CONFIG_KEYS`` for the schema.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import re
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import ndark_asymptotic, ndark_build, ndark_optimal_ratio, ratio_contour
from .dynamics import (
    IntegratorConfig,
    NumericalError,
    PulseSpec,
    TruncationWarning,
    dark_observables,
    initial_state,
    pair_observables,
    propagate,
    suggest_levels,
)
from .entanglement import figure_of_merit
from .model import ConfigurationError, PlasmonParams, QDParams, SystemSpec
from .optimizer import Bounds, ConcurrenceObjective, TRConfig, multistart

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

MODES = ("simulate", "sweep", "optimize", "analytic-dark", "scaling")
COMMAND_MODES = {
    "simulate": ("simulate",),
    "sweep": ("sweep",),
    "optimize": ("optimize",),
    "analytic": ("analytic-dark", "scaling"),
}

# key -> (type, default).  "qd.<k>.*" keys fall back to "qd.all.*".
CONFIG_KEYS = {
    "mode": (str, None),
    "seed": (int, 0),
    "system.n_qds": (int, 2),
    "medium.eps": (float, 2.25),
    "qd.all.g_mev": (float, 0.0),
    "qd.all.omega_mev": (float, 2050.0),
    "qd.all.dipole_debye": (float, 13.0),
    "qd.all.gamma_p_mev": (float, 190e-6),
    "qd.all.gamma_d_mev": (float, 2.0),
    "plasmon.omega_mev": (float, 2050.0),
    "plasmon.dipole_debye": (float, 4000.0),
    "plasmon.gamma_s_mev": (float, 100.0),
    "plasmon.levels": (str, "auto"),
    "plasmon.max_levels": (int, 80),
    "pulse.fluence_njcm2": (float, None),
    "pulse.tau_fs": (float, None),
    "pulse.center_fs": (float, None),
    "pulse.carrier_mev": (float, None),
    "initial.state": (str, "ground"),
    "initial.qd": (int, 1),
    "integrator.method": (str, "adaptive"),
    "integrator.rtol": (float, 1e-8),
    "integrator.atol": (float, 1e-10),
    "integrator.max_step_fs": (float, 5.0),
    "integrator.stride_fs": (float, 1.0),
    "integrator.t_end_fs": (float, 2000.0),
    "integrator.truncation_tol": (float, 1e-6),
    "integrator.check_positivity": (bool, False),
    "window.start_fs": (float, None),
    "window.end_fs": (float, None),
    "optimize.sample_count": (int, 200),
    "optimize.radius": (float, 0.1),
    "optimize.budget": (int, 800),
    "optimize.local_budget": (int, 150),
    "optimize.report": (int, 3),
    "analytic.n_qds": (int, 3),
    "analytic.gamma_s_mev": (float, 100.0),
    "analytic.ratio2.min": (float, 0.2),
    "analytic.ratio2.max": (float, 3.0),
    "analytic.ratio2.steps": (int, 57),
    "analytic.ratio3.min": (float, 0.2),
    "analytic.ratio3.max": (float, 3.0),
    "analytic.ratio3.steps": (int, 57),
    "scaling.n_values": (str, "2,3,5,10,20,50,100,150"),
    "scaling.x_max": (float, 10.0),
}
_QD_FIELDS = ("g_mev", "omega_mev", "dipole_debye", "gamma_p_mev", "gamma_d_mev")
_QD_KEY = re.compile(r"^qd\.(\d+)\.(\w+)$")
_AXIS_KEY = re.compile(r"^sweep\.axis\.([12])\.(name|min|max|steps)$")
_OPT_KEY = re.compile(r"^optimize\.(fixed|lower|upper)\.(\w+)$")


# -- config -------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` strings; rejects malformed and repeated keys."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigurationError(f"line {lineno}: empty key or value")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key, value, typ):
    try:
        if typ is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        return typ(value)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {value!r} as {typ.__name__}") from None


@dataclass
class RunConfig:
    """Validated configuration; ``raw`` keeps the parsed strings."""

    mode: str
    values: dict
    raw: dict[str, str]
    digest: str
    axes: list[tuple[str, float, float, int]] = field(default_factory=list)

    def get(self, key):
        return self.values.get(key, CONFIG_KEYS[key][1])

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    def qd_value(self, k: int, name: str):
        key = f"qd.{k}.{name}"
        if key in self.values:
            return self.values[key]
        return self.get(f"qd.all.{name}")

    def with_override(self, key: str, value: float) -> "RunConfig":
        vals = dict(self.values)
        vals[key] = value
        return RunConfig(self.mode, vals, self.raw, self.digest, self.axes)


def load_config(text: str, command: str | None = None, seed: int | None = None) -> RunConfig:
    raw = parse_config_text(text)
    if not raw:
        raise ConfigurationError("config is empty")
    values: dict = {}
    axes: dict[str, dict] = {}
    n_qds = _convert("system.n_qds", raw.get("system.n_qds", "2"), int)
    for key, value in raw.items():
        if key in CONFIG_KEYS:
            values[key] = _convert(key, value, CONFIG_KEYS[key][0])
        elif m := _QD_KEY.match(key):
            k, name = int(m.group(1)), m.group(2)
            if not 1 <= k <= n_qds:
                raise ConfigurationError(f"{key}: QD index outside 1..{n_qds}")
            if name not in _QD_FIELDS:
                raise ConfigurationError(f"{key}: unknown QD field {name!r}")
            values[key] = _convert(key, value, float)
        elif m := _AXIS_KEY.match(key):
            typ = {"name": str, "min": float, "max": float, "steps": int}[m.group(2)]
            axes.setdefault(m.group(1), {})[m.group(2)] = _convert(key, value, typ)
        elif m := _OPT_KEY.match(key):
            values[key] = _convert(key, value, float)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    if seed is not None:
        values["seed"] = seed

    mode = values.get("mode")
    if command is not None:
        allowed = COMMAND_MODES[command]
        if mode is None:
            mode = allowed[0]
        elif mode not in allowed:
            raise ConfigurationError(f"mode {mode!r} cannot run under '{command}'")
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")

    axis_list = []
    for idx in sorted(axes):
        ax = axes[idx]
        missing = {"name", "min", "max", "steps"} - set(ax)
        if missing:
            raise ConfigurationError(f"sweep axis {idx} lacks {sorted(missing)}")
        if ax["name"] not in CONFIG_KEYS and not _QD_KEY.match(ax["name"]):
            raise ConfigurationError(f"sweep axis {idx}: unknown parameter {ax['name']!r}")
        if ax["steps"] < 1:
            raise ConfigurationError(f"sweep axis {idx}: steps must be positive")
        axis_list.append((ax["name"], ax["min"], ax["max"], ax["steps"]))
    if mode == "sweep" and not axis_list:
        raise ConfigurationError("sweep needs at least one axis")
    if mode == "simulate" and values.get("initial.state", "ground") not in ("ground", "excited"):
        raise ConfigurationError("initial.state must be 'ground' or 'excited'")

    canonical = "\n".join(f"{k} = {raw[k]}" for k in sorted(raw))
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:16]
    return RunConfig(mode, values, raw, digest, axis_list)


# -- builders -----------------------------------------------------------------


def build_pulse(cfg: RunConfig) -> PulseSpec | None:
    fluence, tau = cfg.get("pulse.fluence_njcm2"), cfg.get("pulse.tau_fs")
    if fluence is None and tau is None:
        return None
    if fluence is None or tau is None:
        raise ConfigurationError("a pulse needs both fluence and tau")
    if fluence == 0:
        return None
    return PulseSpec(
        fluence=fluence, tau=tau, carrier=cfg.get("pulse.carrier_mev"),
        t_center=cfg.get("pulse.center_fs"),
    )


def build_system(cfg: RunConfig, pulse: PulseSpec | None) -> SystemSpec:
    n = int(cfg.get("system.n_qds"))
    if n < 1:
        raise ConfigurationError("system.n_qds must be at least 1")
    qds = tuple(
        QDParams(
            g=cfg.qd_value(k, "g_mev"),
            omega=cfg.qd_value(k, "omega_mev"),
            d=cfg.qd_value(k, "dipole_debye"),
            gamma_p=cfg.qd_value(k, "gamma_p_mev"),
            gamma_d=cfg.qd_value(k, "gamma_d_mev"),
        )
        for k in range(1, n + 1)
    )
    levels = str(cfg.get("plasmon.levels"))

    def plasmon(n_levels):
        return PlasmonParams(
            omega=cfg.get("plasmon.omega_mev"), d=cfg.get("plasmon.dipole_debye"),
            gamma_s=cfg.get("plasmon.gamma_s_mev"), n_levels=n_levels,
        )

    eps = cfg.get("medium.eps")
    if levels == "auto":
        if pulse is None:
            return SystemSpec(qds, plasmon(3), eps)
        probe = SystemSpec(qds, plasmon(2), eps)
        return SystemSpec(qds, plasmon(suggest_levels(probe, pulse,
                                                      max_levels=cfg.get("plasmon.max_levels"))), eps)
    try:
        n_levels = int(levels)
    except ValueError:
        raise ConfigurationError("plasmon.levels must be an integer or 'auto'") from None
    return SystemSpec(qds, plasmon(n_levels), eps)


def build_integrator(cfg: RunConfig) -> IntegratorConfig:
    return IntegratorConfig(
        method=cfg.get("integrator.method"),
        rtol=cfg.get("integrator.rtol"),
        atol=cfg.get("integrator.atol"),
        max_step=cfg.get("integrator.max_step_fs"),
        stride=cfg.get("integrator.stride_fs"),
        t_end=cfg.get("integrator.t_end_fs"),
        truncation_tol=cfg.get("integrator.truncation_tol"),
        check_positivity=cfg.get("integrator.check_positivity"),
    )


def _window(cfg: RunConfig):
    lo, hi = cfg.get("window.start_fs"), cfg.get("window.end_fs")
    if lo is None and hi is None:
        return None
    return (-math.inf if lo is None else lo, math.inf if hi is None else hi)


def _grid(lo, hi, steps):
    return np.array([lo]) if steps == 1 else np.linspace(lo, hi, steps)


# -- output helpers -----------------------------------------------------------


def provenance(cfg: RunConfig, extra=()) -> list[str]:
    return [
        f"plasmonqd {__version__}",
        f"mode {cfg.mode}",
        f"config_sha256 {cfg.digest}",
        f"seed {cfg.seed}",
        *extra,
    ]


def write_rows(path: Path, header: list[str], columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


# -- simulate / sweep ---------------------------------------------------------


def simulate_once(cfg: RunConfig):
    """Run one trajectory; returns ``(spec, trajectory, truncation_note)``."""
    pulse = build_pulse(cfg)
    spec = build_system(cfg, pulse)
    integ = build_integrator(cfg)
    kind = cfg.get("initial.state")
    qd = cfg.get("initial.qd") - 1
    if kind == "excited" and not 0 <= qd < spec.n_qds:
        raise ConfigurationError("initial.qd outside the QD range")
    rho0 = initial_state(kind, spec, qd=qd)
    obs = {}
    if spec.n_qds >= 2:
        obs.update(dark_observables(spec))
        obs.update(pair_observables(spec))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        traj = propagate(rho0, spec, pulse, integ, observables=obs)
    note = next((str(w.message) for w in caught if issubclass(w.category, TruncationWarning)), None)
    if not np.all(np.isfinite(traj.qd_populations)):
        raise NumericalError("non-finite populations")
    return spec, traj, note


def _summary_rows(spec, traj, window):
    rows = []
    cmax = traj.max_concurrence(window)
    mask = np.ones(len(traj.times), bool)
    if window is not None:
        mask = (traj.times >= window[0]) & (traj.times <= window[1])
    for i in range(spec.n_qds):
        for j in range(i + 1, spec.n_qds):
            k = int(np.argmax(np.where(mask, traj.concurrence[:, i, j], -1.0)))
            rows.append((f"max_C_{i + 1}_{j + 1}", cmax[i, j]))
            rows.append((f"t_max_C_{i + 1}_{j + 1}_fs", traj.times[k]))
    rows.append(("figure_of_merit", figure_of_merit(cmax)))
    for k in range(spec.n_qds):
        rows.append((f"final_P_qd{k + 1}", traj.qd_populations[-1, k]))
    rows.append(("final_plasmon_n", traj.plasmon_number[-1]))
    rows.append(("n_levels", spec.n_levels))
    rows.append(("max_top_level_population", traj.top_level_population.max()))
    rows.append(("max_trace_error", traj.trace_error.max()))
    return rows


def run_simulate(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    spec, traj, note = simulate_once(cfg)
    header = provenance(cfg, [f"n_levels {spec.n_levels}"])
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv", header)
    write_rows(out / "summary.csv", header, ["quantity", "value"], _summary_rows(spec, traj, _window(cfg)))
    if note:
        print(f"warning: {note}", file=sys.stderr)
    return EXIT_OK


def _sweep_point(args):
    cfg, overrides = args
    for key, value in overrides:
        cfg = cfg.with_override(key, value)
    spec, traj, note = simulate_once(cfg)
    cmax = traj.max_concurrence(_window(cfg))
    iu = np.triu_indices(spec.n_qds, 1)
    return (
        list(cmax[iu]), figure_of_merit(cmax), spec.n_levels,
        float(traj.top_level_population.max()), note,
    )


def run_sweep(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    grids = [_grid(lo, hi, steps) for _, lo, hi, steps in cfg.axes]
    names = [name for name, *_ in cfg.axes]
    points = [tuple(p) for p in np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(grids), -1).T]
    tasks = [(cfg, list(zip(names, map(float, p)))) for p in points]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    n = int(cfg.get("system.n_qds"))
    pairs = [f"C{i + 1}{j + 1}" for i in range(n) for j in range(i + 1, n)]
    rows, notes = [], 0
    for p, (cs, fom, levels, top, note) in zip(points, results):
        rows.append([*p, fom, *cs, levels, top])
        notes += note is not None
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "sweep.csv", provenance(cfg), [*names, "fom", *pairs, "n_levels", "top_level_population"], rows)
    if notes:
        print(f"warning: {notes} grid points exceeded the truncation tolerance", file=sys.stderr)
    return EXIT_OK


# -- optimize -----------------------------------------------------------------


def optimizer_bounds(cfg: RunConfig) -> Bounds:
    n = int(cfg.get("system.n_qds"))
    bounds = Bounds.table(n)
    names = bounds.names
    lower, upper = bounds.lower.copy(), bounds.upper.copy()
    fixed = {}
    for key, value in cfg.values.items():
        m = _OPT_KEY.match(key)
        if not m:
            continue
        kind, name = m.groups()
        if name not in names:
            raise ConfigurationError(f"{key}: unknown optimization parameter {name!r}")
        k = names.index(name)
        if kind == "fixed":
            fixed[name] = value
        elif kind == "lower":
            lower[k] = value
        else:
            upper[k] = value
    return Bounds(names, lower, upper, fixed)


def run_optimize(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    bounds = optimizer_bounds(cfg)
    n = int(cfg.get("system.n_qds"))
    levels = str(cfg.get("plasmon.levels"))
    objective = ConcurrenceObjective(
        n_qds=n,
        n_levels=None if levels == "auto" else int(levels),
        max_levels=cfg.get("plasmon.max_levels"),
        t_end=cfg.get("integrator.t_end_fs"),
        window=_window(cfg) or (0.0, cfg.get("integrator.t_end_fs")),
        rtol=cfg.get("integrator.rtol"),
        atol=cfg.get("integrator.atol"),
    )
    result = multistart(
        objective,
        bounds,
        sample_count=cfg.get("optimize.sample_count"),
        d=cfg.get("optimize.radius"),
        seed=cfg.seed,
        budget=cfg.get("optimize.budget"),
        local_budget=cfg.get("optimize.local_budget"),
        workers=threads,
        config=TRConfig(),
    )
    header = provenance(cfg)
    out.mkdir(parents=True, exist_ok=True)
    result.log.to_csv(out / "evaluations.csv", bounds.names, header)
    pairs = [f"C{i + 1}{j + 1}" for i in range(n) for j in range(i + 1, n)]
    rows = []
    for rank, p in enumerate(result.optima, 1):
        cs = 1.0 - p.residuals
        rows.append([rank, p.eval_id, *p.x, p.objective, *cs, float(np.sum(cs))])
    write_rows(out / "optima.csv", header,
               ["rank", "eval_id", *bounds.names, "objective", *pairs, "sum_C"], rows)
    for rank, p in enumerate(result.optima[: cfg.get("optimize.report")], 1):
        spec, _ = objective.system(p.x)
        traj = objective.simulate(p.x, stride=cfg.get("integrator.stride_fs"))
        extra = [f"rank {rank}", f"n_levels {spec.n_levels}",
                 f"max_top_level_population {float(traj.top_level_population.max()):.3e}",
                 *(f"{k} {v!r}" for k, v in bounds.as_dict(p.x).items())]
        traj.to_csv(out / f"optimum_{rank}.csv", header + extra)
    return EXIT_OK


# -- analytic -----------------------------------------------------------------


def run_analytic(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    header = provenance(cfg)
    gamma_s = cfg.get("analytic.gamma_s_mev")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.mode == "scaling":
        try:
            ns = [int(s) for s in str(cfg.get("scaling.n_values")).split(",")]
        except ValueError:
            raise ConfigurationError("scaling.n_values must be comma-separated integers") from None
        if any(k < 2 for k in ns):
            raise ConfigurationError("scaling needs N >= 2")
        rows = []
        for k in ns:
            x, c_maj, c_min = ndark_optimal_ratio(k, x_max=cfg.get("scaling.x_max"), gamma_s=gamma_s)
            rows.append([k, x, c_maj, c_min])
        write_rows(out / "scaling.csv", header, ["n_qds", "x_star", "C_maj", "C_min"], rows)
        return EXIT_OK

    n = cfg.get("analytic.n_qds")
    r2 = _grid(cfg.get("analytic.ratio2.min"), cfg.get("analytic.ratio2.max"), cfg.get("analytic.ratio2.steps"))
    if n == 2:
        rows = []
        for r in r2:
            _, c = ndark_asymptotic(ndark_build([1.0, r], gamma_s))
            rows.append([r, figure_of_merit(c), c[0, 1]])
        write_rows(out / "scan.csv", header, ["ratio2", "fom", "C12"], rows)
        x, c12, _ = ndark_optimal_ratio(2, gamma_s=gamma_s)
        summary = [("ratio2_opt", x), ("C12_opt", c12)]
    elif n == 3:
        r3 = _grid(cfg.get("analytic.ratio3.min"), cfg.get("analytic.ratio3.max"), cfg.get("analytic.ratio3.steps"))
        rows = ratio_contour(r2, r3, gamma_s)
        write_rows(out / "contour.csv", header, ["ratio2", "ratio3", "fom", "C12", "C13", "C23"], rows)
        x, c_maj, c_min = ndark_optimal_ratio(3, gamma_s=gamma_s)
        best = min(rows, key=lambda r: r[2])
        summary = [("grid_ratio2_min", best[0]), ("grid_ratio3_min", best[1]), ("grid_fom_min", best[2]),
                   ("common_ratio_opt", x), ("C12_opt", c_maj), ("C23_opt", c_min)]
    else:
        raise ConfigurationError("analytic.n_qds must be 2 or 3; use mode = scaling for larger N")
    write_rows(out / "summary.csv", header, ["quantity", "value"], summary)
    return EXIT_OK


RUNNERS = {
    "simulate": run_simulate,
    "sweep": run_sweep,
    "optimize": run_optimize,
    "analytic-dark": run_analytic,
    "scaling": run_analytic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plasmonqd", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"plasmonqd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_MODES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from None
        cfg = load_config(text, args.command, args.seed)
        return RUNNERS[cfg.mode](cfg, args.out, args.threads)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

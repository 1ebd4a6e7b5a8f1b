"""Experiment orchestration: cell -> macro -> micro -> compare, plus props.

Each ``run_*`` function writes its artifacts into ``out`` and returns the
in-memory results.  CSV bodies depend only on the configuration; timing
and environment details go to ``meta.json``.
"""

from __future__ import annotations

import hashlib
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from .. import __version__
from ..cell import UnitCellGeometry, build_table, check_bounds, classify_cell, default_rho_grid
from ..constitutive import Constitutive, RootHydraulics, SoilHydraulics, SurfaceForcing
from ..errors import ConfigError, PropertyFailure
from ..macro import MacroConfig, MacroModel
from ..micro import MicroModel, average_to_macro, build_micro
from ..solvercore import SolverSettings
from . import props as props_mod
from .compare import ConvergenceReport, compare
from .config import RunConfig, emit_config
from .io import read_csv, write_csv, write_json


def thread_count() -> int:
    """Worker cap: ``RHIZOHOM_THREADS`` if set, else the CPU count."""
    cpus = os.cpu_count() or 1
    env = os.environ.get("RHIZOHOM_THREADS")
    if env is None or env.strip() == "":
        return cpus
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"RHIZOHOM_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("RHIZOHOM_THREADS must be >= 1")
    return n


# ----------------------------------------------------------------------
# builders
def make_constitutive(cfg: RunConfig) -> Constitutive:
    try:
        return Constitutive(
            SoilHydraulics(**asdict(cfg.rhizosphere)),
            SoilHydraulics(**asdict(cfg.bulk)),
            RootHydraulics(**asdict(cfg.root)),
            SurfaceForcing(**asdict(cfg.forcing)),
        )
    except ValueError as err:
        raise ConfigError(f"invalid constitutive parameters: {err}") from None


def make_cell_geometry(cfg: RunConfig) -> UnitCellGeometry:
    c = cfg.cell
    return UnitCellGeometry(c.r_P, c.r_R, c.N, c.mode, tuple(c.fractions) if c.fractions is not None else None)


def make_settings(cfg: RunConfig, strict=False) -> SolverSettings:
    s = cfg.solver
    try:
        return SolverSettings(**asdict(s), strict=strict)
    except ValueError as err:
        raise ConfigError(f"invalid solver settings: {err}") from None


def make_macro_config(cfg: RunConfig) -> MacroConfig:
    m = cfg.macro
    try:
        return MacroConfig(m.L1, m.L2, m.L3, m.n1, m.n2, m.n3, m.column_mode, m.a)
    except ValueError as err:
        raise ConfigError(f"invalid macro grid: {err}") from None


def rho_grid(cfg: RunConfig):
    c = cfg.cell
    return default_rho_grid(c.rho_nodes, c.rho_min, c.rho_max)


def make_table(cfg: RunConfig, threads=1):
    return build_table(make_cell_geometry(cfg), rho_grid(cfg), threads=threads, perimeter=cfg.cell.perimeter)


def initial_profiles(cfg: RunConfig, z):
    """Initial soil/root head profiles on the vertical nodes ``z``."""
    ini = cfg.initial
    depth = z + cfg.macro.L3
    if ini.kind == "hydrostatic":
        return ini.h_S - depth, ini.h_P - depth
    if ini.kind == "uniform":
        return np.full_like(z, ini.h_S), np.full_like(z, ini.h_P)
    try:
        data = read_csv(ini.path)
        order = np.argsort(data["x3"])
        x3 = data["x3"][order]
        return np.interp(z, x3, data["h_S"][order]), np.interp(z, x3, data["h_P"][order])
    except (OSError, KeyError, ValueError, IndexError) as err:
        raise ConfigError(f"cannot read initial profile {ini.path}: {err}") from None


# ----------------------------------------------------------------------
# bookkeeping
def _labels_digest(labels) -> str:
    return hashlib.sha256(np.ascontiguousarray(labels).tobytes()).hexdigest()[:16]


@dataclass
class Meta:
    command: str
    started: float = field(default_factory=time.time)
    data: dict = field(default_factory=dict)

    def write(self, out, cfg: RunConfig):
        doc = {
            "command": self.command,
            "scenario": cfg.scenario,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "threads": thread_count(),
            "started_unix": self.started,
            "wall_seconds": time.time() - self.started,
            "solver": asdict(cfg.solver),
        }
        doc.update(self.data)
        write_json(os.path.join(out, "meta.json"), doc)


def write_config(out, cfg: RunConfig):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.normalized.json"), "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))


def _step_columns(steps):
    cols = {k: [] for k in ("step", "t", "tau", "iterations", "residual", "monotone", "L_ok")}
    phases = ("soil", "root")
    keys = ("storage_old", "storage_new", "bottom_in", "surface_in", "exchange_in", "residual", "relative")
    for p in phases:
        for k in keys:
            cols[f"{p}_{k}"] = []
    cols["exchange_imbalance"] = []
    cols["total_relative"] = []
    for i, s in enumerate(steps):
        cols["step"].append(i + 1)
        for k in ("t", "tau", "iterations", "residual", "monotone", "L_ok"):
            cols[k].append(s[k])
        led = s["ledger"]
        for p in phases:
            for k in keys:
                cols[f"{p}_{k}"].append(led[p][k])
        cols["exchange_imbalance"].append(led["exchange_imbalance"])
        cols["total_relative"].append(led["total_relative"])
    return cols


def _ledger_summary(steps):
    if not steps:
        return {"max_phase_relative": 0.0, "max_total_relative": 0.0, "max_exchange_imbalance": 0.0}
    return {
        "max_phase_relative": max(max(s["ledger"]["soil"]["relative"], s["ledger"]["root"]["relative"]) for s in steps),
        "max_total_relative": max(s["ledger"]["total_relative"] for s in steps),
        "max_exchange_imbalance": max(s["ledger"]["exchange_imbalance"] for s in steps),
        "all_monotone": all(s["monotone"] for s in steps),
        "all_L_ok": all(s["L_ok"] for s in steps),
        "max_iterations": max(s["iterations"] for s in steps),
    }


# ----------------------------------------------------------------------
# cell
def run_cell(cfg: RunConfig, out, threads=None, meta=None):
    threads = thread_count() if threads is None else threads
    geom = make_cell_geometry(cfg)
    table = build_table(geom, rho_grid(cfg), threads=threads, perimeter=cfg.cell.perimeter)
    write_csv(
        os.path.join(out, "ahat_table.csv"),
        {"rho": table.rho_grid, "a11": table.ahat[:, 0, 0], "a12": table.ahat[:, 0, 1], "a22": table.ahat[:, 1, 1]},
    )
    bounds = check_bounds(table)
    cls = classify_cell(geom)
    prov = {
        "N": geom.N,
        "mode": geom.mode,
        "fractions": {"root": table.hole_fraction, "rhizosphere": table.rhizo_fraction, "bulk": table.bulk_fraction},
        "analytic_fractions": list(geom.analytic_fractions),
        "perimeter": table.perimeter,
        "exchange_weights": list(table.exchange_weights),
        "labels_sha256": _labels_digest(cls.labels),
        "solves": table.info,
        "bounds": bounds,
        "bounds_ok": all(b["ok"] for b in bounds),
    }
    write_json(os.path.join(out, "cell_provenance.json"), prov)
    if meta is not None:
        meta.data["cell"] = {"labels_sha256": prov["labels_sha256"], "bounds_ok": prov["bounds_ok"]}
    return table, prov


# ----------------------------------------------------------------------
# macro
def _macro_snapshot_columns(model: MacroModel, snaps):
    g = model.grid
    x1 = (np.arange(g.n1) + 0.5) * g.d1
    x2 = (np.arange(g.n2) + 0.5) * g.d2
    X1, X2, X3 = np.meshgrid(x1, x2, g.z, indexing="ij")
    cols = {k: [] for k in ("t", "x1", "x2", "x3", "h_S", "h_P", "theta_star", "theta_P")}
    for s in snaps:
        n = s.h_S.size
        cols["t"].append(np.full(n, s.t))
        cols["x1"].append(X1.ravel())
        cols["x2"].append(X2.ravel())
        cols["x3"].append(X3.ravel())
        cols["h_S"].append(s.h_S.ravel())
        cols["h_P"].append(s.h_P.ravel())
        cols["theta_star"].append(model.theta_star(s.h_S).ravel())
        cols["theta_P"].append(model.theta_root(s.h_P).ravel())
    return {k: np.concatenate(v) for k, v in cols.items()}


def _write_plots(out, kind):
    os.makedirs(os.path.join(out, "plots"), exist_ok=True)
    src = f"{kind}_snapshots.csv"
    with open(os.path.join(out, "plots", f"{kind}_profiles.gp"), "w", encoding="utf-8") as fh:
        fh.write(
            "set datafile separator ','\n"
            "set key autotitle columnhead\n"
            "set xlabel 'pressure head (m)'\nset ylabel 'x3 (m)'\n"
            f"plot '../{src}' using 5:4 with points title 'h_S', '' using 6:4 with points title 'h_P'\n"
        )


def run_macro(cfg: RunConfig, out, table=None, strict=False, meta=None, threads=None, subdir=""):
    threads = thread_count() if threads is None else threads
    table = make_table(cfg, threads) if table is None else table
    const = make_constitutive(cfg)
    model = MacroModel(make_macro_config(cfg), const, table, make_settings(cfg, strict))
    hS, hP = initial_profiles(cfg, model.grid.z)
    state = model.initial_state(hS, hP)
    t0 = time.time()
    final, snaps, steps = model.run(state, cfg.schedule.duration, cfg.schedule.snapshot_times)
    runtime = time.time() - t0
    d = os.path.join(out, subdir)
    write_csv(os.path.join(d, "macro_snapshots.csv"), _macro_snapshot_columns(model, snaps))
    write_csv(os.path.join(d, "macro_diag.csv"), _step_columns(steps))
    if cfg.outputs.plots:
        _write_plots(d, "macro")
    if meta is not None:
        meta.data.setdefault("macro", {}).update(
            {
                "weights": model.weights,
                "tau_history": [s["tau"] for s in steps],
                "steps": len(steps),
                "runtime_seconds": runtime,
                "ledger": _ledger_summary(steps),
            }
        )
    return model, snaps, steps


# ----------------------------------------------------------------------
# micro
def eps_tag(eps) -> str:
    inv = 1.0 / eps
    return f"eps_{int(round(inv))}" if abs(inv - round(inv)) < 1e-9 else f"eps_{eps:g}"


def _micro_snapshot_columns(model: MicroModel, snaps, stride):
    geom = model.geom
    g = model.grid
    x1 = (np.arange(g.n1) + 0.5) * g.d1
    x2 = (np.arange(g.n2) + 0.5) * g.d2
    X1, X2, X3 = np.meshgrid(x1, x2, g.z, indexing="ij")
    pick = np.zeros((g.n1, g.n2), dtype=bool)
    pick[::stride, ::stride] = True
    pick3 = np.broadcast_to(pick[..., None], X1.shape)
    lab = np.broadcast_to(geom.labels[..., None], X1.shape)[pick3]
    cols = {k: [] for k in ("t", "x1", "x2", "x3", "label", "h")}
    for s in snaps:
        h = np.where(geom.root_mask[..., None], s.h_P, s.h_S)[pick3]
        cols["t"].append(np.full(h.size, s.t))
        cols["x1"].append(X1[pick3])
        cols["x2"].append(X2[pick3])
        cols["x3"].append(X3[pick3])
        cols["label"].append(lab)
        cols["h"].append(h)
    out = {k: np.concatenate(v) for k, v in cols.items()}
    out["label"] = [int(v) for v in out["label"]]
    return out


def averaged_snapshots(model: MicroModel, snaps, macro_cfg: MacroConfig):
    g = macro_cfg.grid()
    res = []
    for s in snaps:
        hS, hP, flags = average_to_macro(s, model.geom, g.n1, g.n2, g.nz)
        res.append((s.t, hS, hP, flags))
    return res


def run_micro(cfg: RunConfig, out, eps, table=None, strict=False, meta=None, subdir=""):
    const = make_constitutive(cfg)
    mc = make_macro_config(cfg)
    geom = build_micro(eps, mc.L1, mc.L2, mc.L3, make_cell_geometry(cfg), mc.n3 + 1, cfg.micro.dims)
    model = MicroModel(geom, const, make_settings(cfg, strict), a=mc.a, interface=cfg.cell.perimeter)
    hS, hP = initial_profiles(cfg, model.grid.z)
    state = model.initial_state(hS, hP)
    t0 = time.time()
    final, snaps, steps = model.run(state, cfg.schedule.duration, cfg.schedule.snapshot_times)
    runtime = time.time() - t0
    d = os.path.join(out, subdir)
    write_csv(os.path.join(d, "micro_snapshots.csv"), _micro_snapshot_columns(model, snaps, cfg.micro.snapshot_stride))
    avg = averaged_snapshots(model, snaps, mc)
    g = mc.grid()
    x1 = (np.arange(g.n1) + 0.5) * g.d1
    x2 = (np.arange(g.n2) + 0.5) * g.d2
    X1, X2, X3 = np.meshgrid(x1, x2, g.z, indexing="ij")
    cols = {k: [] for k in ("t", "x1", "x2", "x3", "h_S_bar", "h_P_bar", "flag")}
    for t, aS, aP, flags in avg:
        cols["t"].append(np.full(aS.size, t))
        cols["x1"].append(X1.ravel())
        cols["x2"].append(X2.ravel())
        cols["x3"].append(X3.ravel())
        cols["h_S_bar"].append(aS.ravel())
        cols["h_P_bar"].append(aP.ravel())
        cols["flag"].append(np.broadcast_to(flags[..., None], aS.shape).ravel())
    cols = {k: np.concatenate(v) for k, v in cols.items()}
    cols["flag"] = [bool(v) for v in cols["flag"]]
    write_csv(os.path.join(d, "micro_avg.csv"), cols)
    write_csv(os.path.join(d, "micro_ledger.csv"), _step_columns(steps))
    if cfg.outputs.plots:
        _write_plots(d, "micro")
    info = {
        "eps": eps,
        "dims": geom.dims,
        "fine_grid": [geom.n1, geom.n2, geom.nz],
        "tiles": list(geom.tiles),
        "geometry_sha256": geom.digest(),
        "fractions": list(geom.fractions),
        "interface_area_per_volume": geom.interface_area_per_volume,
        "commensurate_tiling": True,
        "tau_history": [s["tau"] for s in steps],
        "steps": len(steps),
        "runtime_seconds": runtime,
        "ledger": _ledger_summary(steps),
    }
    if meta is not None:
        meta.data.setdefault("micro", {})[eps_tag(eps)] = info
    return model, snaps, steps, avg, info


# ----------------------------------------------------------------------
# compare
def run_compare(cfg: RunConfig, out, threads=None, strict=False, meta=None) -> ConvergenceReport:
    threads = thread_count() if threads is None else threads
    table, _ = run_cell(cfg, out, threads, meta)
    macro, msnaps, _ = run_macro(cfg, out, table, strict, meta)
    mvol = np.asarray(macro.node_volumes())
    mlist = [(s.t, s.h_S, s.h_P) for s in msnaps]
    if cfg.compare.reference == "macro":
        ref = Meta("compare-ref")
        _, rsnaps, _ = run_macro(cfg, out, table, strict, ref, subdir="macro_ref")
        report = ConvergenceReport(eps=[0.0])
        report.rows = compare([(s.t, s.h_S, s.h_P) for s in rsnaps], mlist, mvol, eps=0.0)
        report.monotone = all(r[k] == 0.0 for r in report.rows for k in ("L2_S", "L2_P", "Linf_S", "Linf_P"))
    else:
        eps_list = list(cfg.micro.eps)

        def one(eps):
            sub_meta = Meta("micro")
            _, _, _, avg, info = run_micro(cfg, out, eps, table, strict, sub_meta, subdir=eps_tag(eps))
            return eps, avg, info

        # independent runs; results are collected in configuration order
        with ThreadPoolExecutor(max_workers=max(1, min(threads, len(eps_list)))) as pool:
            results = list(pool.map(one, eps_list))
        report = ConvergenceReport(eps=eps_list)
        for eps, avg, info in results:
            report.rows += compare([(t, a, b) for t, a, b, _ in avg], mlist, mvol, eps=eps)
            report.runtimes[eps] = info["runtime_seconds"]
            if meta is not None:
                meta.data.setdefault("micro", {})[eps_tag(eps)] = info
        report.verdict()
    write_csv(os.path.join(out, "convergence.csv"), report.columns())
    write_json(
        os.path.join(out, "convergence.json"),
        {"reference": cfg.compare.reference, "eps": report.eps, "monotone": report.monotone, "rows": report.rows},
    )
    if meta is not None:
        meta.data["compare"] = {"monotone": report.monotone, "runtimes": {str(k): v for k, v in report.runtimes.items()}}
    return report


# ----------------------------------------------------------------------
# props
def run_props(cfg: RunConfig, out, suite=None, threads=None, meta=None):
    """Run property suites; raises :class:`PropertyFailure` if any check fails."""
    const = make_constitutive(cfg)
    checks = props_mod.constitutive_suite(const)
    if suite == "constitutive":
        write_csv(os.path.join(out, "constitutive.csv"), props_mod.curve_samples(const))
    elif suite is None:
        threads = thread_count() if threads is None else threads
        table = make_table(cfg, threads)
        bounds = check_bounds(table)
        worst = max(b["asym"] for b in bounds)
        checks.append(props_mod.Check("cell", "symmetry", worst, 1e-8, worst <= 1e-8))
        checks.append(props_mod.Check("cell", "reuss_voigt", 0.0, 0.0, all(b["ok"] for b in bounds)))
        mc = make_macro_config(cfg)
        checks += props_mod.conservation_suite(const, table, make_settings(cfg), L3=mc.L3, n3=mc.n3)
    else:
        raise ConfigError(f"unknown property suite {suite!r}")
    write_csv(
        os.path.join(out, "props_report.csv"),
        {
            "suite": [c.suite for c in checks],
            "check": [c.name for c in checks],
            "value": [c.value for c in checks],
            "tolerance": [c.tolerance for c in checks],
            "passed": [c.passed for c in checks],
        },
    )
    failed = [c for c in checks if not c.passed]
    if meta is not None:
        meta.data["props"] = {"checks": len(checks), "failed": [c.name for c in failed]}
    if failed:
        raise PropertyFailure("property checks failed: " + ", ".join(f"{c.suite}/{c.name}" for c in failed))
    return checks

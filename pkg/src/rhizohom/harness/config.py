"""Versioned JSON run configuration.

Every section maps onto a frozen dataclass.  Parsing rejects unknown keys
and reports the offending key path with its line in the source document;
normalisation fills every default explicitly, so the emitted document is
complete and ``parse(emit(parse(text)))`` reproduces it exactly.
"""

from __future__ import annotations

import json
import re
import types
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, replace

from ..errors import ConfigError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SoilParams:
    theta_res: float
    theta_sat: float
    alpha: float
    n: float
    K_sat: float
    l: float = 0.5
    delta: float | None = None


@dataclass(frozen=True)
class RootParams:
    theta_sat: float
    h_ae: float
    E: float
    lambda_P: float
    alpha: float
    n: float
    k_r: float
    k_ax: float
    r: float
    rho_g: float = 9810.0
    delta: float = 1e-3


@dataclass(frozen=True)
class ForcingParams:
    ET_o: float
    P: float
    C_RO: float
    K_cb: float
    Ke_max: float = 1.0
    Ke_scale: float = 1.0


@dataclass(frozen=True)
class CellParams:
    r_P: float
    r_R: float
    N: int
    mode: str = "disk"
    fractions: list[float] | None = None
    rho_min: float = 1e-3
    rho_max: float = 1e3
    rho_nodes: int = 33
    perimeter: str = "staircase"


@dataclass(frozen=True)
class MacroParams:
    L1: float
    L2: float
    L3: float
    n1: int
    n2: int
    n3: int
    column_mode: bool = False
    a: float = 0.0


@dataclass(frozen=True)
class MicroParams:
    dims: str = "3D"
    eps: list[float] = field(default_factory=lambda: [0.25])
    snapshot_stride: int = 1


@dataclass(frozen=True)
class SolverParams:
    tau: float
    scheme: str = "rothe"
    nonlinear: str = "l_scheme"
    L_stab: float = 1.0
    tol_nl: float = 1e-12
    max_nl: int = 300
    tol_lin: float = 1e-14
    max_lin: int = 10000
    linear: str = "direct"
    coupling: str = "implicit"
    tau_max: float | None = None
    max_halvings: int = 10


@dataclass(frozen=True)
class InitialParams:
    """``hydrostatic``: h = h_X - (x3 + L3); ``uniform``: h = h_X; ``file``: CSV profile (x3, h_S, h_P)."""

    kind: str = "hydrostatic"
    h_S: float = 0.0
    h_P: float = 0.0
    path: str | None = None


@dataclass(frozen=True)
class ScheduleParams:
    duration: float
    snapshot_times: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class OutputParams:
    directory: str = "out"
    plots: bool = False


@dataclass(frozen=True)
class CompareParams:
    reference: str = "micro"


@dataclass(frozen=True)
class ModeFlags:
    cell: bool = True
    macro: bool = True
    micro: bool = False
    compare: bool = False
    props: bool = False


@dataclass(frozen=True)
class RunConfig:
    schema_version: int
    scenario: str
    rhizosphere: SoilParams
    bulk: SoilParams
    root: RootParams
    forcing: ForcingParams
    cell: CellParams
    macro: MacroParams
    solver: SolverParams
    schedule: ScheduleParams
    micro: MicroParams = field(default_factory=MicroParams)
    initial: InitialParams = field(default_factory=InitialParams)
    outputs: OutputParams = field(default_factory=OutputParams)
    compare: CompareParams = field(default_factory=CompareParams)
    modes: ModeFlags = field(default_factory=ModeFlags)


_CHOICES = {
    ("cell", "mode"): ("disk", "laminate"),
    ("cell", "perimeter"): ("staircase", "analytic"),
    ("micro", "dims"): ("3D", "strip"),
    ("solver", "scheme"): ("rothe", "fully_implicit"),
    ("solver", "nonlinear"): ("l_scheme", "newton"),
    ("solver", "linear"): ("direct", "cg"),
    ("solver", "coupling"): ("implicit", "lagged"),
    ("initial", "kind"): ("hydrostatic", "uniform", "file"),
    ("compare", "reference"): ("micro", "macro"),
}


# ----------------------------------------------------------------------
def _line_of(text: str | None, path: tuple[str, ...]) -> int | None:
    """Best-effort line of the last key in ``path`` (keys searched in order)."""
    if not text:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _fail(msg, text, path):
    where = ".".join(path) if path else "<root>"
    line = _line_of(text, path)
    loc = f"line {line}: " if line is not None else ""
    raise ConfigError(f"{loc}key {where}: {msg}")


def _coerce(value, tp, text, path):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], text, path)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            _fail("expected a list", text, path)
        return [_coerce(v, item, text, path) for v in value]
    if tp is bool:
        if not isinstance(value, bool):
            _fail("expected true/false", text, path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(f"expected an integer, got {value!r}", text, path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(f"expected a number, got {value!r}", text, path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            _fail(f"expected a string, got {value!r}", text, path)
        return value
    if isinstance(tp, type) and hasattr(tp, "__dataclass_fields__"):
        return _build(tp, value, text, path)
    raise TypeError(f"unsupported config type {tp!r}")


def _build(cls, doc, text, path=()):
    if not isinstance(doc, dict):
        _fail("expected an object", text, path)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            _fail(f"unknown key (allowed: {', '.join(sorted(known))})", text, path + (key,))
    kw = {}
    for f in fields(cls):
        sub = path + (f.name,)
        if f.name in doc:
            kw[f.name] = _coerce(doc[f.name], hints[f.name], text, sub)
            choices = _CHOICES.get(sub[-2:])
            if choices is not None and kw[f.name] not in choices:
                _fail(f"must be one of {choices}, got {kw[f.name]!r}", text, sub)
        elif f.default is MISSING and f.default_factory is MISSING:
            _fail("required key missing", text, sub)
    return cls(**kw)


def _normalise(cfg: RunConfig, text=None) -> RunConfig:
    """Fill derived defaults explicitly and check cross-field constraints."""
    if cfg.schema_version != SCHEMA_VERSION:
        _fail(f"unsupported schema version {cfg.schema_version} (expected {SCHEMA_VERSION})", text, ("schema_version",))
    soils = {}
    for name in ("rhizosphere", "bulk"):
        s = getattr(cfg, name)
        if s.delta is None:
            s = replace(s, delta=1e-2 * (s.theta_sat - s.theta_res))
        soils[name] = s
    cell = cfg.cell
    if cell.mode == "laminate" and cell.fractions is None:
        _fail("laminate mode needs explicit fractions", text, ("cell", "fractions"))
    if cell.fractions is not None and len(cell.fractions) != 3:
        _fail("fractions must hold three numbers (root, rhizosphere, bulk)", text, ("cell", "fractions"))
    if not 0.0 < cell.rho_min < cell.rho_max or cell.rho_nodes < 2:
        _fail("need 0 < rho_min < rho_max and rho_nodes >= 2", text, ("cell",))
    if not cfg.micro.eps or any(e <= 0.0 for e in cfg.micro.eps):
        _fail("eps list must be non-empty and positive", text, ("micro", "eps"))
    if cfg.micro.snapshot_stride < 1:
        _fail("snapshot_stride must be >= 1", text, ("micro", "snapshot_stride"))
    if cfg.schedule.duration < 0.0:
        _fail("duration must be non-negative", text, ("schedule", "duration"))
    times = sorted(set(cfg.schedule.snapshot_times))
    if any(t <= 0.0 or t > cfg.schedule.duration for t in times):
        _fail("snapshot times must lie in (0, duration]", text, ("schedule", "snapshot_times"))
    if cfg.initial.kind == "file" and not cfg.initial.path:
        _fail("initial kind 'file' needs a path", text, ("initial", "path"))
    solver = cfg.solver
    if solver.tau_max is None:
        solver = replace(solver, tau_max=solver.tau)
    return replace(
        cfg,
        rhizosphere=soils["rhizosphere"],
        bulk=soils["bulk"],
        schedule=replace(cfg.schedule, snapshot_times=times),
        solver=solver,
    )


def parse_config(text: str) -> RunConfig:
    """Parse and normalise a JSON config document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"line {err.lineno}: invalid JSON: {err.msg}") from None
    return _normalise(_build(RunConfig, doc, text), text)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text)


def to_document(cfg: RunConfig) -> dict:
    return asdict(cfg)


def emit_config(cfg: RunConfig) -> str:
    """Canonical JSON text; floats use the shortest round-tripping repr."""
    return json.dumps(to_document(cfg), indent=2) + "\n"

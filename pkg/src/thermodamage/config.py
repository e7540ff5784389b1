"""Run configuration: INI parsing, validation, field presets and the simulation entry point.

Example::

    [mesh]
    extents = 0 1
    resolution = 17

    [material]
    kappa = 2
    p_exponent = 3
    mu_flag = 1

    [initial]
    theta0 = cosine 0.5 0.1
    u0 = sine 0.3
    chi0 = constant 0.9

    [time]
    T = 1
    tau = 0.015625

Field presets are whitespace separated: a keyword followed by numbers (see
:func:`scalar_preset` and :func:`source_preset`).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

import numpy as np

from .material import MaterialParams, PotentialW
from .mesh import Mesh, build_mesh
from .stepper import Discretization, SchemeOptions, SourceTerms, Trajectory, initial_state, simulate


class ConfigError(ValueError):
    """Configuration violates a data condition; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class MeshSpec:
    extents: tuple = ((0.0, 1.0),)
    resolution: tuple = (17,)

    @property
    def dim(self) -> int:
        return len(self.extents)

    def build(self) -> Mesh:
        return build_mesh(self.extents, self.resolution)


@dataclass(frozen=True)
class InitialSpec:
    theta0: str = "constant 0.5"
    u0: str = "zero"
    v0: str = "zero"
    chi0: str = "constant 1"


@dataclass(frozen=True)
class SourceSpec:
    f: str = "zero"
    g: str = "zero"
    h: str = "zero"


@dataclass(frozen=True)
class TimeSpec:
    T: float = 1.0
    tau: float = 1.0 / 64


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "output"
    snapshot_every: int = 1


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    material: MaterialParams = field(default_factory=MaterialParams)
    potential: PotentialW = field(default_factory=PotentialW)
    initial: InitialSpec = field(default_factory=InitialSpec)
    sources: SourceSpec = field(default_factory=SourceSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    options: SchemeOptions = field(default_factory=SchemeOptions)
    output: OutputSpec = field(default_factory=OutputSpec)

    def with_tau(self, tau: float) -> "RunConfig":
        return dataclasses.replace(self, time=dataclasses.replace(self.time, tau=tau))

    def with_material(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, material=dataclasses.replace(self.material, **kw))

    def with_options(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, options=dataclasses.replace(self.options, **kw))

    def with_output(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, output=dataclasses.replace(self.output, **kw))

    def to_text(self) -> str:
        return config_to_text(self)


# --- presets ----------------------------------------------------------------------

def _words(spec: str):
    parts = spec.split()
    if not parts:
        raise ValueError("empty preset")
    try:
        nums = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise ValueError(f"preset {spec!r}: arguments must be numbers") from exc
    return parts[0].lower(), nums


def _unit_coords(x: np.ndarray, extents) -> np.ndarray:
    lo = np.array([e[0] for e in extents])
    hi = np.array([e[1] for e in extents])
    return (x - lo) / (hi - lo)


def scalar_preset(spec: str, x: np.ndarray, extents) -> np.ndarray:
    """Nodal scalar field from a preset string.

    ``constant c``; ``cosine mean amp [k]`` = mean + amp prod cos(k pi xhat);
    ``sine amp`` = amp prod sin(pi xhat) (vanishes on the boundary);
    ``gaussian amp centre width [base]``; ``linear a b`` = a + b xhat_1,
    where xhat are coordinates scaled to the unit box.
    """
    kind, a = _words(spec)
    xh = _unit_coords(x, extents)
    need = {"constant": 1, "cosine": 2, "sine": 1, "gaussian": 3, "linear": 2, "zero": 0}
    if kind not in need:
        raise ValueError(f"unknown field preset {kind!r}")
    if len(a) < need[kind]:
        raise ValueError(f"preset {kind!r} needs {need[kind]} numbers")
    if kind == "zero":
        return np.zeros(len(x))
    if kind == "constant":
        return np.full(len(x), a[0])
    if kind == "cosine":
        k = a[2] if len(a) > 2 else 1.0
        return a[0] + a[1] * np.prod(np.cos(k * np.pi * xh), axis=1)
    if kind == "sine":
        return a[0] * np.prod(np.sin(np.pi * xh), axis=1)
    if kind == "gaussian":
        base = a[3] if len(a) > 3 else 0.0
        r2 = np.sum((xh - a[1]) ** 2, axis=1)
        return base + a[0] * np.exp(-r2 / (2.0 * a[2] ** 2))
    return a[0] + a[1] * xh[:, 0]


def vector_preset(spec: str, x: np.ndarray, extents) -> np.ndarray:
    """Nodal vector field: a scalar preset applied to every component (``zero`` allowed)."""
    s = scalar_preset(spec, x, extents)
    return np.repeat(s[:, None], x.shape[1], axis=1)


def source_preset(spec: str, x: np.ndarray, extents, vector: bool = False):
    """Time-dependent source ``t -> nodal array`` from a preset string.

    ``zero``; ``constant c``; ``ramp c t_ramp`` = c min(t / t_ramp, 1);
    ``gaussian amp centre width`` (in space, constant in time);
    ``product amp omega`` = amp prod sin(pi xhat) (1 + cos(omega t)) / 2.
    """
    kind, a = _words(spec)
    xh = _unit_coords(x, extents)
    need = {"zero": 0, "constant": 1, "ramp": 2, "gaussian": 3, "product": 2}
    if kind not in need:
        raise ValueError(f"unknown source preset {kind!r}")
    if len(a) < need[kind]:
        raise ValueError(f"source preset {kind!r} needs {need[kind]} numbers")
    n = len(x)
    if kind == "zero":
        space, time = np.zeros(n), (lambda t: 1.0)
    elif kind == "constant":
        space, time = np.full(n, a[0]), (lambda t: 1.0)
    elif kind == "ramp":
        space, time = np.full(n, a[0]), (lambda t: min(t / a[1], 1.0))
    elif kind == "gaussian":
        space = a[0] * np.exp(-np.sum((xh - a[1]) ** 2, axis=1) / (2.0 * a[2] ** 2))
        time = lambda t: 1.0  # noqa: E731
    else:
        space = a[0] * np.prod(np.sin(np.pi * xh), axis=1)
        time = lambda t: 0.5 * (1.0 + np.cos(a[1] * t))  # noqa: E731
    if vector:
        space = np.repeat(space[:, None], x.shape[1], axis=1)
    return lambda t: space * time(t)


# --- (de)serialisation ------------------------------------------------------------

SECTIONS = ("mesh", "material", "potential", "initial", "sources", "time", "modes", "tolerances", "output")
MODE_KEYS = ("nu", "reg_nu", "reg_eta", "M0")


def _coerce(value: str, typ):
    typ = str(typ)
    if "int" in typ and "float" not in typ:
        return int(value)
    if "float" in typ:
        if value.strip().lower() in ("none", ""):
            return None
        return float(value)
    return value.strip()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_text(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["mesh"] = {
        "extents": "; ".join(f"{_fmt(lo)} {_fmt(hi)}" for lo, hi in cfg.mesh.extents),
        "resolution": " ".join(str(r) for r in cfg.mesh.resolution),
    }
    cp["material"] = {f.name: _fmt(getattr(cfg.material, f.name)) for f in fields(MaterialParams)}
    cp["potential"] = {f.name: _fmt(getattr(cfg.potential, f.name)) for f in fields(PotentialW) if f.init and not f.name.startswith("_")}
    cp["initial"] = {f.name: getattr(cfg.initial, f.name) for f in fields(InitialSpec)}
    cp["sources"] = {f.name: getattr(cfg.sources, f.name) for f in fields(SourceSpec)}
    cp["time"] = {"T": _fmt(cfg.time.T), "tau": _fmt(cfg.time.tau)}
    cp["modes"] = {k: _fmt(getattr(cfg.options, k)) for k in MODE_KEYS}
    cp["tolerances"] = {f.name: _fmt(getattr(cfg.options, f.name)) for f in fields(SchemeOptions) if f.name not in MODE_KEYS}
    cp["output"] = {"dir": cfg.output.dir, "snapshot_every": str(cfg.output.snapshot_every)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _section_to(cls, sec, errors, name, skip=()):
    known = {f.name: f for f in fields(cls) if f.init and not f.name.startswith("_")}
    kw = {}
    for key, raw in sec.items():
        if key in skip:
            continue
        if key not in known:
            errors.append(f"[{name}] unknown key {key!r}")
            continue
        try:
            kw[key] = _coerce(raw, known[key].type)
        except ValueError:
            errors.append(f"[{name}] {key}: cannot parse {raw!r}")
    return kw


def parse_config(text: str, validate: bool = True) -> RunConfig:
    """Parse and validate an INI configuration; raises :class:`ConfigError` listing all violations."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax error: {exc}"]) from exc
    errors = []
    for s in cp.sections():
        if s not in SECTIONS:
            errors.append(f"unknown section [{s}]")
    mesh = MeshSpec()
    if cp.has_section("mesh"):
        sec = cp["mesh"]
        try:
            ext = tuple(tuple(float(v) for v in part.split()) for part in sec.get("extents", "0 1").split(";"))
            if any(len(e) != 2 for e in ext):
                raise ValueError
            res = tuple(int(r) for r in sec.get("resolution", "17").split())
            if len(res) == 1 and len(ext) > 1:
                res = res * len(ext)
            mesh = MeshSpec(ext, res)
        except ValueError:
            errors.append("[mesh] extents must be 'lo hi' pairs separated by ';' and resolution integers")
        for key in sec:
            if key not in ("extents", "resolution"):
                errors.append(f"[mesh] unknown key {key!r}")

    def build(cls, name, default, skip=()):
        if not cp.has_section(name):
            return default
        kw = _section_to(cls, cp[name], errors, name, skip)
        try:
            return cls(**kw) if default is None else dataclasses.replace(default, **kw)
        except (TypeError, ValueError) as exc:
            errors.append(f"[{name}] {exc}")
            return default

    material = build(MaterialParams, "material", MaterialParams())
    potential = build(PotentialW, "potential", PotentialW())
    initial = build(InitialSpec, "initial", InitialSpec())
    sources = build(SourceSpec, "sources", SourceSpec())
    time = TimeSpec()
    if cp.has_section("time"):
        kw = _section_to(TimeSpec, cp["time"], errors, "time")
        time = dataclasses.replace(time, **kw)
    options = SchemeOptions()
    for name in ("modes", "tolerances"):
        if cp.has_section(name):
            kw = _section_to(SchemeOptions, cp[name], errors, name)
            bad = set(kw) - set(MODE_KEYS) if name == "modes" else set(kw) & set(MODE_KEYS)
            for b in bad:
                errors.append(f"[{name}] key {b!r} belongs to the other options section")
            options = dataclasses.replace(options, **kw)
    output = build(OutputSpec, "output", OutputSpec())
    cfg = RunConfig(mesh, material, potential, initial, sources, time, options, output)
    if errors:
        raise ConfigError(errors)
    if validate:
        errors = validate_config(cfg)
        if errors:
            raise ConfigError(errors)
    return cfg


def validate_config(cfg: RunConfig) -> list:
    """Every violated data condition, as readable messages."""
    errs = []
    d = cfg.mesh.dim
    if d not in (1, 2):
        errs.append("mesh: dimension must be 1 or 2")
        return errs
    if any(r < 2 for r in cfg.mesh.resolution) or len(cfg.mesh.resolution) != d:
        errs.append("mesh: need at least 2 nodes per axis and one resolution per axis")
        return errs
    if any(not hi > lo for lo, hi in cfg.mesh.extents):
        errs.append("mesh: degenerate extents")
        return errs
    errs += [f"material: {e}" for e in cfg.material.validate(d)]
    errs += [f"potential: {e}" for e in cfg.potential.validate(cfg.material.mu_flag)]
    if not cfg.time.tau > 0 or cfg.time.T < 0:
        errs.append("time: tau > 0 and T >= 0 required")
    else:
        K = round(cfg.time.T / cfg.time.tau)
        if abs(K * cfg.time.tau - cfg.time.T) > 1e-9 * max(1.0, cfg.time.T):
            errs.append("time: T must be an integer multiple of tau")
    o = cfg.options
    if o.nu < 0 or o.reg_nu < 0:
        errs.append("modes: nu and reg_nu must be nonnegative")
    if o.M0 is not None and not o.M0 > 0:
        errs.append("modes: M0 must be positive")
    mesh = cfg.mesh.build()
    x, ext = mesh.nodes, cfg.mesh.extents
    try:
        theta0 = scalar_preset(cfg.initial.theta0, x, ext)
        chi0 = scalar_preset(cfg.initial.chi0, x, ext)
        vector_preset(cfg.initial.u0, x, ext)
        vector_preset(cfg.initial.v0, x, ext)
    except ValueError as exc:
        errs.append(f"initial: {exc}")
        return errs
    ts = cfg.material.theta_star
    if np.min(theta0) < ts:
        errs.append(f"initial temperature: theta0 >= theta_star = {ts} required (min {np.min(theta0):.6g})")
    if cfg.potential.beta_kind == "indicator" and np.min(chi0) < 0:
        errs.append("initial internal variable: chi0 >= 0 required by the indicator potential")
    if cfg.material.mu_flag == 1 and (np.min(chi0) < 0 or np.max(chi0) > 1):
        errs.append("initial internal variable: chi0 in [0, 1] required when mu = 1")
    tgrid = np.linspace(0.0, max(cfg.time.T, 0.0), 65)
    for name, vec in (("f", True), ("g", False), ("h", False)):
        try:
            src = source_preset(getattr(cfg.sources, name), x, ext, vector=vec)
        except ValueError as exc:
            errs.append(f"sources: {exc}")
            continue
        if name in ("g", "h"):
            lo = min(float(np.min(src(t))) for t in tgrid)
            if lo < 0:
                what = "heat source g" if name == "g" else "boundary flux h"
                errs.append(f"sources: {what} must be nonnegative (minimum {lo:.6g})")
    return errs


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config(text)


# --- orchestration ----------------------------------------------------------------

def build_problem(cfg: RunConfig):
    """Discretisation, initial state and sources of a configuration."""
    mesh = cfg.mesh.build()
    disc = Discretization(mesh, cfg.material, cfg.potential, cfg.options)
    x, ext = mesh.nodes, cfg.mesh.extents
    state0 = initial_state(
        disc,
        scalar_preset(cfg.initial.theta0, x, ext),
        vector_preset(cfg.initial.u0, x, ext),
        vector_preset(cfg.initial.v0, x, ext),
        scalar_preset(cfg.initial.chi0, x, ext),
    )
    sources = SourceTerms(
        source_preset(cfg.sources.f, x, ext, vector=True),
        source_preset(cfg.sources.g, x, ext),
        source_preset(cfg.sources.h, x, ext),
    )
    return disc, state0, sources


def run_simulation(cfg: RunConfig) -> Trajectory:
    """Validate the configuration and integrate it over [0, T]."""
    errs = validate_config(cfg)
    if errs:
        raise ConfigError(errs)
    disc, state0, sources = build_problem(cfg)
    return simulate(disc, state0, sources, cfg.time.T, cfg.time.tau, theta_star=cfg.material.theta_star)

"""INI run configuration: parsing, validation and the reference file.

Every section maps onto one frozen dataclass; keys are the dataclass field
names. Unknown sections or keys are errors, and every error message carries
the line it refers to.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace

from . import constitutive as cv
from . import penalization as pen
from .errors import ConfigError, NsfpError
from .pde_solver import StepConfig
from .poisson import GravityParams

PROFILES = ("uniform", "gaussian_blob", "hydrostatic_1d")
DOMAINS = ("ellipse", "box")
BOUNDARY_KINDS = ("constant", "angular")


@dataclass(frozen=True)
class GridConfig:
    dim: int = 2
    cells: int = 64
    half_width: float = 1.2

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.cells < 8:
            raise ConfigError(f"cells must be at least 8, got {self.cells}")
        if not self.half_width > 0:
            raise ConfigError("half_width must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    profile: str = "gaussian_blob"
    density: float = 5.0
    sigma: float = 0.14
    theta0: float = 1.0
    domain: str = "ellipse"
    semi_axes: tuple = (0.9, 0.75, 0.75)
    velocity: str = "rigid_rotation"
    rate: float = 0.5
    amplitude: float = 0.0
    frequency: float = 0.0
    support_radius: float = 1.1
    cutoff_width: float = 0.15
    velocity_table: str = ""
    boundary: str = "constant"
    theta_B: float = 1.0
    theta_B_amplitude: float = 0.0
    M0: float = 0.5
    t_end: float = 0.5

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if self.boundary not in BOUNDARY_KINDS:
            raise ConfigError(f"boundary must be one of {BOUNDARY_KINDS}, got {self.boundary!r}")
        if not self.density >= 0:
            raise ConfigError("density must be nonnegative")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.theta0 > 0:
            raise ConfigError("theta0 must be positive")
        if any(not a > 0 for a in self.semi_axes):
            raise ConfigError("semi_axes must be positive")
        if not self.theta_B - abs(self.theta_B_amplitude) > 0:
            raise ConfigError("theta_B must stay positive: need theta_B > |theta_B_amplitude|")
        if not self.M0 >= 0:
            raise ConfigError("M0 must be nonnegative")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty parameters; the floors follow the scaling schedule of ``h``
    unless given explicitly (``auto`` keeps the schedule)."""

    eps: float = 1e-3
    delta: float = 1e-3
    beta: float = 4.0
    h: float = 0.35
    lambda_: float | None = None
    omega: float | None = None
    nu: float | None = None
    xi: float | None = None
    enabled: bool = True

    def params(self, alpha):
        sched = pen.scaling_schedule(self.h)
        for key, name in (("lambda_", "lambda_"), ("omega", "omega_"), ("nu", "nu_"), ("xi", "xi_")):
            v = getattr(self, key)
            if v is not None:
                sched[name] = v
        return pen.PenaltyParams(eps=self.eps, delta=self.delta, beta=self.beta, alpha=alpha, **sched)


@dataclass(frozen=True)
class GravityConfig:
    enabled: bool = True
    g: float = 8.0
    tol: float = 1e-10
    max_iter: int = 2000
    method: str = "dct"

    def params(self):
        return GravityParams(self.g, self.tol, self.max_iter, self.method) if self.enabled else None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "output"
    diagnostics_file: str = "diagnostics.csv"
    snapshot_every: int = 0
    diagnostics_every: int = 1

    def __post_init__(self):
        if self.snapshot_every < 0 or self.diagnostics_every < 1:
            raise ConfigError("snapshot_every must be >= 0 and diagnostics_every >= 1")


@dataclass(frozen=True)
class SweepConfig:
    eps_values: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    h_values: tuple = (0.5, 0.35, 0.25, 0.18)
    delta_values: tuple = (1e-2, 1e-3, 1e-4, 1e-5)
    eps_min_slope: float = 0.8
    h_min_slope: float = 0.0
    h_min_r2: float = 0.9
    delta_min_slope: float = 0.9


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = GridConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    eos: cv.EosParams = cv.EosParams()
    transport: cv.TransportParams = cv.TransportParams()
    penalty: PenaltyConfig = PenaltyConfig()
    gravity: GravityConfig = GravityConfig()
    step: StepConfig = StepConfig()
    output: OutputConfig = OutputConfig()
    sweep: SweepConfig = SweepConfig()

    @property
    def penalty_params(self):
        return self.penalty.params(self.transport.alpha)


SECTIONS = {
    "grid": GridConfig,
    "scenario": ScenarioConfig,
    "eos": cv.EosParams,
    "transport": cv.TransportParams,
    "penalty": PenaltyConfig,
    "gravity": GravityConfig,
    "step": StepConfig,
    "output": OutputConfig,
    "sweep": SweepConfig,
}
REQUIRED_SECTIONS = ("grid", "scenario", "penalty")
# ini key -> dataclass attribute where they differ
_ALIASES = {"lambda": "lambda_"}
_SKIP = {"structural"}

DOCS = {
    "grid": "uniform box [-half_width, half_width]^dim with `cells` cells per side",
    "scenario": "initial data, moving domain and interface temperature",
    "eos": "equation of state: radiation constant, degenerate coefficient, structural band",
    "transport": "viscosity and conductivity envelopes; alpha is the conductivity growth exponent",
    "penalty": "penalty and regularisation; floors follow h unless set (auto)",
    "gravity": "self-gravity; method is dct or cg",
    "step": "time step control, floors, band widths and solver tolerances",
    "output": "output directory and cadences (steps; snapshot_every = 0 writes the final state only)",
    "sweep": "parameter ladders (strictly decreasing, at least 4) and slope thresholds",
}


def _ini_key(name):
    for k, v in _ALIASES.items():
        if v == name:
            return k
    return name


def _format_value(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


def _parse_scalar(text, default, name):
    t = text.strip()
    if isinstance(default, bool):
        low = t.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"{name} expects true/false, got {t!r}")
    if isinstance(default, int):
        return int(t)
    if isinstance(default, float) or default is None:
        if default is None and t.lower() == "auto":
            return None
        return float(t)
    if isinstance(default, str):
        return t
    raise ValueError(f"unsupported type for {name}")


def _parse_value(text, default, name):
    if isinstance(default, tuple):
        parts = [p for p in (x.strip() for x in text.split(",")) if p]
        if not parts:
            raise ValueError(f"{name} expects a comma-separated list")
        return tuple(float(p) for p in parts)
    return _parse_scalar(text, default, name)


def _line_index(text):
    """Map ``(section, key)`` and ``section`` to 1-based line numbers."""
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault(section, no)
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _blame(message, keys, lines, section):
    """Line of the first key of ``section`` mentioned in ``message``."""
    for key in sorted(keys, key=len, reverse=True):
        if re.search(rf"\b{re.escape(key.rstrip('_'))}\b", message, re.IGNORECASE):
            return lines.get((section, key.lower()), lines.get(section))
    return lines.get(section)


def parse_config_text(text):
    lines = _line_index(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno) from None
    present = [s.lower() for s in parser.sections()]
    missing = [s for s in REQUIRED_SECTIONS if s not in present]
    if missing:
        raise ConfigError("missing required sections: " + ", ".join(f"[{s}]" for s in missing)
                          + " (all sections: " + ", ".join(f"[{s}]" for s in SECTIONS) + ")")
    built = {}
    for sec in parser.sections():
        name = sec.lower()
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", lines.get(name))
        cls = SECTIONS[name]
        defaults = {f.name: f.default for f in fields(cls) if f.name not in _SKIP}
        by_lower = {_ini_key(k).lower(): k for k in defaults}
        values = {}
        for key, raw in parser.items(sec):
            attr = by_lower.get(key)
            if attr is None:
                valid = ", ".join(_ini_key(k) for k in defaults)
                raise ConfigError(f"unknown key {key!r} in [{name}]; valid keys: {valid}",
                                  lines.get((name, key)))
            try:
                values[attr] = _parse_value(raw, defaults[attr], key)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", lines.get((name, key))) from None
        try:
            built[name] = cls(**values)
        except (NsfpError, ValueError) as exc:
            msg = str(exc)
            if isinstance(exc, ConfigError) and exc.line is not None:
                raise
            raise ConfigError(f"[{name}] {msg}",
                              _blame(msg, [_ini_key(k) for k in values], lines, name)) from None
    cfg = RunConfig(**built)
    try:
        cfg.penalty_params
    except (NsfpError, ValueError) as exc:
        msg = str(exc)
        keys = [_ini_key(f.name) for f in fields(PenaltyConfig)]
        raise ConfigError(f"[penalty] {msg}", _blame(msg, keys, lines, "penalty")) from None
    _check_cross(cfg, lines)
    return cfg


def _check_cross(cfg: RunConfig, lines):
    sc = cfg.scenario
    if sc.support_radius >= cfg.grid.half_width:
        raise ConfigError("support_radius must be smaller than the box half width",
                          lines.get(("scenario", "support_radius"), lines.get("scenario")))
    if not 0 < sc.cutoff_width <= sc.support_radius:
        raise ConfigError("cutoff_width must lie in (0, support_radius]",
                          lines.get(("scenario", "cutoff_width"), lines.get("scenario")))
    if sc.velocity == "rigid_rotation" and cfg.grid.dim < 2:
        raise ConfigError("rigid rotation needs dim >= 2", lines.get(("scenario", "velocity")))
    for key in ("eps_values", "h_values", "delta_values"):
        vals = getattr(cfg.sweep, key)
        if len(vals) < 4 or any(b >= a for a, b in zip(vals, vals[1:])) or min(vals) <= 0:
            raise ConfigError(f"{key} must be a strictly decreasing list of at least 4 positive values",
                              lines.get(("sweep", key), lines.get("sweep")))


def parse_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def format_config(cfg: RunConfig = RunConfig(), comments=True):
    """INI text that :func:`parse_config_text` maps back onto ``cfg``."""
    out = []
    if comments:
        out.append("# nsfp run configuration; every key is optional within its section.")
        out.append("# Sections " + ", ".join(f"[{s}]" for s in REQUIRED_SECTIONS) + " are required.")
        out.append("")
    for name in SECTIONS:
        obj = getattr(cfg, name)
        if comments:
            out.append(f"# {DOCS[name]}")
        out.append(f"[{name}]")
        for f in fields(obj):
            if f.name in _SKIP:
                continue
            out.append(f"{_ini_key(f.name)} = {_format_value(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def with_overrides(cfg: RunConfig, **sections):
    """Copy of ``cfg`` with per-section field overrides, e.g. ``penalty={'eps': 1e-2}``."""
    updates = {name: replace(getattr(cfg, name), **vals) for name, vals in sections.items()}
    return replace(cfg, **updates)

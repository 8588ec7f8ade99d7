"""Sectioned key-value experiment configuration.

The document has four flat sections, ``[scenario]``, ``[grid]``, ``[solver]``
and ``[experiment]``. Every key is optional; missing keys take the reference
system defaults. Physical quantities may carry a unit suffix (``-89 dBm``,
``300 km/h``, ``38 GHz``, ``1 us``) and are converted to SI at parse time.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace

from ..errors import ConfigParseError, ConfigurationError
from ..optimizer import METHODS, STARTS, SolverConfig
from ..otfs import OtfsGrid
from ..scenario import SimParams

KINDS = ("peb-validate", "tradeoff", "velocity-sweep", "allocate", "oracle-check")
FORMATS = ("csv", "json")
ALLOCATIONS = ("algorithm1", "equal-power")
CP_MODES = ("per-symbol", "per-frame", "none")

# kinds that evaluate the exact FIM default to a small grid and array
DESK_KINDS = ("peb-validate", "oracle-check")
DESK_DEFAULTS = {"m": 16, "n": 16, "m_t": 4}

_UNITS = {
    "power": {"w": 1.0, "mw": 1e-3, "dbm": "dbm", "dbw": "dbw"},
    "area": {"m2": 1.0, "dbsm": "db"},
    "speed": {"m/s": 1.0, "km/h": 1.0 / 3.6},
    "freq": {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "length": {"m": 1.0, "km": 1e3},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf)\s*(.*?)\s*$")


@dataclass
class ExperimentConfig:
    kind: str = "allocate"
    params: SimParams = field(default_factory=SimParams)
    grid: OtfsGrid = field(default_factory=lambda: OtfsGrid(128, 128, 5e5, 1e-6))
    solver: SolverConfig = field(default_factory=SolverConfig)
    trials: int = 1
    seed: int = 0
    threads: int = 0  # 0: use every available core
    out: str = ""
    format: str = "csv"
    # sweep axes; an empty tuple means the single value of the base config
    target_counts: tuple = ()
    rcs_variances: tuple = ()  # m^2
    gamma_values: tuple = ()  # PEB thresholds, meters
    velocities: tuple = ()  # m/s
    grid_pairs: tuple = ()  # (M, N)
    ap_antenna_pairs: tuple = ()  # (N_AP, M_t)
    allocation: str = "algorithm1"
    cp_overhead: str = "per-symbol"
    gain_mode: str = "realized"
    pointing_error_std: float = 0.0  # radians
    mean_paths: float = 4.0
    jacobian_convention: str = "printed"
    timing: bool = False

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.threads < 0:
            raise ConfigurationError("threads must be >= 0")
        if self.format not in FORMATS:
            raise ConfigurationError(f"format must be one of {FORMATS}")
        if self.allocation not in ALLOCATIONS:
            raise ConfigurationError(f"allocation must be one of {ALLOCATIONS}")
        if self.cp_overhead not in CP_MODES:
            raise ConfigurationError(f"cp_overhead must be one of {CP_MODES}")
        if self.gain_mode not in ("realized", "expected"):
            raise ConfigurationError("gain_mode must be 'realized' or 'expected'")
        if self.jacobian_convention not in ("printed", "gradient"):
            raise ConfigurationError("jacobian_convention must be 'printed' or 'gradient'")
        if self.pointing_error_std < 0 or self.mean_paths <= 0:
            raise ConfigurationError("pointing_error_std must be >= 0 and mean_paths > 0")
        if any(t < 1 for t in self.target_counts):
            raise ConfigurationError("target counts must be >= 1")
        if any(not g > 0 for g in self.gamma_values):
            raise ConfigurationError("PEB thresholds must be > 0")
        if any(v < 0 for v in self.velocities):
            raise ConfigurationError("velocities must be >= 0")
        if any(not s > 0 for s in self.rcs_variances):
            raise ConfigurationError("RCS variances must be > 0")
        for m, n in self.grid_pairs:
            OtfsGrid(m, n, self.grid.delta_f, self.grid.tau_max)
        if any(a < 1 or b < 1 for a, b in self.ap_antenna_pairs):
            raise ConfigurationError("(N_AP, M_t) pairs must be positive")
        return self

    @property
    def sweep(self):
        """Sweep axes of this kind as ``(name, values)``; single-valued when unset."""
        p = self.params
        axes = {
            "peb-validate": [
                ("t_g", self.target_counts or (p.t_g,)),
                ("rcs_variance", self.rcs_variances or (p.rcs_variance,)),
            ],
            "tradeoff": [
                ("ap_antenna", self.ap_antenna_pairs or ((p.n_ap, p.m_t),)),
                ("gamma_peb", self.gamma_values or (self.solver.gamma_peb,)),
            ],
            "velocity-sweep": [
                ("grid", self.grid_pairs or ((self.grid.m, self.grid.n),)),
                ("v_max", self.velocities or (p.v_max,)),
            ],
            "allocate": [],
            "oracle-check": [],
        }
        return axes[self.kind]


# ------------------------------------------------------------------ parsing

_SCENARIO_KEYS = {
    "area_side": "length",
    "n_ap": "int",
    "m_t": "int",
    "k_u": "int",
    "t_g": "int",
    "n_rx_per_target": "int",
    "p_d": "power",
    "noise_power": "power",
    "rcs_variance": "area",
    "carrier_freq": "freq",
    "g_t": "float",
    "g_r": "float",
    "v_max": "speed",
    "ap_axis_deg": "float",
    "shadowing": "bool",
    "shadowing_std_db": "float",
    "min_distance": "length",
    "receiver_mode": "str",
    "pointing_error_std": "angle",
    "gain_mode": "str",
    "mean_paths": "float",
    "jacobian_convention": "str",
}
_GRID_KEYS = {"m": "int", "n": "int", "delta_f": "freq", "tau_max": "time", "cp_overhead": "str"}
_SOLVER_KEYS = {
    "tolerance": "float",
    "max_iters": "int",
    "gamma_peb": "length",
    "method": "str",
    "start": "str",
    "ipm_tol": "float",
    "bisection_tol": "float",
    "bisection_max_steps": "int",
    "smoothing": "float",
    "pg_max_iters": "int",
}
_EXPERIMENT_KEYS = {
    "kind": "str",
    "trials": "int",
    "seed": "int",
    "threads": "int",
    "out": "str",
    "format": "str",
    "allocation": "str",
    "timing": "bool",
    "target_counts": "int-list",
    "rcs_variances": "area-list",
    "gamma_values": "length-list",
    "velocities": "speed-list",
    "grid_pairs": "pair-list",
    "ap_antenna_pairs": "pair-list",
}
SECTIONS = {
    "scenario": _SCENARIO_KEYS,
    "grid": _GRID_KEYS,
    "solver": _SOLVER_KEYS,
    "experiment": _EXPERIMENT_KEYS,
}


def _quantity(text, kind, line):
    m = _NUMBER.match(text)
    if not m:
        raise ConfigParseError(f"expected a number, got {text!r}", line)
    value = float(m.group(1))
    unit = m.group(2).lower().replace(" ", "")
    table = _UNITS[kind]
    if not unit:
        return value
    if unit not in table:
        raise ConfigParseError(f"unit {m.group(2)!r} not allowed here (expected one of {sorted(table)})", line)
    factor = table[unit]
    if factor == "dbm":
        return 10.0 ** ((value - 30.0) / 10.0)
    if factor in ("dbw", "db"):
        return 10.0 ** (value / 10.0)
    return value * factor


def _convert(text, kind, line):
    text = text.strip()
    if kind == "str":
        return text
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigParseError(f"expected a boolean, got {text!r}", line)
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigParseError(f"expected an integer, got {text!r}", line) from None
    if kind == "float":
        m = _NUMBER.match(text)
        if not m or m.group(2):
            raise ConfigParseError(f"expected a plain number, got {text!r}", line)
        return float(m.group(1))
    if kind.endswith("-list"):
        base = kind[: -len("-list")]
        if base == "pair":
            return tuple(_pair(s, line) for s in text.replace(";", ",").split(",") if s.strip())
        parts = [s.strip() for s in text.split(",") if s.strip()]
        if not parts:
            raise ConfigParseError("empty list", line)
        return tuple(_convert(s, base, line) for s in parts)
    return _quantity(text, kind, line)


def _pair(text, line):
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m:
        raise ConfigParseError(f"expected a pair like '128x128', got {text.strip()!r}", line)
    return int(m.group(1)), int(m.group(2))


def _key_lines(text):
    # configparser drops line numbers; recover them for error messages
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
            lines.setdefault((section, None), no)
        elif section is not None and re.match(r"^[^=:]+[=:]", s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), no)
    return lines


def parse_config(text, kind=None) -> ExperimentConfig:
    """Parse a configuration document.

    ``kind`` (the CLI subcommand) overrides ``[experiment] kind``. The
    exact-FIM kinds fall back to a 16x16 grid and 4 antennas unless the
    document sets ``m``, ``n`` or ``m_t`` itself.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigParseError(f"malformed document: {exc}", getattr(exc, "lineno", None)) from None
    lines = _key_lines(text)
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigParseError(f"unknown section [{section}]", lines.get((section, None)))
        allowed = SECTIONS[section]
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in allowed:
                raise ConfigParseError(f"unknown key {key!r} in [{section}]", line)
            values[(section, key)] = (_convert(raw, allowed[key], line), line)
    return build_config(values, kind)


def build_config(values, kind=None) -> ExperimentConfig:
    def get(section, key, default):
        return values[(section, key)][0] if (section, key) in values else default

    def line_of(section, key):
        return values.get((section, key), (None, None))[1]

    kind = kind or get("experiment", "kind", "allocate")
    if kind not in KINDS:
        raise ConfigParseError(f"unknown experiment kind {kind!r}", line_of("experiment", "kind"))
    desk = kind in DESK_KINDS

    sim_kwargs = {}
    for key in _SCENARIO_KEYS:
        if (("scenario", key) in values) and key in {f.name for f in fields(SimParams)}:
            sim_kwargs[key] = values[("scenario", key)][0]
    if desk and "m_t" not in sim_kwargs:
        sim_kwargs["m_t"] = DESK_DEFAULTS["m_t"]
    try:
        params = SimParams(**sim_kwargs)
    except (ConfigurationError, TypeError) as exc:
        raise ConfigParseError(f"[scenario]: {exc}") from None

    m_default = DESK_DEFAULTS["m"] if desk else 128
    n_default = DESK_DEFAULTS["n"] if desk else 128
    try:
        grid = OtfsGrid(
            get("grid", "m", m_default),
            get("grid", "n", n_default),
            get("grid", "delta_f", 5e5),
            get("grid", "tau_max", 1e-6),
        )
    except ConfigurationError as exc:
        raise ConfigParseError(f"[grid]: {exc}") from None

    solver_kwargs = {k: values[("solver", k)][0] for k in _SOLVER_KEYS if ("solver", k) in values}
    if solver_kwargs.get("method", METHODS[0]) not in METHODS:
        raise ConfigParseError(f"method must be one of {METHODS}", line_of("solver", "method"))
    if solver_kwargs.get("start", STARTS[0]) not in STARTS:
        raise ConfigParseError(f"start must be one of {STARTS}", line_of("solver", "start"))
    try:
        solver = SolverConfig(**solver_kwargs)
    except ConfigurationError as exc:
        raise ConfigParseError(f"[solver]: {exc}") from None

    cfg = ExperimentConfig(
        kind=kind,
        params=params,
        grid=grid,
        solver=solver,
        trials=get("experiment", "trials", 1),
        seed=get("experiment", "seed", 0),
        threads=get("experiment", "threads", 0),
        out=get("experiment", "out", ""),
        format=get("experiment", "format", "csv").lower(),
        target_counts=get("experiment", "target_counts", ()),
        rcs_variances=get("experiment", "rcs_variances", ()),
        gamma_values=get("experiment", "gamma_values", ()),
        velocities=get("experiment", "velocities", ()),
        grid_pairs=get("experiment", "grid_pairs", ()),
        ap_antenna_pairs=get("experiment", "ap_antenna_pairs", ()),
        allocation=get("experiment", "allocation", "algorithm1"),
        cp_overhead=get("grid", "cp_overhead", "per-symbol"),
        gain_mode=get("scenario", "gain_mode", "realized"),
        pointing_error_std=get("scenario", "pointing_error_std", 0.0),
        mean_paths=get("scenario", "mean_paths", 4.0),
        jacobian_convention=get("scenario", "jacobian_convention", "printed"),
        timing=get("experiment", "timing", False),
    )
    try:
        return cfg.validate()
    except ConfigurationError as exc:
        # point at the first experiment key that could be responsible
        line = None
        for key in ("trials", "seed", "threads", "format", "allocation"):
            if key in str(exc):
                line = line_of("experiment", key)
                break
        raise ConfigParseError(str(exc), line) from None


def load_config(path, kind=None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, kind)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply CLI overrides (``None`` values are ignored) and revalidate."""
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw).validate()

"""Declarative run configuration: ``key = value`` lines grouped in sections.

Sections are [grid], [time], [fractional], [fluid], [polymer] and [output].
Values are read as Python literals (numbers, strings, lists); bare words are
kept as strings.  Unknown sections or keys are configuration errors.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "SimulationConfig", "load_config", "SECTIONS"]


class ConfigError(ValueError):
    """Invalid, inconsistent or missing configuration."""


SCENARIOS = ("tffp", "coupled", "channel")

# section -> {key: SimulationConfig attribute}
SECTIONS: dict[str, dict[str, str]] = {
    "grid": {"nx": "nx", "ny": "ny", "x_extent": "x_extent", "y_extent": "y_extent", "bc_x": "bc_x",
             "bc_y": "bc_y", "roughness_blocks": "roughness_blocks", "seed": "seed"},
    "time": {"dt": "dt", "T": "T", "order": "order", "dt_list": "dt_list"},
    "fractional": {"alpha": "alpha", "tol": "kernel_tol", "s_min": "s_min", "s_max": "s_max",
                   "kernel_file": "kernel_file"},
    "fluid": {"beta_over_Re": "beta_over_Re"},
    "polymer": {"De": "De", "epsilon": "epsilon", "one_minus_beta_over_Re": "one_minus_beta_over_Re"},
    "output": {"scenario": "scenario", "directory": "output_dir", "cadence": "cadence",
               "snapshot_cadence": "snapshot_cadence", "probe_times": "probe_times"},
}


@dataclass
class SimulationConfig:
    """Every parameter of one run; ``gamma`` is derived."""

    scenario: str = "channel"
    nx: int = 128
    ny: int = 32
    x_extent: tuple = (0.0, 2.2)
    y_extent: tuple = (0.0, 0.41)
    bc_x: str = "periodic"
    bc_y: str = "wall"
    roughness_blocks: int = 0
    seed: int = 0
    dt: float = 5e-3
    T: float = 2.0
    order: int = 2
    dt_list: tuple = ()
    alpha: float = 1.0
    kernel_tol: float = 1e-8
    s_min: float | None = None
    s_max: float | None = None
    kernel_file: str | None = None
    beta_over_Re: float = 1e-2
    De: float = 0.5
    epsilon: float = 1e-2
    one_minus_beta_over_Re: float = 1e-2
    output_dir: str | None = None
    cadence: int = 10
    snapshot_cadence: int = 0
    probe_times: tuple = ()
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()

    @property
    def gamma(self) -> float:
        return self.one_minus_beta_over_Re / self.De

    @property
    def s_range(self) -> tuple[float, float]:
        """Kernel fit range; defaults cover [1/(10 T), 10/dt_min]."""
        dt_min = min((self.dt, *self.dt_list))
        lo = self.s_min if self.s_min is not None else 1.0 / (10.0 * self.T)
        hi = self.s_max if self.s_max is not None else 10.0 / dt_min
        return float(lo), float(hi)

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.dt < self.T:
            raise ConfigError(f"need 0 < dt < T, got dt={self.dt}, T={self.T}")
        if any(not 0.0 < d < self.T for d in self.dt_list):
            raise ConfigError("every entry of dt_list must satisfy 0 < dt < T")
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if self.De <= 0 or self.epsilon < 0 or self.beta_over_Re <= 0 or self.one_minus_beta_over_Re < 0:
            raise ConfigError("need De > 0, epsilon >= 0, beta_over_Re > 0, one_minus_beta_over_Re >= 0")
        if self.nx < 4 or self.ny < 4:
            raise ConfigError(f"grid needs at least 4 cells per direction, got ({self.nx}, {self.ny})")
        for name in ("x_extent", "y_extent"):
            ext = tuple(getattr(self, name))
            if len(ext) != 2 or not ext[1] > ext[0]:
                raise ConfigError(f"{name} must be an increasing pair (lo, hi), got {ext}")
            setattr(self, name, tuple(float(v) for v in ext))
        if self.kernel_tol <= 0:
            raise ConfigError("kernel tolerance must be positive")
        if self.kernel_file is not None and not Path(self.kernel_file).is_file():
            raise ConfigError(f"kernel file {self.kernel_file!r} does not exist")
        if self.roughness_blocks and self.bc_y != "wall":
            raise ConfigError("roughness blocks need wall boundaries in y")
        self.dt_list = tuple(float(d) for d in self.dt_list)
        self.probe_times = tuple(float(t) for t in self.probe_times)

    def replace(self, **changes) -> "SimulationConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        """Short hash used to namespace outputs."""
        data = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "extra"}
        return hashlib.sha1(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:10]


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        return text


def load_config(path, overrides: dict | None = None, base: SimulationConfig | None = None) -> SimulationConfig:
    """Read ``path`` (may be ``None``) on top of ``base``, then apply ``overrides``."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {str(path)!r} does not exist")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}] in {path}; expected one of {sorted(SECTIONS)}")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {sorted(SECTIONS[section])}")
                values[SECTIONS[section][key]] = _parse_value(raw.strip())
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    base = base or SimulationConfig()
    known = {f.name for f in dataclasses.fields(SimulationConfig)}
    bad = set(values) - known
    if bad:
        raise ConfigError(f"unknown parameters {sorted(bad)}")
    try:
        return dataclasses.replace(base, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

"""Flat ``key = value`` run configuration.

Lines are ``dotted.key = value``; ``#`` starts a comment.  Unknown keys are
rejected.  Precedence is file < ``SKDV2_SEED`` environment variable <
explicit overrides.  :meth:`SimConfig.to_text` writes every key so a resolved
config read back gives an equal object.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .dynamics import DriftSpec, project
from .errors import ConfigError
from .field import Field, Grid
from .integrator import StepperConfig
from .noise import NoiseModel
from .weights import WeightFunction, weight_from_config

SEED_ENV = "SKDV2_SEED"
IC_KINDS = ("gaussian_bump", "single_mode", "sech_squared")


def _int(v: str) -> int:
    f = float(v)
    if f != int(f):
        raise ValueError(f"not an integer: {v}")
    return int(f)


def _modes(v: str):
    return "auto" if v.strip() == "auto" else _int(v)


def _floats(v: str) -> Tuple[float, ...]:
    return tuple(float(s) for s in v.split(",") if s.strip())


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key -> (parser, default)
KEYS: Dict[str, tuple] = {
    "grid.n": (_int, 128),
    "grid.length": (float, 40.0),
    "drift.variant": (str, "regularized"),
    "drift.epsilon": (float, 0.1),
    "drift.galerkin_m": (_int, 32),
    "noise.kind": (str, "diagonal_multiplicative"),
    "noise.sigma0": (float, 0.1),
    "noise.decay_r": (float, 2.5),
    "noise.modes": (_modes, "auto"),
    "noise.clip": (float, 1.0),
    "weight.profile": (str, "atan"),
    "weight.param": (float, 5.0),
    "lambda": (float, 10.0),
    "stepper.dt": (float, 1e-3),
    "stepper.t_end": (float, 0.5),
    "stepper.scheme": (str, "imex_em"),
    "stepper.snapshot_every": (_int, 10),
    "initial_condition.kind": (str, "gaussian_bump"),
    "initial_condition.amplitude": (float, 0.5),
    "initial_condition.width": (float, 2.0),
    "initial_condition.center": (float, 0.0),
    "initial_condition.mode": (_int, 1),
    "seed": (_int, 12345),
    "window_k": (float, 5.0),
    "output_dir": (str, "out"),
    "ensemble.paths": (_int, 200),
    "ensemble.workers": (_int, 1),
    "ensemble.chunk_size": (_int, 128),
    "sweep.epsilons": (_floats, (0.1, 0.01, 0.001)),
}

# short spellings accepted on the command line
ALIASES = {
    "n": "grid.n", "length": "grid.length", "variant": "drift.variant", "epsilon": "drift.epsilon",
    "galerkin_m": "drift.galerkin_m", "m": "drift.galerkin_m", "dt": "stepper.dt",
    "t_end": "stepper.t_end", "scheme": "stepper.scheme", "snapshot_every": "stepper.snapshot_every",
    "paths": "ensemble.paths", "workers": "ensemble.workers", "chunk_size": "ensemble.chunk_size",
    "epsilons": "sweep.epsilons",
}


def canonical_key(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key)
    if key not in KEYS:
        raise ConfigError(f"unknown config key '{key}'")
    return key


def _parse_value(key: str, raw: str):
    parser = KEYS[key][0]
    try:
        return parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {raw.strip()!r} ({exc})") from None


def parse_text(text: str) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        key = canonical_key(k)
        out[key] = _parse_value(key, v)
    return out


@dataclass(frozen=True)
class SimConfig:
    values: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        full = {k: d for k, (_, d) in KEYS.items()}
        for k, v in dict(self.values).items():
            full[canonical_key(k)] = v
        object.__setattr__(self, "values", full)

    def __getitem__(self, key: str):
        return self.values[canonical_key(key)]

    def __eq__(self, other):
        return isinstance(other, SimConfig) and self.to_text() == other.to_text()

    def replace(self, **updates) -> "SimConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[canonical_key(k.replace("__", "."))] = v
        return SimConfig(vals)

    def with_overrides(self, overrides: Iterable[str]) -> "SimConfig":
        vals = dict(self.values)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value (got {item!r})")
            k, v = item.split("=", 1)
            key = canonical_key(k)
            vals[key] = _parse_value(key, v)
        return SimConfig(vals)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())

    @classmethod
    def from_text(cls, text: str) -> "SimConfig":
        return cls(parse_text(text))

    # -- builders ------------------------------------------------------------

    def grid(self) -> Grid:
        return Grid(self["grid.n"], self["grid.length"])

    def drift_spec(self, epsilon: Optional[float] = None) -> DriftSpec:
        v = self["drift.variant"]
        eps = self["drift.epsilon"] if epsilon is None else epsilon
        m = self["drift.galerkin_m"] if v == "galerkin_cutoff" else None
        return DriftSpec(v, float(eps), m)

    def noise_modes(self) -> int:
        modes = self["noise.modes"]
        if modes == "auto":
            return int(self["drift.galerkin_m"]) if self["drift.variant"] == "galerkin_cutoff" else 32
        return int(modes)

    def noise_model(self, grid: Optional[Grid] = None) -> NoiseModel:
        return NoiseModel(grid or self.grid(), self["noise.kind"], self["noise.sigma0"], self["noise.decay_r"],
                          self.noise_modes(), self["noise.clip"], self["lambda"])

    def weight(self, grid: Optional[Grid] = None) -> WeightFunction:
        return weight_from_config(self["weight.profile"], self["weight.param"], self["lambda"], grid or self.grid())

    def stepper(self) -> StepperConfig:
        return StepperConfig(self["stepper.dt"], self["stepper.t_end"], self["stepper.scheme"],
                             self["stepper.snapshot_every"])

    def initial_field(self, grid: Optional[Grid] = None) -> Field:
        g = grid or self.grid()
        kind = self["initial_condition.kind"]
        amp = self["initial_condition.amplitude"]
        width = self["initial_condition.width"]
        center = self["initial_condition.center"]
        x = g.x
        if kind not in IC_KINDS:
            raise ConfigError(f"initial condition kind must be one of {IC_KINDS} (got {kind!r})")
        if kind != "single_mode" and not width > 0:
            raise ConfigError("initial condition width must be positive")
        if kind == "gaussian_bump":
            vals = amp * np.exp(-(((x - center) / width) ** 2))
        elif kind == "single_mode":
            mode = self["initial_condition.mode"]
            if not 0 <= mode < g.n // 2:
                raise ConfigError(f"initial condition mode must lie in [0, n/2) (got {mode})")
            vals = amp * np.cos(2.0 * np.pi * mode * x / g.length)
        else:
            vals = amp / np.cosh((x - center) / width) ** 2
        if np.max(np.abs(vals)) > self["lambda"]:
            raise ConfigError(f"initial condition exceeds the amplitude bound lambda = {self['lambda']}")
        u = Field(g, vals)
        spec = self.drift_spec()
        if spec.variant == "galerkin_cutoff":
            u = project(u, spec.m)
        return u

    def window(self) -> float:
        k = self["window_k"]
        if not k > 0:
            raise ConfigError(f"window_k must be positive (got {k})")
        return float(k)

    def validate(self) -> "SimConfig":
        """Build every component once so invariant violations surface before any work."""
        g = self.grid()
        spec = self.drift_spec()
        if spec.variant == "galerkin_cutoff" and spec.m > g.n // 2:
            raise ConfigError(f"Galerkin dimension m = {spec.m} exceeds n/2 = {g.n // 2}")
        self.noise_model(g)
        self.weight(g)
        cfg = self.stepper()
        self.initial_field(g)
        k = self.window()
        if k > g.length / 2:
            raise ConfigError(f"window [-{k}, {k}] is not inside the domain")
        if self["ensemble.paths"] < 1:
            raise ConfigError(f"ensemble paths must be >= 1 (got {self['ensemble.paths']})")
        if self["ensemble.workers"] < 1:
            raise ConfigError("ensemble workers must be >= 1")
        if self["ensemble.chunk_size"] < 1:
            raise ConfigError("ensemble chunk_size must be >= 1")
        if cfg.scheme == "deterministic_rk4" and self["noise.kind"] != "zero" and self["noise.sigma0"] > 0:
            raise ConfigError("deterministic_rk4 requires noise.kind = zero")
        return self


def load_config(path=None, overrides: Iterable[str] = (), env: Optional[Mapping[str, str]] = None) -> SimConfig:
    """File, then ``SKDV2_SEED``, then ``overrides``."""
    vals: Dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        vals.update(parse_text(text))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        vals["seed"] = _parse_value("seed", env[SEED_ENV])
    return SimConfig(vals).with_overrides(list(overrides))


def config_comment_block(cfg: SimConfig) -> List[str]:
    """Resolved config as ``# key = value`` lines for CSV headers."""
    return [f"# {line}" for line in cfg.to_text().splitlines()]

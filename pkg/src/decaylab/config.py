"""Experiment configuration: dataclasses plus YAML loading/validation.

Configs are nested key-value YAML mirroring the dataclass fields below;
`default_experiment()` is the divergent-modulus demo and
`breakdown_experiment()` the expected-negative Hoelder case. Every numeric
default lives here.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .moduli import (Modulus, linear_modulus, log_linear_modulus,
                     log_log_modulus, power_modulus, sampled_modulus)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ModulusConfig:
    family: str = "linear"          # linear | power | log-linear | log-log | samples
    exponent: float = 0.5           # for the power family
    samples: list | None = None     # [[s, mu(s)], ...] for sampled tables
    depth: int = 40                 # dyadic classification depth

    def build(self) -> Modulus:
        if self.family == "linear":
            return linear_modulus()
        if self.family == "power":
            return power_modulus(self.exponent)
        if self.family == "log-linear":
            return log_linear_modulus()
        if self.family == "log-log":
            return log_log_modulus()
        if self.family == "samples":
            if not self.samples:
                raise ConfigError("sampled modulus needs a samples table")
            arr = list(zip(*self.samples))
            return sampled_modulus(arr[0], arr[1])
        raise ConfigError(f"unknown modulus family {self.family!r}")


@dataclass
class CoefficientConfig:
    kind: str = "generate"          # generate | csv
    lambda0: float = 1.25
    levels: int = 10
    amplitude: float = 0.05
    envelope_tau: float | None = 1.0
    spacing: float = 1e-3
    fine_spacing: float = 2e-5      # for the smoothing-constant window
    fine_horizon: float = 2.5
    csv_path: str | None = None


@dataclass
class ForcingConfig:
    scale: float = 2.36
    rate: float = 2.0
    oscillation_tail_tau: float = 1.0


@dataclass
class GridConfig:
    t_max: float = 12.0
    dt: float = 1e-3
    length_factor: float = 8.0      # L = 2 pi * length_factor
    modes: int = 512

    @property
    def length(self) -> float:
        return 2.0 * 3.141592653589793 * self.length_factor

    @property
    def xi_spacing(self) -> float:
        return 1.0 / self.length_factor


@dataclass
class CarlemanConfig:
    window: tuple = (1.0, 3.5)      # field support window
    claim_t_lo: float = 1.0
    claim_t_hi: float = 10.0
    claim_stride: int = 10          # claim grid stride over the bundle grid
    freq_span: float = 4.0          # sweep |xi| <= freq_span * cutoff
    identity_fields: int = 5
    estimate_fields: int = 20
    mollifier_scales: tuple = tuple(2.0 ** -p for p in range(4, 11))


@dataclass
class EvolutionConfig:
    horizon: float = 40.0
    dt: float = 5e-3
    policy: str = "aligned"
    ladder: tuple = (1.0, 10.0, 100.0, 1000.0)
    modes: int = 64
    length_factor: float = 4.0
    problems: int = 3
    plot: bool = False

    @property
    def length(self) -> float:
        return 2.0 * 3.141592653589793 * self.length_factor


@dataclass
class ExperimentConfig:
    modulus: ModulusConfig = field(default_factory=ModulusConfig)
    coefficient: CoefficientConfig = field(default_factory=CoefficientConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    carleman: CarlemanConfig = field(default_factory=CarlemanConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    alpha: float = 0.2
    gamma_factors: tuple = (1.0, 2.0, 4.0)
    estimate_gamma_factors: tuple = (1.0, 2.0)
    stages: dict = field(default_factory=lambda: {
        "modulus": True, "coefficient": True, "weights": True,
        "carleman": True, "evolution": True})
    expect: str = "ok"              # ok | breakdown
    seed: int = 42
    threads: int = 1
    strict: bool = False

    def validate(self) -> None:
        if self.alpha <= 0.0:
            raise ConfigError("alpha must be positive")
        if self.expect not in ("ok", "breakdown"):
            raise ConfigError(f"unknown expectation {self.expect!r}")
        if self.coefficient.kind == "csv":
            path = self.coefficient.csv_path
            if not path or not os.path.exists(path):
                raise ConfigError(f"coefficient csv not found: {path!r}")
        elif self.coefficient.kind != "generate":
            raise ConfigError(f"unknown coefficient kind {self.coefficient.kind!r}")
        if self.grid.dt <= 0.0 or self.grid.t_max <= 1.0:
            raise ConfigError("grid needs dt > 0 and t_max > 1")
        lo, hi = self.carleman.window
        if not (1.0 <= lo < hi <= self.grid.t_max):
            raise ConfigError("carleman window must sit inside [1, t_max]")


_SECTION_TYPES = {
    "modulus": ModulusConfig,
    "coefficient": CoefficientConfig,
    "forcing": ForcingConfig,
    "grid": GridConfig,
    "carleman": CarlemanConfig,
    "evolution": EvolutionConfig,
}

_TUPLE_FIELDS = {"window", "ladder", "gamma_factors", "estimate_gamma_factors",
                 "mollifier_scales"}


def _build_section(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    coerced = {k: (tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v)
               for k, v in data.items()}
    return cls(**coerced)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            kwargs[name] = _build_section(cls, section)
    top_known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for k, v in data.items():
        kwargs[k] = tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


def default_experiment() -> ExperimentConfig:
    """The divergent-modulus demo: every stage passes."""
    cfg = ExperimentConfig()
    cfg.validate()
    return cfg


def breakdown_experiment() -> ExperimentConfig:
    """Hoelder-1/2 modulus: the weight stage must fail, expectedly."""
    cfg = ExperimentConfig(
        modulus=ModulusConfig(family="power", exponent=0.5),
        expect="breakdown",
        stages={"modulus": True, "coefficient": True, "weights": True,
                "carleman": False, "evolution": False})
    cfg.coefficient.levels = 16
    cfg.validate()
    return cfg

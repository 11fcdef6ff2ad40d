"""Run configuration for the command-line workbench.

A config is a TOML file of flat tables with typed keys; see
``docs/config.md`` for the grammar. Validation happens entirely at load
time, before any computation.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import MODULAR, VARIANTS, is_positive
from .priors import Fixed, Gamma, Prior, Uniform, default_priors, parse_prior
from .testbed import PV_INPUT_NAMES, PV_PARAMETER_RANGES, PV_REFERENCE_THETA, PV_THETA_NAMES

# order of the child streams spawned from the master seed; never reorder
SEED_STREAMS = ("data", "design", "emulator", "mcmc", "predict", "validate", "screen", "sequential")


class ConfigError(ValueError):
    pass


def stream_seed(master: int, stream: str) -> int:
    """Integer seed of a named stream: the stream's child of ``SeedSequence(master)``."""
    k = SEED_STREAMS.index(stream)
    child = np.random.SeedSequence(master).spawn(len(SEED_STREAMS))[k]
    return int(child.generate_state(1)[0])


@dataclass(frozen=True)
class ScenarioConfig:
    n_days: int = 25
    start_day: int = 213
    theta: tuple[float, ...] = PV_REFERENCE_THETA
    sigma_err: float | None = None
    snr: float = 20.0
    discrepancy: str = "none"
    amplitude: float = 0.0
    range: float = 0.3


@dataclass(frozen=True)
class DesignConfig:
    N: int = 50
    n_candidates: int = 100
    budget: int = 0
    n_starts: int = 5


@dataclass(frozen=True)
class McmcConfig:
    n_phase1: int = 3000
    n_phase2: int = 10000
    burn_in: int = 3000
    level: float = 0.90


@dataclass(frozen=True)
class PredictConfig:
    draws: int = 500
    level: float = 0.90


@dataclass(frozen=True)
class ValidateConfig:
    n_reps: int = 100
    holdout_days: int = 3
    level: float = 0.90
    variants: tuple[str, ...] = ("M1", "M3")


@dataclass(frozen=True)
class ScreenConfig:
    trajectories: int = 10
    levels: int = 4
    day: int = 237
    I_g: float = 800.0
    I_d: float = 150.0
    T_e: float = 25.0


@dataclass(frozen=True)
class RunConfig:
    seed: int
    variant: str = "M1"
    out: Path = Path("out")
    data: Path | None = None
    mode: str = MODULAR
    priors: dict[str, Prior] = field(default_factory=default_priors)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)
    screen: ScreenConfig = field(default_factory=ScreenConfig)
    source: Path | None = None

    def seed_for(self, stream: str) -> int:
        return stream_seed(self.seed, stream)


_SECTIONS = {
    "scenario": ScenarioConfig,
    "design": DesignConfig,
    "mcmc": McmcConfig,
    "predict": PredictConfig,
    "validate": ValidateConfig,
    "screen": ScreenConfig,
}
_KNOWN_PARAMETERS = set(PV_THETA_NAMES) | {"sigma2_err", "sigma2_delta", "psi_delta", "sigma2_S", "psi_S"}


def _typed(section: str, cls, table: dict):
    out = {}
    spec = {f.name: f for f in fields(cls)}
    for key, value in table.items():
        if key not in spec:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = spec[key].default
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"[{section}] {key} must be an array")
            value = tuple(value)
        elif isinstance(default, bool) or isinstance(value, bool):
            raise ConfigError(f"[{section}] {key} must be a number")
        elif isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"[{section}] {key} must be an integer")
        elif isinstance(default, float) or default is None:
            if not isinstance(value, (int, float)):
                raise ConfigError(f"[{section}] {key} must be a number")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"[{section}] {key} must be a string")
        out[key] = value
    return cls(**out)


def check_prior(name: str, prior: Prior) -> None:
    """Reject priors whose support leaves the parameter's domain."""
    if name not in _KNOWN_PARAMETERS:
        raise ConfigError(f"prior declared for unknown parameter {name!r}")
    if is_positive(name):
        if isinstance(prior, Fixed) and not prior.value > 0:
            raise ConfigError(f"{name} must be positive, got fixed({prior.value})")
        if isinstance(prior, Uniform) and prior.lo < 0:
            raise ConfigError(f"{name} is positive but its uniform prior starts at {prior.lo}")
        if not isinstance(prior, (Gamma, Uniform, Fixed)):
            raise ConfigError(f"{name} is positive; use a gamma, uniform or fixed prior")


def load_config(path, seed: int | None = None, out=None) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw, base=path.parent, seed=seed, out=out, source=path)


def config_from_dict(raw: dict, base=Path("."), seed=None, out=None, source=None) -> RunConfig:
    raw = dict(raw)
    run = dict(raw.pop("run", {}))
    if seed is not None:
        run["seed"] = seed
    if "seed" not in run:
        raise ConfigError("[run] seed is required")
    if not isinstance(run["seed"], int) or run["seed"] < 0:
        raise ConfigError("[run] seed must be a nonnegative integer")
    variant = run.pop("variant", "M1")
    if variant not in VARIANTS:
        raise ConfigError(f"[run] variant must be one of {VARIANTS}")
    kw = dict(seed=run.pop("seed"), variant=variant, mode=run.pop("mode", MODULAR), source=source)
    if kw["mode"] != MODULAR:
        raise ConfigError("[run] mode: only 'modular' is available from the command line")
    kw["out"] = Path(out) if out is not None else base / run.pop("out", "out")
    run.pop("out", None)
    data = run.pop("data", None)
    if data is not None:
        p = base / data
        if not p.is_file():
            raise ConfigError(f"[run] data file {p} does not exist")
        kw["data"] = p
    if run:
        raise ConfigError(f"[run] unknown keys {sorted(run)}")

    priors = dict(default_priors())
    for name, text in raw.pop("priors", {}).items():
        if not isinstance(text, str):
            raise ConfigError(f"[priors] {name} must be a string like 'normal(0, 1)'")
        try:
            p = parse_prior(text)
        except ValueError as exc:
            raise ConfigError(f"[priors] {name}: {exc}") from exc
        priors[name] = p
    for name, p in priors.items():
        check_prior(name, p)
    kw["priors"] = priors

    for section, cls in _SECTIONS.items():
        kw[section] = _typed(section, cls, raw.pop(section, {}))
    if raw:
        raise ConfigError(f"unknown sections {sorted(raw)}")
    sc = kw["scenario"]
    if len(sc.theta) != len(PV_THETA_NAMES):
        raise ConfigError("[scenario] theta needs one value per calibration parameter")
    if sc.discrepancy not in ("none", "sine", "gp"):
        raise ConfigError("[scenario] discrepancy must be none, sine or gp")
    if sc.amplitude < 0:
        raise ConfigError("[scenario] amplitude must be >= 0")
    for v in kw["validate"].variants:
        if v not in VARIANTS:
            raise ConfigError(f"[validate] unknown variant {v!r}")
    m = kw["mcmc"]
    if not 0 <= m.burn_in < m.n_phase2:
        raise ConfigError("[mcmc] burn_in must be < n_phase2")
    if kw["screen"].levels % 2:
        raise ConfigError("[screen] levels must be even")
    return RunConfig(**kw)


PARAMETER_RANGES = tuple(PV_PARAMETER_RANGES[n] for n in PV_THETA_NAMES)
INPUT_NAMES = PV_INPUT_NAMES

"""Experiment plans and their TOML configuration files.

A config file has up to four tables::

    [plan]      mode, seed, trials, states / thetas, herald, ...
    [timing]    ProtocolTiming fields
    [noise]     NoiseParams fields
    [output]    dir, format

See ``configs/`` for complete examples and README.md for the field list.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .memory import EMISSION_MODES, HERALD_MODES, NoiseParams, ProtocolTiming
from .polarization import TOMOGRAPHY_BASES, Basis, Fiducial, PolarizationState

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MODES = ("fiducials", "theta-sweep", "g2", "concurrence", "rate")
SIMULATION_MODES = ("fiducials", "theta-sweep", "g2", "concurrence")
FORMATS = ("csv", "json", "both")

_PLAN_KEYS = {
    "mode", "seed", "trials", "states", "thetas", "phi", "settings", "herald", "emission",
    "background_factor", "g2_trials", "trials_per_second", "workers",
}
_OUTPUT_KEYS = {"dir", "format", "records"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    mode: str
    seed: int | None = None
    trials: int = 180_000
    states: tuple[PolarizationState, ...] = ()
    labels: tuple[str, ...] = ()
    settings: tuple[Basis, ...] = TOMOGRAPHY_BASES
    herald: str = "conditioned"
    emission: str = "fock"
    background_factor: float = 10.0
    g2_trials: int = 4_000_000
    trials_per_second: float = 2e4
    workers: int = 1
    noise: NoiseParams = field(default_factory=NoiseParams)
    timing: ProtocolTiming = field(default_factory=ProtocolTiming)
    out_dir: Path = Path("out")
    format: str = "both"
    records: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.herald not in HERALD_MODES or self.herald == "off":
            raise ConfigError("herald must be 'sampled' or 'conditioned'")
        if self.emission not in EMISSION_MODES:
            raise ConfigError(f"emission must be one of {EMISSION_MODES}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.seed is not None and self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.background_factor <= 0:
            raise ConfigError("background_factor must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if len(self.labels) != len(self.states):
            object.__setattr__(self, "labels", tuple(_label(s) for s in self.states))

    def validate(self) -> "ExperimentPlan":
        """Checks that only make sense once command-line overrides are applied."""
        if self.mode in SIMULATION_MODES:
            if self.seed is None:
                raise ConfigError("a seed is required for simulation modes (no wall-clock seeding)")
            if self.trials <= 0:
                raise ConfigError("trials must be positive")
            if self.mode in ("g2", "concurrence") and self.g2_trials <= 0:
                raise ConfigError("g2_trials must be positive")
            if not self.states:
                raise ConfigError("no input states")
        return self

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.states])

    def with_overrides(self, **kw) -> "ExperimentPlan":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "out_dir" in kw:
            kw["out_dir"] = Path(kw["out_dir"])
        try:
            return replace(self, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _label(state: PolarizationState) -> str:
    for f in Fiducial:
        if f.state.same_state(state):
            return f.name
    return f"theta={state.theta:.6g},phi={state.phi:.6g}"


def default_plan(mode: str, **kw) -> ExperimentPlan:
    """Plan with the per-mode default input states."""
    if mode == "fiducials":
        states = [f.state for f in Fiducial]
    elif mode == "theta-sweep":
        states = [PolarizationState(t, 0.0) for t in np.linspace(0, np.pi, 10)]
    elif mode in ("g2", "concurrence"):
        states = [Fiducial.H.state]
    else:
        states = []
    kw.setdefault("states", tuple(states))
    if mode == "g2":
        kw.setdefault("settings", (Basis.BALANCED,))
    return ExperimentPlan(mode=mode, **kw)


def _line_of(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    m = pattern.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _err(path, text, key, message) -> ConfigError:
    line = _line_of(text, key) if key else None
    where = f"{path}:{line}" if line else str(path)
    return ConfigError(f"{where}: {message}")


def _parse_state(item) -> PolarizationState:
    if isinstance(item, str):
        try:
            return Fiducial[item.upper()].state
        except KeyError:
            raise ValueError(f"unknown fiducial state {item!r}") from None
    if isinstance(item, dict):
        extra = set(item) - {"theta", "phi"}
        if extra:
            raise ValueError(f"unknown state keys {sorted(extra)}")
        return PolarizationState(float(item["theta"]), float(item.get("phi", 0.0)))
    raise ValueError(f"cannot interpret state {item!r}")


def _build(cls, table: dict, path, text, section):
    names = {f.name for f in fields(cls) if f.init}
    unknown = set(table) - names
    if unknown:
        key = sorted(unknown)[0]
        raise _err(path, text, key, f"unknown key {key!r} in [{section}]")
    kw = {}
    for k, v in table.items():
        if isinstance(v, str) and v.lower() in ("inf", "infinity"):
            v = math.inf
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        key = next(iter(table), None)
        for k in table:
            if k in str(exc):
                key = k
                break
        raise _err(path, text, key, f"[{section}] {exc}") from None


def load_plan(path: str | Path) -> ExperimentPlan:
    """Read and validate a TOML experiment config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    unknown = set(data) - {"plan", "timing", "noise", "output"}
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    plan_t = dict(data.get("plan", {}))
    extra = set(plan_t) - _PLAN_KEYS
    if extra:
        key = sorted(extra)[0]
        raise _err(path, text, key, f"unknown key {key!r} in [plan]")
    out_t = dict(data.get("output", {}))
    extra = set(out_t) - _OUTPUT_KEYS
    if extra:
        key = sorted(extra)[0]
        raise _err(path, text, key, f"unknown key {key!r} in [output]")

    mode = plan_t.pop("mode", None)
    if mode == "rate-projection":
        mode = "rate"
    if mode is None:
        raise ConfigError(f"{path}: [plan] mode is required")
    if mode not in MODES:
        raise _err(path, text, "mode", f"mode must be one of {MODES}, got {mode!r}")

    timing = _build(ProtocolTiming, data.get("timing", {}), path, text, "timing")
    noise = _build(NoiseParams, data.get("noise", {}), path, text, "noise")

    kw: dict = {"timing": timing, "noise": noise}
    try:
        if "states" in plan_t and "thetas" in plan_t:
            raise ValueError("give either states or thetas, not both")
        if "states" in plan_t:
            raw = plan_t.pop("states")
            kw["states"] = tuple(_parse_state(s) for s in raw)
        elif "thetas" in plan_t:
            phi = float(plan_t.pop("phi", 0.0))
            kw["states"] = tuple(PolarizationState(float(t), phi) for t in plan_t.pop("thetas"))
        plan_t.pop("phi", None)
        if "settings" in plan_t:
            kw["settings"] = tuple(Basis.parse(s) for s in plan_t.pop("settings"))
    except (TypeError, ValueError) as exc:
        key = "states" if "states" in str(exc) or "state" in str(exc) else "thetas"
        raise _err(path, text, key, str(exc)) from None
    kw.update(plan_t)
    if "dir" in out_t:
        kw["out_dir"] = Path(out_t["dir"])
    if "format" in out_t:
        kw["format"] = out_t["format"]
    if "records" in out_t:
        kw["records"] = bool(out_t["records"])
    try:
        return default_plan(mode, **kw)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        key = next((k for k in plan_t if k in msg), None)
        raise _err(path, text, key, msg) from None

"""Run configuration: one INI document with a section per module.

Sections and keys mirror the config dataclasses. Values are parsed against the
type of each field's default; unknown sections or keys are errors. Any value
can be overridden by an environment variable ``GMMX_<SECTION>_<KEY>``.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import re
from dataclasses import dataclass, field

from .gating import GateConfig
from .gmm import ObservationModel
from .planner import PlannerConfig
from .render import SimSensor

ENV_PREFIX = "GMMX_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrialSettings:
    mode: str = "mcg"
    sensor: str = "lidar"
    duration: float = 300.0
    seed: int = 0
    start_index: int = -1  # -1: seed modulo the number of start positions
    referee_resolution: float = 0.2
    local_resolution: float = 0.2
    local_dims: tuple = (100, 100, 40)
    clamp: float = 3.5
    noise: bool = True
    watchdog: float = 30.0
    raycast_cell: float = 0.15
    resample_density: float = 4.0  # MCG planning map: samples per unit support weight


@dataclass(frozen=True)
class EnvironmentSettings:
    mesh: str = ""  # PLY path; empty means the generated cave below
    seed: int = 0
    dims: tuple = (20.0, 20.0, 4.0)


@dataclass(frozen=True)
class GatingSettings:
    half_lengths: tuple = (1.5, 1.5, 1.0)
    overlap_threshold: float = 0.5


@dataclass(frozen=True)
class SensorSettings:
    rate: float = 10.0
    n_az: int = 360
    el_min_deg: float = -30.0
    el_max_deg: float = 30.0
    el_step_deg: float = 2.0
    width: int = 80
    height: int = 60
    h_fov_deg: float = 87.0
    v_fov_deg: float = 58.0
    noise: float = 0.01


_SECTIONS = {
    "trial": TrialSettings,
    "environment": EnvironmentSettings,
    "observation": ObservationModel,
    "gating": GatingSettings,
    "sensor": SensorSettings,
    "planner": PlannerConfig,
}


@dataclass(frozen=True)
class RunConfig:
    trial: TrialSettings = field(default_factory=TrialSettings)
    environment: EnvironmentSettings = field(default_factory=EnvironmentSettings)
    observation: ObservationModel = field(default_factory=ObservationModel)
    gating: GatingSettings = field(default_factory=GatingSettings)
    sensor: SensorSettings = field(default_factory=SensorSettings)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def with_overrides(self, **trial_kw) -> "RunConfig":
        kw = {k: v for k, v in trial_kw.items() if v is not None}
        try:
            return dataclasses.replace(self, trial=dataclasses.replace(self.trial, **kw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def trial_config(self):
        from .simulator import TrialConfig

        t = self.trial
        sensor = SimSensor(t.sensor, max_range=self.observation.max_range,
                           **dataclasses.asdict(self.sensor))
        gate = GateConfig("full_360" if t.sensor == "lidar" else "limited_fov", self.gating.half_lengths,
                          self.gating.overlap_threshold, self.observation.max_range)
        try:
            return TrialConfig(
                mode=t.mode, sensor=t.sensor, duration=t.duration, seed=t.seed,
                start_index=None if t.start_index < 0 else t.start_index,
                env_seed=self.environment.seed, referee_resolution=t.referee_resolution,
                local_resolution=t.local_resolution, local_dims=tuple(t.local_dims), clamp=t.clamp,
                noise=t.noise, watchdog=t.watchdog, raycast_cell=t.raycast_cell,
                resample_density=t.resample_density,
                observation=self.observation, gate=gate, planner=self.planner, sim_sensor=sensor,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in re.split(r"[,\s]+", raw) if p]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values, got {len(parts)}")
            return tuple(type(d)(p) for d, p in zip(default, parts))
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, for diagnostics."""
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = n
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            out[(section, key)] = n
    return out


def parse_config(text: str = "", source: str = "<config>", environ=None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)
    values = {name: {} for name in _SECTIONS}
    for sec in cp.sections():
        name = sec.strip().lower()
        if name not in _SECTIONS:
            raise ConfigError(f"{source}:{lines.get((name, None), '?')}: unknown section [{sec}]")
        defaults = {f.name: f for f in dataclasses.fields(_SECTIONS[name])}
        for key, raw in cp.items(sec):
            where = f"{source}:{lines.get((name, key), '?')}: [{name}] {key}"
            if key not in defaults:
                raise ConfigError(f"{where}: unknown key")
            values[name][key] = _parse_value(raw, _default_of(defaults[key]), where)
    environ = os.environ if environ is None else environ
    for var, raw in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        for name, cls in _SECTIONS.items():
            if rest.startswith(name + "_"):
                key = rest[len(name) + 1:]
                fields_ = {f.name: f for f in dataclasses.fields(cls)}
                if key not in fields_:
                    raise ConfigError(f"environment {var}: unknown key [{name}] {key}")
                values[name][key] = _parse_value(raw, _default_of(fields_[key]), f"environment {var}")
                break
        else:
            raise ConfigError(f"environment {var}: unknown section")
    parts = {}
    for name, cls in _SECTIONS.items():
        try:
            parts[name] = cls(**values[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    cfg = RunConfig(**parts)
    cfg.trial_config()  # cross-section validation
    return cfg


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def load_config(path: str | None, environ=None) -> RunConfig:
    if path is None:
        return parse_config("", environ=environ)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path), environ=environ)


def dump_config(cfg: RunConfig) -> str:
    """INI text with every field materialized; parsing it yields an equal config."""
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for f in dataclasses.fields(getattr(cfg, name)):
            lines.append(f"{f.name} = {_format_value(getattr(getattr(cfg, name), f.name))}")
        lines.append("")
    return "\n".join(lines)

"""Sectioned INI configuration for the command-line pipelines.

Every section maps onto one of the package's frozen config dataclasses. Keys
are the dataclass field names; unknown sections or keys are errors. Values
can be overridden from the environment with ``LLI_<SECTION>_<KEY>`` (for
example ``LLI_BLOCK_SHOTS_PER_POINT=40``). Angles in ``[frame]`` are in
degrees, times in ``[run]`` accept POSIX seconds or ISO-8601 UTC strings.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import lli
from .msgate import GateConfig, MotionalMode
from .noise import BFieldProcess, DecayModel, QuadrupoleModel, ZeemanModel
from .runner import BlockConfig, Environment, RunConfig

ENV_PREFIX = "LLI_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisOptions:
    bin_width: float = 3600.0  # s
    amplitude_window: int = 15  # blocks
    overlapping_allan: bool = False
    max_log_gap: float = 600.0  # s


@dataclass(frozen=True)
class GateOptions:
    delta_ms: float = 1e4
    lamb_dicke: float = 0.05
    n_max: int = 8
    step: float = 5e-9
    n_samples: int = 201
    intensity_rms: float = 0.05
    noise_shots: int = 400


@dataclass(frozen=True)
class PipelineOptions:
    seed: int = 20180219
    out: str = "out"
    svg: bool = False


@dataclass(frozen=True)
class FrameDegrees:
    colatitude: float = 52.1
    b_azimuth: float = 68.0
    b_elevation: float = 0.0
    equinox_epoch: float = math.nan  # nan: built-in equinox table

    def frame(self) -> lli.LabFrame:
        return lli.LabFrame(math.radians(self.colatitude), math.radians(self.b_azimuth),
                            math.radians(self.b_elevation),
                            None if math.isnan(self.equinox_epoch) else self.equinox_epoch)


SECTIONS = {
    "pipeline": PipelineOptions,
    "run": RunConfig,
    "block": BlockConfig,
    "environment": Environment,
    "bfield": BFieldProcess,
    "zeeman": ZeemanModel,
    "quadrupole": QuadrupoleModel,
    "decay": DecayModel,
    "tensor": lli.CTensor,
    "frame": FrameDegrees,
    "gate": GateOptions,
    "analysis": AnalysisOptions,
}
# fields filled from other sections
_NESTED = {"run": {"block"}, "environment": {"bfield", "zeeman", "quadrupole", "decay"}}


@dataclass(frozen=True)
class PipelineConfig:
    pipeline: PipelineOptions = PipelineOptions()
    run: RunConfig = RunConfig()
    environment: Environment = Environment()
    tensor: lli.CTensor = lli.CTensor()
    frame_deg: FrameDegrees = FrameDegrees()
    gate: GateOptions = GateOptions()
    analysis: AnalysisOptions = AnalysisOptions()
    sources: tuple = field(default=(), compare=False)

    @property
    def frame(self) -> lli.LabFrame:
        return self.frame_deg.frame()

    def gate_config(self) -> GateConfig:
        g = self.gate
        return GateConfig(delta_ms=g.delta_ms, step=g.step,
                          mode=MotionalMode(lamb_dicke=g.lamb_dicke, n_max=g.n_max))

    def snapshot(self) -> dict:
        """Resolved values of every section, as written to ``resolved_config.json``."""
        objs = self._objects()
        out = {}
        for name, cls in SECTIONS.items():
            obj = objs[name]
            out[name] = {f.name: _plain(getattr(obj, f.name)) for f in fields(cls)
                         if f.name not in _NESTED.get(name, ())}
        return out

    def _objects(self) -> dict:
        return {"pipeline": self.pipeline, "run": self.run, "block": self.run.block,
                "environment": self.environment, "bfield": self.environment.bfield,
                "zeeman": self.environment.zeeman, "quadrupole": self.environment.quadrupole,
                "decay": self.environment.decay, "tensor": self.tensor, "frame": self.frame_deg,
                "gate": self.gate, "analysis": self.analysis}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ConfigError(f"cannot parse time {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _coerce(section: str, key: str, text: str, default):
    text = text.strip()
    try:
        if section == "run" and key in ("start_utc", "end_utc"):
            return _parse_time(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if section == "environment" and key == "prep_phase_steps":
                parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
                nums = [float(p) for p in parts]
                if len(nums) % 2:
                    raise ValueError("expected utc,rad pairs")
                return tuple(zip(nums[::2], nums[1::2]))
            if section == "block" and key == "variants":
                return tuple(p.strip() for p in text.split(","))
            return tuple(float(p) for p in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: invalid value {text!r}") from exc


def _apply(section: str, obj, values: dict):
    cls = type(obj)
    names = {f.name for f in fields(cls)} - _NESTED.get(section, set())
    kw = {}
    for key, text in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        kw[key] = _coerce(section, key, text, getattr(obj, key))
    if not kw:
        return obj
    try:
        return replace(obj, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                environ: dict | None = None) -> PipelineConfig:
    """Defaults, then the INI file, then ``LLI_*`` environment variables, then ``overrides``.

    ``overrides`` maps ``"section.key"`` to a string value.
    """
    raw: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    sources = []
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in cp.sections():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            raw[sec].update(cp[sec])
        sources.append(str(path))
    environ = os.environ if environ is None else environ
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        sec = next((s for s in sorted(SECTIONS, key=len, reverse=True) if rest.startswith(s + "_")), None)
        if sec is None:
            raise ConfigError(f"environment variable {name} names no known section")
        raw[sec][rest[len(sec) + 1:]] = value
        sources.append(name)
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        raw[sec][key] = str(value)

    base = PipelineConfig()
    objs = base._objects()
    for sec in SECTIONS:
        objs[sec] = _apply(sec, objs[sec], raw[sec])
    try:
        env = replace(objs["environment"], bfield=objs["bfield"], zeeman=objs["zeeman"],
                      quadrupole=objs["quadrupole"], decay=objs["decay"])
        run = replace(objs["run"], block=objs["block"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(objs["pipeline"], run, env, objs["tensor"], objs["frame"], objs["gate"],
                          objs["analysis"], tuple(sources))


def dump_ini(cfg: PipelineConfig) -> str:
    """INI text that reproduces ``cfg`` through :func:`load_config`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, values in cfg.snapshot().items():
        cp[sec] = {}
        for k, v in values.items():
            if v is None:
                v = "nan"
            elif isinstance(v, list):
                flat = []
                for x in v:
                    flat.extend(x if isinstance(x, list) else [x])
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in flat)
            elif isinstance(v, float):
                v = repr(v)
            cp[sec][k] = str(v)
    from io import StringIO

    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()

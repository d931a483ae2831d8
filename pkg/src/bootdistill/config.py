"""Experiment configuration: one JSON document per run, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .boot import BootConfig
from .guidance import GuidanceSpec
from .schedule import NoiseSchedule

__all__ = ["TeacherConfig", "EvalConfig", "ExperimentConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class TeacherConfig:
    dataset: dict = field(default_factory=lambda: {"name": "ring", "n_modes": 8, "radius": 4.0, "std": 0.15, "n_classes": 0})
    kind: str = "signal"
    hidden: list = field(default_factory=lambda: [128, 128, 128])
    steps: int = 20000
    lr: float = 1e-3
    batch: int = 256
    uncond_prob: float = 0.2

    def __post_init__(self):
        if self.kind not in ("signal", "noise", "v"):
            raise ValueError(f"unknown prediction kind {self.kind!r}")
        if self.steps < 0 or self.batch < 1 or self.lr < 0:
            raise ValueError("steps, batch and lr must be non-negative (batch >= 1)")
        self.hidden = [int(h) for h in self.hidden]


@dataclass
class EvalConfig:
    n_samples: int = 2000
    ddim_steps: int = 64
    coverage_radius: float = 0.6
    coverage_threshold: float = 0.05

    def __post_init__(self):
        if self.n_samples < 2 or self.ddim_steps < 1 or self.coverage_radius <= 0:
            raise ValueError("n_samples >= 2, ddim_steps >= 1 and coverage_radius > 0 required")


@dataclass
class ExperimentConfig:
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    boot: BootConfig = field(default_factory=BootConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    guidance: GuidanceSpec | None = None
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if (self.boot.t_min, self.boot.t_max) != (self.schedule.t_min, self.schedule.t_max):
            raise ConfigError("boot.t_min/t_max must match the schedule block")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "teacher": asdict(self.teacher),
            "boot": self.boot.to_dict(),
            "eval": asdict(self.eval),
            "guidance": None if self.guidance is None else self.guidance.to_dict(),
            "seed": self.seed,
            "out": self.out,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "schedule" in d:
            try:
                kw["schedule"] = NoiseSchedule.from_dict(d["schedule"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"schedule: {exc}") from exc
        if "teacher" in d:
            kw["teacher"] = _strict(TeacherConfig, d["teacher"], "teacher")
        if "boot" in d:
            boot = dict(d["boot"])
            sched = kw.get("schedule")
            if sched is not None:
                boot.setdefault("t_min", sched.t_min)
                boot.setdefault("t_max", sched.t_max)
            kw["boot"] = _strict(BootConfig, boot, "boot")
        elif "schedule" in d:
            kw["boot"] = BootConfig(t_min=kw["schedule"].t_min, t_max=kw["schedule"].t_max)
        if "eval" in d:
            kw["eval"] = _strict(EvalConfig, d["eval"], "eval")
        if d.get("guidance") is not None:
            try:
                kw["guidance"] = GuidanceSpec.from_dict(d["guidance"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"guidance: {exc}") from exc
        for key in ("seed", "out"):
            if key in d:
                kw[key] = d[key]
        if not isinstance(kw.get("seed", 0), int):
            raise ConfigError("seed must be an integer")
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)


def load_config(path) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from ``path``; a bare BootConfig object is also accepted."""
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(d, dict) and d and set(d) <= {f.name for f in fields(BootConfig)}:
        boot = _strict(BootConfig, d, "boot config")
        return ExperimentConfig(schedule=boot.sched, boot=boot)
    return ExperimentConfig.from_dict(d)

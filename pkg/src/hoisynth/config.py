"""Run configuration: one JSON document, overridable field by field."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .diffusion import NoiseSchedule
from .kinematics import Skeleton, desk_skeleton, smpl_like_skeleton
from .synthdata import CorpusConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class BpsConfig:
    n_points: int = 64
    radius: float = 1.0
    seed: int = 0


@dataclass
class ModelConfig:
    d_model: int = 64
    d_kqv: int = 32
    n_heads: int = 4
    n_layers: int = 4
    d_proj: int = 64


@dataclass
class ScheduleConfig:
    n_steps: int = 50
    family: str = "linear"          # linear | cosine
    beta_start: float = 1e-4
    beta_end: float = 0.02
    posterior_variance: bool = False

    def build(self) -> NoiseSchedule:
        if self.family == "linear":
            return NoiseSchedule.linear(self.n_steps, self.beta_start, self.beta_end,
                                        posterior_variance=self.posterior_variance)
        if self.family == "cosine":
            return NoiseSchedule.cosine(self.n_steps, posterior_variance=self.posterior_variance)
        raise ConfigError(f"unknown schedule family {self.family!r}")


@dataclass
class TrainConfig:
    steps: int = 3000
    batch: int = 32
    lr: float = 2e-4
    seed: int = 0
    log_every: int = 25


@dataclass
class Thresholds:
    contact_rectify: float = 0.03
    contact_metric: float = 0.05
    collision: float = 0.04
    foot_height: float = 0.05


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    skeleton: str = "desk"                  # desk | smpl_like
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    bps: BpsConfig = field(default_factory=BpsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train_hands: TrainConfig = field(default_factory=TrainConfig)
    train_body: TrainConfig = field(default_factory=TrainConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    best_of: int = 20
    eval_seed: int = 0

    def validate(self) -> "RunConfig":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.skeleton not in ("desk", "smpl_like"):
            raise ConfigError(f"unknown skeleton {self.skeleton!r}")
        for name, v in asdict(self.thresholds).items():
            if not v > 0:
                raise ConfigError(f"threshold {name} must be positive, got {v}")
        if self.bps.n_points < 1 or not self.bps.radius > 0:
            raise ConfigError("BPS needs at least one point and a positive radius")
        if self.model.d_kqv % self.model.n_heads:
            raise ConfigError("d_kqv must be divisible by n_heads")
        if self.schedule.n_steps < 1:
            raise ConfigError("schedule needs at least one step")
        for t in (self.train_hands, self.train_body):
            if t.steps < 0 or t.batch < 1 or not t.lr > 0 or t.log_every < 1:
                raise ConfigError("training steps, batch, lr and log interval must be positive")
        if self.best_of < 1:
            raise ConfigError("best_of must be at least 1")
        try:
            self.schedule.build()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def build_skeleton(self) -> Skeleton:
        return desk_skeleton() if self.skeleton == "desk" else smpl_like_skeleton()

    def to_dict(self) -> dict:
        return _plain(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            return _build(cls, d).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(x) for x in obj]
    return obj


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kw = {}
    defaults = cls()
    for name, value in d.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kw[name] = _build(type(current), value)
        elif isinstance(current, tuple):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    return cls(**kw)


def desk_config() -> RunConfig:
    """Small enough to train both stages on one CPU core in a few minutes."""
    return RunConfig(train_hands=TrainConfig(lr=1e-3), train_body=TrainConfig(lr=1e-3)).validate()


def full_scale_config() -> RunConfig:
    """Published model sizes; far too slow to train on a CPU."""
    return RunConfig(skeleton="smpl_like", bps=BpsConfig(1024, 1.0, 0),
                     model=ModelConfig(512, 256, 4, 4, 256), schedule=ScheduleConfig(n_steps=1000, family="cosine"),
                     train_hands=TrainConfig(steps=200_000, lr=2e-4), train_body=TrainConfig(steps=200_000, lr=2e-4)
                     ).validate()


PRESETS = {"desk": desk_config, "full": full_scale_config}


def load_config(path: str | Path | None = None, preset: str = "desk", overrides: list[str] | None = None) -> RunConfig:
    """Preset, then the JSON file (if any), then ``section.field=value`` overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    d = PRESETS[preset]().to_dict()
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        _merge(d, loaded)
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(d, key.split("."), value)
    return RunConfig.from_dict(d)


def _merge(base: dict, new: dict) -> None:
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def _set_path(d: dict, keys: list[str], value) -> None:
    for k in keys[:-1]:
        if not isinstance(d.get(k), dict):
            raise ConfigError(f"no config section {k!r}")
        d = d[k]
    if keys[-1] not in d:
        raise ConfigError(f"no config field {'.'.join(keys)!r}")
    d[keys[-1]] = value


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")

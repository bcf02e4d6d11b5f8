"""Run configuration, presets and the flat ``key = value`` config file format."""

import enum
from dataclasses import dataclass, field, fields

from .decoder import Arch
from .losses import LossWeights


class ConfigError(ValueError):
    pass


class OptimizationMode(str, enum.Enum):
    SEED_ONLY = "seed"      # seeds + gamma; decoder weights frozen
    PARAMS_ONLY = "params"  # decoder weights + gamma; seeds fixed
    JOINT = "joint"         # everything


class InitSetting(str, enum.Enum):
    PRETRAINED_REFLECTANCE = "pretrained-r"  # pretrained G_r, random G_l
    RANDOM_ALL = "random"
    PRETRAINED_BOTH = "pretrained-both"


# name -> overrides; "paired" is the default
PRESETS = {
    "paired": {"iterations": 2500, "tau": 0.6},
    "noref": {"iterations": 5000, "tau": 0.2},
    "fast": {"iterations": 900, "tau": 0.6},
}


@dataclass
class EnhanceConfig:
    iterations: int = 2500
    lr: float = 1e-2
    mode: OptimizationMode = OptimizationMode.SEED_ONLY
    init: InitSetting = InitSetting.PRETRAINED_REFLECTANCE
    weights_r: str = ""
    weights_l: str = ""
    lambda_re: float = 12.0
    lambda_e: float = 0.05
    lambda_s: float = 0.03
    lambda_i: float = 0.01
    tau: float = 0.6
    exposure_e: float = 0.6
    gamma_init: float = 0.5
    rng_seed: int = 0
    snapshot_every: int = 0
    n_stages: int = 4
    seed_channels: int = 16
    stage_channels: tuple = field(default=(32, 32, 16, 8))
    output: str = ""
    run_dir: str = ""

    def __post_init__(self):
        self.mode = OptimizationMode(self.mode)
        self.init = InitSetting(self.init)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.validate()

    def validate(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.gamma_init <= 0:
            raise ConfigError(f"gamma_init must be positive, got {self.gamma_init}")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        try:
            self.loss_weights()
            self.arch(3)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def loss_weights(self):
        return LossWeights(self.lambda_re, self.lambda_e, self.lambda_s, self.lambda_i,
                           self.tau, self.exposure_e)

    def arch(self, out_channels):
        return Arch(self.n_stages, self.seed_channels, self.stage_channels, out_channels)

    @classmethod
    def from_preset(cls, name="paired", **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        values = dict(PRESETS[name])
        values.update(overrides)
        return cls(**values)

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return type(self)(**values)

    # -- key = value text -----------------------------------------------
    def dumps(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text, base=None):
        values = parse_kv(text)
        return (base or cls()).replace(**values)


_TYPES = {f.name: f.type for f in fields(EnhanceConfig)}


def coerce(key, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            return tuple(int(v) for v in str(raw).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return str(raw)


def parse_kv(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values

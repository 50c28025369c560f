"""Run configuration and its flat ``section.key = value`` text form.

Example::

    # comments and blank lines are ignored
    generator.depth = 5
    objective.lambda = 10
    optimizer.g.lr0 = 0.002

Every key has a default; unknown keys are rejected.
"""
import dataclasses
from dataclasses import dataclass, field

from .checkpoint import config_hash
from .data import AugmentationConfig, PatchSpec
from .errors import ConfigError
from .models import DiscriminatorConfig, GeneratorConfig
from .objective import ObjectiveConfig
from .optim import AdamConfig

ALIASES = {"objective.lambda": "objective.lam"}
# keys that only set how long a run lasts; changing them keeps a checkpoint resumable
RUN_LENGTH_KEYS = ("train.epochs", "train.max_steps", "train.checkpoint_every")


@dataclass
class OptimizerNotes:
    # the reported "momentum m"; stored for the record, not used by Adam
    momentum_m: float = 0.002


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 0
    max_steps: int = 0
    d_steps: int = 1


@dataclass
class DataConfig:
    kind: str = "generic"
    loo_index: int = -1
    train_count: int = -1


@dataclass
class EvalConfig:
    threshold: str = "otsu"
    fixed_threshold: float = 0.5
    use_mask: bool = True


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer_g: AdamConfig = field(default_factory=AdamConfig)
    optimizer_d: AdamConfig = field(default_factory=AdamConfig)
    optimizer: OptimizerNotes = field(default_factory=OptimizerNotes)
    patch: PatchSpec = field(default_factory=PatchSpec)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    _SECTIONS = (
        ("generator", "generator"),
        ("discriminator", "discriminator"),
        ("objective", "objective"),
        ("optimizer.g", "optimizer_g"),
        ("optimizer.d", "optimizer_d"),
        ("optimizer", "optimizer"),
        ("patch", "patch"),
        ("augment", "augment"),
        ("eval", "eval"),
        ("train", "train"),
        ("data", "data"),
    )

    def items(self):
        """(key, value) pairs in canonical order."""
        reverse_alias = {v: k for k, v in ALIASES.items()}
        for prefix, attr in self._SECTIONS:
            section = getattr(self, attr)
            for f in dataclasses.fields(section):
                key = f"{prefix}.{f.name}"
                yield reverse_alias.get(key, key), getattr(section, f.name)

    def to_text(self):
        return "".join(f"{key} = {_format(value)}\n" for key, value in self.items())

    def identity_text(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items() if k not in RUN_LENGTH_KEYS)

    def identity_hash(self):
        return config_hash(self.identity_text())

    def set(self, key, raw):
        key = ALIASES.get(key.strip(), key.strip())
        prefix, _, name = key.rpartition(".")
        attr = dict(self._SECTIONS).get(prefix)
        if attr is None or name not in {f.name for f in dataclasses.fields(getattr(self, attr))}:
            raise ConfigError(f"unknown configuration key {key!r}")
        section = getattr(self, attr)
        setattr(section, name, _coerce(key, raw, getattr(section, name)))

    def validate(self):
        self.generator.validate()
        self.discriminator.validate()
        self.objective.validate()
        self.optimizer_g.validate()
        self.optimizer_d.validate()
        self.patch.validate(self.generator.multiple)
        if self.train.batch_size < 1 or self.train.epochs < 0 or self.train.d_steps < 1:
            raise ConfigError("train.batch_size and train.d_steps must be >= 1, train.epochs >= 0")
        if self.eval.threshold not in ("otsu", "fixed"):
            raise ConfigError(f"eval.threshold must be 'otsu' or 'fixed', got {self.eval.threshold!r}")
        if self.generator.image_channels != self.discriminator.image_channels:
            raise ConfigError("generator and discriminator disagree on image channels")
        return self

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            cfg.set(key, raw.strip())
        return cfg.validate()

    @classmethod
    def read(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw

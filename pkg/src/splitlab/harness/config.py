"""Line-based experiment configuration: ``section.key = value`` per line.

Blank lines and ``#`` comments are ignored. Every key must exist in the
schema below; values are converted to the type of the default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from splitlab.harness import architectures


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    source: str = "synthetic"  # synthetic | mnist
    path: str = "data/mnist"
    image: int = 8
    classes: int = 4
    n_train: int = 256
    n_test: int = 256
    n_public: int = 256


@dataclass
class ModelSection:
    arch: str = "dense"
    cut: int = -1  # -1: the architecture's default


@dataclass
class OptimSection:
    name: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    server_lr: float = 1e-3


@dataclass
class DefenseSection:
    kind: str = "none"  # none | orth | cut_rotation | dp


@dataclass
class DpSection:
    epsilon: float = 1.0
    delta: float = 1e-5
    sensitivity: float = 1.0
    sigma: float = 0.0  # > 0 overrides calibration


@dataclass
class AttackSection:
    kind: str = "none"  # none | unsplit | fsha | fake_grad
    targets: int = 32


@dataclass
class UnsplitSection:
    lam: float = 0.0
    rounds: int = 50
    input_steps: int = 100
    weight_steps: int = 100
    input_lr: float = 1e-3
    weight_lr: float = 1e-2


@dataclass
class FshaSection:
    loss_convention: str = "paper"
    ae_lr: float = 1e-3
    disc_lr: float = 1e-3


@dataclass
class RunSection:
    steps: int = 500
    epochs: int = 0  # > 0 overrides steps
    seed: int = 0
    out: str = "runs/default"
    transport: str = "inproc"


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimSection = field(default_factory=OptimSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    dp: DpSection = field(default_factory=DpSection)
    attack: AttackSection = field(default_factory=AttackSection)
    unsplit: UnsplitSection = field(default_factory=UnsplitSection)
    fsha: FshaSection = field(default_factory=FshaSection)
    run: RunSection = field(default_factory=RunSection)

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.partition(".")
        sec = getattr(self, section, None) if section in SECTIONS else None
        if sec is None or not name or name not in {f.name for f in dataclasses.fields(sec)}:
            raise ConfigError(f"unknown key {key!r}")
        setattr(sec, name, _convert(getattr(sec, name), raw, key))

    def validate(self) -> "ExperimentConfig":
        choices = {
            "data.source": ("synthetic", "mnist"),
            "defense.kind": ("none", "orth", "cut_rotation", "dp"),
            "attack.kind": ("none", "unsplit", "fsha", "fake_grad"),
            "fsha.loss_convention": ("paper", "classic"),
            "run.transport": ("inproc", "socket"),
            "optim.name": ("sgd", "adam", "adam_warm", "rmsprop"),
            "model.arch": tuple(architectures.ARCHITECTURES),
        }
        for key, allowed in choices.items():
            v = self.get(key)
            if v not in allowed:
                raise ConfigError(f"{key} = {v!r}; expected one of {', '.join(allowed)}")
        n_layers = len(architectures.build(self.model.arch, (1, 8, 8), 2, np.random.default_rng(0)))
        if self.model.cut != -1 and not 1 <= self.model.cut < n_layers:
            raise ConfigError(f"model.cut = {self.model.cut} outside 1..{n_layers - 1}")
        for key in ("run.steps", "run.epochs", "attack.targets"):
            if self.get(key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.data.classes < 2:
            raise ConfigError("data.classes must be at least 2")
        return self

    def get(self, key: str):
        section, _, name = key.partition(".")
        return getattr(getattr(self, section), name)

    @property
    def cut(self) -> int | None:
        return None if self.model.cut == -1 else self.model.cut

    def items(self):
        for s in SECTIONS:
            sec = getattr(self, s)
            for f in dataclasses.fields(sec):
                yield f"{s}.{f.name}", getattr(sec, f.name)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


SECTIONS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _convert(default, raw: str, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        try:
            cfg.set(key.strip(), value.strip())
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())

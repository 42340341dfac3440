"""Run configuration: one JSON document covering data, model, and training."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelDims
from .reasoner import LossWeights
from .rehearsal import RehearsalConfig
from .synthetic import SyntheticConfig

ABLATIONS = ("full", "no-rehearsal", "only-rec", "only-fam", "random-sampler")


@dataclass
class OptimConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optim.beta1/beta2 must lie in [0, 1)")


@dataclass
class TrainingConfig:
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    # teacher stage: its own budget and anti-memorization knobs (the paper's
    # 0.001 learning rate refers to the student's multi-task loss)
    teacher_epochs: int = 60
    teacher_batch_size: int = 16
    teacher_lr: float = 0.006
    teacher_avg_from_epoch: int | None = 10
    teacher_head_grad_scale: float = 0.3

    def validate(self) -> None:
        if self.batch_size < 1 or self.teacher_batch_size < 1:
            raise ConfigError("training batch sizes must be >= 1")
        if self.epochs < 1 or self.teacher_epochs < 1:
            raise ConfigError("training epochs must be >= 1")
        if self.teacher_lr <= 0:
            raise ConfigError("training.teacher_lr must be positive")
        if self.teacher_head_grad_scale <= 0:
            raise ConfigError("training.teacher_head_grad_scale must be positive")
        if (
            self.teacher_avg_from_epoch is not None
            and self.teacher_avg_from_epoch < 1
        ):
            raise ConfigError("training.teacher_avg_from_epoch must be >= 1 or null")


@dataclass
class RunConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelDims = field(default_factory=ModelDims)
    rehearsal: RehearsalConfig = field(default_factory=RehearsalConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self) -> None:
        self.synthetic.validate()
        self.model.validate()
        self.rehearsal.validate()
        self.loss_weights.validate()
        self.optim.validate()
        self.training.validate()
        c_f = -(-self.synthetic.r_l // self.model.n_segment)
        if c_f < self.rehearsal.b_fragments:
            raise ConfigError(
                f"rehearsal.b_fragments={self.rehearsal.b_fragments} exceeds the "
                f"{c_f} fragments of an r_l={self.synthetic.r_l} stream "
                f"(n_segment={self.model.n_segment})"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        sections = {
            "synthetic": SyntheticConfig,
            "model": ModelDims,
            "rehearsal": RehearsalConfig,
            "loss_weights": LossWeights,
            "optim": OptimConfig,
            "training": TrainingConfig,
        }
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config section: {sorted(unknown)[0]}")
        kwargs = {}
        for name, section_cls in sections.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name} must be an object")
            valid = {f.name for f in fields(section_cls)}
            bad = set(section) - valid
            if bad:
                raise ConfigError(f"unknown config field: {name}.{sorted(bad)[0]}")
            try:
                kwargs[name] = section_cls(**section)
            except TypeError as exc:
                raise ConfigError(f"bad config section {name}: {exc}") from exc
        run = cls(**kwargs)
        run.validate()
        return run

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config root must be a JSON object")
        return cls.from_dict(data)

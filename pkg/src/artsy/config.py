"""Experiment configuration: JSON file in, validated dataclasses out.

A config file is a JSON object with a "version" field; CLI flags override
file values. Unknown keys are rejected so typos fail fast, before any output
is written.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .engine import GATE_MODES, EngineConfig
from .errors import ConfigError
from .optim import SgdConfig

CONFIG_VERSION = 1


def _from_mapping(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed: {sorted(allowed)}")
    return cls(**data)


@dataclass
class StreamConfig:
    kind: str = "synthetic"  # synthetic | manifest
    manifest: Optional[str] = None
    tasks: int = 5
    classes_per_task: int = 2
    dim: int = 16
    samples_per_class: int = 100
    separation: float = 6.0
    within_std: float = 1.0

    def validate(self) -> None:
        if self.kind not in ("synthetic", "manifest"):
            raise ConfigError(f"stream.kind must be 'synthetic' or 'manifest', got {self.kind!r}")
        if self.kind == "manifest" and not self.manifest:
            raise ConfigError("stream.kind is 'manifest' but stream.manifest is not set")
        if self.kind == "synthetic":
            if self.tasks < 1:
                raise ConfigError(f"stream.tasks must be >= 1, got {self.tasks}")
            if self.classes_per_task < 2:
                raise ConfigError(f"stream.classes_per_task must be >= 2, got {self.classes_per_task}")
            if self.dim < 2:
                raise ConfigError(f"stream.dim must be >= 2, got {self.dim}")
            if self.samples_per_class < 5:
                raise ConfigError(f"stream.samples_per_class must be >= 5, got {self.samples_per_class}")
            if self.separation <= 0 or self.within_std <= 0:
                raise ConfigError("stream.separation and stream.within_std must be positive")


@dataclass
class PhaseConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 48
    epochs: int = 20

    def sgd(self) -> SgdConfig:
        return SgdConfig(
            base_lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
        )

    def validate(self, where: str) -> None:
        if self.lr <= 0:
            raise ConfigError(f"{where}.lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"{where}.momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"{where}.weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"{where}.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"{where}.epochs must be >= 1, got {self.epochs}")


@dataclass
class BackboneConfig(PhaseConfig):
    hidden: list[int] = field(default_factory=lambda: [64, 64])

    def validate(self, where: str = "backbone") -> None:
        super().validate(where)
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError(f"{where}.hidden must be a non-empty list of positive ints, got {self.hidden}")


@dataclass
class AdapterConfig(PhaseConfig):
    bottleneck: int = 16
    alpha: float = 0.1
    train_with_old_adapters: bool = False

    def validate(self, where: str = "adapter") -> None:
        super().validate(where)
        if self.bottleneck < 1:
            raise ConfigError(f"{where}.bottleneck must be >= 1, got {self.bottleneck}")
        if self.alpha <= 0:
            raise ConfigError(f"{where}.alpha must be positive, got {self.alpha}")


@dataclass
class GateConfig(PhaseConfig):
    epochs: int = 2
    mode: str = "learned"
    hidden: int = 32
    threshold: float = 0.5
    threshold_policy: str = "fixed"
    buffer_per_class: int = 50

    def validate(self, where: str = "gate") -> None:
        super().validate(where)
        if self.mode not in GATE_MODES:
            raise ConfigError(f"{where}.mode must be one of {list(GATE_MODES)}, got {self.mode!r}")
        if self.hidden < 1:
            raise ConfigError(f"{where}.hidden must be >= 1, got {self.hidden}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"{where}.threshold must be in [0,1], got {self.threshold}")
        if self.threshold_policy not in ("fixed", "calibrated"):
            raise ConfigError(
                f"{where}.threshold_policy must be 'fixed' or 'calibrated', got {self.threshold_policy!r}"
            )
        if self.buffer_per_class < 0:
            raise ConfigError(f"{where}.buffer_per_class must be >= 0, got {self.buffer_per_class}")


@dataclass
class ClassifierConfig:
    scoring: str = "cosine"
    feature_head: str = "identity"

    def validate(self) -> None:
        if self.scoring not in ("cosine", "dot"):
            raise ConfigError(f"classifier.scoring must be 'cosine' or 'dot', got {self.scoring!r}")
        if self.feature_head not in ("identity", "random_mlp"):
            raise ConfigError(f"classifier.feature_head must be 'identity' or 'random_mlp', got {self.feature_head!r}")


@dataclass
class EvalConfig:
    threads: int = 1

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError(f"eval.threads must be >= 1, got {self.threads}")


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    seed: int = 7
    out_dir: str = "runs/latest"
    baseline: Optional[str] = None
    stream: StreamConfig = field(default_factory=StreamConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
        data = dict(data)
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}, expected {CONFIG_VERSION}")
        sections = {
            "stream": StreamConfig,
            "backbone": BackboneConfig,
            "adapter": AdapterConfig,
            "gate": GateConfig,
            "classifier": ClassifierConfig,
            "eval": EvalConfig,
        }
        kwargs: dict = {"version": version}
        for name, section_cls in sections.items():
            if name in data:
                kwargs[name] = _from_mapping(section_cls, data.pop(name), name)
        for name in ("seed", "out_dir", "baseline"):
            if name in data:
                kwargs[name] = data.pop(name)
        if data:
            raise ConfigError(f"unknown top-level config keys {sorted(data)}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config value types: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        import json

        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.baseline not in (None, "sequential"):
            raise ConfigError(f"baseline must be 'sequential' or omitted, got {self.baseline!r}")
        self.stream.validate()
        self.backbone.validate()
        self.adapter.validate()
        self.gate.validate()
        self.classifier.validate()
        self.eval.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def snapshot(self) -> dict:
        """The experiment-defining subset embedded in reports: excludes
        out_dir and eval.threads, which cannot change the numbers."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("eval")
        return d

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            seed=self.seed,
            backbone_hidden=tuple(self.backbone.hidden),
            backbone_sgd=self.backbone.sgd(),
            adapter_sgd=self.adapter.sgd(),
            gate_sgd=self.gate.sgd(),
            bottleneck=self.adapter.bottleneck,
            alpha=self.adapter.alpha,
            gate_hidden=self.gate.hidden,
            threshold=self.gate.threshold,
            threshold_policy=self.gate.threshold_policy,
            gate_mode=self.gate.mode,
            buffer_per_class=self.gate.buffer_per_class,
            scoring=self.classifier.scoring,
            feature_head=self.classifier.feature_head,
            train_with_old_adapters=self.adapter.train_with_old_adapters,
        )

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

"""Run configuration: nested JSON sections with dotted-path overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .finetune import FinetuneConfig
from .pretrain import PretrainConfig
from .student import StudentConfig
from .teacher import TeacherConfig


@dataclass
class DataSection:
    fasta: list[str] = field(default_factory=list)
    window: int = 1026
    stride: int | None = None
    val_fraction: float = 0.1


@dataclass
class ModelSection:
    n_blocks: int = 4
    d_model: int = 128
    d_k: int = 128
    d_v: int = 128
    n_heads: int = 4
    k: int = 6
    max_len: int = 1026
    mlp_ratio: int = 4
    decoder_ratio: int = 4
    chunk: int = 64
    learned_pos: bool = False


@dataclass
class MaskSection:
    ratio: float = 0.15


@dataclass
class TeacherSection:
    kind: str = "synthetic"
    d_teacher: int = 1024
    depth: int = 2
    n_heads: int = 4
    seed: int = 0
    cache_path: str | None = None


@dataclass
class TrainSection:
    lr: float = 3e-4
    weight_decay: float = 0.01
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    warmup: int = 100
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    grad_clip: float = 1.0
    lambda_rec: float = 1.0
    rc_augment: bool = True
    eval_every: int = 100
    eval_windows: int = 32
    log_every: int = 10


@dataclass
class AblationSection:
    use_attention: bool = True
    distill_mode: str = "visible"


@dataclass
class FinetuneSection:
    task: str = "task"
    lr: float = 1e-3
    weight_decay: float = 0.01
    steps: int = 300
    batch_size: int = 16
    seed: int = 0
    conjoin: bool = True
    head_only: bool = False
    pad_masked_mean: bool = False
    rc_augment: bool = False
    n_classes: int | None = None


@dataclass
class IoSection:
    checkpoint: str = "had_pretrain.hadw"
    log: str = "had_pretrain.jsonl"
    classifier: str = "had_classifier.hadw"
    teacher_cache: str = "had_teacher.hadt"
    embeddings: str = "had_embeddings.hade"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    mask: MaskSection = field(default_factory=MaskSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    io: IoSection = field(default_factory=IoSection)

    def student(self) -> StudentConfig:
        return StudentConfig(**dataclasses.asdict(self.model), d_teacher=self.teacher.d_teacher,
                             use_attention=self.ablation.use_attention)

    def teacher_config(self) -> TeacherConfig:
        return TeacherConfig(**dataclasses.asdict(self.teacher), k=self.model.k,
                             max_tokens=self.model.max_len // self.model.k)

    def pretrain(self) -> PretrainConfig:
        t = self.train
        try:
            return PretrainConfig(
                mask_ratio=self.mask.ratio, lambda_rec=t.lambda_rec, lr=t.lr, weight_decay=t.weight_decay,
                betas=tuple(t.betas), warmup=t.warmup, steps=t.steps, batch_size=t.batch_size, seed=t.seed,
                grad_clip=t.grad_clip, rc_augment=t.rc_augment, eval_every=t.eval_every,
                eval_windows=t.eval_windows, use_attention=self.ablation.use_attention,
                distill_mode=self.ablation.distill_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def finetune_config(self) -> FinetuneConfig:
        f = dataclasses.asdict(self.finetune)
        for key in ("task", "n_classes"):
            f.pop(key)
        return FinetuneConfig(**f)


def _build(cls, values: dict, path: str = ""):
    if not isinstance(values, dict):
        raise ConfigError(f"{path.rstrip('.') or 'config'} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key!r}")
        if cls is RunConfig:
            value = _build(_SECTIONS[key], value, f"{key}.")
        kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``section.key=value`` to a raw config document in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {key!r} must look like section.key")
    doc.setdefault(parts[0], {})[parts[1]] = _parse_value(raw)


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        apply_override(doc, item)
    try:
        return _build(RunConfig, doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)

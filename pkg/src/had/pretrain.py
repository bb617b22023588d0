"""Dual-branch pretraining: visible-token distillation plus masked reconstruction."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import EmptyMaskSet, NonFiniteLoss, ShapeMismatch
from .genome_io import augment_rc
from .masking import MaskPlan, build_mask_plan
from .numeric import save_checkpoint
from .rng import stream, torch_seeded
from .student import HadStudent, StudentConfig
from .tokenizers import N_ID, encode_char

DISTILL_MODES = ("visible", "masked", "off")


@dataclass
class PretrainConfig:
    mask_ratio: float = 0.15
    lambda_rec: float = 1.0
    lr: float = 3e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    warmup: int = 100
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    grad_clip: float = 1.0
    rc_augment: bool = True
    eval_every: int = 100
    eval_windows: int = 32
    use_attention: bool = True
    distill_mode: str = "visible"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.distill_mode not in DISTILL_MODES:
            raise ValueError(f"distill_mode must be one of {DISTILL_MODES}, got {self.distill_mode!r}")
        if self.distill_mode != "off" and not 0 < self.mask_ratio < 1:
            raise ValueError("distillation needs 0 < mask_ratio < 1 so both branches are non-empty")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class StepReport:
    step: int
    loss_rec: float
    loss_dis: float | None
    loss_total: float
    grad_norm: float = 0.0
    tokens_per_sec: float = 0.0
    lr: float = 0.0

    @property
    def ppl(self) -> float:
        return math.exp(self.loss_rec)

    def log_record(self, split: str) -> dict:
        # throughput is wall-clock dependent; it stays on the report, out of the log
        return {"step": self.step, "split": split, "loss_rec": self.loss_rec, "loss_dis": self.loss_dis,
                "loss_total": self.loss_total, "ppl": self.ppl, "grad_norm": self.grad_norm, "lr": self.lr}


@dataclass
class Batch:
    seqs: list[str]
    char_ids: torch.Tensor
    plans: list[MaskPlan]
    vis_pos: torch.Tensor
    mask_pos: torch.Tensor
    vis_kmer: torch.Tensor
    mask_kmer: torch.Tensor
    teacher: torch.Tensor | None = None

    @property
    def n_tokens(self) -> int:
        return self.char_ids.numel()


def make_batch(seqs: Sequence[str], plans: Sequence[MaskPlan], teacher=None) -> Batch:
    """Stack windows and their mask plans; all plans must share L, k and mask size."""
    if not seqs:
        raise ValueError("empty batch")
    shapes = {(p.L, p.k, len(p.masked_kmer)) for p in plans}
    if len(shapes) != 1:
        raise ShapeMismatch(f"mask plans in a batch must agree on (L, k, n_masked), got {sorted(shapes)}")
    as_long = lambda rows: torch.tensor([list(r) for r in rows], dtype=torch.long)  # noqa: E731
    emb = None
    if teacher is not None:
        emb = teacher.embed_batch(list(seqs)).float()
    return Batch(
        seqs=list(seqs),
        char_ids=torch.tensor([encode_char(s) for s in seqs], dtype=torch.long),
        plans=list(plans),
        vis_pos=as_long(p.visible_char for p in plans),
        mask_pos=as_long(p.masked_char for p in plans),
        vis_kmer=as_long(p.visible_kmer for p in plans),
        mask_kmer=as_long(p.masked_kmer for p in plans),
        teacher=emb,
    )


def loss_reconstruction(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean cross-entropy over masked positions."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    logits = logits.reshape(-1, logits.shape[-1])
    targets = targets.reshape(-1)
    if targets.numel() == 0:
        raise EmptyMaskSet("reconstruction loss over an empty mask set")
    if logits.shape[0] != targets.shape[0]:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(1, targets[:, None]).mean()


def loss_distillation(student_proj: torch.Tensor, teacher_vis: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance per aligned row, averaged over rows (not over features)."""
    if student_proj.shape != teacher_vis.shape:
        raise ShapeMismatch(f"distillation: {tuple(student_proj.shape)} vs {tuple(teacher_vis.shape)}")
    if student_proj.numel() == 0:
        raise EmptyMaskSet("distillation over an empty position set")
    diff = student_proj - teacher_vis
    return (diff * diff).sum(dim=-1).mean()


def _gather_rows(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    return torch.gather(x, 1, idx[..., None].expand(*idx.shape, x.shape[-1]))


def _rec_loss(model: HadStudent, z_m: torch.Tensor, batch: Batch):
    targets = torch.gather(batch.char_ids, 1, batch.mask_pos)
    keep = targets != N_ID
    if not keep.any():
        return None
    logits = model.lm_logits(z_m)
    return loss_reconstruction(logits[keep], targets[keep])


def combined_loss(model: HadStudent, batch: Batch, cfg: PretrainConfig):
    """Return ``(loss_total, parts)`` with ``parts = {"rec": ..., "dis": ...}`` (tensors or None)."""
    dis = None
    if cfg.distill_mode == "off":
        masked = torch.zeros_like(batch.char_ids, dtype=torch.bool)
        masked.scatter_(1, batch.mask_pos, True)
        z = model.encode_full(batch.char_ids, masked)
        rec = _rec_loss(model, _gather_rows(z, batch.mask_pos), batch)
    else:
        z_v = model.encode_visible(batch.char_ids, batch.vis_pos)
        z_m = model.cross_attention_decode(batch.mask_pos, z_v)
        if batch.teacher is None:
            raise ValueError(f"distill_mode={cfg.distill_mode!r} needs teacher embeddings in the batch")
        if cfg.distill_mode == "visible":
            student = model.project_to_teacher(model.pool_to_kmer(z_v, batch.vis_pos))
            target = _gather_rows(batch.teacher, batch.vis_kmer)
        else:
            student = model.project_to_teacher(model.pool_to_kmer(z_m, batch.mask_pos))
            target = _gather_rows(batch.teacher, batch.mask_kmer)
        dis = loss_distillation(student, target)
        rec = _rec_loss(model, z_m, batch)
    total = None
    for term in (dis, None if rec is None else cfg.lambda_rec * rec):
        if term is not None:
            total = term if total is None else total + term
    if total is None:
        raise EmptyMaskSet("batch has no reconstruction targets and distillation is off")
    return total, {"rec": rec, "dis": dis}


def warmup_cosine(warmup: int, total: int):
    def factor(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        span = max(1, total - warmup)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, (step - warmup) / span)))
    return factor


def build_student(model_cfg: StudentConfig, cfg: PretrainConfig) -> HadStudent:
    model_cfg.use_attention = cfg.use_attention
    with torch_seeded(cfg.seed, "init"):
        return HadStudent(model_cfg)


class Pretrainer:
    """Owns the optimizer state of one student; the teacher stays frozen."""

    def __init__(self, model: HadStudent, teacher, cfg: PretrainConfig, dump_dir: str | Path | None = None):
        self.model, self.teacher, self.cfg = model, teacher, cfg
        decay = [p for p in model.parameters() if p.dim() >= 2]
        no_decay = [p for p in model.parameters() if p.dim() < 2]
        self.optimizer = torch.optim.AdamW(
            [{"params": decay, "weight_decay": cfg.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
            lr=cfg.lr, betas=cfg.betas)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, warmup_cosine(cfg.warmup, cfg.steps))
        self.step = 0
        self.dump_dir = Path(dump_dir) if dump_dir else None

    def _dump(self, parts):
        info = {"step": self.step,
                "losses": {k: None if v is None else float(v.detach()) for k, v in parts.items()},
                "param_norms": {n: float(p.detach().norm()) for n, p in self.model.named_parameters()}}
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            (self.dump_dir / f"nonfinite_step{self.step}.json").write_text(json.dumps(info, indent=1))
        return info

    def train_step(self, batch: Batch) -> StepReport:
        t0 = time.perf_counter()
        self.model.train()
        lr = self.optimizer.param_groups[0]["lr"]
        total, parts = combined_loss(self.model, batch, self.cfg)
        if not torch.isfinite(total):
            info = self._dump(parts)
            raise NonFiniteLoss(f"non-finite loss at step {self.step}: {info['losses']}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        report = StepReport(
            step=self.step,
            loss_rec=float(parts["rec"].detach()) if parts["rec"] is not None else float("nan"),
            loss_dis=float(parts["dis"].detach()) if parts["dis"] is not None else None,
            loss_total=float(total.detach()),
            grad_norm=float(grad_norm),
            tokens_per_sec=batch.n_tokens / max(time.perf_counter() - t0, 1e-9),
            lr=lr,
        )
        self.step += 1
        return report

    @torch.no_grad()
    def evaluate(self, batches: Sequence[Batch]) -> StepReport:
        self.model.eval()
        rec, dis, tot = [], [], []
        for b in batches:
            total, parts = combined_loss(self.model, b, self.cfg)
            tot.append(float(total))
            if parts["rec"] is not None:
                rec.append(float(parts["rec"]))
            if parts["dis"] is not None:
                dis.append(float(parts["dis"]))
        return StepReport(step=self.step, loss_rec=float(np.mean(rec)) if rec else float("nan"),
                          loss_dis=float(np.mean(dis)) if dis else None, loss_total=float(np.mean(tot)),
                          lr=self.optimizer.param_groups[0]["lr"])


class BatchSampler:
    """Deterministic batches: shuffled epochs, per-window RC flips and mask seeds."""

    def __init__(self, seqs: Sequence[str], cfg: PretrainConfig, k: int, teacher=None):
        if not seqs:
            raise ValueError("empty pretraining corpus")
        self.seqs, self.cfg, self.k, self.teacher = list(seqs), cfg, k, teacher
        self.shuffle = stream(cfg.seed, "shuffle")
        self.augment = stream(cfg.seed, "augment")
        self.mask = stream(cfg.seed, "mask")
        self.order: list[int] = []

    def next(self) -> Batch:
        picked = []
        while len(picked) < self.cfg.batch_size:
            if not self.order:
                self.order = list(self.shuffle.permutation(len(self.seqs)))
            picked.append(self.seqs[self.order.pop()])
        if self.cfg.rc_augment:
            picked = [augment_rc(s, self.augment) for s in picked]
        plans = [build_mask_plan(len(s), self.k, self.cfg.mask_ratio, int(self.mask.integers(2**62)))
                 for s in picked]
        return make_batch(picked, plans, self.teacher if self.cfg.distill_mode != "off" else None)


def validation_batches(seqs: Sequence[str], cfg: PretrainConfig, k: int, teacher=None) -> list[Batch]:
    """Fixed validation batches (no augmentation) reused at every evaluation."""
    seqs = list(seqs)[: cfg.eval_windows]
    rng = stream(cfg.seed, "val")
    out = []
    for i in range(0, len(seqs), cfg.batch_size):
        part = seqs[i:i + cfg.batch_size]
        plans = [build_mask_plan(len(s), k, cfg.mask_ratio, int(rng.integers(2**62))) for s in part]
        out.append(make_batch(part, plans, teacher if cfg.distill_mode != "off" else None))
    return out


@dataclass
class PretrainResult:
    model: HadStudent
    train: list[StepReport] = field(default_factory=list)
    val: list[StepReport] = field(default_factory=list)


def pretrain_run(cfg: PretrainConfig, model_cfg: StudentConfig, train_seqs: Sequence[str],
                 val_seqs: Sequence[str] = (), teacher=None, log_path: str | Path | None = None,
                 checkpoint_path: str | Path | None = None, log_every: int = 10,
                 model: HadStudent | None = None) -> PretrainResult:
    """Run ``cfg.steps`` optimizer steps, evaluating on ``val_seqs`` at step 0,
    every ``cfg.eval_every`` steps and at the end.

    Metrics go to ``log_path`` as JSON lines; the final student parameters go
    to ``checkpoint_path`` in HADW format.
    """
    if model is None:
        model = build_student(model_cfg, cfg)
    trainer = Pretrainer(model, teacher, cfg, dump_dir=Path(log_path).parent if log_path else None)
    sampler = BatchSampler(train_seqs, cfg, model_cfg.k, teacher)
    val = validation_batches(val_seqs, cfg, model_cfg.k, teacher) if val_seqs else []
    result = PretrainResult(model)
    log = open(log_path, "w") if log_path else None
    try:
        def emit(report: StepReport, split: str):
            if log is not None:
                log.write(json.dumps(report.log_record(split)) + "\n")

        if val:
            result.val.append(trainer.evaluate(val))
            emit(result.val[-1], "val")
        for step in range(cfg.steps):
            report = trainer.train_step(sampler.next())
            result.train.append(report)
            if step % log_every == 0 or step == cfg.steps - 1:
                emit(report, "train")
            done = step + 1
            if val and (done % cfg.eval_every == 0 or done == cfg.steps):
                if not result.val or result.val[-1].step != done:
                    result.val.append(trainer.evaluate(val))
                    emit(result.val[-1], "val")
    finally:
        if log is not None:
            log.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, dict(model.named_parameters()))
    return result


"""Desk-scale experiments shared by the acceptance suite and ``scripts/``."""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from .genome_io import SequenceRecord, split_dataset, window_sequence
from .masking import build_mask_plan
from .pretrain import PretrainConfig, Pretrainer, build_student, make_batch, pretrain_run
from .rng import derived_seed, stream
from .student import HadStudent, StudentConfig
from .synthetic import PlantedMotifTask, PlantedTeacher, markov_genome
from .teacher import CacheTeacher, SyntheticTeacher, TeacherConfig, build_teacher_cache
from .tokenizers import encode_char

WINDOW = 120


def small_student(**kw) -> StudentConfig:
    base = dict(n_blocks=2, d_model=32, d_k=32, d_v=32, n_heads=2, d_teacher=64, max_len=WINDOW, chunk=64)
    base.update(kw)
    return StudentConfig(**base)


def small_teacher(depth: int = 2, seed: int = 0) -> SyntheticTeacher:
    return SyntheticTeacher(TeacherConfig(d_teacher=64, depth=depth, seed=seed, max_tokens=WINDOW // 6))


@torch.no_grad()
def pooled_features(model: HadStudent, seqs) -> np.ndarray:
    """Mean over positions of the full-sequence encoding (nothing masked)."""
    model.eval()
    ids = torch.tensor([encode_char(s) for s in seqs], dtype=torch.long)
    return model.encode_full(ids).mean(1).numpy()


def linear_probe(train_x, train_y, test_x, test_y) -> float:
    """Test accuracy of a standardised logistic-regression probe."""
    scaler = StandardScaler().fit(train_x)
    clf = LogisticRegression(max_iter=2000).fit(scaler.transform(train_x), train_y)
    return float(clf.score(scaler.transform(test_x), test_y))


@dataclass
class ProgressResult:
    seed: int
    rec_before: float
    rec_after: float
    dis_before: float
    dis_after: float


def training_progress(seed: int, steps: int = 200, corpus_bp: int = 50_000) -> ProgressResult:
    """Pretrain on a synthetic genome; compare validation losses at step 0 and at the end."""
    genome = markov_genome(corpus_bp, seed=seed)
    windows = window_sequence(SequenceRecord("synthetic", genome), WINDOW, WINDOW, 6)
    train, val = split_dataset(windows, 0.1, derived_seed(seed, "split"))
    cfg = PretrainConfig(steps=steps, batch_size=8, lr=3e-3, warmup=20, eval_every=steps, seed=seed)
    res = pretrain_run(cfg, small_student(), [w.seq for w in train], [w.seq for w in val], small_teacher())
    first, last = res.val[0], res.val[-1]
    return ProgressResult(seed, first.loss_rec, last.loss_rec, first.loss_dis, last.loss_dis)


def overfit_single_batch(steps: int = 500, seed: int = 0, distill_mode: str = "visible",
                         batch_size: int = 4) -> list[float]:
    """Train repeatedly on one fixed batch (fixed masks); returns loss_rec per step."""
    rng = stream(seed, "data")
    seqs = ["".join(rng.choice(list("ACGT"), WINDOW)) for _ in range(batch_size)]
    plans = [build_mask_plan(WINDOW, 6, 0.15, int(rng.integers(2**62))) for _ in seqs]
    cfg = PretrainConfig(steps=steps, lr=3e-3, warmup=20, distill_mode=distill_mode, seed=seed)
    teacher = small_teacher() if distill_mode != "off" else None
    batch = make_batch(seqs, plans, teacher)
    trainer = Pretrainer(build_student(small_student(), cfg), teacher, cfg)
    return [trainer.train_step(batch).loss_rec for _ in range(steps)]


@dataclass
class ProbeResult:
    seed: int
    mode: str
    accuracy: float
    final_loss_rec: float


def distill_probe(seed: int, modes=("visible", "off"), steps: int = 400, n_corpus: int = 400,
                  n_probe: int = 400, cache_dir: str | Path | None = None) -> list[ProbeResult]:
    """Pretrain under each distillation mode against a teacher whose rows encode a
    planted motif class, then linearly probe the frozen encoder for that class.

    Teacher embeddings are precomputed into a HADT cache and read back through the
    cache backend, as a real external teacher would be.
    """
    task = PlantedMotifTask(length=WINDOW)
    teacher = PlantedTeacher(small_teacher(), task)
    corpus = [s for s, _ in task.sample(n_corpus, seed=1)]
    probe_train, probe_test = task.sample(n_probe, seed=2), task.sample(n_probe, seed=3)
    with tempfile.TemporaryDirectory(dir=cache_dir) as tmp:
        path = Path(tmp) / "planted.hadt"
        build_teacher_cache(corpus, teacher, path, include_rc=True)
        cached = CacheTeacher.load(path, teacher.d_teacher)
    out = []
    for mode in modes:
        cfg = PretrainConfig(steps=steps, lr=3e-3, warmup=30, batch_size=8, distill_mode=mode, seed=seed)
        res = pretrain_run(cfg, small_student(), corpus, teacher=cached)
        acc = linear_probe(pooled_features(res.model, [s for s, _ in probe_train]), [y for _, y in probe_train],
                           pooled_features(res.model, [s for s, _ in probe_test]), [y for _, y in probe_test])
        out.append(ProbeResult(seed, mode, acc, res.train[-1].loss_rec))
    return out

"""End-to-end finite-difference check of the pretraining loss on a scaled model."""
from __future__ import annotations

from .masking import build_mask_plan
from .numeric import CHECK_DTYPE, grad_check_report
from .pretrain import PretrainConfig, combined_loss, make_batch
from .rng import stream, torch_seeded
from .student import HadStudent, StudentConfig
from .synthetic import uniform_dna
from .teacher import SyntheticTeacher, TeacherConfig


def scaled_grad_check(d_model: int = 8, length: int = 24, k: int = 6, n_blocks: int = 2, d_teacher: int = 16,
                      chunk: int = 8, batch: int = 2, seed: int = 0, eps: float = 1e-5,
                      distill_mode: str = "visible") -> dict[str, float]:
    """Worst relative error per parameter of a float64 student under ``combined_loss``."""
    cfg = StudentConfig(n_blocks=n_blocks, d_model=d_model, d_k=d_model, d_v=d_model, n_heads=2, k=k,
                        d_teacher=d_teacher, max_len=length, chunk=chunk)
    with torch_seeded(seed, "init"):
        model = HadStudent(cfg).to(CHECK_DTYPE)
    teacher = SyntheticTeacher(TeacherConfig(d_teacher=d_teacher, depth=1, n_heads=2, seed=seed, k=k,
                                             max_tokens=length // k))
    rng = stream(seed, "data")
    seqs = [uniform_dna(length, rng) for _ in range(batch)]
    plans = [build_mask_plan(length, k, 0.15, int(rng.integers(2**62))) for _ in seqs]
    b = make_batch(seqs, plans, teacher)
    b.teacher = b.teacher.to(CHECK_DTYPE)
    pcfg = PretrainConfig(distill_mode=distill_mode)
    return grad_check_report(lambda: combined_loss(model, b, pcfg)[0], dict(model.named_parameters()), eps)

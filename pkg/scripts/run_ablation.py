"""Architecture / distillation ablation grid on a synthetic genome.

Variants: full model; no self-attention layer; distillation on masked positions;
no distillation (plain masked-LM). Reports validation loss_rec, loss_dis and
perplexity at the end of training as JSON lines.
"""
import argparse
import json
import time

import numpy as np
import torch

from had.experiments import WINDOW, small_student, small_teacher
from had.genome_io import SequenceRecord, split_dataset, window_sequence
from had.pretrain import PretrainConfig, pretrain_run
from had.rng import derived_seed
from had.synthetic import markov_genome

VARIANTS = {
    "full": dict(use_attention=True, distill_mode="visible"),
    "no_attention": dict(use_attention=False, distill_mode="visible"),
    "masked_distill": dict(use_attention=True, distill_mode="masked"),
    "no_distill": dict(use_attention=True, distill_mode="off"),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--bp", type=int, default=50_000)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    args = ap.parse_args(argv)
    torch.set_num_threads(1)
    summary = {}
    for seed in args.seeds:
        windows = window_sequence(SequenceRecord("synthetic", markov_genome(args.bp, seed=seed)), WINDOW, WINDOW, 6)
        train, val = split_dataset(windows, 0.1, derived_seed(seed, "split"))
        for name in args.variants:
            t0 = time.perf_counter()
            cfg = PretrainConfig(steps=args.steps, batch_size=8, lr=3e-3, warmup=20, eval_every=args.steps,
                                 seed=seed, **VARIANTS[name])
            res = pretrain_run(cfg, small_student(), [w.seq for w in train], [w.seq for w in val],
                               small_teacher() if cfg.distill_mode != "off" else None)
            last = res.val[-1]
            row = {"variant": name, "seed": seed, "val_loss_rec": last.loss_rec, "val_ppl": last.ppl,
                   "val_loss_dis": last.loss_dis, "seconds": round(time.perf_counter() - t0, 1)}
            summary.setdefault(name, []).append(last.loss_rec)
            print(json.dumps(row), flush=True)
    for name, recs in summary.items():
        print(json.dumps({"variant": name, "mean_val_loss_rec": float(np.mean(recs)), "n_seeds": len(recs)}))


if __name__ == "__main__":
    main()

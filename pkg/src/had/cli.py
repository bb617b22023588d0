"""Command-line entry point: ``had <subcommand> --config run.json``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import torch

from .config import RunConfig, load_config
from .errors import ConfigError, HadError
from .finetune import (build_classifier, evaluate, export_embeddings, finetune_run, padded_length,
                       predict_logits, read_labeled_csv)
from .genome_io import read_fasta, split_dataset, window_sequence
from .gradcheck import scaled_grad_check
from .numeric import load_checkpoint, load_into, save_checkpoint
from .pretrain import pretrain_run
from .rng import derived_seed
from .teacher import build_teacher_cache, make_teacher

GRAD_CHECK_THRESHOLD = 1e-4


def _windows(cfg: RunConfig):
    if not cfg.data.fasta:
        raise ConfigError("data.fasta lists no FASTA files")
    windows = []
    for path in cfg.data.fasta:
        if not os.path.exists(path):
            raise HadError(f"FASTA file not found: {path}")
        for rec in read_fasta(path):
            windows.extend(window_sequence(rec, cfg.data.window, cfg.data.stride, cfg.model.k))
    return windows


def cmd_pretrain(cfg: RunConfig, args) -> int:
    pcfg = cfg.pretrain()
    train, val = split_dataset(_windows(cfg), cfg.data.val_fraction, derived_seed(pcfg.seed, "split"))
    if not train:
        raise HadError("no training windows: sequences are shorter than data.window")
    teacher = make_teacher(cfg.teacher_config()) if pcfg.distill_mode != "off" else None
    t0 = time.perf_counter()
    result = pretrain_run(pcfg, cfg.student(), [w.seq for w in train], [w.seq for w in val], teacher,
                          log_path=cfg.io.log, checkpoint_path=cfg.io.checkpoint, log_every=cfg.train.log_every)
    last = result.val[-1] if result.val else result.train[-1]
    print(json.dumps({"checkpoint": cfg.io.checkpoint, "log": cfg.io.log, "steps": pcfg.steps,
                      "loss_rec": last.loss_rec, "loss_dis": last.loss_dis, "ppl": last.ppl,
                      "seconds": round(time.perf_counter() - t0, 2)}))
    return 0


def _classifier_from(cfg: RunConfig, checkpoint: str, n_classes: int | None, need_head: bool):
    params = load_checkpoint(checkpoint)
    if n_classes is None:
        n_classes = params["head.weight"].shape[0] if "head.weight" in params else 2
    model = build_classifier(cfg.student(), n_classes, cfg.finetune.seed, cfg.finetune.pad_masked_mean)
    prefixes = ("embed.", "encoder.", "head.") if need_head else ("embed.", "encoder.")
    load_into(model, params, prefixes)
    return model


def _metric_lines(cfg: RunConfig, metrics: dict, split: str):
    for name, value in metrics.items():
        print(json.dumps({"task": cfg.finetune.task, "split": split, "metric": name, "value": value,
                          "seed": cfg.finetune.seed}))


def cmd_finetune(cfg: RunConfig, args) -> int:
    train = read_labeled_csv(args.csv, cfg.finetune.n_classes)
    n_classes = train[0].n_classes if train else (cfg.finetune.n_classes or 2)
    if args.checkpoint:
        model = _classifier_from(cfg, args.checkpoint, n_classes, need_head=False)
    else:
        model = build_classifier(cfg.student(), n_classes, cfg.finetune.seed, cfg.finetune.pad_masked_mean)
    length = padded_length(train, cfg.model.k, cfg.model.max_len)
    fcfg = cfg.finetune_config()
    finetune_run(model, train, fcfg, length)
    save_checkpoint(cfg.io.classifier, dict(model.named_parameters()))
    _metric_lines(cfg, evaluate(model, train, length, fcfg.conjoin), "train")
    if args.eval_csv:
        test = read_labeled_csv(args.eval_csv, n_classes)
        _metric_lines(cfg, evaluate(model, test, length, fcfg.conjoin), "eval")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    examples = read_labeled_csv(args.csv, cfg.finetune.n_classes)
    model = _classifier_from(cfg, args.checkpoint, None, need_head=True)
    length = padded_length(examples, cfg.model.k, cfg.model.max_len)
    conjoin = cfg.finetune.conjoin
    if args.debug:
        path = "conjoined: (logits(x) + logits(rc(x))) / 2" if conjoin else "forward only: logits(x)"
        print(f"logits path: {path}", file=sys.stderr)
        logits = predict_logits(model, [e.seq for e in examples], length, conjoin)
        for row in logits.tolist():
            print(json.dumps({"logits": row}), file=sys.stderr)
    _metric_lines(cfg, evaluate(model, examples, length, conjoin), "eval")
    return 0


def cmd_export_embeddings(cfg: RunConfig, args) -> int:
    examples = read_labeled_csv(args.csv, cfg.finetune.n_classes)
    model = _classifier_from(cfg, args.checkpoint, 2, need_head=False)
    out = args.out or cfg.io.embeddings
    n = export_embeddings(model, examples, out)
    print(json.dumps({"embeddings": out, "count": n, "dim": cfg.model.d_model}))
    return 0


def cmd_teacher_cache(cfg: RunConfig, args) -> int:
    if cfg.teacher.kind != "synthetic":
        raise ConfigError("teacher-cache builds from the synthetic teacher; set teacher.kind=synthetic")
    out = args.out or cfg.io.teacher_cache
    n = build_teacher_cache(_windows(cfg), make_teacher(cfg.teacher_config()), out)
    print(json.dumps({"cache": out, "entries": n, "d_teacher": cfg.teacher.d_teacher}))
    return 0


def cmd_grad_check(cfg: RunConfig, args) -> int:
    report = scaled_grad_check(d_model=args.d_model, length=args.length, n_blocks=args.blocks, seed=args.seed,
                               distill_mode=args.mode)
    worst_name = max(report, key=report.get)
    worst = report[worst_name]
    print(json.dumps({"max_rel_error": worst, "worst_parameter": worst_name, "n_tensors": len(report),
                      "threshold": args.threshold, "pass": worst <= args.threshold}))
    return 0 if worst <= args.threshold else 1


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "export-embeddings": cmd_export_embeddings,
    "teacher-cache": cmd_teacher_cache,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="had", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name in ("finetune", "eval", "export-embeddings"):
            p.add_argument("--checkpoint", required=name != "finetune")
            p.add_argument("--csv", required=True, help="labelled data with header sequence,label")
        if name == "finetune":
            p.add_argument("--eval-csv")
        if name == "eval":
            p.add_argument("--debug", action="store_true", help="print the logits path and raw logits to stderr")
        if name in ("export-embeddings", "teacher-cache"):
            p.add_argument("--out")
        if name == "grad-check":
            p.add_argument("--d-model", type=int, default=8)
            p.add_argument("--length", type=int, default=24)
            p.add_argument("--blocks", type=int, default=2)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--mode", default="visible", choices=["visible", "masked", "off"])
            p.add_argument("--threshold", type=float, default=GRAD_CHECK_THRESHOLD)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("HAD_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        cfg = load_config(args.config, args.override)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"had {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (HadError, OSError, ValueError, KeyError) as exc:
        print(f"had {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

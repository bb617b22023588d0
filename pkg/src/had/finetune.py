"""Supervised fine-tuning, reverse-complement conjoining, metrics and embedding export."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import EmptyInput, InvalidHead
from .genome_io import check_dna, reverse_complement
from .rng import stream, torch_seeded
from .student import Encoder, StudentConfig, TokenEmbedding
from .tokenizers import encode_char


@dataclass(frozen=True)
class LabeledExample:
    seq: str
    label: int
    n_classes: int = 2

    def __post_init__(self):
        if not 0 <= self.label < self.n_classes:
            raise ValueError(f"label {self.label} outside [0, {self.n_classes})")


@dataclass
class FinetuneConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    steps: int = 300
    batch_size: int = 16
    seed: int = 0
    conjoin: bool = True
    head_only: bool = False
    pad_masked_mean: bool = False
    rc_augment: bool = False


def read_labeled_csv(path: str | Path, n_classes: int | None = None) -> list[LabeledExample]:
    """Read a ``sequence,label`` CSV; ``n_classes`` defaults to max label + 1."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        if [f.strip() for f in reader.fieldnames[:2]] != ["sequence", "label"]:
            raise ValueError(f"{path}: expected header 'sequence,label', got {reader.fieldnames}")
        for row in reader:
            seq = row["sequence"].strip().upper()
            check_dna(seq)
            rows.append((seq, int(row["label"])))
    if n_classes is None:
        n_classes = max((lab for _, lab in rows), default=1) + 1
        n_classes = max(n_classes, 2)
    return [LabeledExample(s, lab, n_classes) for s, lab in rows]


def fit_length(seq: str, length: int) -> str:
    """Truncate to ``length`` characters, then right-pad with N."""
    return seq[:length] + "N" * max(0, length - len(seq))


def padded_length(examples: Sequence[LabeledExample] | Sequence[str], k: int, max_len: int) -> int:
    longest = max((len(getattr(e, "seq", e)) for e in examples), default=k)
    return min(max_len, k * math.ceil(max(longest, 1) / k))


class SequenceClassifier(nn.Module):
    """Student encoder over the whole sequence, mean-pooled, then an affine head."""

    def __init__(self, cfg: StudentConfig, n_classes: int, pad_masked_mean: bool = False):
        super().__init__()
        if n_classes < 2:
            raise InvalidHead(f"a classifier needs at least 2 classes, got {n_classes}")
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg)
        self.encoder = Encoder(cfg)
        self.head = nn.Linear(cfg.d_model, n_classes)
        self.pad_masked_mean = pad_masked_mean

    def features(self, char_ids: torch.Tensor, n_real: torch.Tensor | None = None) -> torch.Tensor:
        B, L = char_ids.shape
        z = self.encoder(self.embed(char_ids, torch.arange(L).expand(B, L)))
        if self.pad_masked_mean and n_real is not None:
            keep = (torch.arange(L)[None, :] < n_real[:, None]).to(z.dtype)
            return (z * keep[..., None]).sum(1) / keep.sum(1, keepdim=True).clamp_min(1)
        return z.mean(dim=1)

    def forward(self, char_ids: torch.Tensor, n_real: torch.Tensor | None = None) -> torch.Tensor:
        return self.head(self.features(char_ids, n_real))

    def encode_seqs(self, seqs: Sequence[str], length: int):
        ids = torch.tensor([encode_char(fit_length(s, length)) for s in seqs], dtype=torch.long)
        n_real = torch.tensor([min(len(s), length) for s in seqs], dtype=torch.long)
        return ids, n_real

    def logits(self, seqs: Sequence[str], length: int) -> torch.Tensor:
        return self(*self.encode_seqs(seqs, length))


def build_classifier(cfg: StudentConfig, n_classes: int, seed: int = 0, pad_masked_mean: bool = False):
    with torch_seeded(seed, "init"):
        return SequenceClassifier(cfg, n_classes, pad_masked_mean)


@torch.no_grad()
def conjoined_predict(model: SequenceClassifier, seq: str, length: int | None = None) -> torch.Tensor:
    """Average of the logits of ``seq`` and of its reverse complement."""
    model.eval()
    if length is None:
        length = padded_length([seq], model.cfg.k, model.cfg.max_len)
    fwd = model.logits([seq], length)[0]
    rev = model.logits([reverse_complement(seq)], length)[0]
    return (fwd + rev) / 2


@torch.no_grad()
def predict_logits(model: SequenceClassifier, seqs: Sequence[str], length: int, conjoin: bool = True,
                   batch_size: int = 64) -> torch.Tensor:
    model.eval()
    out = []
    for i in range(0, len(seqs), batch_size):
        part = list(seqs[i:i + batch_size])
        logits = model.logits(part, length)
        if conjoin:
            logits = (logits + model.logits([reverse_complement(s) for s in part], length)) / 2
        out.append(logits)
    if not out:
        return torch.zeros(0, model.head.out_features)
    return torch.cat(out)


def finetune_run(model: SequenceClassifier, train: Sequence[LabeledExample], cfg: FinetuneConfig,
                 length: int | None = None) -> dict:
    """Train ``model`` end to end (or head only) with cross-entropy; returns training metrics."""
    if not train:
        raise EmptyInput("no fine-tuning examples")
    if length is None:
        length = padded_length(train, model.cfg.k, model.cfg.max_len)
    params = list(model.head.parameters()) if cfg.head_only else list(model.parameters())
    if cfg.head_only:
        model.embed.requires_grad_(False)
        model.encoder.requires_grad_(False)
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle = stream(cfg.seed, "shuffle")
    augment = stream(cfg.seed, "augment")
    order: list[int] = []
    losses = []
    model.train()
    for _ in range(cfg.steps):
        idx = []
        while len(idx) < min(cfg.batch_size, len(train)):
            if not order:
                order = list(shuffle.permutation(len(train)))
            idx.append(order.pop())
        seqs = [train[i].seq for i in idx]
        if cfg.rc_augment:
            seqs = [reverse_complement(s) if augment.random() < 0.5 else s for s in seqs]
        labels = torch.tensor([train[i].label for i in idx], dtype=torch.long)
        loss = nn.functional.cross_entropy(model.logits(seqs, length), labels)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, 1.0)
        opt.step()
        losses.append(float(loss.detach()))
    preds = predict_logits(model, [e.seq for e in train], length, conjoin=cfg.conjoin).argmax(-1).tolist()
    return {"final_loss": losses[-1], "train_accuracy": accuracy(preds, [e.label for e in train]),
            "length": length}


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_predictions(cls, preds, labels, positive: int = 1) -> "ConfusionCounts":
        tp = tn = fp = fn = 0
        for p, y in zip(preds, labels):
            if y == positive:
                tp += p == positive
                fn += p != positive
            else:
                fp += p == positive
                tn += p != positive
        return cls(int(tp), int(tn), int(fp), int(fn))


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, y in zip(preds, labels):
        m[y, p] += 1
    return m


def mcc(c: ConfusionCounts | np.ndarray) -> float:
    """Matthews correlation; a square matrix uses the multiclass R_K form."""
    if isinstance(c, ConfusionCounts):
        num = c.tp * c.tn - c.fp * c.fn
        den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
        return num / math.sqrt(den) if den else 0.0
    m = np.asarray(c, dtype=np.float64)
    t = m.sum(axis=1)
    p = m.sum(axis=0)
    n = m.sum()
    correct = np.trace(m)
    num = correct * n - t @ p
    den = math.sqrt(n * n - p @ p) * math.sqrt(n * n - t @ t)
    return float(num / den) if den else 0.0


def f1(c: ConfusionCounts) -> float:
    den = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / den if den else 0.0


def accuracy(predictions, labels) -> float:
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if not labels:
        raise EmptyInput("accuracy of an empty prediction set")
    return sum(int(p == y) for p, y in zip(predictions, labels)) / len(labels)


def evaluate(model: SequenceClassifier, examples: Sequence[LabeledExample], length: int,
             conjoin: bool = True) -> dict:
    if not examples:
        raise EmptyInput("no evaluation examples")
    logits = predict_logits(model, [e.seq for e in examples], length, conjoin)
    preds = logits.argmax(-1).tolist()
    labels = [e.label for e in examples]
    n_classes = model.head.out_features
    out = {"accuracy": accuracy(preds, labels)}
    if n_classes == 2:
        counts = ConfusionCounts.from_predictions(preds, labels)
        out["mcc"] = mcc(counts)
        out["f1"] = f1(counts)
    else:
        out["mcc"] = mcc(confusion_matrix(preds, labels, n_classes))
    return out


# -- embedding export ----------------------------------------------------------

EMB_MAGIC = b"HADE"
EMB_VERSION = 1


@torch.no_grad()
def export_embeddings(model: SequenceClassifier, examples: Sequence[LabeledExample], out: str | Path,
                      length: int | None = None, batch_size: int = 64) -> int:
    """Write mean-pooled encoder features plus labels; returns the record count."""
    model.eval()
    d = model.cfg.d_model
    if examples and length is None:
        length = padded_length(examples, model.cfg.k, model.cfg.max_len)
    chunks = [EMB_MAGIC, struct.pack("<IIQ", EMB_VERSION, d, len(examples))]
    for i in range(0, len(examples), batch_size):
        part = examples[i:i + batch_size]
        feats = model.features(*model.encode_seqs([e.seq for e in part], length)).float().numpy()
        for e, f in zip(part, feats):
            chunks.append(struct.pack("<I", e.label) + np.ascontiguousarray(f, dtype="<f4").tobytes())
    Path(out).write_bytes(b"".join(chunks))
    return len(examples)


def read_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != EMB_MAGIC:
        raise ValueError(f"{path}: not a HADE embedding file")
    version, d, count = struct.unpack_from("<IIQ", buf, 4)
    if version != EMB_VERSION:
        raise ValueError(f"{path}: unsupported embedding version {version}")
    labels = np.empty(count, dtype=np.int64)
    vecs = np.empty((count, d), dtype=np.float32)
    pos = 20
    for i in range(count):
        (labels[i],) = struct.unpack_from("<I", buf, pos)
        vecs[i] = np.frombuffer(buf, dtype="<f4", count=d, offset=pos + 4)
        pos += 4 + 4 * d
    return labels, vecs



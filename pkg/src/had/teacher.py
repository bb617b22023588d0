"""Frozen teachers producing per-k-mer embeddings, and the HADT cache format."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch
from torch import nn

from .errors import CacheMiss, DimensionMismatch, ShapeMismatch
from .genome_io import reverse_complement
from .masking import MaskPlan
from .student import MultiHeadAttention, sinusoidal_encoding
from .tokenizers import encode_kmer, kmer_vocab_size


@dataclass
class TeacherConfig:
    kind: str = "synthetic"
    d_teacher: int = 1024
    depth: int = 2
    n_heads: int = 4
    seed: int = 0
    k: int = 6
    max_tokens: int = 1026 // 6
    cache_path: str | None = None

    def __post_init__(self):
        if self.d_teacher <= 0:
            raise ValueError("d_teacher must be positive")
        if self.kind not in ("synthetic", "cache"):
            raise ValueError(f"unknown teacher kind {self.kind!r}")


@dataclass
class TeacherEmbedding:
    seq_key: str
    vectors: torch.Tensor


def seq_key(seq: str) -> str:
    """Cache key of a window: SHA-1 of its uppercase sequence text."""
    return hashlib.sha1(seq.encode("ascii")).hexdigest()


class _TeacherLayer(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads)
        self.n2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, 2 * d)
        self.ff2 = nn.Linear(2 * d, d)

    def forward(self, x):
        h = self.n1(x)
        x = x + self.attn(h, h)
        return x + self.ff2(torch.nn.functional.gelu(self.ff1(self.n2(x))))


class SyntheticTeacher(nn.Module):
    """Randomly initialised, frozen transformer over k-mer ids.

    ``depth=0`` leaves a token-local map (embedding + norm) whose output row
    for a k-mer depends on that k-mer alone.
    """

    def __init__(self, cfg: TeacherConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_teacher
        gen = torch.Generator().manual_seed(cfg.seed)
        self.tok = nn.Embedding(kmer_vocab_size(cfg.k), d)
        self.layers = nn.ModuleList(_TeacherLayer(d, cfg.n_heads) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(d)
        for name, p in self.named_parameters():
            with torch.no_grad():
                if p.dim() > 1:
                    fan_in = 1.0 if name.startswith("tok") else p.shape[-1] ** 0.5
                    p.copy_(torch.randn(p.shape, generator=gen) / fan_in)
                else:
                    # 1-d weights belong to layer norms
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
        self.register_buffer("pe", sinusoidal_encoding(cfg.max_tokens, d), persistent=False)
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, kmer_ids: torch.Tensor) -> torch.Tensor:
        n = kmer_ids.shape[-1]
        x = self.tok(kmer_ids)
        if self.layers:
            x = x + self.pe[:n]
            for layer in self.layers:
                x = layer(x)
        return self.norm(x)

    def embed_batch(self, seqs: list[str]) -> torch.Tensor:
        ids = torch.tensor([encode_kmer(s, self.cfg.k) for s in seqs], dtype=torch.long)
        return self(ids)


class CacheTeacher:
    """Teacher backed by precomputed embeddings loaded from a HADT file."""

    def __init__(self, entries: Mapping[str, np.ndarray], d_teacher: int):
        self.entries = dict(entries)
        self.d_teacher = d_teacher

    @classmethod
    def load(cls, path: str | Path, d_teacher: int | None = None) -> "CacheTeacher":
        d, entries = read_cache(path)
        if d_teacher is not None and d != d_teacher:
            raise DimensionMismatch(f"cache {path} has d_T={d}, config expects {d_teacher}")
        return cls(entries, d)

    def embed_batch(self, seqs: list[str]) -> torch.Tensor:
        rows = []
        for s in seqs:
            key = seq_key(s)
            if key not in self.entries:
                raise CacheMiss(f"no cached teacher embedding for key {key}")
            rows.append(torch.from_numpy(self.entries[key]))
        return torch.stack(rows)

    def parameters(self):
        return iter(())


def make_teacher(cfg: TeacherConfig):
    if cfg.kind == "cache":
        if not cfg.cache_path:
            raise ValueError("teacher.kind='cache' needs teacher.cache_path")
        return CacheTeacher.load(cfg.cache_path, cfg.d_teacher)
    return SyntheticTeacher(cfg)


def teacher_embed(seq: str, teacher) -> TeacherEmbedding:
    """Embed one full (unmasked) window."""
    return TeacherEmbedding(seq_key(seq), teacher.embed_batch([seq])[0])


def filter_visible(emb: TeacherEmbedding | torch.Tensor, plan: MaskPlan) -> torch.Tensor:
    vectors = emb.vectors if isinstance(emb, TeacherEmbedding) else emb
    if vectors.shape[0] != plan.n_units:
        raise ShapeMismatch(f"teacher rows {vectors.shape[0]} vs plan units {plan.n_units}")
    return vectors[list(plan.visible_kmer)]


# -- HADT cache files ---------------------------------------------------------

CACHE_MAGIC = b"HADT"
CACHE_VERSION = 1


def write_cache(path: str | Path, entries: Mapping[str, np.ndarray], d_teacher: int) -> None:
    out = [CACHE_MAGIC, struct.pack("<IIQ", CACHE_VERSION, d_teacher, len(entries))]
    for key, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if arr.ndim != 2 or arr.shape[1] != d_teacher:
            raise DimensionMismatch(f"entry {key}: shape {arr.shape} vs d_T={d_teacher}")
        raw = key.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.shape[0]) + arr.tobytes())
    Path(path).write_bytes(b"".join(out))


def read_cache(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a HADT cache file")
    version, d, count = struct.unpack_from("<IIQ", buf, 4)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    pos = 20
    entries = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        key = buf[pos + 4:pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rows,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        entries[key] = np.frombuffer(buf, dtype="<f4", count=rows * d, offset=pos).reshape(rows, d).copy()
        pos += 4 * rows * d
    return d, entries


def build_teacher_cache(corpus: Iterable, teacher, out: str | Path, include_rc: bool = True,
                        batch_size: int = 16) -> int:
    """Embed every window (and, by default, its reverse complement) into a cache file.

    Returns the number of entries written.
    """
    seqs = []
    for w in corpus:
        s = getattr(w, "seq", w)
        seqs.append(s)
        if include_rc:
            seqs.append(reverse_complement(s))
    entries: dict[str, np.ndarray] = {}
    unique = list(dict.fromkeys(seqs))
    for i in range(0, len(unique), batch_size):
        part = unique[i:i + batch_size]
        emb = teacher.embed_batch(part).float().numpy()
        for s, e in zip(part, emb):
            entries[seq_key(s)] = e
    d = teacher.cfg.d_teacher if hasattr(teacher, "cfg") else teacher.d_teacher
    write_cache(out, entries, d)
    return len(entries)

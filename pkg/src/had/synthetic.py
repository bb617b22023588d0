"""Synthetic DNA corpora and labelled toy tasks for desk-scale experiments."""
from __future__ import annotations

import numpy as np

BASES = np.array(list("ACGT"))


def markov_genome(length: int, seed: int, order: int = 2, concentration: float = 0.3,
                  motifs: int = 8, motif_len: int = 12, motif_rate: float = 0.02) -> str:
    """Order-``order`` Markov sequence with sparse transitions and planted repeats."""
    rng = np.random.default_rng(seed)
    table = rng.dirichlet([concentration] * 4, size=4**order)
    library = [rng.integers(0, 4, motif_len) for _ in range(motifs)]
    out = list(rng.integers(0, 4, order))
    while len(out) < length:
        if rng.random() < motif_rate:
            out.extend(library[rng.integers(motifs)])
            continue
        ctx = 0
        for b in out[-order:]:
            ctx = ctx * 4 + int(b)
        out.append(int(rng.choice(4, p=table[ctx])))
    return "".join(BASES[np.array(out[:length])])


def uniform_dna(length: int, rng: np.random.Generator) -> str:
    return "".join(BASES[rng.integers(0, 4, length)])


def gc_at_dataset(n: int, length: int, seed: int, bias: float = 0.8) -> list[tuple[str, int]]:
    """Label 1: GC-rich sequences, label 0: AT-rich ones."""
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        label = i % 2
        p_gc = bias if label else 1.0 - bias
        probs = np.array([1 - p_gc, p_gc, p_gc, 1 - p_gc]) / 2
        data.append(("".join(BASES[rng.choice(4, size=length, p=probs)]), label))
    order = rng.permutation(n)
    return [data[i] for i in order]


class PlantedMotifTask:
    """Two classes of random windows that differ only in which motif is planted.

    Class 1 windows carry copies of ``motif``; class 0 windows carry copies of a
    shuffled ``decoy`` with the same base composition, so no composition
    statistic separates the classes.
    """

    def __init__(self, length: int = 120, motif_len: int = 8, copies: int = 3, seed: int = 123):
        rng = np.random.default_rng(seed)
        self.length, self.copies = length, copies
        self.motif = "".join(BASES[rng.integers(0, 4, motif_len)])
        decoy = self.motif
        while decoy == self.motif:
            decoy = "".join(rng.permutation(list(self.motif)))
        self.decoy = decoy

    def sample(self, n: int, seed: int) -> list[tuple[str, int]]:
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            label = int(rng.integers(2))
            seq = list(BASES[rng.integers(0, 4, self.length)])
            m = self.motif if label else self.decoy
            for _ in range(self.copies):
                p = int(rng.integers(0, self.length - len(m) + 1))
                seq[p:p + len(m)] = list(m)
            out.append(("".join(seq), label))
        return out

    def row_signal(self, seq: str, k: int) -> np.ndarray:
        """+1 on k-mer rows overlapping a motif copy (either strand), -1 for decoy copies."""
        from .genome_io import reverse_complement

        sig = np.zeros(len(seq) // k)
        for pattern, value in ((self.motif, 1.0), (self.decoy, -1.0)):
            for m in {pattern, reverse_complement(pattern)}:
                i = seq.find(m)
                while i >= 0:
                    sig[i // k:(i + len(m) - 1) // k + 1] = value
                    i = seq.find(m, i + 1)
        return sig


class PlantedTeacher:
    """Wraps a synthetic teacher: ``base_scale * base(x) + scale * signal(x) * u``.

    ``u`` is a fixed unit direction, so the mean of a window's teacher rows is a
    linear function of how many motif vs decoy copies it carries.
    """

    def __init__(self, base, task: PlantedMotifTask, scale: float = 8.0, base_scale: float = 0.1, seed: int = 7):
        import torch

        self.base, self.task, self.cfg = base, task, base.cfg
        self.d_teacher = base.cfg.d_teacher
        u = torch.randn(self.d_teacher, generator=torch.Generator().manual_seed(seed))
        self.direction = u / u.norm()
        self.scale, self.base_scale = scale, base_scale

    def embed_batch(self, seqs):
        import torch

        sig = torch.tensor(np.stack([self.task.row_signal(s, self.cfg.k) for s in seqs]), dtype=torch.float32)
        return self.base_scale * self.base.embed_batch(seqs) + self.scale * sig[..., None] * self.direction

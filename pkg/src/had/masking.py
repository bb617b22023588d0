"""Two-stage group masking.

Masked units are sampled at k-mer granularity and then expanded to character
positions, so every visible character belongs to a fully visible k-mer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import LengthNotDivisible


def mask_count(n_units: int, ratio: float) -> int:
    if ratio <= 0:
        return 0
    return min(n_units, max(1, math.floor(ratio * n_units + 0.5)))


def sample_kmer_mask(n_units: int, ratio: float, rng_seed) -> list[int]:
    if not 0 <= ratio <= 1:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    if n_units < 1:
        raise ValueError("n_units must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    picked = rng.choice(n_units, size=mask_count(n_units, ratio), replace=False)
    return sorted(int(i) for i in picked)


def expand_mask_to_char(kmer_set, k: int) -> list[int]:
    return [j * k + i for j in sorted(kmer_set) for i in range(k)]


@dataclass(frozen=True)
class MaskPlan:
    L: int
    k: int
    masked_kmer: tuple[int, ...]

    def __post_init__(self):
        if self.L % self.k:
            raise LengthNotDivisible(f"L={self.L} is not divisible by k={self.k}")
        object.__setattr__(self, "masked_kmer", tuple(sorted(self.masked_kmer)))

    @property
    def n_units(self) -> int:
        return self.L // self.k

    @cached_property
    def visible_kmer(self) -> tuple[int, ...]:
        masked = set(self.masked_kmer)
        return tuple(j for j in range(self.n_units) if j not in masked)

    @cached_property
    def masked_char(self) -> tuple[int, ...]:
        return tuple(expand_mask_to_char(self.masked_kmer, self.k))

    @cached_property
    def visible_char(self) -> tuple[int, ...]:
        return tuple(expand_mask_to_char(self.visible_kmer, self.k))

    def to_json(self) -> str:
        return json.dumps({"L": self.L, "k": self.k, "masked_kmer": list(self.masked_kmer)})

    @classmethod
    def from_json(cls, text: str) -> "MaskPlan":
        obj = json.loads(text)
        return cls(obj["L"], obj["k"], tuple(obj["masked_kmer"]))


def build_mask_plan(L: int, k: int, ratio: float, rng_seed) -> MaskPlan:
    if L % k:
        raise LengthNotDivisible(f"L={L} is not divisible by k={k}")
    return MaskPlan(L, k, tuple(sample_kmer_mask(L // k, ratio, rng_seed)))

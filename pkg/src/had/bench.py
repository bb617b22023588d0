"""Microbenchmarks: chunk-wise vs sequential GDN evaluation, and attention scaling."""
from __future__ import annotations

import csv
import os
import statistics
import sys
import time
from dataclasses import dataclass

import torch

from .gdn import GdnCell, gdn_forward_chunkwise, gdn_forward_sequential
from .student import MultiHeadAttention

CSV_FIELDS = ["variant", "L", "d", "chunk", "ns_per_token", "tokens_per_sec"]


@dataclass
class BenchResult:
    variant: str
    L: int
    d: int
    chunk: int
    ns_per_token: float
    tokens_per_sec: float

    def row(self) -> dict:
        return {f: getattr(self, f) for f in CSV_FIELDS}


class EquivalenceError(RuntimeError):
    pass


def _time(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _label(variant: str) -> str:
    threads = int(os.environ.get("HAD_THREADS", "1") or 1)
    return variant if threads <= 1 else f"{variant}@{threads}t"


@torch.no_grad()
def bench_gdn(L_list, d: int, chunk_list, repeats: int = 5, warmup: int = 2, seed: int = 0,
              tol: float = 1e-5) -> list[BenchResult]:
    """Median wall time per token for every (L, chunk) pair.

    Each chunked variant is first checked against the sequential reference;
    a mismatch above ``tol`` raises :class:`EquivalenceError` before any timing.
    """
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    cell = GdnCell(d, d, d)
    results = []
    for L in L_list:
        x = torch.randn(L, d, generator=gen)
        reference, _ = gdn_forward_sequential(x, cell)
        for chunk in chunk_list:
            out, _ = gdn_forward_chunkwise(x, cell, chunk=chunk)
            err = (out - reference).abs().max().item()
            if err > tol:
                raise EquivalenceError(f"chunk={chunk}, L={L}: max |diff| {err:.3g} > {tol}")
        for chunk in chunk_list:
            sec = _time(lambda: gdn_forward_chunkwise(x, cell, chunk=chunk), repeats, warmup)
            variant = "sequential" if chunk == 1 else "chunkwise"
            results.append(BenchResult(_label(variant), L, d, chunk, sec * 1e9 / L, L / sec))
    return results


@torch.no_grad()
def bench_attention(L_list, d: int, n_heads: int = 4, repeats: int = 5, warmup: int = 2,
                    seed: int = 0) -> list[BenchResult]:
    torch.manual_seed(seed)
    attn = MultiHeadAttention(d, n_heads)
    results = []
    for L in L_list:
        x = torch.randn(1, L, d)
        sec = _time(lambda: attn(x, x), repeats, warmup)
        results.append(BenchResult(_label("attention"), L, d, 0, sec * 1e9 / L, L / sec))
    return results


def write_csv(results, out=None) -> None:
    fh = out or sys.stdout
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for r in results:
        writer.writerow(r.row())

"""FASTA ingestion, windowing, reverse-complement augmentation and splitting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IllegalBase, LengthNotDivisible, MalformedFasta

DNA_ALPHABET = frozenset("ACGTN")
_COMPLEMENT = str.maketrans("ACGTN", "TGCAN")


@dataclass(frozen=True)
class SequenceRecord:
    id: str
    seq: str


@dataclass(frozen=True)
class Window:
    record_id: str
    offset: int
    seq: str


def check_dna(seq: str) -> None:
    for i, base in enumerate(seq):
        if base not in DNA_ALPHABET:
            raise IllegalBase(base, i)


def parse_fasta(data: bytes | str) -> list[SequenceRecord]:
    """Parse FASTA text into records.

    Sequence lines are concatenated and uppercased. Blank lines are ignored,
    CRLF line endings are accepted. The record id is the first whitespace
    delimited token of the header.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    records: list[SequenceRecord] = []
    header: str | None = None
    chunks: list[str] = []

    def flush():
        seq = "".join(chunks)
        if not seq:
            raise MalformedFasta(f"record {header!r} has an empty sequence body")
        for i, base in enumerate(seq):
            if base not in DNA_ALPHABET:
                err = IllegalBase(base, i)
                err.args = (f"record {header!r}: {err.args[0]}",)
                raise err
        records.append(SequenceRecord(header, seq))

    for line in data.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if header is not None:
                flush()
            fields = line[1:].split()
            if not fields:
                raise MalformedFasta("header line without an identifier")
            header = fields[0]
            chunks = []
        else:
            if header is None:
                raise MalformedFasta("sequence data before the first '>' header")
            chunks.append(line.upper())
    if header is None:
        raise MalformedFasta("no '>' header found")
    flush()
    return records


def read_fasta(path: str | Path) -> list[SequenceRecord]:
    return parse_fasta(Path(path).read_bytes())


def reverse_complement(seq: str) -> str:
    check_dna(seq)
    return seq.translate(_COMPLEMENT)[::-1]


def window_sequence(record: SequenceRecord, L: int = 1026, stride: int | None = None, k: int = 6) -> list[Window]:
    """Cut ``record`` into windows of length ``L``; a short tail is dropped."""
    stride = L if stride is None else stride
    if L <= 0 or stride <= 0:
        raise ValueError("L and stride must be positive")
    if L % k:
        raise LengthNotDivisible(f"window length {L} is not divisible by k={k}")
    seq = record.seq
    return [Window(record.id, off, seq[off:off + L]) for off in range(0, len(seq) - L + 1, stride)]


def split_dataset(windows: list, val_fraction: float, seed: int) -> tuple[list, list]:
    if not 0 <= val_fraction < 1:
        raise ValueError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    n = len(windows)
    order = np.random.default_rng(seed).permutation(n)
    n_val = math.floor(val_fraction * n + 0.5)
    val = [windows[i] for i in order[:n_val]]
    train = [windows[i] for i in order[n_val:]]
    return train, val


def augment_rc(seq: str, rng: np.random.Generator, p: float = 0.5) -> str:
    """Reverse-complement ``seq`` with probability ``p``."""
    return reverse_complement(seq) if rng.random() < p else seq

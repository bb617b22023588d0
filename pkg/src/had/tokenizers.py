"""Character-level and non-overlapping k-mer tokenizers for DNA."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import IllegalBase, InvalidTokenId, LengthNotDivisible

CHAR_VOCAB = {"A": 0, "C": 1, "G": 2, "T": 3, "N": 4}
CHAR_PAD = 5
CHAR_VOCAB_SIZE = 6
N_ID = CHAR_VOCAB["N"]
_ID_TO_CHAR = "ACGTN"


def kmer_unk(k: int) -> int:
    return 4**k


def kmer_pad(k: int) -> int:
    return 4**k + 1


def kmer_vocab_size(k: int) -> int:
    return 4**k + 2


def encode_char(seq: str) -> list[int]:
    try:
        return [CHAR_VOCAB[c] for c in seq]
    except KeyError:
        for i, c in enumerate(seq):
            if c not in CHAR_VOCAB:
                raise IllegalBase(c, i) from None
        raise


def decode_char(ids) -> str:
    out = []
    for i in ids:
        if not 0 <= i < len(_ID_TO_CHAR):
            raise InvalidTokenId(f"token id {i} has no base (PAD={CHAR_PAD} is not decodable)")
        out.append(_ID_TO_CHAR[i])
    return "".join(out)


def encode_kmer(seq: str, k: int = 6) -> list[int]:
    """Big-endian base-4 ids of the non-overlapping k-mers of ``seq``.

    Any k-mer containing N maps to the shared UNK id ``4**k``.
    """
    if len(seq) % k:
        raise LengthNotDivisible(f"sequence length {len(seq)} is not divisible by k={k}")
    codes = encode_char(seq)
    unk = kmer_unk(k)
    ids = []
    for j in range(0, len(codes), k):
        v = 0
        for c in codes[j:j + k]:
            if c == N_ID:
                v = unk
                break
            v = v * 4 + c
        ids.append(v)
    return ids


def decode_kmer(ids, k: int = 6) -> str:
    unk = kmer_unk(k)
    parts = []
    for i in ids:
        if i == unk:
            parts.append("N" * k)
            continue
        if not 0 <= i < unk:
            raise InvalidTokenId(f"k-mer id {i} out of range for k={k}")
        digits = []
        for _ in range(k):
            digits.append(_ID_TO_CHAR[i % 4])
            i //= 4
        parts.append("".join(reversed(digits)))
    return "".join(parts)


@dataclass(frozen=True)
class TokenizedSequence:
    char_ids: list[int]
    kmer_ids: list[int]
    source: object = None

    @classmethod
    def from_seq(cls, seq: str, k: int = 6, source=None) -> "TokenizedSequence":
        return cls(encode_char(seq), encode_kmer(seq, k), source)

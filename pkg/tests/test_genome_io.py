import pytest
from hypothesis import given, strategies as st

from had.errors import IllegalBase, MalformedFasta
from had.genome_io import (SequenceRecord, augment_rc, parse_fasta, read_fasta, reverse_complement,
                           split_dataset, window_sequence)

dna = st.text(alphabet="ACGTN", max_size=300)


def test_single_record():
    assert parse_fasta(">chr1\nACGT\n") == [SequenceRecord("chr1", "ACGT")]


def test_concatenation_and_uppercase():
    assert parse_fasta(b">a\nacg\nt\n>b\nNNN\n") == [SequenceRecord("a", "ACGT"), SequenceRecord("b", "NNN")]


def test_crlf_and_header_description():
    assert parse_fasta(b">x some description\r\nAC\r\n\r\nGT\r\n") == [SequenceRecord("x", "ACGT")]


@pytest.mark.parametrize("text", ["ACGT\n", "", ">a\n", ">a\nAC\n>b\n"])
def test_malformed(text):
    with pytest.raises(MalformedFasta):
        parse_fasta(text)


def test_illegal_base_reports_position():
    with pytest.raises(IllegalBase) as err:
        parse_fasta(">a\nACGT\nACXT\n")
    assert err.value.position == 6


def test_read_fasta(tmp_path):
    p = tmp_path / "x.fa"
    p.write_bytes(b">r\nACGTN\n")
    assert read_fasta(p)[0].seq == "ACGTN"


@pytest.mark.parametrize("seq,expected", [("ACGT", "ACGT"), ("AAA", "TTT"), ("ACGN", "NCGT"), ("", "")])
def test_reverse_complement_examples(seq, expected):
    assert reverse_complement(seq) == expected


def test_reverse_complement_rejects_illegal():
    with pytest.raises(IllegalBase):
        reverse_complement("ACGU")


@given(dna)
def test_reverse_complement_involution(s):
    assert reverse_complement(reverse_complement(s)) == s


@pytest.mark.parametrize("n,L,stride,offsets", [
    (2052, 1026, 1026, [0, 1026]),
    (1000, 1026, 1026, []),
    (1027, 1026, 1026, [0]),
    (30, 12, 6, [0, 6, 12, 18]),
])
def test_window_offsets(n, L, stride, offsets):
    rec = SequenceRecord("r", "A" * n)
    assert [w.offset for w in window_sequence(rec, L, stride)] == offsets


@given(st.text(alphabet="ACGT", min_size=0, max_size=200), st.integers(1, 5), st.integers(1, 40))
def test_windows_are_verbatim_substrings(seq, units, stride):
    L = 6 * units
    rec = SequenceRecord("r", seq)
    for w in window_sequence(rec, L, stride):
        assert len(w.seq) == L and seq[w.offset:w.offset + L] == w.seq and w.record_id == "r"


def test_split_rounding_and_determinism():
    items = list(range(10))
    train, val = split_dataset(items, 0.2, seed=3)
    assert (len(train), len(val)) == (8, 2)
    assert split_dataset(items, 0.2, seed=3) == (train, val)
    assert split_dataset(items, 0.0, seed=3)[1] == []


@given(st.lists(st.integers(), max_size=50), st.floats(0, 0.99), st.integers(0, 2**31))
def test_split_is_partition(items, frac, seed):
    train, val = split_dataset(items, frac, seed)
    assert sorted(train + val) == sorted(items)
    assert len(val) == int(frac * len(items) + 0.5)


def test_augment_rc_probability(rng):
    flips = sum(augment_rc("AACG", rng) == reverse_complement("AACG") for _ in range(4000))
    assert abs(flips / 4000 - 0.5) < 0.03

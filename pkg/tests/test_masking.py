import numpy as np
import pytest
from hypothesis import given, strategies as st

from had.errors import LengthNotDivisible
from had.masking import MaskPlan, build_mask_plan, expand_mask_to_char, mask_count, sample_kmer_mask


@pytest.mark.parametrize("n,ratio,count", [(171, 0.15, 26), (20, 0.15, 3), (10, 0.0, 0), (3, 0.01, 1), (5, 1.0, 5)])
def test_mask_count(n, ratio, count):
    assert mask_count(n, ratio) == count
    assert len(sample_kmer_mask(n, ratio, 0)) == count


@pytest.mark.parametrize("units,k,chars", [({2}, 6, [12, 13, 14, 15, 16, 17]), (set(), 6, []), ({0, 1}, 2, [0, 1, 2, 3])])
def test_expand(units, k, chars):
    assert list(expand_mask_to_char(units, k)) == chars


def test_plan_examples():
    p = build_mask_plan(12, 6, 0.5, 9)
    assert (len(p.masked_kmer), len(p.masked_char), len(p.visible_char)) == (1, 6, 6)
    p = build_mask_plan(1026, 6, 0.15, 9)
    assert (len(p.masked_kmer), len(p.masked_char), len(p.visible_char)) == (26, 156, 870)
    assert build_mask_plan(12, 6, 1.0, 0).visible_char == ()


def test_plan_length_check():
    with pytest.raises(LengthNotDivisible):
        build_mask_plan(13, 6, 0.15, 0)


def _check_invariants(p: MaskPlan):
    units = set(range(p.L // p.k))
    assert set(p.masked_kmer) | set(p.visible_kmer) == units
    assert not set(p.masked_kmer) & set(p.visible_kmer)
    assert set(p.masked_char) == {j * p.k + i for j in p.masked_kmer for i in range(p.k)}
    assert set(p.visible_char) == set(range(p.L)) - set(p.masked_char)
    vis = np.array(p.visible_char).reshape(-1, p.k)
    assert (vis[:, 0] % p.k == 0).all() and (np.diff(vis, axis=1) == 1).all()


@given(st.integers(1, 40), st.sampled_from([1, 2, 3, 6]), st.floats(0, 1), st.integers(0, 2**32))
def test_plan_invariants(units, k, ratio, seed):
    _check_invariants(build_mask_plan(units * k, k, ratio, seed))


def test_determinism_and_json():
    a, b = build_mask_plan(1026, 6, 0.15, 42), build_mask_plan(1026, 6, 0.15, 42)
    assert a == b and a.masked_char == b.masked_char
    assert MaskPlan.from_json(a.to_json()) == a


def test_uniformity():
    counts = np.zeros(20)
    for seed in range(10_000):
        counts[sample_kmer_mask(20, 0.15, seed)] += 1
    assert np.abs(counts / 10_000 - 3 / 20).max() <= 0.02

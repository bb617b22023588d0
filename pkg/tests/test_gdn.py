from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from had.errors import ShapeMismatch
from had.gdn import (BidirectionalGdn, GdnCell, bidirectional_gdn, gdn_forward_chunkwise, gdn_forward_sequential,
                     gdn_step)
from had.numeric import grad_check_report

GOLDEN = Path(__file__).parent / "data" / "gdn_golden.npz"
f64 = torch.float64


def _cell(d, seed=0, dtype=f64, d_k=None, d_v=None):
    torch.manual_seed(seed)
    return GdnCell(d, d_k or d, d_v or d).to(dtype)


def _unit(v):
    return v / v.norm()


def test_pure_retention():
    S = torch.randn(3, 4, dtype=f64)
    S2, _ = gdn_step(S, _unit(torch.randn(4, dtype=f64)), torch.randn(3, dtype=f64), torch.randn(4, dtype=f64), 1.0, 0.0)
    assert torch.equal(S2, S)


def test_pure_decay():
    S = torch.full((2, 2), 2.0, dtype=f64)
    S2, _ = gdn_step(S, torch.tensor([1.0, 0.0], dtype=f64), torch.zeros(2, dtype=f64), torch.zeros(2, dtype=f64), 0.5, 0.0)
    assert S2.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_erase_then_write_example():
    S = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=f64)
    k = torch.tensor([1.0, 0.0], dtype=f64)
    S2, o = gdn_step(S, k, torch.tensor([0.0, 1.0], dtype=f64), k, 1.0, 1.0)
    assert S2.tolist() == [[0.0, 0.0], [1.0, 0.0]] and o.tolist() == [0.0, 1.0]


@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_erase_then_write_readback(d_k, d_v, seed):
    g = torch.Generator().manual_seed(seed)
    S = torch.randn(d_v, d_k, generator=g, dtype=f64) * 3
    k = _unit(torch.randn(d_k, generator=g, dtype=f64))
    v = torch.randn(d_v, generator=g, dtype=f64)
    S2, _ = gdn_step(S, k, v, k, 1.0, 1.0)
    assert (S2 @ k - v).abs().max() <= 1e-6


@given(st.integers(1, 16), st.floats(1e-3, 1 - 1e-3), st.floats(1e-3, 1 - 1e-3), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_transition_is_contraction(d, alpha, beta, seed):
    k = _unit(torch.randn(d, generator=torch.Generator().manual_seed(seed), dtype=f64))
    T = alpha * (torch.eye(d, dtype=f64) - beta * torch.outer(k, k))
    assert torch.linalg.matrix_norm(T, ord=2) < 1


def test_step_shape_errors():
    with pytest.raises(ShapeMismatch):
        gdn_step(torch.zeros(3, 4), torch.zeros(3), torch.zeros(3), torch.zeros(4), 0.5, 0.5)


def test_cell_rejects_wrong_width():
    with pytest.raises(ShapeMismatch):
        gdn_forward_sequential(torch.zeros(5, 7), GdnCell(8, 8, 8))


def test_single_step_sequence():
    cell = _cell(6, d_k=4, d_v=5)
    x = torch.randn(1, 6, dtype=f64)
    S0 = torch.randn(5, 4, dtype=f64)
    out, S = gdn_forward_sequential(x, cell, S0)
    k, v, q, a, b = cell.gates(x)
    S_ref, o_ref = gdn_step(S0, k[0], v[0], q[0], torch.sigmoid(a[0]), torch.sigmoid(b[0]))
    assert torch.allclose(out[0], o_ref, rtol=0, atol=1e-14) and torch.allclose(S, S_ref, rtol=0, atol=1e-14)


def test_zero_beta_closed_form():
    cell = _cell(6)
    with torch.no_grad():
        cell.w_beta.weight.zero_()
        cell.w_beta.bias.fill_(-1e4)
    x = torch.randn(10, 6, dtype=f64)
    S0 = torch.randn(6, 6, dtype=f64)
    out, _ = gdn_forward_sequential(x, cell, S0)
    _, _, q, a, _ = cell.gates(x)
    decay = torch.cumprod(torch.sigmoid(a), 0)
    expected = decay[:, None] * (q @ S0.T)
    assert torch.allclose(out, expected, atol=1e-12)


def test_golden_values():
    g = np.load(GOLDEN)
    cell = GdnCell(8, 8, 8).double()
    with torch.no_grad():
        for name, p in cell.named_parameters():
            p.copy_(torch.from_numpy(g[f"param.{name}"]))
    out, S = gdn_forward_sequential(torch.from_numpy(g["x"]), cell)
    assert np.allclose(out.detach().numpy(), g["out"], rtol=0, atol=1e-12)
    assert np.allclose(S.detach().numpy(), g["state"], rtol=0, atol=1e-12)


@pytest.mark.parametrize("dtype", [torch.float32, f64])
def test_chunk_one_is_bitwise_sequential(dtype):
    cell = _cell(8, dtype=dtype)
    x = torch.randn(37, 8, dtype=dtype)
    a, Sa = gdn_forward_sequential(x, cell)
    b, Sb = gdn_forward_chunkwise(x, cell, chunk=1)
    assert torch.equal(a, b) and torch.equal(Sa, Sb)


@pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-5), (f64, 1e-10)])
@pytest.mark.parametrize("L,d,chunk", [(128, 16, 64), (50, 8, 64), (50, 8, 50), (33, 4, 2), (100, 12, 16)])
def test_chunkwise_matches_sequential(L, d, chunk, dtype, tol):
    cell = _cell(d, dtype=dtype)
    x = torch.randn(L, d, dtype=dtype)
    S0 = torch.randn(d, d, dtype=dtype) * 0.5
    a, Sa = gdn_forward_sequential(x, cell, S0)
    b, Sb = gdn_forward_chunkwise(x, cell, S0, chunk=chunk)
    assert (a - b).abs().max() <= tol and (Sa - Sb).abs().max() <= tol


@given(st.integers(1, 96), st.integers(1, 12), st.integers(1, 12), st.integers(1, 40), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_chunkwise_random_instances(L, d_k, d_v, chunk, seed):
    torch.manual_seed(seed)
    cell = GdnCell(7, d_k, d_v).double()
    x = torch.randn(2, L, 7, dtype=f64)
    a, _ = gdn_forward_sequential(x, cell)
    b, _ = gdn_forward_chunkwise(x, cell, chunk=chunk)
    assert (a - b).abs().max() <= 1e-10


def test_chunkwise_gradients_match_sequential():
    cell = _cell(6)
    x = torch.randn(2, 40, 6, dtype=f64)
    w = torch.randn(2, 40, 6, dtype=f64)
    grads = []
    for fn in (lambda: gdn_forward_sequential(x, cell)[0], lambda: gdn_forward_chunkwise(x, cell, chunk=16)[0]):
        cell.zero_grad()
        (fn() * w).sum().backward()
        grads.append([p.grad.clone() for p in cell.parameters()])
    for ga, gb in zip(*grads):
        assert torch.allclose(ga, gb, atol=1e-10)


def test_batched_matches_unbatched():
    cell = _cell(5)
    x = torch.randn(3, 20, 5, dtype=f64)
    batched, _ = gdn_forward_chunkwise(x, cell, chunk=8)
    for i in range(3):
        single, _ = gdn_forward_chunkwise(x[i], cell, chunk=8)
        assert torch.allclose(batched[i], single, atol=1e-12)


def test_stability_long_run():
    d = 8
    cell = _cell(d)
    x = torch.randn(10_000, d, dtype=f64) * 3
    S0 = torch.randn(d, d, dtype=f64)
    with torch.no_grad():
        k, v, q, a, b = cell.gates(x)
        alpha, beta = torch.sigmoid(a), torch.sigmoid(b)
        bound = S0.norm() + torch.cumsum(beta * v.norm(dim=-1), 0)
        S = S0
        for t in range(x.shape[0]):
            S, _ = gdn_step(S, k[t], v[t], q[t], alpha[t], beta[t])
            assert S.norm() <= bound[t] + 1e-9
        assert torch.isfinite(S).all()
        out, _ = gdn_forward_chunkwise(x, cell, S0, chunk=64)
    assert torch.isfinite(out).all()


def _two_pass(x, fwd, rev):
    a, _ = gdn_forward_sequential(x, fwd)
    b, _ = gdn_forward_sequential(torch.flip(x, dims=[-2]), rev)
    return a + torch.flip(b, dims=[-2])


def test_bidirectional_matches_two_pass():
    bi = BidirectionalGdn(8, 8, 8, chunk=4).double()
    x = torch.randn(16, 8, dtype=f64)
    assert torch.allclose(bi(x), _two_pass(x, bi.fwd, bi.rev), atol=1e-12)
    assert torch.allclose(bidirectional_gdn(x, bi.fwd, bi.rev, chunk=1), _two_pass(x, bi.fwd, bi.rev), atol=0)


def test_bidirectional_single_step():
    bi = BidirectionalGdn(4, 4, 4).double()
    x = torch.randn(1, 4, dtype=f64)
    a, _ = gdn_forward_sequential(x, bi.fwd)
    b, _ = gdn_forward_sequential(x, bi.rev)
    assert torch.allclose(bi(x), a + b, atol=0)


def test_bidirectional_suppressed_reverse():
    bi = BidirectionalGdn(6, 6, 6).double()
    with torch.no_grad():
        bi.rev.w_beta.weight.zero_()
        bi.rev.w_beta.bias.fill_(-30.0)
    x = torch.randn(12, 6, dtype=f64)
    fwd, _ = gdn_forward_sequential(x, bi.fwd)
    assert torch.allclose(bi(x), fwd, atol=1e-10)


def test_bidirectional_uses_separate_parameters():
    bi = BidirectionalGdn(4, 4, 4)
    assert not {id(p) for p in bi.fwd.parameters()} & {id(p) for p in bi.rev.parameters()}


def test_grad_check_bidirectional_sequential():
    bi = BidirectionalGdn(4, 4, 4, chunk=1).double()
    x = torch.randn(8, 4, dtype=f64)
    w = torch.randn(8, 4, dtype=f64)
    report = grad_check_report(lambda: (bidirectional_gdn(x, bi.fwd, bi.rev, chunk=1) * w).sum(),
                               dict(bi.named_parameters()))
    assert {n.split(".")[0] for n in report} == {"fwd", "rev"}
    assert max(report.values()) <= 1e-4


def test_grad_check_chunkwise():
    cell = _cell(4)
    x = torch.randn(11, 4, dtype=f64)
    w = torch.randn(11, 4, dtype=f64)
    report = grad_check_report(lambda: (gdn_forward_chunkwise(x, cell, chunk=4)[0] * w).sum(),
                               dict(cell.named_parameters()))
    assert max(report.values()) <= 1e-4

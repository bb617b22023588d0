"""Gated delta rule recurrence.

State ``S`` has shape ``(d_v, d_k)`` and evolves as

    S_t = S_{t-1} @ (alpha_t * (I - beta_t k_t k_t^T)) + beta_t v_t k_t^T
    o_t = S_t @ q_t

with unit-norm keys and queries and sigmoid gates. All functions accept an
unbatched ``(L, d_model)`` input or a batched ``(B, L, d_model)`` one.
"""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from . import numeric as ops
from .errors import ShapeMismatch


class GdnCell(nn.Module):
    """Projections feeding one direction of the recurrence."""

    def __init__(self, d_model: int, d_k: int, d_v: int, alpha_bias: float = 3.0):
        super().__init__()
        self.d_model, self.d_k, self.d_v = d_model, d_k, d_v
        self.w_k = nn.Linear(d_model, d_k, bias=False)
        self.w_v = nn.Linear(d_model, d_v, bias=False)
        self.w_q = nn.Linear(d_model, d_k, bias=False)
        self.w_alpha = nn.Linear(d_model, 1)
        self.w_beta = nn.Linear(d_model, 1)
        with torch.no_grad():
            self.w_alpha.bias.fill_(alpha_bias)
            self.w_beta.bias.zero_()

    def gates(self, x: torch.Tensor):
        """Return ``(k, v, q, alpha_logit, beta_logit)`` for every step of ``x``."""
        if x.shape[-1] != self.d_model:
            raise ShapeMismatch(f"gdn input: {tuple(x.shape)} vs d_model={self.d_model}")
        k = ops.l2_normalize(self.w_k(x))
        q = ops.l2_normalize(self.w_q(x))
        v = self.w_v(x)
        return k, v, q, self.w_alpha(x)[..., 0], self.w_beta(x)[..., 0]


def gdn_step(S, k, v, q, alpha, beta):
    """One literal update of the recurrence; returns ``(S_next, o)``.

    Leading batch dimensions are allowed on every argument (scalars for
    ``alpha``/``beta`` become shape ``(...,)``).
    """
    alpha = torch.as_tensor(alpha, dtype=S.dtype)
    beta = torch.as_tensor(beta, dtype=S.dtype)
    d_v, d_k = S.shape[-2:]
    if k.shape[-1] != d_k or q.shape[-1] != d_k or v.shape[-1] != d_v:
        raise ShapeMismatch(
            f"gdn_step: S {tuple(S.shape)} vs k {tuple(k.shape)}, v {tuple(v.shape)}, q {tuple(q.shape)}")
    a = alpha[..., None, None]
    b = beta[..., None, None]
    eye = torch.eye(d_k, dtype=S.dtype)
    transition = a * (eye - b * (k[..., :, None] * k[..., None, :]))
    S_next = S @ transition + b * (v[..., :, None] * k[..., None, :])
    o = (S_next @ q[..., :, None])[..., 0]
    return S_next, o


def _batched(x: torch.Tensor):
    if x.dim() == 2:
        return x[None], True
    if x.dim() != 3:
        raise ShapeMismatch(f"gdn input must be (L, d) or (B, L, d), got {tuple(x.shape)}")
    return x, False


def _initial_state(S0, B: int, cell: GdnCell, ref: torch.Tensor):
    if S0 is None:
        return ref.new_zeros(B, cell.d_v, cell.d_k)
    if S0.dim() == 2:
        S0 = S0.expand(B, -1, -1)
    if tuple(S0.shape[-2:]) != (cell.d_v, cell.d_k):
        raise ShapeMismatch(f"initial state: {tuple(S0.shape)} vs ({cell.d_v}, {cell.d_k})")
    return S0


def gdn_forward_sequential(x: torch.Tensor, cell: GdnCell, S0: torch.Tensor | None = None):
    """Reference evaluation: :func:`gdn_step` applied left to right."""
    x, squeeze = _batched(x)
    B, L, _ = x.shape
    if L < 1:
        raise ShapeMismatch("gdn_forward_sequential needs L >= 1")
    S = _initial_state(S0, B, cell, x)
    k, v, q, a_logit, b_logit = cell.gates(x)
    alpha, beta = torch.sigmoid(a_logit), torch.sigmoid(b_logit)
    outs = []
    for t in range(L):
        S, o = gdn_step(S, k[:, t], v[:, t], q[:, t], alpha[:, t], beta[:, t])
        outs.append(o)
    out = torch.stack(outs, dim=1)
    if squeeze:
        return out[0], S[0]
    return out, S


def gdn_forward_chunkwise(x: torch.Tensor, cell: GdnCell, S0: torch.Tensor | None = None, chunk: int = 64):
    """Chunk-parallel evaluation, identical in exact arithmetic to the sequential one.

    Within a chunk of length C starting from state S0, write
    ``S_t = alpha_t S_{t-1} + e_t k_t^T`` with ``e_t = beta_t (v_t - alpha_t S_{t-1} k_t)``.
    Unrolling gives a unit lower-triangular system for the rows ``e_t``; solving
    it once per chunk (for the S0-free part ``U`` and the S0 coefficient ``W``)
    yields the chunk's composed transition ``T`` and write term ``Wr`` so that
    ``S_end = S0 @ T + Wr``. Only that composition is sequential across chunks;
    everything else is batched over all chunks at once.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    if chunk == 1:
        return gdn_forward_sequential(x, cell, S0)
    x, squeeze = _batched(x)
    B, L, _ = x.shape
    S = _initial_state(S0, B, cell, x)
    k, v, q, a_logit, b_logit = cell.gates(x)
    log_alpha = F.logsigmoid(a_logit)
    beta = torch.sigmoid(b_logit)

    C = min(chunk, L)
    nc = -(-L // C)
    pad = nc * C - L
    if pad:
        # identity steps: alpha = 1, beta = 0, k = v = q = 0
        k = F.pad(k, (0, 0, 0, pad))
        v = F.pad(v, (0, 0, 0, pad))
        q = F.pad(q, (0, 0, 0, pad))
        log_alpha = F.pad(log_alpha, (0, pad))
        beta = F.pad(beta, (0, pad))
    d_k, d_v = cell.d_k, cell.d_v
    k = k.reshape(B, nc, C, d_k)
    q = q.reshape(B, nc, C, d_k)
    v = v.reshape(B, nc, C, d_v)
    g = torch.cumsum(log_alpha.reshape(B, nc, C), dim=-1)
    beta = beta.reshape(B, nc, C)

    idx = torch.arange(C)
    strict = idx[:, None] > idx[None, :]
    incl = idx[:, None] >= idx[None, :]
    diff = g[..., :, None] - g[..., None, :]
    decay_strict = torch.exp(diff.masked_fill(~strict, float("-inf")))
    decay_incl = torch.exp(diff.masked_fill(~incl, float("-inf")))
    gamma = torch.exp(g)

    eye = torch.eye(C, dtype=x.dtype)
    system = eye + beta[..., None] * (k @ k.transpose(-1, -2)) * decay_strict
    rhs = torch.cat([beta[..., None] * v, (beta * gamma)[..., None] * k], dim=-1)
    sol = torch.linalg.solve_triangular(system, rhs, upper=False, unitriangular=True)
    U, W = sol[..., :d_v], sol[..., d_v:]

    scores = (q @ k.transpose(-1, -2)) * decay_incl
    out_local = scores @ U
    q_eff = gamma[..., None] * q - scores @ W
    decay_to_end = torch.exp(g[..., -1:] - g)
    tail = decay_to_end[..., None] * k
    transition = gamma[..., -1, None, None] * torch.eye(d_k, dtype=x.dtype) - W.transpose(-1, -2) @ tail
    write = U.transpose(-1, -2) @ tail

    states = []
    for c in range(nc):
        states.append(S)
        S = S @ transition[:, c] + write[:, c]
    starts = torch.stack(states, dim=1)
    out = out_local + q_eff @ starts.transpose(-1, -2)
    out = out.reshape(B, nc * C, d_v)[:, :L]
    if squeeze:
        return out[0], S[0]
    return out, S


def gdn_forward(x, cell, S0=None, chunk: int = 64):
    return gdn_forward_chunkwise(x, cell, S0, chunk)


class BidirectionalGdn(nn.Module):
    """Two independent cells; the reverse one reads the flipped sequence."""

    def __init__(self, d_model: int, d_k: int, d_v: int, chunk: int = 64):
        super().__init__()
        self.fwd = GdnCell(d_model, d_k, d_v)
        self.rev = GdnCell(d_model, d_k, d_v)
        self.chunk = chunk

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return bidirectional_gdn(x, self.fwd, self.rev, self.chunk)


def bidirectional_gdn(x: torch.Tensor, fwd: GdnCell, rev: GdnCell, chunk: int = 64) -> torch.Tensor:
    t = x.dim() - 2
    z_fwd, _ = gdn_forward(x, fwd, chunk=chunk)
    z_rev, _ = gdn_forward(torch.flip(x, dims=(t,)), rev, chunk=chunk)
    return z_fwd + torch.flip(z_rev, dims=(t,))

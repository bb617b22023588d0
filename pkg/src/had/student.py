"""Hybrid student: bidirectional GDN blocks, one self-attention layer, a gated
MLP, and the alignment / cross-attention decoder / LM heads used in pretraining.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from . import numeric as ops
from .errors import IncompleteGroup, NoVisibleTokens, PositionOutOfRange, ShapeMismatch
from .gdn import BidirectionalGdn
from .tokenizers import CHAR_VOCAB_SIZE


@dataclass
class StudentConfig:
    n_blocks: int = 4
    d_model: int = 128
    d_k: int = 128
    d_v: int = 128
    n_heads: int = 4
    k: int = 6
    d_teacher: int = 1024
    vocab_size: int = CHAR_VOCAB_SIZE
    max_len: int = 1026
    mlp_ratio: int = 4
    decoder_ratio: int = 4
    chunk: int = 64
    use_attention: bool = True
    learned_pos: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_len % self.k:
            raise ValueError(f"max_len={self.max_len} not divisible by k={self.k}")


def sinusoidal_encoding(max_len: int, d: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, d, 2, dtype=torch.float64) / d)
    pe = torch.zeros(max_len, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : d // 2]
    return pe.float()


class TokenEmbedding(nn.Module):
    def __init__(self, cfg: StudentConfig):
        super().__init__()
        self.max_len = cfg.max_len
        # unit-scale token rows so identity is not swamped by the positional term
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_model)
        if cfg.learned_pos:
            self.pos = nn.Parameter(torch.randn(cfg.max_len, cfg.d_model) * 0.02)
        else:
            self.register_buffer("pe", sinusoidal_encoding(cfg.max_len, cfg.d_model), persistent=False)

    def positional(self, positions: torch.Tensor) -> torch.Tensor:
        if positions.numel() and int(positions.max()) >= self.max_len:
            raise PositionOutOfRange(f"position {int(positions.max())} >= max_len {self.max_len}")
        table = self.pos if hasattr(self, "pos") else self.pe.to(self.tok.weight.dtype)
        return table[positions]

    def forward(self, char_ids: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        """Token embedding plus the encoding of each token's original position."""
        return self.tok(char_ids) + self.positional(positions)


class MultiHeadAttention(nn.Module):
    """Exact softmax attention; self-attention when ``kv`` is ``q``."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads, self.d_head = n_heads, d // n_heads
        self.w_q = nn.Linear(d, d)
        # a key bias shifts every logit of a row equally, so it can never receive gradient
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d)
        self.w_o = nn.Linear(d, d)

    def _split(self, x):
        B, n, _ = x.shape
        return x.reshape(B, n, self.n_heads, self.d_head).transpose(1, 2)

    def attend(self, q_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        """Concatenated head outputs before the output projection."""
        if kv_in.shape[1] == 0:
            raise NoVisibleTokens("attention over an empty key set")
        q, k, v = self._split(self.w_q(q_in)), self._split(self.w_k(kv_in)), self._split(self.w_v(kv_in))
        weights = ops.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.d_head), axis=-1)
        out = weights @ v
        B, h, n, dh = out.shape
        return out.transpose(1, 2).reshape(B, n, h * dh)

    def forward(self, q_in, kv_in):
        return self.w_o(self.attend(q_in, kv_in))


class GatedMLP(nn.Module):
    def __init__(self, d: int, ratio: int):
        super().__init__()
        h = d * ratio
        self.w_gate = nn.Linear(d, h)
        self.w_up = nn.Linear(d, h)
        self.w_down = nn.Linear(h, d)

    def forward(self, x):
        return self.w_down(ops.silu(self.w_gate(x)) * self.w_up(x))


class GdnBlock(nn.Module):
    def __init__(self, cfg: StudentConfig):
        super().__init__()
        self.norm = nn.LayerNorm(cfg.d_model)
        self.gdn = BidirectionalGdn(cfg.d_model, cfg.d_k, cfg.d_v, cfg.chunk)
        self.out = nn.Linear(cfg.d_v, cfg.d_model, bias=False)

    def forward(self, x):
        return x + self.out(self.gdn(self.norm(x)))


class Encoder(nn.Module):
    def __init__(self, cfg: StudentConfig):
        super().__init__()
        self.blocks = nn.ModuleList(GdnBlock(cfg) for _ in range(cfg.n_blocks))
        self.use_attention = cfg.use_attention
        if cfg.use_attention:
            self.attn_norm = nn.LayerNorm(cfg.d_model)
            self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.mlp_norm = nn.LayerNorm(cfg.d_model)
        self.mlp = GatedMLP(cfg.d_model, cfg.mlp_ratio)
        self.final_norm = nn.LayerNorm(cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] < 1:
            raise ShapeMismatch(f"encoder needs at least one token, got {tuple(x.shape)}")
        for block in self.blocks:
            x = block(x)
        if self.use_attention:
            h = self.attn_norm(x)
            x = x + self.attn(h, h)
        x = x + self.mlp(self.mlp_norm(x))
        return self.final_norm(x)


class CrossAttentionDecoder(nn.Module):
    """Mask queries attend to visible representations, then a feed-forward."""

    def __init__(self, cfg: StudentConfig):
        super().__init__()
        d = cfg.d_model
        self.mask_query = nn.Parameter(torch.randn(d))
        self.q_norm = nn.LayerNorm(d)
        self.kv_norm = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.n_heads)
        self.ffn_norm = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, d * cfg.decoder_ratio)
        self.ffn_out = nn.Linear(d * cfg.decoder_ratio, d)
        self.out_norm = nn.LayerNorm(d)

    def forward(self, queries: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        if z_v.shape[1] == 0:
            raise NoVisibleTokens("cross-attention decoder needs at least one visible token")
        h = queries + self.attn(self.q_norm(queries), self.kv_norm(z_v))
        h = h + self.ffn_out(ops.silu(self.ffn_in(self.ffn_norm(h))))
        return self.out_norm(h)


def check_groups(positions: torch.Tensor, k: int) -> None:
    """Raise :class:`IncompleteGroup` unless rows form whole, ascending k-aligned blocks."""
    if positions.shape[-1] % k:
        raise IncompleteGroup(f"{positions.shape[-1]} positions do not split into groups of {k}")
    g = positions.reshape(*positions.shape[:-1], -1, k)
    start = g[..., :1]
    if (start % k != 0).any() or (g != start + torch.arange(k)).any():
        raise IncompleteGroup("visible positions are not complete k-mer groups")


def pool_to_kmer(z: torch.Tensor, positions: torch.Tensor, k: int) -> torch.Tensor:
    """Average the k rows of each k-mer group; rows keep ascending k-mer order."""
    if z.shape[:-1] != positions.shape:
        raise ShapeMismatch(f"pool_to_kmer: {tuple(z.shape)} vs positions {tuple(positions.shape)}")
    check_groups(positions, k)
    return z.reshape(*z.shape[:-2], z.shape[-2] // k, k, z.shape[-1]).mean(dim=-2)


class HadStudent(nn.Module):
    """Student encoder plus its three pretraining heads."""

    def __init__(self, cfg: StudentConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg)
        self.encoder = Encoder(cfg)
        self.align = nn.Linear(cfg.d_model, cfg.d_teacher)
        self.decoder = CrossAttentionDecoder(cfg)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size)

    def embed_with_positions(self, char_ids: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        return self.embed(char_ids, positions)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def encode_visible(self, char_ids: torch.Tensor, vis_pos: torch.Tensor) -> torch.Tensor:
        """Encode only the visible tokens ``char_ids[b, vis_pos[b]]``."""
        ids = torch.gather(char_ids, 1, vis_pos)
        return self.encoder(self.embed(ids, vis_pos))

    def encode_full(self, char_ids: torch.Tensor, masked: torch.Tensor | None = None) -> torch.Tensor:
        """Encode every position; ``masked`` positions get the mask-query vector."""
        B, L = char_ids.shape
        pos = torch.arange(L).expand(B, L)
        x = self.embed(char_ids, pos)
        if masked is not None:
            q = self.decoder.mask_query + self.embed.positional(pos)
            x = torch.where(masked[..., None], q, x)
        return self.encoder(x)

    def pool_to_kmer(self, z_v: torch.Tensor, vis_pos: torch.Tensor) -> torch.Tensor:
        return pool_to_kmer(z_v, vis_pos, self.cfg.k)

    def project_to_teacher(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.align(pooled)

    def mask_queries(self, mask_pos: torch.Tensor) -> torch.Tensor:
        return self.decoder.mask_query + self.embed.positional(mask_pos)

    def cross_attention_decode(self, mask_pos: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.mask_queries(mask_pos), z_v)

    def lm_logits(self, z_m: torch.Tensor) -> torch.Tensor:
        return self.lm_head(z_m)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)

"""Connector: bring patch features into the language model's embedding space.

Cross-attention mode computes ``softmax(Q K^T / sqrt(d_k)) (V W_v) W_o`` with
``K = V W_k``. The query is either a learned table of ``M`` slots
(``query_source="learned"``, output has M rows) or ``Q = V W_q``
(``query_source="visual"``, output has one row per patch). ``mlp`` mode is a
per-token two-layer MLP used as an ablation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from chartalign.errors import ConfigurationError

MODES = ("cross_attention", "mlp")
QUERY_SOURCES = ("learned", "visual")


@dataclass(frozen=True)
class ConnectorConfig:
    d_v: int = 64
    d_l: int = 128
    mode: str = "cross_attention"
    num_queries: int = 16
    d_k: int = 64
    num_heads: int = 1
    query_source: str = "learned"
    mlp_hidden: int = 128

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown connector mode {self.mode!r}")
        if self.query_source not in QUERY_SOURCES:
            raise ConfigurationError(f"unknown query_source {self.query_source!r}")
        if self.d_k <= 0 or self.d_k % self.num_heads:
            raise ConfigurationError(f"d_k={self.d_k} must be positive and divisible by num_heads")
        if self.num_queries <= 0:
            raise ConfigurationError("num_queries must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AlignedTokens:
    tokens: torch.Tensor  # [M or N_p, d_l]


class Connector(nn.Module):
    def __init__(self, config: ConnectorConfig):
        super().__init__()
        self.config = config
        c = config
        if c.mode == "cross_attention":
            if c.query_source == "learned":
                self.learned_queries = nn.Parameter(torch.randn(c.num_queries, c.d_k))
            else:
                self.W_q = nn.Parameter(torch.randn(c.d_v, c.d_k) / math.sqrt(c.d_v))
            self.W_k = nn.Parameter(torch.randn(c.d_v, c.d_k) / math.sqrt(c.d_v))
            self.W_v = nn.Parameter(torch.randn(c.d_v, c.d_k) / math.sqrt(c.d_v))
            self.W_o = nn.Parameter(torch.randn(c.d_k, c.d_l) * 0.02)
        else:
            self.mlp_w1 = nn.Parameter(torch.randn(c.d_v, c.mlp_hidden) / math.sqrt(c.d_v))
            self.mlp_b1 = nn.Parameter(torch.zeros(c.mlp_hidden))
            self.mlp_w2 = nn.Parameter(torch.randn(c.mlp_hidden, c.d_l) * 0.02)
            self.mlp_b2 = nn.Parameter(torch.zeros(c.d_l))

    def output_rows(self, num_patches: int) -> int:
        c = self.config
        if c.mode == "cross_attention" and c.query_source == "learned":
            return c.num_queries
        return num_patches

    def _check(self, V: torch.Tensor) -> None:
        if V.shape[-2] == 0:
            raise ConfigurationError("no visual tokens")
        if V.shape[-1] != self.config.d_v:
            raise ConfigurationError(f"visual feature dim {V.shape[-1]} != d_v {self.config.d_v}")

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        # [B, T, d_k] -> [B, h, T, d_k/h]
        B, T, _ = x.shape
        h = self.config.num_heads
        return x.view(B, T, h, -1).transpose(1, 2)

    def attention(self, V: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (attention weights [B, h, rows, N_p], value projections [B, h, N_p, d_k/h])."""
        c = self.config
        if c.query_source == "learned":
            Q = self.learned_queries.unsqueeze(0).expand(V.shape[0], -1, -1)
        else:
            Q = V @ self.W_q
        K = V @ self.W_k
        Vv = V @ self.W_v
        Qh, Kh, Vh = self._heads(Q), self._heads(K), self._heads(Vv)
        scores = Qh @ Kh.transpose(-2, -1) / math.sqrt(Qh.shape[-1])
        return torch.softmax(scores, dim=-1), Vh

    def forward(self, V: torch.Tensor) -> torch.Tensor:
        """V [B, N_p, d_v] -> V' [B, rows, d_l]."""
        self._check(V)
        if self.config.mode == "mlp":
            return F.gelu(V @ self.mlp_w1 + self.mlp_b1) @ self.mlp_w2 + self.mlp_b2
        att, Vh = self.attention(V)
        out = att @ Vh  # [B, h, rows, d_k/h]
        B, h, rows, dh = out.shape
        out = out.transpose(1, 2).reshape(B, rows, h * dh)
        return out @ self.W_o


def _as_batch(V) -> torch.Tensor:
    t = V.tokens if hasattr(V, "tokens") else V
    if t.ndim != 2:
        raise ConfigurationError(f"expected [N_p, d_v] features, got {tuple(t.shape)}")
    return t.unsqueeze(0)


def align(V, params: Connector) -> AlignedTokens:
    """Cross-attention alignment of one image's features."""
    if params.config.mode != "cross_attention":
        raise ConfigurationError("align() needs a cross_attention connector; use align_mlp()")
    x = _as_batch(V)
    params._check(x)
    return AlignedTokens(params(x.to(params.W_k.dtype))[0])


def align_mlp(V, params: Connector) -> AlignedTokens:
    """Per-token MLP projection of one image's features."""
    if params.config.mode != "mlp":
        raise ConfigurationError("align_mlp() needs an mlp connector")
    x = _as_batch(V)
    params._check(x)
    return AlignedTokens(params(x.to(params.mlp_w1.dtype))[0])


def attention_weights(V, params: Connector) -> torch.Tensor:
    """Attention matrix [heads, rows, N_p] for one image (cross_attention mode)."""
    if params.config.mode != "cross_attention":
        raise ConfigurationError("attention weights exist only in cross_attention mode")
    x = _as_batch(V)
    params._check(x)
    return params.attention(x.to(params.W_k.dtype))[0][0]

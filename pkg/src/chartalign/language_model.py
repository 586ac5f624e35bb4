"""Small causal decoder that reads [image | table | question] and writes the answer.

Sequence layout (one row per position)::

    BOS IMG_START V'... IMG_END TAB_START T'_t... TAB_END Q_START Q_t... ANS answer... EOS

Image rows are the connector outputs themselves; every other row is a token
embedding. Learned absolute positions are added to all rows, image rows
included.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn as nn

from chartalign.errors import ConfigurationError, InputError
from chartalign.layers import Block, init_weights
from chartalign.tokenizer import ANS, BOS, EOS, IMG_END, IMG_START, PAD, Q_START, SPECIAL_TOKENS, TAB_END, TAB_START, Tokenizer

IMAGE_PLACEHOLDER = -1
# BOS, IMG_START, IMG_END, TAB_START, TAB_END, Q_START, ANS (EOS is added with the answer)
LAYOUT_SPECIALS = 7


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    d_l: int = 128
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 640
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_l % self.num_heads:
            raise ConfigurationError(f"d_l={self.d_l} not divisible by num_heads={self.num_heads}")
        if self.vocab_size <= len(SPECIAL_TOKENS):
            raise ConfigurationError("vocab_size too small")

    def to_dict(self) -> dict:
        return asdict(self)


class LanguageModel(nn.Module):
    def __init__(self, config: LMConfig):
        super().__init__()
        self.config = config
        d = config.d_l
        self.token_embedding = nn.Embedding(config.vocab_size, d)
        self.position_embedding = nn.Parameter(torch.empty(config.max_len, d))
        self.blocks = nn.ModuleList(
            Block(d, config.num_heads, config.mlp_ratio, causal=True) for _ in range(config.num_layers)
        )
        self.norm = nn.LayerNorm(d)
        init_weights(self)
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        nn.init.normal_(self.position_embedding, std=0.02)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.token_embedding(ids)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        """embeddings [B, T, d_l] (or [T, d_l]) -> logits [B, T, vocab] (or [T, vocab])."""
        squeeze = embeddings.ndim == 2
        if squeeze:
            embeddings = embeddings.unsqueeze(0)
        T = embeddings.shape[1]
        if T < 1:
            raise InputError("empty sequence")
        if T > self.config.max_len:
            raise ConfigurationError(f"sequence length {T} exceeds max_len {self.config.max_len}")
        if embeddings.shape[-1] != self.config.d_l:
            raise ConfigurationError(f"embedding dim {embeddings.shape[-1]} != d_l {self.config.d_l}")
        if not torch.isfinite(embeddings).all():
            raise InputError("non-finite embeddings")
        x = embeddings + self.position_embedding[:T]
        for blk in self.blocks:
            x = blk(x)
        logits = self.norm(x) @ self.token_embedding.weight.T
        return logits[0] if squeeze else logits


@dataclass
class InterleavedSequence:
    embeddings: torch.Tensor  # [T, d_l]
    token_ids: list[int]
    label_mask: list[bool]

    @property
    def length(self) -> int:
        return len(self.token_ids)


def layout_ids(num_image: int, table: Sequence[int], question: Sequence[int],
               answer: Sequence[int] | None) -> tuple[list[int], list[bool]]:
    """Token ids (placeholder at image rows) and label mask for one example."""
    ids = [BOS, IMG_START] + [IMAGE_PLACEHOLDER] * num_image + [IMG_END, TAB_START]
    ids += list(table) + [TAB_END, Q_START] + list(question) + [ANS]
    mask = [False] * len(ids)
    if answer is not None and len(answer) > 0:
        ids += list(answer) + [EOS]
        mask += [True] * (len(answer) + 1)
    elif answer is not None:
        # empty answer: the model must still learn to stop
        ids += [EOS]
        mask += [True]
    return ids, mask


def build_input_sequence(Q_t: Sequence[int], V_prime, T_t: Sequence[int],
                         answer_t: Sequence[int] | None, lm: LanguageModel) -> InterleavedSequence:
    """Interleave question, aligned image rows and table tokens for ``lm``.

    ``answer_t=None`` builds a prompt ending at ANS (for decoding).
    """
    rows = V_prime.tokens if hasattr(V_prime, "tokens") else V_prime
    if rows.ndim != 2 or rows.shape[-1] != lm.config.d_l:
        raise ConfigurationError(f"V' rows have shape {tuple(rows.shape)}, need [M, {lm.config.d_l}]")
    ids, mask = layout_ids(rows.shape[0], T_t, Q_t, answer_t)
    emb = embed_layout(torch.tensor(ids).unsqueeze(0), rows.unsqueeze(0), lm)[0]
    return InterleavedSequence(emb, ids, mask)


def embed_layout(ids: torch.Tensor, image_rows: torch.Tensor, lm: LanguageModel) -> torch.Tensor:
    """ids [B, T] with image placeholders at positions 2..2+M; image_rows [B, M, d_l]."""
    M = image_rows.shape[1]
    safe = ids.clamp(min=0)
    emb = lm.embed(safe)
    return torch.cat([emb[:, :2], image_rows.to(emb.dtype), emb[:, 2 + M:]], dim=1)


@dataclass
class Batch:
    """Right-padded batch of layouts; padding sits after EOS so causality hides it."""

    ids: torch.Tensor  # [B, T]
    mask: torch.Tensor  # [B, T] bool, supervised positions
    lengths: list[int] = field(default_factory=list)


def collate(layouts: list[tuple[list[int], list[bool]]]) -> Batch:
    T = max(len(ids) for ids, _ in layouts)
    B = len(layouts)
    ids = torch.full((B, T), PAD, dtype=torch.long)
    mask = torch.zeros((B, T), dtype=torch.bool)
    for b, (i, m) in enumerate(layouts):
        ids[b, : len(i)] = torch.tensor(i)
        mask[b, : len(m)] = torch.tensor(m)
    return Batch(ids, mask, [len(i) for i, _ in layouts])


def forward(seq: InterleavedSequence, params: LanguageModel) -> torch.Tensor:
    """Logits [T, vocab] for one interleaved sequence."""
    return params(seq.embeddings)


@torch.no_grad()
def generate_ids(prompts: list[list[int]], image_rows: torch.Tensor, lm: LanguageModel,
                 max_len: int) -> list[list[int]]:
    """Greedy decoding for a batch of prompts that end at ANS.

    Special tokens other than EOS are never emitted.
    """
    if max_len < 1:
        raise ConfigurationError("max_len must be >= 1")
    B = len(prompts)
    lengths = [len(p) for p in prompts]
    T = max(lengths) + max_len
    ids = torch.full((B, T), PAD, dtype=torch.long)
    for b, p in enumerate(prompts):
        ids[b, : len(p)] = torch.tensor(p)
    banned = torch.zeros(lm.config.vocab_size, dtype=torch.bool)
    banned[: len(SPECIAL_TOKENS)] = True
    banned[EOS] = False
    out: list[list[int]] = [[] for _ in range(B)]
    done = [False] * B
    for _ in range(max_len):
        cur = max(lengths)
        if cur >= lm.config.max_len:
            break
        emb = embed_layout(ids[:, :cur], image_rows, lm)
        logits = lm(emb)
        pos = torch.tensor(lengths) - 1
        last = logits[torch.arange(B), pos].masked_fill(banned, float("-inf"))
        nxt = last.argmax(dim=-1)
        for b in range(B):
            if done[b]:
                continue
            t = int(nxt[b])
            if t == EOS:
                done[b] = True
                continue
            out[b].append(t)
            ids[b, lengths[b]] = t
            lengths[b] += 1
        if all(done):
            break
    return out


def generate(Q_t: Sequence[int], V_prime, T_t: Sequence[int], params: LanguageModel,
             tokenizer: Tokenizer, max_len: int = 24) -> str:
    """Greedy answer for one example; stops at EOS or after ``max_len`` tokens."""
    rows = V_prime.tokens if hasattr(V_prime, "tokens") else V_prime
    if rows.shape[-1] != params.config.d_l:
        raise ConfigurationError("V' rows do not match d_l")
    prompt, _ = layout_ids(rows.shape[0], T_t, Q_t, None)
    ids = generate_ids([prompt], rows.unsqueeze(0), params, max_len)[0]
    return tokenizer.detokenize(ids, skip_special=True)

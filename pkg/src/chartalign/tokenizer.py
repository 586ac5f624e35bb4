"""Character-level tokenizer with a table of merged common substrings."""

from __future__ import annotations

import json
import re
from collections import Counter
from typing import Iterable

from chartalign.errors import TokenizationError, ValidationError

PAD, BOS, EOS, IMG_START, IMG_END, TAB_START, TAB_END, Q_START, ANS = range(9)
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<img>", "</img>", "<tab>", "</tab>", "<q>", "<ans>")
ALPHABET = tuple(chr(c) for c in range(32, 127)) + ("\n",)
# units always merged when a vocabulary is built from a corpus
FIXED_UNITS = (" | ",)

_WORD_RE = re.compile(r"[A-Za-z]{2,}")


class Tokenizer:
    """Greedy longest-match tokenizer over a fixed vocabulary.

    Ids 0..8 are the special tokens, followed by the printable ASCII alphabet
    plus newline, then merged units. Content text never maps to a special id.
    """

    def __init__(self, vocabulary: Iterable[str]):
        vocab = list(vocabulary)
        if tuple(vocab[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValidationError("vocabulary must start with the special tokens")
        base = vocab[len(SPECIAL_TOKENS): len(SPECIAL_TOKENS) + len(ALPHABET)]
        if tuple(base) != ALPHABET:
            raise ValidationError("vocabulary must contain the full alphabet after the specials")
        if len(set(vocab)) != len(vocab):
            raise ValidationError("vocabulary has duplicate entries")
        self.vocabulary = vocab
        self._content = {t: i for i, t in enumerate(vocab) if i >= len(SPECIAL_TOKENS)}
        for unit in self._content:
            if any(ch not in ALPHABET for ch in unit):
                raise ValidationError(f"vocabulary unit {unit!r} uses unsupported characters")
        self._max_len = max(len(t) for t in self._content)

    @classmethod
    def base(cls) -> "Tokenizer":
        return cls(SPECIAL_TOKENS + ALPHABET)

    @classmethod
    def build(cls, corpus: Iterable[str], max_merges: int = 200, min_count: int = 2) -> "Tokenizer":
        """Add the most useful frequent words of ``corpus`` as merged units."""
        counts: Counter[str] = Counter()
        for text in corpus:
            counts.update(_WORD_RE.findall(text))
        # characters saved per occurrence, weighted by frequency
        ranked = sorted(
            (u for u, c in counts.items() if c >= min_count and all(ch in ALPHABET for ch in u)),
            key=lambda u: (-(counts[u] * (len(u) - 1)), u),
        )
        merges = list(FIXED_UNITS) + ranked[: max(max_merges - len(FIXED_UNITS), 0)]
        return cls(SPECIAL_TOKENS + ALPHABET + tuple(merges[:max_merges]))

    def __len__(self) -> int:
        return len(self.vocabulary)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def tokenize(self, s: str) -> list[int]:
        ids = []
        i, n = 0, len(s)
        content = self._content
        while i < n:
            for L in range(min(self._max_len, n - i), 0, -1):
                tid = content.get(s[i : i + L])
                if tid is not None:
                    ids.append(tid)
                    i += L
                    break
            else:
                raise TokenizationError(f"unsupported character {s[i]!r} at position {i}")
        return ids

    def detokenize(self, ids: Iterable[int], skip_special: bool = False) -> str:
        out = []
        for t in ids:
            t = int(t)
            if not 0 <= t < len(self.vocabulary):
                raise TokenizationError(f"token id {t} out of range")
            if t < len(SPECIAL_TOKENS):
                if skip_special:
                    continue
                raise TokenizationError(f"special token {SPECIAL_TOKENS[t]} has no text form")
            out.append(self.vocabulary[t])
        return "".join(out)

    def to_json(self) -> str:
        return json.dumps(self.vocabulary, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Tokenizer":
        return cls(json.loads(text))

    def __eq__(self, other) -> bool:
        return isinstance(other, Tokenizer) and self.vocabulary == other.vocabulary

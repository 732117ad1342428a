"""Whole-token vocabulary, sequence encoding and MLM masking."""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chem import Composition, canonical_string, format_number

PAD, UNK, CLS, MASK = "[PAD]", "[UNK]", "[CLS]", "[MASK]"
RESERVED = (PAD, UNK, CLS, MASK)
PAD_ID, UNK_ID, CLS_ID, MASK_ID = range(4)

_ELEMENT_TOKEN = re.compile(r"([A-Z][a-z]?)(\d+(?:\.\d+)?)?")


def quantize_number(x: float) -> str:
    """Round to three significant digits and render with :func:`format_number`."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x}")
    if x == 0:
        return "0"
    return format_number(float(f"{x:.3g}"))


def compose_input(c: Composition, features: Sequence[float] | None = None) -> str:
    """Canonical composition string, optionally followed by quantized feature values."""
    text = canonical_string(c)
    if features is None:
        return text
    values = features.as_array() if hasattr(features, "as_array") else features
    return " ".join([text] + [quantize_number(v) for v in values])


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token(self, i: int) -> str:
        return self.tokens[i]

    @property
    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(tuple(Path(path).read_text(encoding="utf-8").splitlines()))


def build_vocab(texts: Iterable[str]) -> Vocabulary:
    tokens = list(RESERVED)
    seen = set(tokens)
    n_texts = 0
    for text in texts:
        n_texts += 1
        for tok in text.split():
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    if n_texts == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(tuple(tokens))


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    attention_mask: np.ndarray
    element_spans: dict[int, str]

    def __len__(self):
        return len(self.ids)


def element_of(token: str) -> str | None:
    m = _ELEMENT_TOKEN.fullmatch(token)
    return m.group(1) if m else None


def encode(text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    words = text.split()[: max_len - 1]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1 : len(words) + 1] = [vocab.id(w) for w in words]
    mask = np.zeros(max_len, dtype=np.int64)
    mask[: len(words) + 1] = 1
    spans = {}
    for pos, w in enumerate(words, start=1):
        sym = element_of(w)
        if sym is not None:
            spans[pos] = sym
    return TokenSequence(ids, mask, spans)


def mask_tokens(
    seq: TokenSequence, mask_prob: float, rng: np.random.Generator
) -> tuple[TokenSequence, dict[int, int]]:
    """Replace each maskable position with [MASK] independently with ``mask_prob``.

    [CLS], [PAD], [UNK] and [MASK] positions are never selected. One uniform
    draw is consumed per position so the rng advances identically for every
    sequence of the same length.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError("mask_prob must lie in [0, 1]")
    draws = rng.random(len(seq.ids))
    eligible = (seq.attention_mask == 1) & (seq.ids >= len(RESERVED))
    chosen = eligible & (draws < mask_prob)
    positions = np.flatnonzero(chosen)
    labels = {int(i): int(seq.ids[i]) for i in positions}
    ids = seq.ids.copy()
    ids[positions] = MASK_ID
    return replace(seq, ids=ids), labels

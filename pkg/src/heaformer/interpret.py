"""Element-pair attention maps from the last encoder layer."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chem import Composition
from .encoder import Model, forward
from .evaluate import apply_scaler
from .features import featurize
from .tokenization import compose_input, encode

FEATURES_GROUP = "FEATURES"


@dataclass
class ElementAttentionMatrix:
    """Symmetric group-to-group attention; the diagonal holds NaN (masked)."""

    elements: list[str]
    matrix: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.eye(len(self.elements), dtype=bool)

    def off_diagonal(self) -> np.ndarray:
        return self.matrix[~self.mask]

    def pair(self, a: str, b: str) -> float:
        return float(self.matrix[self.elements.index(a), self.elements.index(b)])


def _input_text(model: Model, c: Composition) -> str:
    if not model.use_features:
        return compose_input(c)
    feats = featurize(c).as_array()
    if model.feature_scaler is not None:
        feats = apply_scaler(model.feature_scaler, feats)
    return compose_input(c, feats)


def reduce_attention(A: np.ndarray, groups: dict[str, list[int]]) -> ElementAttentionMatrix:
    """Average a position-level map over group pairs, symmetrize and mask the diagonal."""
    names = list(groups)
    M = np.empty((len(names), len(names)))
    for i, gi in enumerate(names):
        for j, gj in enumerate(names):
            M[i, j] = A[np.ix_(groups[gi], groups[gj])].mean()
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, np.nan)
    return ElementAttentionMatrix(names, M)


def element_attention(model: Model, c: Composition, include_feature_tokens: bool = False) -> ElementAttentionMatrix:
    """Head-averaged last-layer attention grouped by element.

    [CLS], padding and numeric tokens are dropped unless
    ``include_feature_tokens`` keeps the numeric tokens as one extra group.
    """
    seq = encode(_input_text(model, c), model.vocab, model.state.config.max_len)
    if not seq.element_spans:
        raise ValueError("composition produced no element tokens")
    fp = forward(model.state, seq.ids[None], seq.attention_mask[None])
    A = fp.attention[-1][0].mean(axis=0)
    groups: dict[str, list[int]] = {}
    for pos in sorted(seq.element_spans, key=lambda p: (seq.element_spans[p], p)):
        groups.setdefault(seq.element_spans[pos], []).append(pos)
    groups = dict(sorted(groups.items()))
    if include_feature_tokens:
        valid = np.flatnonzero(seq.attention_mask)
        extra = [int(p) for p in valid if p > 0 and int(p) not in seq.element_spans]
        if extra:
            groups[FEATURES_GROUP] = extra
    return reduce_attention(A, groups)


def attention_csv(m: ElementAttentionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + m.elements)
    for i, name in enumerate(m.elements):
        w.writerow([name] + ["" if i == j else repr(float(m.matrix[i, j])) for j in range(len(m.elements))])
    return buf.getvalue()


def export_attention(m: ElementAttentionMatrix, path) -> None:
    Path(path).write_text(attention_csv(m), encoding="utf-8")


def read_attention(path) -> ElementAttentionMatrix:
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    names = rows[0][1:]
    M = np.array([[np.nan if v == "" else float(v) for v in r[1:]] for r in rows[1:]])
    return ElementAttentionMatrix(names, M)

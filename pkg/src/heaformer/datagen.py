"""Synthetic alloy corpus for masked-token pre-training."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .chem import (
    MAX_FRACTION_DIGITS,
    Composition,
    ElementTable,
    PairEnthalpyTable,
    canonical_string,
    default_element_table,
    default_pair_table,
)
from .features import FeatureVector, featurize

# small, medium and full corpus sizes
PRESET_SIZES = (6000, 75000, 150000)

CRITICAL_FEATURES = ("mixing_entropy", "melting_temp", "mean_vec")


class CorpusExhaustedError(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    element_weights: dict[str, float] = field(default_factory=dict)
    corpus_size: int = 6000
    equimolar_fraction: float = 0.5
    element_count_range: tuple[int, int] = (4, 8)
    coefficient_range: tuple[float, float] = (0.1, 2.0)
    seed: int = 0
    # restrict sampling to the keys of element_weights instead of the whole table
    weights_only: bool = False

    def __post_init__(self):
        self.element_count_range = tuple(int(v) for v in self.element_count_range)
        self.coefficient_range = tuple(float(v) for v in self.coefficient_range)
        lo, hi = self.element_count_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad element_count_range {self.element_count_range}")
        clo, chi = self.coefficient_range
        if not 0 < clo <= chi:
            raise ValueError(f"bad coefficient_range {self.coefficient_range}")
        if self.corpus_size < 1:
            raise ValueError("corpus_size must be >= 1")
        if not 0.0 <= self.equimolar_fraction <= 1.0:
            raise ValueError("equimolar_fraction must lie in [0, 1]")
        for s, w in self.element_weights.items():
            if not w > 0:
                raise ValueError(f"weight for {s} must be positive")

    def pool(self, table: ElementTable) -> tuple[list[str], np.ndarray]:
        if self.weights_only:
            symbols = sorted(self.element_weights)
        else:
            symbols = table.symbols
        missing = [s for s in symbols if s not in table]
        if missing:
            raise ValueError(f"weighted elements not in table: {missing}")
        w = np.array([float(self.element_weights.get(s, 1.0)) for s in symbols])
        return symbols, w / w.sum()


def sample_composition(
    cfg: GeneratorConfig, rng: np.random.Generator, table: ElementTable | None = None
) -> Composition:
    table = default_element_table() if table is None else table
    symbols, p = cfg.pool(table)
    lo, hi = cfg.element_count_range
    if hi > len(symbols):
        raise ValueError(f"element_count_range upper bound {hi} exceeds the {len(symbols)} available elements")
    n = int(rng.integers(lo, hi + 1))
    picked = rng.choice(len(symbols), size=n, replace=False, p=p)
    if rng.random() < cfg.equimolar_fraction:
        coefs = np.ones(n)
    else:
        coefs = np.round(rng.uniform(*cfg.coefficient_range, size=n), MAX_FRACTION_DIGITS)
        coefs = np.maximum(coefs, 10.0**-MAX_FRACTION_DIGITS)
    return Composition(tuple((symbols[i], float(f)) for i, f in zip(picked, coefs)))


def _candidates(cfg, table, shard_seed):
    rng = np.random.default_rng(shard_seed)
    while True:
        yield sample_composition(cfg, rng, table)


def generate_corpus(
    cfg: GeneratorConfig,
    t: ElementTable | None = None,
    p: PairEnthalpyTable | None = None,
    shards: int = 1,
) -> list[tuple[str, FeatureVector]]:
    """Draw ``cfg.corpus_size`` distinct, featurized compositions.

    Each shard samples from its own substream of ``cfg.seed``; shards are
    merged round-robin and deduplicated in that fixed order, so the result
    depends only on (seed, shards).
    """
    t = default_element_table() if t is None else t
    p = default_pair_table() if p is None else p
    seeds = np.random.SeedSequence(cfg.seed).spawn(shards)
    streams = [_candidates(cfg, t, s) for s in seeds]
    merged = itertools.chain.from_iterable(zip(*streams))

    seen: set[str] = set()
    out: list[tuple[str, FeatureVector]] = []
    max_attempts = 100 * cfg.corpus_size
    attempts = 0
    for comp in merged:
        if len(out) == cfg.corpus_size:
            break
        if attempts >= max_attempts:
            raise CorpusExhaustedError(
                f"only {len(out)} of {cfg.corpus_size} unique compositions after {attempts} attempts"
            )
        attempts += 1
        text = canonical_string(comp)
        if text in seen:
            continue
        fv = featurize(comp, t, p)
        if any(getattr(fv, name) == 0 for name in CRITICAL_FEATURES):
            continue
        seen.add(text)
        out.append((text, fv))
    return out

"""Tabular dataset ingestion: ``composition`` column, optional features, a target."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chem import (
    Composition,
    CompositionError,
    ElementTable,
    PairEnthalpyTable,
    UnknownElementError,
    looks_normalized,
    parse_composition,
)
from .features import FEATURE_NAMES, featurize


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    composition: Composition
    features: np.ndarray
    target: float | None = None
    line: int = 0


def feature_array(rows) -> np.ndarray:
    return np.array([r.features for r in rows], dtype=np.float64).reshape(len(rows), len(FEATURE_NAMES))


def target_array(rows) -> np.ndarray:
    return np.array([r.target for r in rows], dtype=np.float64)


def ingest_dataset(
    path,
    target: str | None = "target",
    table: ElementTable | None = None,
    pairs: PairEnthalpyTable | None = None,
) -> list[Row]:
    """Read and validate a delimited dataset.

    Feature columns are taken from the file when all fourteen are present,
    otherwise computed from the composition. Errors cite the file line.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "composition" not in header:
            raise DatasetError(f"{path}: missing 'composition' column")
        if target is not None and target not in header:
            raise DatasetError(f"{path}: missing target column {target!r}")
        have_features = all(name in header for name in FEATURE_NAMES)
        rows = []
        for line, rec in enumerate(reader, start=2):
            try:
                comp = parse_composition(rec["composition"], table)
            except (CompositionError, UnknownElementError) as exc:
                raise DatasetError(f"{path}:{line}: {exc}") from None
            if looks_normalized(comp):
                warnings.warn(f"{path}:{line}: coefficients already sum to 1", stacklevel=2)
            try:
                if have_features:
                    feats = np.array([float(rec[n]) for n in FEATURE_NAMES])
                else:
                    feats = featurize(comp, table, pairs).as_array()
                y = float(rec[target]) if target is not None else None
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"{path}:{line}: {exc}") from None
            rows.append(Row(comp, feats, y, line))
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return rows

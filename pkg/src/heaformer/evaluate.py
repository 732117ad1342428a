"""K-fold harness, standardization, metrics, outliers and dataset summaries."""
from __future__ import annotations

import csv
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

SIGMA_FLOOR = 1e-12


class ConstantInputWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        # tolist keeps scalars scalar, so shapes survive a JSON round trip
        return {"mean": np.asarray(self.mean, dtype=np.float64).tolist(),
                "std": np.asarray(self.std, dtype=np.float64).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))

    def __eq__(self, other):
        return (
            isinstance(other, ScalerParams)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )


def fit_scaler(train: np.ndarray) -> ScalerParams:
    """Column means and population standard deviations of the training split."""
    train = np.asarray(train, dtype=np.float64)
    if train.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty split")
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), SIGMA_FLOOR)
    return ScalerParams(mean, std)


def apply_scaler(s: ScalerParams, x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - s.mean) / s.std


def invert_scaler(s: ScalerParams, z: np.ndarray) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * s.std + s.mean


def kfold_split(n: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle, then contiguous partition into ``k`` validation blocks."""
    if k < 2:
        raise ValueError("need at least two folds")
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = []
    for block in np.array_split(perm, k):
        val = np.sort(block)
        train = np.setdiff1d(np.arange(n), val)
        folds.append((train, val))
    return folds


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    r2: float | None  # None when the actuals are constant

    @property
    def r2_defined(self) -> bool:
        return self.r2 is not None

    def to_dict(self):
        return {"mse": self.mse, "mae": self.mae, "r2": self.r2, "r2_defined": self.r2_defined}


def metrics(pred, actual) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError(f"metrics need equal non-empty vectors, got {pred.shape} and {actual.shape}")
    err = pred - actual
    sse = float(np.sum(err * err))
    sst = float(np.sum((actual - actual.mean()) ** 2))
    r2 = None if sst == 0.0 else 1.0 - sse / sst
    return Metrics(sse / err.size, float(np.mean(np.abs(err))), r2)


@dataclass
class FoldReport:
    fold: int
    train_indices: np.ndarray
    val_indices: np.ndarray
    predictions: np.ndarray
    actuals: np.ndarray
    scaled: Metrics
    target_scaler: ScalerParams
    feature_scaler: ScalerParams | None = None
    history: list = field(default_factory=list)

    @property
    def residuals(self) -> np.ndarray:
        return self.actuals - self.predictions

    @property
    def original(self) -> Metrics:
        return metrics(self.predictions, self.actuals)

    @property
    def mse(self):
        return self.original.mse

    @property
    def mae(self):
        return self.original.mae

    @property
    def r2(self):
        return self.original.r2

    def to_dict(self):
        d = {
            "fold": self.fold,
            "n_train": int(len(self.train_indices)),
            "n_val": int(len(self.val_indices)),
            "original": self.original.to_dict(),
            "scaled": self.scaled.to_dict(),
            "target_scaler": self.target_scaler.to_dict(),
        }
        if self.feature_scaler is not None:
            d["feature_scaler"] = self.feature_scaler.to_dict()
        return d


def make_fold_report(fold, train_idx, val_idx, pred_scaled, y, target_scaler, feature_scaler=None, history=None):
    """Build a report from standardized predictions on the validation rows."""
    y = np.asarray(y, dtype=np.float64)
    actual = y[val_idx]
    pred = invert_scaler(target_scaler, np.asarray(pred_scaled, dtype=np.float64))
    scaled = metrics(np.asarray(pred_scaled, dtype=np.float64), apply_scaler(target_scaler, actual))
    return FoldReport(
        fold, np.asarray(train_idx), np.asarray(val_idx), pred, actual, scaled,
        target_scaler, feature_scaler, list(history or []),
    )


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    fit_predict: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    k: int = 5,
    seed: int = 0,
) -> list[FoldReport]:
    """Leak-free K-fold run of a model given as ``fit_predict(X_tr, y_tr, X_val)``.

    Features and target are standardized with statistics of the training
    split only; ``fit_predict`` works entirely on the standardized scale.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    reports = []
    for fold, (tr, va) in enumerate(kfold_split(len(y), k, seed)):
        xs = fit_scaler(X[tr])
        ys = fit_scaler(y[tr])
        pred = fit_predict(apply_scaler(xs, X[tr]), apply_scaler(ys, y[tr]), apply_scaler(xs, X[va]))
        reports.append(make_fold_report(fold, tr, va, pred, y, ys, xs))
    return reports


def zscore_outliers(values, threshold: float = 3.0) -> list[tuple[int, float]]:
    """Indices whose population z-score exceeds ``threshold`` in magnitude, largest first."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("z-scores need at least two values")
    sigma = x.std()
    if sigma == 0:
        warnings.warn("constant input: no z-scores defined", ConstantInputWarning, stacklevel=2)
        return []
    z = (x - x.mean()) / sigma
    hits = [(int(i), float(z[i])) for i in np.flatnonzero(np.abs(z) > threshold)]
    return sorted(hits, key=lambda t: (-abs(t[1]), t[0]))


def zscores(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    sigma = x.std()
    return np.zeros_like(x) if sigma == 0 else (x - x.mean()) / sigma


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0:
        return None
    return float(np.sum(xc * yc) / denom)


@dataclass
class DatasetSummary:
    element_totals: dict[str, float]
    element_count_hist: dict[int, int]
    target_hist: tuple[np.ndarray, np.ndarray]  # (counts, edges)
    correlations: dict[str, float | None]


def dataset_summary(compositions, target, features=None, feature_names=(), bins: int = 20) -> DatasetSummary:
    totals: Counter = Counter()
    counts: Counter = Counter()
    for c in compositions:
        for s, f in c.entries:
            totals[s] += f
        counts[len(c)] += 1
    target = np.asarray(target, dtype=np.float64)
    hist = np.histogram(target, bins=bins)
    corr = {}
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        for j, name in enumerate(feature_names):
            corr[name] = pearson(features[:, j], target)
    return DatasetSummary(
        dict(sorted(totals.items())), dict(sorted(counts.items())), hist, corr
    )


@dataclass
class Aggregate:
    mean: dict[str, float | None]
    best: dict[str, float | None]
    mean_scaled: dict[str, float | None]
    best_scaled: dict[str, float | None]
    table: list[tuple[int, int, float, float, float]]  # row, fold, actual, predicted, residual

    def to_dict(self):
        return {"mean": self.mean, "best": self.best, "mean_scaled": self.mean_scaled, "best_scaled": self.best_scaled}


def _summarize(ms: Sequence[Metrics]):
    r2s = [m.r2 for m in ms if m.r2 is not None]
    mean = {
        "mse": float(np.mean([m.mse for m in ms])),
        "mae": float(np.mean([m.mae for m in ms])),
        "r2": float(np.mean(r2s)) if r2s else None,
    }
    best = {
        "mse": float(min(m.mse for m in ms)),
        "mae": float(min(m.mae for m in ms)),
        "r2": float(max(r2s)) if r2s else None,
    }
    return mean, best


def aggregate(reports: Sequence[FoldReport]) -> Aggregate:
    if not reports:
        raise ValueError("nothing to aggregate")
    mean, best = _summarize([r.original for r in reports])
    mean_s, best_s = _summarize([r.scaled for r in reports])
    table = []
    for r in reports:
        for i, a, p in zip(r.val_indices, r.actuals, r.predictions):
            table.append((int(i), r.fold, float(a), float(p), float(a - p)))
    table.sort()
    return Aggregate(mean, best, mean_s, best_s, table)


def write_report(path, reports: Sequence[FoldReport], extra: dict | None = None) -> None:
    """Per-fold and aggregate metrics on both scales as indented JSON."""
    agg = aggregate(reports)
    doc = {"folds": [r.to_dict() for r in reports], "aggregate": agg.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_residuals(path, reports: Sequence[FoldReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "fold", "actual", "predicted", "residual"])
        for row in aggregate(reports).table:
            w.writerow([row[0], row[1]] + [repr(v) for v in row[2:]])


def write_summary(directory, summary: DatasetSummary) -> list[Path]:
    """Element totals, histograms and correlations as separate CSV tables."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []

    def _write(name, header, rows):
        p = directory / name
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        out.append(p)

    _write("element_totals.csv", ["element", "total"], [(k, repr(v)) for k, v in summary.element_totals.items()])
    _write("element_counts.csv", ["n_elements", "rows"], list(summary.element_count_hist.items()))
    counts, edges = summary.target_hist
    _write(
        "target_histogram.csv",
        ["bin_lo", "bin_hi", "count"],
        [(repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])) for i in range(len(counts))],
    )
    _write(
        "correlations.csv",
        ["feature", "pearson_r", "defined"],
        [(k, "" if v is None else repr(v), int(v is not None)) for k, v in summary.correlations.items()],
    )
    return out

"""Classical regressors: Gaussian process, decision tree, random forest,
gradient boosting and k-nearest neighbours, plus the design-matrix expansion
that turns compositions into element-fraction columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .chem import atomic_fractions
from .features import FEATURE_NAMES


@dataclass
class DesignMatrix:
    X: np.ndarray
    columns: list[str]
    y: np.ndarray | None = None


def expand_design_matrix(rows, use_features: bool = True, elements=None) -> DesignMatrix:
    """Feature columns (optional) followed by one atomic-fraction column per element.

    Elements absent from a row get 0. ``elements`` fixes the element columns;
    by default it is the sorted union over ``rows``.
    """
    comps = []
    for i, r in enumerate(rows):
        c = getattr(r, "composition", None)
        if c is None:
            raise ValueError(f"row {i}: no composition")
        comps.append(c)
    if elements is None:
        elements = sorted({s for c in comps for s in c.elements})
    col = {s: j for j, s in enumerate(elements)}
    frac = np.zeros((len(comps), len(elements)))
    for i, c in enumerate(comps):
        for s, x in zip(c.elements, atomic_fractions(c)):
            if s not in col:
                raise ValueError(f"row {i}: element {s} has no column")
            frac[i, col[s]] = x
    columns = list(elements)
    X = frac
    if use_features:
        feats = np.array([r.features for r in rows], dtype=np.float64).reshape(len(rows), len(FEATURE_NAMES))
        X = np.hstack([feats, frac])
        columns = list(FEATURE_NAMES) + columns
    y = None
    if rows and getattr(rows[0], "target", None) is not None:
        y = np.array([r.target for r in rows], dtype=np.float64)
    return DesignMatrix(X, columns, y)


# ------------------------------------------------------------ Gaussian process

@dataclass
class GPKernel:
    """constant * exp(-|x - x'|^2 / (2 length_scale^2)) with observation noise."""

    constant: float = 1.0
    length_scale: float = 1.0
    noise: float = 1e-2

    def __call__(self, A, B):
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
        return self.constant * np.exp(-np.maximum(sq, 0.0) / (2.0 * self.length_scale**2))


@dataclass
class GPModel:
    kernel: GPKernel
    X: np.ndarray
    alpha: np.ndarray  # (K + noise I)^-1 y
    factor: tuple

    def summary(self) -> str:
        k = self.kernel
        return (
            f"GaussianProcess(constant={k.constant!r}, length_scale={k.length_scale!r}, "
            f"noise={k.noise!r}, n_train={len(self.X)})"
        )


GP_JITTER = 1e-10


def gp_fit(X, y, kernel: GPKernel | None = None) -> GPModel:
    kernel = GPKernel() if kernel is None else kernel
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    K = kernel(X, X) + (kernel.noise + GP_JITTER) * np.eye(len(X))
    try:
        factor = scipy.linalg.cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            f"GP covariance not positive definite (condition number {np.linalg.cond(K):.3g})"
        ) from None
    return GPModel(kernel, X, scipy.linalg.cho_solve(factor, y), factor)


def gp_predict(model: GPModel, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at the query rows."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    ks = model.kernel(model.X, Xq)  # (n, q)
    mean = ks.T @ model.alpha
    v = scipy.linalg.cho_solve(model.factor, ks)
    prior = np.full(len(Xq), model.kernel.constant)
    var = prior - np.sum(ks * v, axis=0)
    if np.any(var < -1e-10):
        raise FloatingPointError(f"negative posterior variance {var.min():.3g}")
    return mean, np.maximum(var, 0.0)


# ------------------------------------------------------------- decision tree

@dataclass
class TreeNode:
    value: float
    n: int
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self):
        return self.left is None


def best_split(X, y, min_leaf=1, features=None):
    """Variance-reduction split over midpoint thresholds.

    Returns ``(feature, threshold, sse)`` or None. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    n, m = X.shape
    features = range(m) if features is None else sorted(features)
    # cumulative sums carry rounding noise; treat near-equal SSEs as ties
    tol = 1e-12 * max(1.0, float(np.sum((y - y.mean()) ** 2)))
    best = None
    for j in features:
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        nl = np.arange(1, n)
        nr = n - nl
        ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        sl, ql = csum[:-1], csq[:-1]
        sr, qr = csum[-1] - sl, csq[-1] - ql
        sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
        sse = np.where(ok, np.maximum(sse, 0.0), np.inf)
        i = int(np.flatnonzero(sse <= sse.min() + tol)[0])
        if best is None or sse[i] < best[2] - tol:
            best = (j, 0.5 * (xs[i] + xs[i + 1]), float(sse[i]))
    return best


def tree_fit(X, y, max_depth=None, min_leaf=1, max_features=None, rng=None) -> TreeNode:
    """Greedy regression tree; leaves predict the mean of their samples.

    ``max_features`` (int) draws that many candidate features per split from
    ``rng``; None considers all features.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on zero rows")

    def grow(idx, depth):
        ys = y[idx]
        node = TreeNode(float(ys.mean()), len(idx))
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            return node
        if np.all(ys == ys[0]):
            return node
        feats = None
        if max_features is not None and max_features < X.shape[1]:
            feats = rng.choice(X.shape[1], size=max_features, replace=False)
        split = best_split(X[idx], ys, min_leaf, feats)
        if split is None:
            return node
        j, thr, _ = split
        go_left = X[idx, j] <= thr
        node.feature, node.threshold = j, float(thr)
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return grow(np.arange(len(y)), 0)


def tree_predict(tree: TreeNode, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(len(X))
    for i, x in enumerate(X):
        node = tree
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        out[i] = node.value
    return out


def tree_depth(tree: TreeNode) -> int:
    if tree.is_leaf:
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))


def tree_summary(tree: TreeNode, columns=None, indent="") -> str:
    if tree.is_leaf:
        return f"{indent}leaf value={tree.value!r} n={tree.n}\n"
    name = columns[tree.feature] if columns else f"x{tree.feature}"
    return (
        f"{indent}{name} <= {tree.threshold!r} (n={tree.n})\n"
        + tree_summary(tree.left, columns, indent + "  ")
        + tree_summary(tree.right, columns, indent + "  ")
    )


# ------------------------------------------------------------- random forest

@dataclass
class Forest:
    trees: list[TreeNode] = field(default_factory=list)


def _n_features(spec, m):
    if spec is None:
        return None
    if isinstance(spec, float):
        return max(1, int(round(spec * m)))
    return int(spec)


def rf_fit(X, y, n_trees=100, bootstrap=True, feature_subsample=None, seed=0,
           max_depth=None, min_leaf=1) -> Forest:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    kf = _n_features(feature_subsample, X.shape[1])
    forest = Forest()
    for ss in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, len(y), len(y)) if bootstrap else np.arange(len(y))
        forest.trees.append(tree_fit(X[idx], y[idx], max_depth, min_leaf, kf, rng))
    return forest


def rf_predict(forest: Forest, X) -> np.ndarray:
    return np.mean([tree_predict(t, X) for t in forest.trees], axis=0)


# --------------------------------------------------------- gradient boosting

@dataclass
class Ensemble:
    init: float
    learning_rate: float
    trees: list[TreeNode] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)


def gbr_fit(X, y, n_stages=100, learning_rate=0.1, max_depth=3, min_leaf=1) -> Ensemble:
    """Stage-wise fit of depth-limited trees to the current residuals."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    ens = Ensemble(float(y.mean()), learning_rate)
    pred = np.full(len(y), ens.init)
    ens.train_mse.append(float(np.mean((y - pred) ** 2)))
    for _ in range(n_stages):
        tree = tree_fit(X, y - pred, max_depth, min_leaf)
        pred = pred + learning_rate * tree_predict(tree, X)
        ens.trees.append(tree)
        ens.train_mse.append(float(np.mean((y - pred) ** 2)))
    return ens


def gbr_predict(ens: Ensemble, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    pred = np.full(len(X), ens.init)
    for tree in ens.trees:
        pred = pred + ens.learning_rate * tree_predict(tree, X)
    return pred


# ------------------------------------------------------ k nearest neighbours

def knn_predict(X_train, y_train, Xq, k=5) -> np.ndarray:
    """Mean target of the ``k`` nearest training rows (Euclidean; ties -> lower index)."""
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    y_train = np.asarray(y_train, dtype=np.float64)
    if k < 1 or k > len(X_train):
        raise ValueError(f"k={k} must lie in 1..{len(X_train)}")
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    out = np.empty(len(Xq))
    for i, x in enumerate(Xq):
        d2 = np.sum((X_train - x) ** 2, axis=1)
        nearest = np.argsort(d2, kind="stable")[:k]
        out[i] = y_train[nearest].mean()
    return out


# ------------------------------------------------------------------ registry

DEFAULTS = {
    "gp": {"constant": 1.0, "length_scale": 1.0, "noise": 1e-2},
    "rf": {"n_trees": 100, "bootstrap": True, "feature_subsample": None, "max_depth": None},
    "dt": {"max_depth": None, "min_leaf": 1},
    "gbr": {"n_stages": 100, "learning_rate": 0.1, "max_depth": 3},
    "knn": {"k": 5},
}


def make_fit_predict(algo: str, seed: int = 0, **overrides):
    """``fit_predict(X_tr, y_tr, X_val)`` closure for :func:`evaluate.cross_validate`."""
    if algo not in DEFAULTS:
        raise ValueError(f"unknown baseline {algo!r}; choose from {sorted(DEFAULTS)}")
    params = {**DEFAULTS[algo], **overrides}

    def fit_predict(Xtr, ytr, Xva):
        if algo == "gp":
            return gp_predict(gp_fit(Xtr, ytr, GPKernel(**params)), Xva)[0]
        if algo == "rf":
            return rf_predict(rf_fit(Xtr, ytr, seed=seed, **params), Xva)
        if algo == "dt":
            return tree_predict(tree_fit(Xtr, ytr, **params), Xva)
        if algo == "gbr":
            return gbr_predict(gbr_fit(Xtr, ytr, **params), Xva)
        return knn_predict(Xtr, ytr, Xva, **params)

    return fit_predict

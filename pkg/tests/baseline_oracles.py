"""Brute-force reference computations for the classical regressors."""
import numpy as np


def gp_dense(X, y, Xq, constant, length_scale, noise, jitter=1e-10):
    def k(a, b):
        return constant * np.exp(-np.sum((a - b) ** 2) / (2 * length_scale**2))

    K = np.array([[k(a, b) for b in X] for a in X]) + (noise + jitter) * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    ks = np.array([[k(a, q) for q in Xq] for a in X])
    mean = ks.T @ Kinv @ y
    var = np.array([k(q, q) for q in Xq]) - np.einsum("iq,ij,jq->q", ks, Kinv, ks)
    return mean, var


def split_exhaustive(X, y, min_leaf=1):
    """Every feature, every midpoint between distinct sorted values."""
    best = None
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for thr in (vals[:-1] + vals[1:]) / 2:
            left = X[:, j] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = sum(((y[m] - y[m].mean()) ** 2).sum() for m in (left, ~left))
            if best is None or sse < best[2] - 1e-12:
                best = (j, thr, sse)
    return best

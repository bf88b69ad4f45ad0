"""Post-hoc numeric analysis: returns, adaptation curves, 2-D projections
of latent embeddings (PCA and exact t-SNE), and cluster quality."""

from __future__ import annotations

import warnings

import numpy as np


def discounted_return(rewards, gamma):
    """sum_t gamma^t r_t."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    return float(np.sum(rewards * gamma ** np.arange(len(rewards))))


def pca_project(x, dims=2):
    """Center and project onto the top `dims` right singular directions.

    Sign convention: the largest-magnitude loading of each direction is
    positive, so the output is deterministic.  Rank-deficient inputs are
    zero-padded with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < dims:
        raise ValueError(f"need at least {dims} rows")
    xc = x - x.mean(axis=0)
    _, svals, vt = np.linalg.svd(xc, full_matrices=False)
    rank = int(np.sum(svals > svals[0] * 1e-12)) if svals.size and svals[0] > 0 else 0
    if rank < dims:
        warnings.warn(f"input rank {rank} < {dims}; padding with zeros")
    out = np.zeros((x.shape[0], dims))
    for j in range(min(dims, vt.shape[0])):
        v = vt[j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        if j < rank:
            out[:, j] = xc @ v
    return out


def _entropy_and_p(dist_row, beta):
    """Shannon entropy (nats) and probabilities for one Gaussian row."""
    p = np.exp(-dist_row * beta)
    sum_p = p.sum()
    if sum_p <= 0:
        return 0.0, np.zeros_like(p)
    h = np.log(sum_p) + beta * np.dot(dist_row, p) / sum_p
    return h, p / sum_p


def _conditional_p(dists, perplexity, tol=1e-5, max_iter=64):
    """Per-row Gaussian bandwidths by binary search on log-perplexity."""
    n = dists.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(dists[i], i)
        row = row - row.min()  # shift-invariant; avoids exp underflow
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            h, p = _entropy_and_p(row, beta)
            diff = h - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2 if not np.isfinite(hi) else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == 0 else (beta + lo) / 2
        P[i, np.arange(n) != i] = p
    return P


def tsne_project(x, perplexity=30.0, iters=1000, seed=0, learning_rate=200.0,
                 early_exaggeration=12.0, exaggeration_iters=250,
                 return_kl=False):
    """Exact O(n^2) t-SNE to 2-D.

    Bandwidths matched to `perplexity` by binary search (log-perplexity
    tolerance 1e-5), symmetrized P, Student-t Q, gradient descent with
    momentum (0.5 then 0.8) and early exaggeration.  Deterministic under
    `seed`.  With `return_kl`, also returns the KL(P||Q) trace sampled at
    the start and end (plus every 50 iterations).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not (5 <= perplexity <= (n - 1) / 3):
        raise ValueError(f"perplexity {perplexity} out of range for n={n}")
    rng = np.random.default_rng(seed)

    sq = (x**2).sum(axis=1)
    dists = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    if dists.max() <= 0:
        warnings.warn("degenerate embedding table (all points identical); "
                      "returning a small random layout")
        y = 1e-4 * rng.standard_normal((n, 2))
        return (y, [0.0, 0.0]) if return_kl else y

    P = _conditional_p(dists, perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    y = 1e-4 * rng.standard_normal((n, 2))
    dy = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace = []

    def q_matrix(y):
        sqy = (y**2).sum(axis=1)
        num = 1.0 / (1.0 + np.maximum(sqy[:, None] + sqy[None, :] - 2.0 * y @ y.T, 0.0))
        np.fill_diagonal(num, 0.0)
        return num / num.sum(), num

    def kl(Pm, Q):
        Q = np.maximum(Q, 1e-12)
        return float(np.sum(Pm * np.log(Pm / Q)))

    for it in range(iters):
        Pm = P * early_exaggeration if it < exaggeration_iters else P
        Q, num = q_matrix(y)
        if it == 0:
            kl_trace.append(kl(P, Q))
        W = (Pm - Q) * num
        grad = 4.0 * ((np.diag(W.sum(axis=1)) - W) @ y)
        momentum = 0.5 if it < exaggeration_iters else 0.8
        # adaptive per-coordinate gains keep the fixed step size stable
        same_sign = np.sign(grad) == np.sign(dy)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        dy = momentum * dy - learning_rate * gains * grad
        y = y + dy
        y = y - y.mean(axis=0)
        if return_kl and (it + 1) % 50 == 0:
            Q2, _ = q_matrix(y)
            kl_trace.append(kl(P, Q2))
    Q, _ = q_matrix(y)
    kl_trace.append(kl(P, Q))
    return (y, kl_trace) if return_kl else y


def cluster_quality(x, labels):
    """Mean silhouette score (Euclidean).  Points in singleton clusters are
    excluded with a warning, per the usual convention."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise ValueError("need at least two clusters")
    if np.any(counts == 1):
        warnings.warn("singleton cluster(s) excluded from silhouette")
    sq = (x**2).sum(axis=1)
    d = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0))
    scores = []
    for i in range(len(x)):
        own = labels == labels[i]
        if own.sum() < 2:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == lab].mean() for lab in uniq if lab != labels[i])
        denom = max(a, b)
        scores.append(0.0 if denom == 0 else (b - a) / denom)
    if not scores:
        raise ValueError("no non-singleton clusters")
    return float(np.mean(scores))


def adaptation_curve(returns_matrix):
    """Column means and standard errors of a (runs, episodes) matrix."""
    m = np.atleast_2d(np.asarray(returns_matrix, dtype=np.float64))
    means = m.mean(axis=0)
    if m.shape[0] > 1:
        se = m.std(axis=0, ddof=1) / np.sqrt(m.shape[0])
    else:
        se = np.zeros(m.shape[1])
    return means, se

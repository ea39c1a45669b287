"""Pure numpy versions of the hot kernels.  Reference semantics for ``_ckernels``."""
from __future__ import annotations

import math

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def masked_softmax(s: np.ndarray, key_bias: np.ndarray, scale: float) -> np.ndarray:
    """softmax(s * scale + key_bias) over the last axis; ``s`` is overwritten."""
    s *= scale
    s += key_bias
    s -= s.max(-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(-1, keepdims=True)
    return s


def softmax_backward(pr: np.ndarray, dpr: np.ndarray, scale: float) -> np.ndarray:
    return pr * (dpr - (dpr * pr).sum(-1, keepdims=True)) * scale


def gelu_forward(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.tanh(_GELU_C * u * (1.0 + _GELU_A * u * u))
    return 0.5 * u * (1.0 + t), t


def gelu_backward(u: np.ndarray, t: np.ndarray, dgu: np.ndarray) -> np.ndarray:
    return dgu * (0.5 * (1.0 + t)
                  + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * _GELU_A * u * u))


def sq_distances(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_iter: int = 100) -> np.ndarray:
    """Row-stochastic p_{j|i} with each row's entropy matched to log(perplexity).

    Bisection on the precision beta_i of a Gaussian kernel over squared distances.
    """
    n = D.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, math.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            sw = w.sum()
            h = math.log(sw) + beta * float((d * w).sum()) / sw
            diff = h - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == math.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        row = w / sw
        P[i, :i] = row[:i]
        P[i, i + 1:] = row[i:]
    return P


def tsne_gradient(P: np.ndarray, Y: np.ndarray, exaggeration: float = 1.0,
                  compute_kl: bool = True) -> tuple[np.ndarray, float]:
    """Exact t-SNE gradient of KL(P || Q), plus KL(P || Q) itself (nan if skipped)."""
    num = 1.0 / (1.0 + sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    Z = num.sum()
    Q = np.maximum(num / Z, 1e-12)
    PQ = (exaggeration * P - Q) * num
    grad = 4.0 * (PQ.sum(1)[:, None] * Y - PQ @ Y)
    if not compute_kl:
        return grad, math.nan
    mask = P > 0
    np.fill_diagonal(mask, False)
    kl = float((P[mask] * np.log(P[mask] / Q[mask])).sum())
    return grad, kl


def assign_labels(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (lowest index on ties) and its squared distance."""
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    np.maximum(d, 0.0, out=d)
    labels = d.argmin(1)
    return labels.astype(np.int64), d[np.arange(len(X)), labels]

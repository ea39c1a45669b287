"""Hot-loop kernels: the compiled extension when built, numpy otherwise.

Set ``TAGCAST_PURE_PYTHON=1`` to force the numpy fallback.  ``BACKEND`` names
the implementation in use.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("TAGCAST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def masked_softmax(s, key_bias, scale):
    if BACKEND == "cython":
        s = np.ascontiguousarray(s)
        key_bias = np.ascontiguousarray(np.broadcast_to(key_bias, (s.shape[0], 1, 1, s.shape[3])),
                                        dtype=s.dtype)
    return _impl.masked_softmax(s, key_bias, float(scale))


def softmax_backward(pr, dpr, scale):
    if BACKEND == "cython":
        pr = np.ascontiguousarray(pr)
        dpr = np.ascontiguousarray(dpr, dtype=pr.dtype)
    return _impl.softmax_backward(pr, dpr, float(scale))


def gelu_forward(u):
    return _impl.gelu_forward(u)


def gelu_backward(u, t, dgu):
    return _impl.gelu_backward(u, t, dgu)


def sq_distances(X):
    # BLAS-bound: the numpy form beats a compiled loop
    return _kernels_py.sq_distances(np.asarray(X, dtype=np.float64))


def conditional_affinities(D, perplexity, tol=1e-5, max_iter=100):
    return _impl.conditional_affinities(np.ascontiguousarray(D, dtype=np.float64),
                                        float(perplexity), tol, max_iter)


def tsne_gradient(P, Y, exaggeration=1.0, compute_kl=True):
    return _impl.tsne_gradient(np.ascontiguousarray(P, dtype=np.float64),
                               np.ascontiguousarray(Y, dtype=np.float64), float(exaggeration),
                               bool(compute_kl))


def assign_labels(X, C):
    return _kernels_py.assign_labels(np.asarray(X, dtype=np.float64),
                                     np.asarray(C, dtype=np.float64))


def use_backend(name: str) -> None:
    """Switch implementation at runtime (benchmarks and equivalence tests)."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from . import _ckernels
        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")

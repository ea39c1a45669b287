# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``; same signatures.

Built with -ffast-math so exp() loops vectorize; nothing here may rely on
infinities or NaN comparisons.
"""
import numpy as np
from libc.math cimport exp, log, fabs

ctypedef fused real:
    float
    double

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def masked_softmax(real[:, :, :, ::1] s, const real[:, :, :, ::1] key_bias, double scale):
    cdef Py_ssize_t B = s.shape[0], H = s.shape[1], Tq = s.shape[2], T = s.shape[3]
    cdef Py_ssize_t b, h, i, j
    cdef real m, tot, sc = <real>scale
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(Tq):
                    for j in range(T):
                        s[b, h, i, j] = s[b, h, i, j] * sc + key_bias[b, 0, 0, j]
                    m = s[b, h, i, 0]
                    for j in range(1, T):
                        m = max(m, s[b, h, i, j])
                    for j in range(T):
                        s[b, h, i, j] = exp(s[b, h, i, j] - m)
                    tot = 0
                    for j in range(T):
                        tot = tot + s[b, h, i, j]
                    tot = 1 / tot
                    for j in range(T):
                        s[b, h, i, j] = s[b, h, i, j] * tot
    return np.asarray(s)


def softmax_backward(const real[:, :, :, ::1] pr, const real[:, :, :, ::1] dpr, double scale):
    cdef Py_ssize_t B = pr.shape[0], H = pr.shape[1], Tq = pr.shape[2], T = pr.shape[3]
    out_arr = np.empty_like(np.asarray(pr))
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, h, i, j
    cdef double dot
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(Tq):
                    dot = 0.0
                    for j in range(T):
                        dot += dpr[b, h, i, j] * pr[b, h, i, j]
                    for j in range(T):
                        out[b, h, i, j] = <real>(pr[b, h, i, j] * (dpr[b, h, i, j] - dot) * scale)
    return out_arr


def _gelu_forward(const real[::1] u, real[::1] gu, real[::1] t):
    cdef Py_ssize_t n = u.shape[0], i
    cdef real c = <real>GELU_C, a = <real>GELU_A
    with nogil:
        for i in range(n):
            # tanh(z) = 1 - 2 / (exp(2z) + 1) keeps the loop vectorizable
            t[i] = 1 - 2 / (exp(2 * c * u[i] * (1 + a * u[i] * u[i])) + 1)
        for i in range(n):
            gu[i] = <real>0.5 * u[i] * (1 + t[i])


def gelu_forward(u):
    u = np.ascontiguousarray(u)
    gu = np.empty_like(u)
    t = np.empty_like(u)
    _gelu_forward(u.reshape(-1), gu.reshape(-1), t.reshape(-1))
    return gu, t


def _gelu_backward(const real[::1] u, const real[::1] t, const real[::1] dgu, real[::1] out):
    cdef Py_ssize_t n = u.shape[0], i
    cdef double x, tt
    with nogil:
        for i in range(n):
            x = u[i]
            tt = t[i]
            out[i] = <real>(dgu[i] * (0.5 * (1.0 + tt) + 0.5 * x * (1.0 - tt * tt)
                                      * GELU_C * (1.0 + 3.0 * GELU_A * x * x)))


def gelu_backward(u, t, dgu):
    u = np.ascontiguousarray(u)
    t = np.ascontiguousarray(t, dtype=u.dtype)
    dgu = np.ascontiguousarray(dgu, dtype=u.dtype)
    out = np.empty_like(u)
    _gelu_backward(u.reshape(-1), t.reshape(-1), dgu.reshape(-1), out.reshape(-1))
    return out


def conditional_affinities(const double[:, ::1] D, double perplexity, double tol=1e-5,
                           int max_iter=100):
    cdef Py_ssize_t n = D.shape[0], i, j
    cdef int it
    cdef double target = log(perplexity)
    P_arr = np.zeros((n, n))
    cdef double[:, ::1] P = P_arr
    cdef double beta, lo, hi, sw, swd, h, diff, dmin, w
    cdef bint bounded
    with nogil:
        for i in range(n):
            dmin = D[i, 1] if i == 0 else D[i, 0]
            for j in range(n):
                if j != i and D[i, j] < dmin:
                    dmin = D[i, j]
            beta = 1.0
            lo = 0.0
            hi = 0.0
            bounded = False
            for it in range(max_iter):
                sw = 0.0
                swd = 0.0
                for j in range(n):
                    if j == i:
                        continue
                    w = exp(-(D[i, j] - dmin) * beta)
                    sw += w
                    swd += (D[i, j] - dmin) * w
                h = log(sw) + beta * swd / sw
                diff = h - target
                if fabs(diff) < tol:
                    break
                if diff > 0:
                    lo = beta
                    if bounded:
                        beta = (beta + hi) / 2.0
                    else:
                        beta = beta * 2.0
                else:
                    hi = beta
                    bounded = True
                    beta = (beta + lo) / 2.0
            sw = 0.0
            for j in range(n):
                if j == i:
                    continue
                w = exp(-(D[i, j] - dmin) * beta)
                P[i, j] = w
                sw += w
            for j in range(n):
                P[i, j] = P[i, j] / sw
    return P_arr


def tsne_gradient(const double[:, ::1] P, const double[:, ::1] Y, double exaggeration=1.0,
                  bint compute_kl=True):
    cdef Py_ssize_t n = Y.shape[0], d = Y.shape[1], i, j, k
    num_arr = np.empty((n, n))
    cdef double[:, ::1] num = num_arr
    grad_arr = np.zeros((n, d))
    cdef double[:, ::1] grad = grad_arr
    cdef double acc, diff, Z = 0.0, q, coef, invZ, kl = 0.0
    with nogil:
        for i in range(n):
            num[i, i] = 0.0
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = Y[i, k] - Y[j, k]
                    acc = acc + diff * diff
                acc = 1.0 / (1.0 + acc)
                num[i, j] = acc
                num[j, i] = acc
                Z += 2.0 * acc
        invZ = 1.0 / Z
        for i in range(n):
            for j in range(n):
                q = max(num[i, j] * invZ, 1e-12)
                coef = 4.0 * (exaggeration * P[i, j] - q) * num[i, j]
                for k in range(d):
                    grad[i, k] += coef * (Y[i, k] - Y[j, k])
        if compute_kl:
            for i in range(n):
                for j in range(n):
                    if i != j and P[i, j] > 0:
                        q = max(num[i, j] * invZ, 1e-12)
                        kl += P[i, j] * log(P[i, j] / q)
    return grad_arr, (kl if compute_kl else float("nan"))

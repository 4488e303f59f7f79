# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``osbm._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


def tau_sweep(double[:, ::1] x, double[:, ::1] tt, double[:, ::1] wn,
              double[:, ::1] m_sender, double[:, ::1] m_receiver,
              double[:, ::1] lam, double[::1] prior_logodds, double tau_min):
    cdef Py_ssize_t n = tt.shape[0]
    cdef Py_ssize_t k = tt.shape[1]
    cdef Py_ssize_t q = k - 1
    cdef Py_ssize_t kk = k * k
    cdef Py_ssize_t b, j, r, s, c, l, u
    cdef double hi = 1.0 - tau_min
    cdef double max_delta = 0.0
    cdef double la, lb, tr, wo, wi, acc, quad, logit, new, e, delta

    cdef double[:, ::1] a_mat = np.empty((k, k))
    cdef double[:, ::1] b_mat = np.empty((k, k))
    cdef double[::1] g = np.empty(kk)
    cdef double[::1] s_out = np.empty(k)
    cdef double[::1] s_in = np.empty(k)
    cdef double[::1] lin = np.empty(k)

    for b in range(n):
        for r in range(k):
            s_out[r] = 0.0
            s_in[r] = 0.0
            for s in range(k):
                a_mat[r, s] = 0.0
                b_mat[r, s] = 0.0
        for j in range(n):
            if j == b:
                continue
            la = lam[b, j]
            lb = lam[j, b]
            wo = x[b, j] - 0.5
            wi = x[j, b] - 0.5
            for r in range(k):
                tr = tt[j, r]
                s_out[r] += wo * tr
                s_in[r] += wi * tr
                a_mat[r, r] += la * tr
                b_mat[r, r] += lb * tr
                for s in range(r + 1, k):
                    acc = tr * tt[j, s]
                    a_mat[r, s] += la * acc
                    b_mat[r, s] += lb * acc
        for r in range(k):
            for s in range(r + 1, k):
                a_mat[s, r] = a_mat[r, s]
                b_mat[s, r] = b_mat[r, s]

        # only rows c < Q of the trace grid are consumed
        for c in range(q):
            for l in range(k):
                u = c * k + l
                acc = 0.0
                for r in range(k):
                    for s in range(k):
                        acc += m_sender[u, r * k + s] * a_mat[r, s]
                        acc += m_receiver[u, r * k + s] * b_mat[r, s]
                g[u] = acc
            acc = 0.0
            for l in range(k):
                acc += wn[c, l] * s_out[l] + wn[l, c] * s_in[l]
            lin[c] = acc

        for c in range(q):
            quad = g[c * k + c]
            for l in range(k):
                if l != c:
                    quad += 2.0 * g[c * k + l] * tt[b, l]
            logit = prior_logodds[c] + lin[c] - quad
            if logit >= 0:
                new = 1.0 / (1.0 + exp(-logit))
            else:
                e = exp(logit)
                new = e / (1.0 + e)
            if new < tau_min:
                new = tau_min
            elif new > hi:
                new = hi
            delta = fabs(new - tt[b, c])
            if delta > max_delta:
                max_delta = delta
            tt[b, c] = new
    return max_delta

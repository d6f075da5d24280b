# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled gridding kernels: ES-kernel weights, interpolation and spreading.

Batches are stored batch-major: a stack of ``s`` complex signals is an
``(s, n)`` array, viewed here as ``(s, 2n)`` interleaved doubles.  Points are
visited in sorted order so grid accesses stay local: ``start`` and
``weights`` are stored in that order and ``order[jj]`` is the original index.
"""

from libc.math cimport exp, sqrt, ceil


def es_weights(const double[::1] t, int width, double beta, long n,
               long long[::1] start, double[:, ::1] weights):
    """Fill ``start[j]`` (wrapped into [0, n)) and ``weights[j, :]`` for grid
    coordinates ``t[j]``."""
    cdef Py_ssize_t j, k, m = t.shape[0]
    cdef double half = 0.5 * width, inv = 2.0 / width, z, z2, tj
    cdef long long s0
    for j in range(m):
        tj = t[j]
        s0 = <long long> ceil(tj - half)
        for k in range(width):
            z = (tj - (s0 + k)) * inv
            z2 = 1.0 - z * z
            if z2 > 0.0:
                weights[j, k] = exp(beta * (sqrt(z2) - 1.0))
            else:
                weights[j, k] = 0.0
        s0 = s0 % n
        if s0 < 0:
            s0 += n
        start[j] = s0


def interp(const double[:, ::1] grid, const long long[::1] order,
           const long long[::1] start, const double[:, ::1] weights,
           double[:, ::1] out):
    """``out[c, order[jj]] = sum_k weights[jj, k] * grid[c, (start[jj] + k) % n]``."""
    cdef Py_ssize_t c, jj, j, k, i
    cdef Py_ssize_t m = start.shape[0], w = weights.shape[1]
    cdef Py_ssize_t n = grid.shape[1] // 2, ncol = grid.shape[0]
    cdef double re, im, wk
    cdef const double *g
    cdef const double *wj
    for c in range(ncol):
        g = &grid[c, 0]
        for jj in range(m):
            j = order[jj]
            i = start[jj]
            wj = &weights[jj, 0]
            re = 0.0
            im = 0.0
            if i + w <= n:
                for k in range(w):
                    re += wj[k] * g[2 * (i + k)]
                    im += wj[k] * g[2 * (i + k) + 1]
            else:
                for k in range(w):
                    wk = wj[k]
                    re += wk * g[2 * i]
                    im += wk * g[2 * i + 1]
                    i += 1
                    if i == n:
                        i = 0
            out[c, 2 * j] = re
            out[c, 2 * j + 1] = im


def spread(const double[:, ::1] vals, const long long[::1] start,
           const double[:, ::1] weights, double[:, ::1] out):
    """Adjoint of :func:`interp`.  ``vals`` must already be in sorted point
    order (``vals[:, jj]`` belongs to ``start[jj]``) and ``out`` zeroed."""
    cdef Py_ssize_t c, jj, k, i
    cdef Py_ssize_t m = start.shape[0], w = weights.shape[1]
    cdef Py_ssize_t n = out.shape[1] // 2, ncol = out.shape[0]
    cdef double re, im, wk
    cdef double *g
    cdef const double *v
    cdef double wl[64]
    for c in range(ncol):
        g = &out[c, 0]
        v = &vals[c, 0]
        for jj in range(m):
            i = start[jj]
            re = v[2 * jj]
            im = v[2 * jj + 1]
            # local copy lets the compiler assume no aliasing with the grid
            for k in range(w):
                wl[k] = weights[jj, k]
            if i + w <= n:
                for k in range(w):
                    g[2 * (i + k)] += wl[k] * re
                    g[2 * (i + k) + 1] += wl[k] * im
            else:
                for k in range(w):
                    wk = wl[k]
                    g[2 * i] += wk * re
                    g[2 * i + 1] += wk * im
                    i += 1
                    if i == n:
                        i = 0

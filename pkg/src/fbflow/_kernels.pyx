# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled assembly kernels for the p(x)-Dirichlet energy.

Parallel loops only write per-cell or per-node values; every sum is
combined in a fixed order, so results do not depend on the number of
threads.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor, pow, sqrt

cnp.import_array()


cdef inline double _pow4(double t, double e4) noexcept nogil:
    """t ** (e4 / 4); quarter-integer exponents go through sqrt and products."""
    cdef long k, n
    cdef double base, r
    if e4 != floor(e4) or e4 > 64.0 or e4 < -64.0:
        return pow(t, 0.25 * e4)
    k = <long>e4
    if k % 4 == 0:
        base, n = t, k // 4
    elif k % 2 == 0:
        base, n = sqrt(t), k // 2
    else:
        base, n = sqrt(sqrt(t)), k
    if n < 0:
        n = -n
        base = 1.0 / base
    r = 1.0
    while n:
        if n & 1:
            r *= base
        base *= base
        n >>= 1
    return r


cdef inline double _powhalf(double s2, double p, bint quadratic) noexcept nogil:
    if quadratic:
        return s2
    if s2 == 0.0:
        return 0.0
    return _pow4(s2, 2.0 * p)


cdef inline double _coef(double s2, double p, double a, double d2, bint quadratic) noexcept nogil:
    if quadratic:
        return a
    if p < 2.0:
        return a * _pow4(s2 + d2, 2.0 * (p - 2.0))
    if p == 2.0:
        return a
    return a * _pow4(s2, 2.0 * (p - 2.0))


def energy_cells(u, pc, ac, h, bint quadratic=False, int workers=1):
    """Per-cell gradient energy a/p |grad u|^p vol."""
    if u.ndim == 1:
        return _energy_1d(u, pc, ac, h[0], quadratic)
    return _energy_2d(u, pc, ac, h[0], h[1], quadratic, workers)


def _energy_1d(const double[::1] u, const double[::1] pc, const double[::1] ac, double h, bint quadratic):
    cdef Py_ssize_t i, n = pc.shape[0]
    cdef double g
    out = np.empty(n)
    cdef double[::1] e = out
    for i in range(n):
        g = (u[i + 1] - u[i]) / h
        e[i] = ac[i] / pc[i] * _powhalf(g * g, pc[i], quadratic) * h
    return out


def _energy_2d(const double[:, ::1] u, const double[:, ::1] pc, const double[:, ::1] ac,
               double hx, double hy, bint quadratic, int workers):
    cdef Py_ssize_t nx = pc.shape[0], ny = pc.shape[1]
    cdef Py_ssize_t i, j
    cdef double dxl, dxh, dyl, dyh, term
    cdef double vol = hx * hy
    out = np.empty((nx, ny))
    cdef double[:, ::1] e = out
    for i in prange(nx, nogil=True, num_threads=workers, schedule="static"):
        for j in range(ny):
            dxl = (u[i + 1, j] - u[i, j]) / hx
            dxh = (u[i + 1, j + 1] - u[i, j + 1]) / hx
            dyl = (u[i, j + 1] - u[i, j]) / hy
            dyh = (u[i + 1, j + 1] - u[i + 1, j]) / hy
            term = (_powhalf(dxl * dxl + dyl * dyl, pc[i, j], quadratic)
                    + _powhalf(dxl * dxl + dyh * dyh, pc[i, j], quadratic)
                    + _powhalf(dxh * dxh + dyl * dyl, pc[i, j], quadratic)
                    + _powhalf(dxh * dxh + dyh * dyh, pc[i, j], quadratic))
            e[i, j] = ac[i, j] / pc[i, j] * 0.25 * term * vol
    return out


def smooth_gradient(u, pc, ac, src, h, double delta, bint quadratic=False, int workers=1):
    if u.ndim == 1:
        return _grad_1d(u, pc, ac, src, h[0], delta, quadratic)
    return _grad_2d(u, pc, ac, src, h[0], h[1], delta, quadratic, workers)


def _grad_1d(const double[::1] u, const double[::1] pc, const double[::1] ac, src, double h,
             double delta, bint quadratic):
    cdef Py_ssize_t i, n = pc.shape[0]
    cdef double g, k, d2
    cdef bint has_src = src is not None
    cdef const double[::1] sv
    out = np.zeros(n + 1)
    cdef double[::1] grad = out
    flux_arr = np.empty(n)
    cdef double[::1] flux = flux_arr
    if has_src:
        sv = src
    for i in range(n):
        g = (u[i + 1] - u[i]) / h
        d2 = delta * delta if pc[i] < 2.0 else 0.0
        k = _coef(g * g, pc[i], ac[i], d2, quadratic)
        flux[i] = k * g
    for i in range(n + 1):
        if i > 0:
            grad[i] += flux[i - 1]
            if has_src:
                grad[i] += 0.5 * h * sv[i - 1]
        if i < n:
            grad[i] -= flux[i]
            if has_src:
                grad[i] += 0.5 * h * sv[i]
    return out


def _grad_2d(const double[:, ::1] u, const double[:, ::1] pc, const double[:, ::1] ac, src,
             double hx, double hy, double delta, bint quadratic, int workers):
    cdef Py_ssize_t nx = pc.shape[0], ny = pc.shape[1]
    cdef Py_ssize_t i, j
    cdef double dxl, dxh, dyl, dyh, k00, k10, k01, k11, d2, p, a
    cdef double W = 0.25 * hx * hy
    cdef double wx = W / hx, wy = W / hy
    cdef bint has_src = src is not None
    cdef const double[:, ::1] sv
    if has_src:
        sv = src
    sxl_a = np.empty((nx, ny)); sxh_a = np.empty((nx, ny))
    syl_a = np.empty((nx, ny)); syh_a = np.empty((nx, ny))
    cdef double[:, ::1] sxl = sxl_a, sxh = sxh_a, syl = syl_a, syh = syh_a
    for i in prange(nx, nogil=True, num_threads=workers, schedule="static"):
        for j in range(ny):
            p = pc[i, j]
            a = ac[i, j]
            d2 = delta * delta if p < 2.0 else 0.0
            dxl = (u[i + 1, j] - u[i, j]) / hx
            dxh = (u[i + 1, j + 1] - u[i, j + 1]) / hx
            dyl = (u[i, j + 1] - u[i, j]) / hy
            dyh = (u[i + 1, j + 1] - u[i + 1, j]) / hy
            k00 = _coef(dxl * dxl + dyl * dyl, p, a, d2, quadratic)
            k10 = _coef(dxl * dxl + dyh * dyh, p, a, d2, quadratic)
            k01 = _coef(dxh * dxh + dyl * dyl, p, a, d2, quadratic)
            k11 = _coef(dxh * dxh + dyh * dyh, p, a, d2, quadratic)
            sxl[i, j] = wx * dxl * (k00 + k10)
            sxh[i, j] = wx * dxh * (k01 + k11)
            syl[i, j] = wy * dyl * (k00 + k01)
            syh[i, j] = wy * dyh * (k10 + k11)
    out = np.zeros((nx + 1, ny + 1))
    cdef double[:, ::1] grad = out
    cdef double acc
    for i in prange(nx + 1, nogil=True, num_threads=workers, schedule="static"):
        for j in range(ny + 1):
            acc = 0.0
            # cell (i-1, j-1): node is its (1,1) corner
            if i > 0 and j > 0:
                acc = acc + sxh[i - 1, j - 1] + syh[i - 1, j - 1]
                if has_src:
                    acc = acc + W * sv[i - 1, j - 1]
            # cell (i-1, j): node is its (1,0) corner
            if i > 0 and j < ny:
                acc = acc + sxl[i - 1, j] - syh[i - 1, j]
                if has_src:
                    acc = acc + W * sv[i - 1, j]
            # cell (i, j-1): node is its (0,1) corner
            if i < nx and j > 0:
                acc = acc - sxh[i, j - 1] + syl[i, j - 1]
                if has_src:
                    acc = acc + W * sv[i, j - 1]
            # cell (i, j): node is its (0,0) corner
            if i < nx and j < ny:
                acc = acc - sxl[i, j] - syl[i, j]
                if has_src:
                    acc = acc + W * sv[i, j]
            grad[i, j] = acc
    return out

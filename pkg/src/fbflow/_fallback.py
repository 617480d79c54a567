"""Pure numpy versions of the assembly kernels.

Same contract as the compiled ``_kernels`` module; used when the extension is
not built or when FBFLOW_PURE=1.
"""

import numpy as np


def _corner_diffs(u, hx, hy):
    dxl = (u[1:, :-1] - u[:-1, :-1]) / hx
    dxh = (u[1:, 1:] - u[:-1, 1:]) / hx
    dyl = (u[:-1, 1:] - u[:-1, :-1]) / hy
    dyh = (u[1:, 1:] - u[1:, :-1]) / hy
    return dxl, dxh, dyl, dyh


def _powhalf(s2, pc, quadratic):
    # |g|^p from |g|^2
    if quadratic:
        return s2
    return s2 ** (0.5 * pc)


def energy_cells_1d(u, pc, ac, h, quadratic):
    g = np.diff(u) / h
    return ac / pc * _powhalf(g * g, pc, quadratic) * h


def energy_cells_2d(u, pc, ac, hx, hy, quadratic):
    dxl, dxh, dyl, dyh = _corner_diffs(u, hx, hy)
    acc = (_powhalf(dxl * dxl + dyl * dyl, pc, quadratic)
           + _powhalf(dxl * dxl + dyh * dyh, pc, quadratic)
           + _powhalf(dxh * dxh + dyl * dyl, pc, quadratic)
           + _powhalf(dxh * dxh + dyh * dyh, pc, quadratic))
    return ac / pc * 0.25 * acc * (hx * hy)


def energy_cells(u, pc, ac, h, quadratic=False, workers=1):
    if u.ndim == 1:
        return energy_cells_1d(u, pc, ac, h[0], quadratic)
    return energy_cells_2d(u, pc, ac, h[0], h[1], quadratic)


def _coef(s2, pc, ac, d2, quadratic):
    if quadratic:
        return ac
    return ac * (s2 + d2) ** (0.5 * (pc - 2.0))


def smooth_gradient(u, pc, ac, src, h, delta, quadratic=False, workers=1):
    """Nodal gradient of the smooth energy plus sum over cells of src*vol/2^dim per corner."""
    d2 = np.where(pc < 2.0, delta * delta, 0.0)
    if u.ndim == 1:
        hx = h[0]
        g = np.diff(u) / hx
        k = _coef(g * g, pc, ac, d2, quadratic)
        flux = k * g  # times h / h
        grad = np.zeros_like(u)
        grad[1:] += flux
        grad[:-1] -= flux
        if src is not None:
            s = src * (0.5 * hx)
            grad[:-1] += s
            grad[1:] += s
        return grad
    hx, hy = h
    W = 0.25 * hx * hy
    dxl, dxh, dyl, dyh = _corner_diffs(u, hx, hy)
    k00 = _coef(dxl * dxl + dyl * dyl, pc, ac, d2, quadratic)
    k10 = _coef(dxl * dxl + dyh * dyh, pc, ac, d2, quadratic)
    k01 = _coef(dxh * dxh + dyl * dyl, pc, ac, d2, quadratic)
    k11 = _coef(dxh * dxh + dyh * dyh, pc, ac, d2, quadratic)
    sxl = W / hx * dxl * (k00 + k10)
    sxh = W / hx * dxh * (k01 + k11)
    syl = W / hy * dyl * (k00 + k01)
    syh = W / hy * dyh * (k10 + k11)
    grad = np.zeros_like(u)
    grad[1:, :-1] += sxl
    grad[:-1, :-1] -= sxl
    grad[1:, 1:] += sxh
    grad[:-1, 1:] -= sxh
    grad[:-1, 1:] += syl
    grad[:-1, :-1] -= syl
    grad[1:, 1:] += syh
    grad[1:, :-1] -= syh
    if src is not None:
        s = src * W
        grad[:-1, :-1] += s
        grad[1:, :-1] += s
        grad[:-1, 1:] += s
        grad[1:, 1:] += s
    return grad

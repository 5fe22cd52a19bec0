"""Quadrature stencil for the 1D fractional Laplacian on a uniform grid.

The operator is applied in its symmetrized form

    A f(x) = c_alpha * int_0^inf [f(x+z) + f(x-z) - 2 f(x)] z**(-1-alpha) dz,

whose Fourier symbol is -|xi|**alpha. The second difference D(z) is
approximated by D(h) (z/h)**2 on the first cell (this removes the
singularity) and by its piecewise-linear interpolant between nodes beyond
that; every cell is integrated exactly against the kernel. Values outside
the grid follow the extension rule and their contribution is integrated in
closed form, so there is no truncation of the kernel.

All weights are nonnegative, hence the constant-continuation operator is a
monotone (M-matrix-type) discretization.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError, ResolutionError

EXTENSIONS = ("constant", "linear")


def frac_constant(alpha):
    """c_alpha such that the 1D kernel c_alpha |z|^(-1-alpha) has symbol -|xi|^alpha."""
    return alpha * 2.0 ** (alpha - 1.0) * math.gamma((1.0 + alpha) / 2.0) / (
        math.sqrt(math.pi) * math.gamma(1.0 - alpha / 2.0))


def _p0(a, b, alpha):
    # int_a^b s^(-1-alpha) ds
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.isinf(b), a ** -alpha / alpha, (a ** -alpha - b ** -alpha) / alpha)
    return np.where(b > a, out, 0.0)


def _p1(a, b, alpha):
    # int_a^b s^(-alpha) ds
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.isinf(b), a ** (1 - alpha) / (alpha - 1),
                       (a ** (1 - alpha) - b ** (1 - alpha)) / (alpha - 1))
    return np.where(b > a, out, 0.0)


def _p2(a, b, alpha):
    # int_a^b s^(1-alpha) ds, finite b only
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where(b > a, (b ** (2 - alpha) - a ** (2 - alpha)) / (2 - alpha), 0.0)


class Stencil1D:
    """Fractional-Laplacian weights for ``n`` nodes at spacing ``h``.

    ``window = (lo, hi)`` restricts the jump kernel to lo <= |z| < hi (in the
    same units as h); the full operator uses (0, inf). Restricted stencils
    add up exactly to the full one.
    """

    def __init__(self, h, n, alpha, extension="constant", window=(0.0, math.inf)):
        if not (1.0 < alpha < 2.0):
            raise ParameterError(f"alpha must lie in (1, 2), got {alpha}")
        if extension not in EXTENSIONS:
            raise ParameterError(f"extension must be one of {EXTENSIONS}, got {extension!r}")
        if n < 3:
            raise ResolutionError("a stencil needs at least three nodes")
        self.h, self.n, self.alpha, self.extension = float(h), int(n), float(alpha), extension
        lo, hi = window
        self.lo, self.hi = lo / h, hi / h  # in cell units
        self.scale = frac_constant(alpha) * h ** -alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            self.W = self._interior_weights()
            self.tail_omega, self.tail_ramp = self._tails()

    # ---- weights ---------------------------------------------------------
    def _clip(self, a, b):
        return np.maximum(a, self.lo), np.minimum(b, self.hi)

    def _interior_weights(self):
        """W[m] for m = 1..n-1 (index 0 unused)."""
        al = self.alpha
        m = np.arange(1, self.n, dtype=float)
        a, b = self._clip(m - 1.0, m)
        rising = _p1(a, b, al) - (m - 1.0) * _p0(a, b, al)
        rising[0] = 0.0  # first cell handled by the quadratic term below
        a, b = self._clip(m, m + 1.0)
        falling = (m + 1.0) * _p0(a, b, al) - _p1(a, b, al)
        W = rising + falling
        a, b = self._clip(0.0, 1.0)
        W[0] += float(_p2(a, b, al))
        return self.scale * np.concatenate([[0.0], W])

    def _tails(self):
        """Omega[M] = sum_{m>=M} W_m and R[M] = sum_{m>=M} (m-M+1) W_m, M = 1..n."""
        al = self.alpha
        M = np.arange(1, self.n + 1, dtype=float)
        a, b = self._clip(M - 1.0, M)
        rise0 = _p1(a, b, al) - (M - 1.0) * _p0(a, b, al)
        a, b = self._clip(M, math.inf)
        omega = rise0 + _p0(a, b, al)
        a, b = self._clip(M - 1.0, math.inf)
        ramp = _p1(a, b, al) - (M - 1.0) * _p0(a, b, al)
        # M = 1: the first cell uses the quadratic approximation of D
        a, b = self._clip(0.0, 1.0)
        q = float(_p2(a, b, al))
        a1, b1 = self._clip(1.0, math.inf)
        omega[0] = q + float(_p0(a1, b1, al))
        ramp[0] = q + float(_p1(a1, b1, al))
        return self.scale * np.concatenate([[0.0], omega]), self.scale * np.concatenate([[0.0], ramp])

    # ---- application -----------------------------------------------------
    def apply(self, f, axis=0):
        """Apply the operator along ``axis`` of an array of nodal values."""
        f = np.moveaxis(np.asarray(f, dtype=float), axis, 0)
        n = self.n
        if f.shape[0] != n:
            raise ParameterError(f"expected {n} nodes along axis {axis}, got {f.shape[0]}")
        flat = f.reshape(n, -1)
        W = self.W
        kernel = np.concatenate([W[:0:-1], [0.0], W[1:]])  # index n-1 is the center
        out = np.empty_like(flat)
        i = np.arange(n)
        cw = np.cumsum(W)
        # weights that stay on the grid, right (n-1-i cells) and left (i cells)
        on_grid = cw[n - 1 - i] + cw[i]
        M_right = n - i
        M_left = i + 1
        for j in range(flat.shape[1]):
            col = flat[:, j]
            conv = np.convolve(col, kernel)[n - 1:2 * n - 1]
            val = conv - on_grid * col
            val += self.tail_omega[M_right] * (col[-1] - col) + self.tail_omega[M_left] * (col[0] - col)
            if self.extension == "linear":
                val += self.tail_ramp[M_right] * (col[-1] - col[-2]) + self.tail_ramp[M_left] * (col[0] - col[1])
            out[:, j] = val
        return np.moveaxis(out.reshape(f.shape), 0, axis)

    def matrix(self):
        """Dense matrix of the operator (including the exterior contribution)."""
        n = self.n
        idx = np.arange(n)
        dist = np.abs(idx[:, None] - idx[None, :])
        A = self.W[dist]
        A[idx, idx] = 0.0
        i = idx
        cw = np.cumsum(self.W)
        A[idx, idx] -= cw[n - 1 - i] + cw[i]
        om_r, om_l = self.tail_omega[n - i], self.tail_omega[i + 1]
        A[:, n - 1] += om_r
        A[:, 0] += om_l
        A[idx, idx] -= om_r + om_l
        if self.extension == "linear":
            r_r, r_l = self.tail_ramp[n - i], self.tail_ramp[i + 1]
            A[:, n - 1] += r_r
            A[:, n - 2] -= r_r
            A[:, 0] += r_l
            A[:, 1] -= r_l
        return A

    @property
    def total_weight(self):
        """Lambda_h: total jump intensity seen by an interior node (2 * sum of weights)."""
        return 2.0 * float(self.tail_omega[1])

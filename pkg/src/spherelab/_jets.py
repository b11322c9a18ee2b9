"""Truncated Taylor jets in (z, zbar) for exact chart derivatives.

A Jet stores the mixed Taylor coefficients c[..., a, b] of a smooth function
F(z, zbar) around a base point:  c[a, b] = (1/a!b!) d^a_z d^b_zbar F.  The
coefficient square has fixed side K; `order` tracks the total degree a + b up
to which entries are trustworthy, and every operation propagates it (products
keep the minimum, derivatives lose one).  Square truncation is closed: entry
(a, b) of a product depends only on entries (a', b') with a' <= a, b' <= b of
the factors, so all tracked coefficients are exact up to rounding.

Leading axes of `coef` broadcast, which vectorizes the algebra over sample
points and vector components at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from .errors import SolverError


@dataclass(frozen=True)
class Jet:
    coef: np.ndarray          # (..., K, K) complex
    order: int                # largest trustworthy total degree a + b

    @property
    def side(self) -> int:
        return self.coef.shape[-1]

    @property
    def value(self) -> np.ndarray:
        return self.coef[..., 0, 0]

    def coefficient(self, a: int, b: int) -> np.ndarray:
        """Taylor coefficient of z^a zbar^b; the (a+b <= order) ones are valid."""
        if a + b > self.order:
            raise SolverError(
                f"jet coefficient ({a},{b}) requested beyond valid order "
                f"{self.order}")
        return self.coef[..., a, b]

    def derivative(self, a: int, b: int) -> np.ndarray:
        """Pointwise derivative d^a_z d^b_zbar at the base point."""
        return self.coefficient(a, b) * (factorial(a) * factorial(b))

    # -- linear structure ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.coef + other.coef, min(self.order, other.order))
        return self._shift_const(other, +1)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.coef - other.coef, min(self.order, other.order))
        return self._shift_const(other, -1)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Jet(-self.coef, self.order)

    def _shift_const(self, c, sign):
        coef = self.coef.copy()
        coef[..., 0, 0] = coef[..., 0, 0] + sign * np.asarray(c)
        return Jet(coef, self.order)

    def scale(self, c):
        """Multiply by a constant (broadcast over leading axes)."""
        c = np.asarray(c)
        if c.ndim:
            c = c[..., None, None]
        return Jet(self.coef * c, self.order)

    # -- ring structure -----------------------------------------------------

    def mul(self, other: "Jet") -> "Jet":
        # Direct shift-and-accumulate convolution.  An FFT product would be
        # faster asymptotically but pollutes the small low-order entries with
        # absolute error set by the largest coefficients; the direct sum keeps
        # every entry exact relative to its own contributing terms.
        a, b = np.broadcast_arrays(self.coef, other.coef)
        K = self.side
        out = np.zeros(a.shape, dtype=complex)
        for i in range(K):
            for j in range(K):
                block = a[..., i, j, None, None] * b[..., :K - i, :K - j]
                out[..., i:, j:] += block
        return Jet(out, min(self.order, other.order))

    def div(self, other: "Jet") -> "Jet":
        num, den = np.broadcast_arrays(self.coef, other.coef)
        lead = den[..., 0, 0]
        if np.any(np.abs(lead) == 0.0):
            raise SolverError("jet division by a jet with zero value")
        K = self.side
        out = np.zeros(np.broadcast_shapes(num.shape, den.shape),
                       dtype=complex)
        for a in range(K):
            for b in range(K):
                acc = num[..., a, b].astype(complex)
                # subtract sum_{(i,j) <= (a,b), (i,j) != (0,0)} den_ij out_{a-i,b-j}
                for i in range(a + 1):
                    for j in range(b + 1):
                        if i == 0 and j == 0:
                            continue
                        acc = acc - den[..., i, j] * out[..., a - i, b - j]
                out[..., a, b] = acc / lead
        return Jet(out, min(self.order, other.order))

    # -- calculus -----------------------------------------------------------

    def dz(self) -> "Jet":
        K = self.side
        out = np.zeros_like(self.coef)
        ar = np.arange(1, K)
        out[..., : K - 1, :] = self.coef[..., 1:, :] * ar[:, None]
        return Jet(out, self.order - 1)

    def dzbar(self) -> "Jet":
        K = self.side
        out = np.zeros_like(self.coef)
        br = np.arange(1, K)
        out[..., :, : K - 1] = self.coef[..., :, 1:] * br
        return Jet(out, self.order - 1)

    # -- conjugation and real structure --------------------------------------

    def conj(self) -> "Jet":
        """Jet of the pointwise complex conjugate function."""
        return Jet(np.conj(np.swapaxes(self.coef, -1, -2)).copy(), self.order)

    def real(self) -> "Jet":
        c = self.conj()
        return Jet(0.5 * (self.coef + c.coef), self.order)

    def imag(self) -> "Jet":
        c = self.conj()
        return Jet(-0.5j * (self.coef - c.coef), self.order)


# -- constructors -----------------------------------------------------------

def jet_const(values, side: int, order: int | None = None) -> Jet:
    values = np.asarray(values, dtype=complex)
    coef = np.zeros(values.shape + (side, side), dtype=complex)
    coef[..., 0, 0] = values
    return Jet(coef, side - 1 if order is None else order)


def jet_var(z0, side: int) -> Jet:
    """Jet of the coordinate function z around base points z0."""
    z0 = np.asarray(z0, dtype=complex)
    coef = np.zeros(z0.shape + (side, side), dtype=complex)
    coef[..., 0, 0] = z0
    coef[..., 1, 0] = 1.0
    return Jet(coef, side - 1)


def jet_covar(z0, side: int) -> Jet:
    """Jet of the conjugate coordinate zbar around base points z0."""
    return jet_var(z0, side).conj()


def jet_stack(jets) -> Jet:
    """Stack jets along a new axis just before the coefficient square."""
    order = min(j.order for j in jets)
    return Jet(np.stack([j.coef for j in jets], axis=-3), order)


def jet_dot(a: Jet, b: Jet) -> Jet:
    """Sum over the component axis (-3) of the elementwise product."""
    p = a.mul(b)
    return Jet(p.coef.sum(axis=-3), p.order)


def hermitian_square(a: Jet) -> Jet:
    """<a, a> = sum_i a_i conj(a_i); real-valued jet."""
    return jet_dot(a, a.conj())


# -- finite-difference jets ---------------------------------------------------

# 1D central stencils on offsets -2..2, O(h^2), for derivative orders 0..3
_STENCILS = (
    np.array([0.0, 0.0, 1.0, 0.0, 0.0]),
    np.array([0.0, -0.5, 0.0, 0.5, 0.0]),
    np.array([0.0, 1.0, -2.0, 1.0, 0.0]),
    np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
)

FD_MAX_ORDER = 3


def fd_offsets(z0, h: float) -> np.ndarray:
    """Sample coordinates z0 + (k + i l) h, k, l in -2..2; shape (n, 25)."""
    z0 = np.asarray(z0, dtype=complex)
    k = np.arange(-2, 3)
    grid = (k[:, None] + 1j * k[None, :]).ravel()
    return z0[..., None] + h * grid


def _xy_derivatives(samples: np.ndarray, h: float) -> np.ndarray:
    """Tensor-stencil d^i_x d^j_y estimates; samples (..., 25) -> (..., 4, 4)."""
    f = samples.reshape(samples.shape[:-1] + (5, 5))
    out = np.empty(samples.shape[:-1] + (4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            w = np.outer(_STENCILS[i], _STENCILS[j])
            out[..., i, j] = np.tensordot(f, w, axes=([-2, -1], [0, 1])) \
                / h ** (i + j)
    return out


def fd_jets(samples_h, samples_half, h: float, side: int) -> Jet:
    """Jets from centered differences with one Richardson step.

    `samples_h` and `samples_half` hold function values on the 5x5 offset
    grids of spacing h and h/2 (as produced by `fd_offsets`).  Entries are
    valid to total order FD_MAX_ORDER with O(h^4) truncation error.
    """
    coarse = _xy_derivatives(np.asarray(samples_h, dtype=complex), h)
    fine = _xy_derivatives(np.asarray(samples_half, dtype=complex), h / 2)
    dxy = (4.0 * fine - coarse) / 3.0
    coef = np.zeros(dxy.shape[:-2] + (side, side), dtype=complex)
    top = min(FD_MAX_ORDER, side - 1)
    for a in range(top + 1):
        for b in range(top + 1 - a):
            # (d_x - i d_y)^a (d_x + i d_y)^b expanded over d_x^r+s d_y^rest
            acc = 0.0
            for r in range(a + 1):
                for s in range(b + 1):
                    acc = acc + (comb(a, r) * comb(b, s)
                                 * (-1j) ** (a - r) * 1j ** (b - s)
                                 * dxy[..., r + s, (a - r) + (b - s)])
            coef[..., a, b] = acc / (2 ** (a + b)
                                     * factorial(a) * factorial(b))
    return Jet(coef, min(FD_MAX_ORDER, side - 1))

"""Homogeneous trivariate polynomials and exact spherical-harmonic bases.

The degree-m harmonic subspace is computed over exact rationals (kernel of
the integer Laplacian matrix on monomials), its sphere Gram matrix comes from
the closed-form monomial integrals, and only the final orthonormalization
uses floating point.  This keeps basis construction deterministic and the
addition-theorem normalization tight to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


def monomials(degree: int) -> list[tuple[int, int, int]]:
    """Exponent triples of total degree `degree`, deterministic order."""
    return [(i, j, degree - i - j)
            for i in range(degree, -1, -1)
            for j in range(degree - i, -1, -1)]


@dataclass(frozen=True)
class TrivarPoly:
    """Polynomial in (x, y, z) as exponent rows + coefficients."""

    exps: np.ndarray      # (n, 3) integer exponents
    coeffs: np.ndarray    # (n,) float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        # power tables by repeated multiplication: sign-exact, so polynomial
        # parity (f(-x) = +/- f(x)) holds bitwise, unlike vectorized pow
        top = int(self.exps.max())
        pows = np.ones((top + 1,) + p.shape)
        for k in range(1, top + 1):
            pows[k] = pows[k - 1] * p
        terms = (pows[self.exps[:, 0], :, 0]
                 * pows[self.exps[:, 1], :, 1]
                 * pows[self.exps[:, 2], :, 2])
        vals = self.coeffs @ terms
        return vals[0] if single else vals

    def partial(self, axis: int) -> "TrivarPoly":
        e = self.exps[:, axis]
        keep = e > 0
        exps = self.exps[keep].copy()
        coeffs = self.coeffs[keep] * e[keep]
        exps[:, axis] -= 1
        if exps.shape[0] == 0:
            exps = np.zeros((1, 3), dtype=int)
            coeffs = np.zeros(1)
        return TrivarPoly(exps=exps, coeffs=coeffs)

    def gradient(self) -> list["TrivarPoly"]:
        return [self.partial(a) for a in range(3)]

    @property
    def degree(self) -> int:
        nz = np.abs(self.coeffs) > 0
        return int(self.exps[nz].sum(axis=1).max()) if nz.any() else 0


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def sphere_integral(e: tuple[int, int, int]) -> Fraction:
    """Integral of x^a y^b z^c over the unit sphere, in units of 4*pi."""
    a, b, c = e
    if a % 2 or b % 2 or c % 2:
        return Fraction(0)
    num = _double_factorial(a - 1) * _double_factorial(b - 1) * _double_factorial(c - 1)
    return Fraction(num, _double_factorial(a + b + c + 1))


def _nullspace_fraction(rows: list[list[Fraction]], ncols: int) -> list[list[Fraction]]:
    """Exact nullspace basis of a rational matrix via Gaussian elimination."""
    M = [row[:] for row in rows]
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        pr = next((i for i in range(r, len(M)) if M[i][c] != 0), None)
        if pr is None:
            continue
        M[r], M[pr] = M[pr], M[r]
        inv = 1 / M[r][c]
        M[r] = [v * inv for v in M[r]]
        for i in range(len(M)):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [vi - f * vr for vi, vr in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for ri, pc in enumerate(pivots):
            v[pc] = -M[ri][fc]
        basis.append(v)
    return basis


def harmonic_monomial_basis(degree: int) -> list[list[Fraction]]:
    """Rational basis of harmonic homogeneous polynomials, in monomial coords."""
    mons = monomials(degree)
    if degree < 2:
        return [[Fraction(1 if i == j else 0) for i in range(len(mons))]
                for j in range(len(mons))]
    low = {e: i for i, e in enumerate(monomials(degree - 2))}
    rows = [[Fraction(0)] * len(mons) for _ in low]
    for col, (i, j, k) in enumerate(mons):
        for axis, e in enumerate((i, j, k)):
            if e >= 2:
                tgt = list((i, j, k))
                tgt[axis] -= 2
                rows[low[tuple(tgt)]][col] += e * (e - 1)
    return _nullspace_fraction(rows, len(mons))


def orthonormal_harmonics(degree: int) -> list[TrivarPoly]:
    """L2(S^2)-orthonormal real spherical harmonics of the given degree."""
    mons = monomials(degree)
    basis = harmonic_monomial_basis(degree)
    k = len(basis)
    gram = np.empty((k, k))
    ints = {}
    for r in range(k):
        for s in range(r, k):
            acc = Fraction(0)
            for a, ca in enumerate(basis[r]):
                if ca == 0:
                    continue
                for b, cb in enumerate(basis[s]):
                    if cb == 0:
                        continue
                    e = tuple(x + y for x, y in zip(mons[a], mons[b]))
                    if e not in ints:
                        ints[e] = sphere_integral(e)
                    acc += ca * cb * ints[e]
            gram[r, s] = gram[s, r] = float(acc) * 4.0 * np.pi
    L = np.linalg.cholesky(gram)
    coeff = np.array([[float(c) for c in row] for row in basis])
    ortho = np.linalg.solve(L, coeff)          # rows are L2-orthonormal
    exps = np.array(mons, dtype=int)
    out = []
    for row in ortho:
        keep = np.abs(row) > 1e-300
        out.append(TrivarPoly(exps=exps[keep], coeffs=row[keep]))
    return out

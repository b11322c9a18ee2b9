"""Harmonic maps into round spheres with analytic first derivatives.

Two families: polynomial maps whose components are degree-m spherical
harmonics (the rotationally standard ones normalized by the addition theorem,
so the image lies exactly on the unit sphere), and rational maps p(z)/q(z)
into S^2 evaluated through a pair of stereographic charts in homogeneous
coordinates, which keeps every formula finite across poles.  All densities
are produced in the round-metric gauge.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fem
from ._poly import TrivarPoly, orthonormal_harmonics
from .errors import ValidationError
from .mesh import SphereMesh

_VERONESE_MAX = 4


@dataclass(frozen=True)
class MapSample:
    """One evaluation: unit target vector and the 2 x dim tangent jacobian."""

    value: np.ndarray
    jacobian: np.ndarray


def orthonormal_complement_frames(vectors: np.ndarray) -> np.ndarray:
    """Orthonormal bases of v-perp for unit rows v, shape (N, dim, dim-1).

    Deterministic Householder construction: columns 2..dim of the reflection
    taking e1 to -sign(v_1) v.  Depends only on the vector itself, so frames
    agree at points where two maps agree.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    n, dim = v.shape
    sign = np.where(v[:, 0] >= 0, 1.0, -1.0)
    w = v.copy()
    w[:, 0] += sign
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    H = np.eye(dim)[None, :, :] - 2.0 * w[:, :, None] * w[:, None, :]
    return H[:, :, 1:]


# ---------------------------------------------------------------------------
# polynomial maps

@dataclass(frozen=True)
class PolynomialMap:
    """Map S^2 -> S^{2m} with homogeneous-polynomial components."""

    m: int
    components: tuple
    scale: float
    antipodally_even: bool

    @property
    def ambient_dim(self) -> int:
        return len(self.components)

    @property
    def linearly_full(self) -> bool:
        return True

    def values(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.stack([f(pts) for f in self.components], axis=1)

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        """Ambient gradients, shape (N, dim, 3)."""
        return np.stack(
            [np.stack([g(pts) for g in f.gradient()], axis=1) for f in self.components],
            axis=1)

    def energy_density_values(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        grads = self._gradients(pts)
        radial = np.einsum("njk,nk->nj", grads, pts)
        return 0.5 * (np.einsum("njk,njk->n", grads, grads)
                      - np.einsum("nj,nj->n", radial, radial))

    def tangent_jacobian(self, points: np.ndarray) -> np.ndarray:
        """Jacobian rows in a deterministic orthonormal domain frame, (N, 2, dim)."""
        pts = np.atleast_2d(points)
        frames = orthonormal_complement_frames(pts)          # (N, 3, 2)
        grads = self._gradients(pts)                         # (N, dim, 3)
        return np.einsum("nka,njk->naj", frames, grads)

    def sample_at(self, point) -> MapSample:
        pts = np.atleast_2d(np.asarray(point, dtype=float))
        return MapSample(value=self.values(pts)[0], jacobian=self.tangent_jacobian(pts)[0])

    def harmonicity_residual_values(self, points: np.ndarray) -> np.ndarray:
        """|Delta Phi - |grad Phi|^2 Phi| componentwise, from exact Hessians."""
        pts = np.atleast_2d(points)
        vals = self.values(pts)
        weight = 2.0 * self.energy_density_values(pts)
        res = np.empty_like(vals)
        for j, f in enumerate(self.components):
            grad = f.gradient()
            gvals = np.stack([g(pts) for g in grad], axis=1)
            hess = np.stack([np.stack([grad[a].partial(b)(pts) for b in range(3)], axis=1)
                             for a in range(3)], axis=1)
            lap3 = np.einsum("naa->n", hess)
            radial2 = np.einsum("na,nab,nb->n", pts, hess, pts)
            euler = np.einsum("na,na->n", pts, gvals)
            lap_sphere = -(lap3 - radial2 - 2.0 * euler)
            res[:, j] = lap_sphere - weight * vals[:, j]
        return np.max(np.abs(res), axis=1)


@lru_cache(maxsize=None)
def veronese(m: int) -> PolynomialMap:
    """Degree-m spherical-harmonic map with sum of squared components = 1."""
    if not isinstance(m, (int, np.integer)) or not 1 <= m <= _VERONESE_MAX:
        raise ValidationError(f"veronese degree m must be an integer in [1, {_VERONESE_MAX}], "
                              f"got {m!r}")
    scale = float(np.sqrt(4.0 * np.pi / (2 * m + 1)))
    comps = tuple(TrivarPoly(exps=f.exps, coeffs=scale * f.coeffs)
                  for f in orthonormal_harmonics(m))
    return PolynomialMap(m=int(m), components=comps, scale=scale,
                         antipodally_even=(m % 2 == 0))


# ---------------------------------------------------------------------------
# rational maps

@dataclass(frozen=True)
class RationalMap:
    """Holomorphic map S^2 -> S^2 given by coprime polynomials p/q.

    Coefficients ascend in powers of z.  Evaluation goes through homogeneous
    coordinates (p, q) on the |z| <= 1 chart and through the reversed
    polynomials on the complementary chart, so poles need no special cases.
    """

    p: tuple
    q: tuple

    @property
    def d(self) -> int:
        return max(len(self.p), len(self.q)) - 1

    @property
    def m(self) -> int:
        return 1

    @property
    def ambient_dim(self) -> int:
        return 3

    @property
    def linearly_full(self) -> bool:
        return True

    @property
    def antipodally_even(self) -> bool:
        return False

    def _charts(self, points: np.ndarray):
        """Chart coordinate, homogeneous values/derivatives per point."""
        pts = np.atleast_2d(points)
        X, Y, Z = pts[:, 0], pts[:, 1], pts[:, 2]
        north = Z >= 0
        t = np.where(north, (X + 1j * Y) / np.where(north, 1.0 + Z, 1.0),
                     (X - 1j * Y) / np.where(north, 1.0, 1.0 - Z))
        deg = self.d
        pc = np.asarray(self.p, dtype=complex)
        qc = np.asarray(self.q, dtype=complex)
        pc = np.pad(pc, (0, deg + 1 - pc.size))
        qc = np.pad(qc, (0, deg + 1 - qc.size))
        P = np.where(north, _polyval(pc, t), _polyval(pc[::-1], t))
        Q = np.where(north, _polyval(qc, t), _polyval(qc[::-1], t))
        Pp = np.where(north, _polyval(_derive(pc), t), _polyval(_derive(pc[::-1]), t))
        Qp = np.where(north, _polyval(_derive(qc), t), _polyval(_derive(qc[::-1]), t))
        return pts, north, t, P, Q, Pp, Qp

    def values(self, points: np.ndarray) -> np.ndarray:
        _, _, _, P, Q, _, _ = self._charts(points)
        N = np.abs(P) ** 2 + np.abs(Q) ** 2
        PQ = P * np.conj(Q)
        return np.stack([2 * PQ.real, 2 * PQ.imag,
                         np.abs(Q) ** 2 - np.abs(P) ** 2], axis=1) / N[:, None]

    def energy_density_values(self, points: np.ndarray) -> np.ndarray:
        _, _, t, P, Q, Pp, Qp = self._charts(points)
        W = Pp * Q - P * Qp
        N = np.abs(P) ** 2 + np.abs(Q) ** 2
        return (np.abs(W) * (1.0 + np.abs(t) ** 2) / N) ** 2

    def _dphi_dt(self, points: np.ndarray):
        pts, north, t, P, Q, Pp, Qp = self._charts(points)
        N = np.abs(P) ** 2 + np.abs(Q) ** 2
        A = np.stack([2 * (P * np.conj(Q)).real, 2 * (P * np.conj(Q)).imag,
                      np.abs(Q) ** 2 - np.abs(P) ** 2], axis=1)
        dA = np.stack([Pp * np.conj(Q) + np.conj(P) * Qp,
                       1j * (np.conj(P) * Qp - Pp * np.conj(Q)),
                       Qp * np.conj(Q) - Pp * np.conj(P)], axis=1)
        dN = Pp * np.conj(P) + Qp * np.conj(Q)
        phi = A / N[:, None]
        dphi = dA / N[:, None] - phi * (dN / N)[:, None]
        return pts, north, t, phi, dphi

    def tangent_jacobian(self, points: np.ndarray) -> np.ndarray:
        """Jacobian rows in the chart-induced orthonormal frame, (N, 2, 3)."""
        pts, north, t, phi, dphi = self._dphi_dt(points)
        D = 1.0 + np.abs(t) ** 2
        # J = d(Phi)/d(arclength): phi_u / lambda and phi_v / lambda
        j1 = D[:, None] * dphi.real
        j2 = -D[:, None] * dphi.imag
        return np.stack([j1, j2], axis=1)

    def sample_at(self, point) -> MapSample:
        pts = np.atleast_2d(np.asarray(point, dtype=float))
        return MapSample(value=self.values(pts)[0], jacobian=self.tangent_jacobian(pts)[0])

    def harmonicity_residual_values(self, points: np.ndarray) -> np.ndarray:
        # holomorphic maps are harmonic identically
        return np.zeros(np.atleast_2d(points).shape[0])


def _polyval(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for c in coeffs[::-1]:
        out = out * t + c
    return out


def _derive(coeffs: np.ndarray) -> np.ndarray:
    if coeffs.size <= 1:
        return np.zeros(1, dtype=complex)
    return coeffs[1:] * np.arange(1, coeffs.size)


def _trim(coeffs) -> tuple:
    c = np.asarray(coeffs, dtype=complex)
    if c.size == 0:
        return (0j,)
    mags = np.abs(c)
    tol = 1e-12 * (mags.max() if mags.max() > 0 else 1.0)
    nz = np.nonzero(mags > tol)[0]
    if nz.size == 0:
        return (0j,)
    return tuple(c[: nz[-1] + 1])


def rational_map(p, q=(1 + 0j,)) -> RationalMap:
    """Validated rational map; p, q ascending coefficient sequences."""
    pt, qt = _trim(p), _trim(q)
    if pt == (0j,) and qt == (0j,):
        raise ValidationError("rational map needs p, q not both zero")
    rm = RationalMap(p=pt, q=qt)
    if rm.d < 1:
        raise ValidationError("rational map must be nonconstant (degree >= 1)")
    if len(pt) > 1 and len(qt) > 1:
        rp = np.roots(np.asarray(pt[::-1]))
        rq = np.roots(np.asarray(qt[::-1]))
        if rp.size and rq.size:
            gap = np.min(np.abs(rp[:, None] - rq[None, :]))
            if gap < 1e-8 * max(1.0, np.max(np.abs(np.concatenate([rp, rq])))):
                raise ValidationError("p and q share a root; reduce the fraction first")
    return rm


def mobius_postcompose(rmap: RationalMap, a: complex, b: complex,
                       c: complex, d: complex) -> RationalMap:
    """Postcompose with w -> (aw + b)/(cw + d); degree is preserved."""
    if abs(a * d - b * c) < 1e-14 * max(1.0, abs(a), abs(b), abs(c), abs(d)) ** 2:
        raise ValidationError("Mobius matrix is singular (ad - bc = 0)")
    n = rmap.d + 1
    pc = np.pad(np.asarray(rmap.p, dtype=complex), (0, n - len(rmap.p)))
    qc = np.pad(np.asarray(rmap.q, dtype=complex), (0, n - len(rmap.q)))
    out = rational_map(a * pc + b * qc, c * pc + d * qc)
    if out.d != rmap.d:
        raise ValidationError("Mobius postcomposition changed the degree; "
                              "input was likely not reduced")
    return out


# ---------------------------------------------------------------------------
# zero padding into a larger target sphere

@dataclass(frozen=True)
class PaddedMap:
    """A map followed by a totally geodesic equatorial inclusion."""

    inner: object
    ambient: int

    @property
    def ambient_dim(self) -> int:
        return self.ambient

    @property
    def m(self) -> int:
        return (self.ambient - 1) // 2

    @property
    def linearly_full(self) -> bool:
        return False

    @property
    def antipodally_even(self) -> bool:
        return self.inner.antipodally_even

    def values(self, points: np.ndarray) -> np.ndarray:
        v = self.inner.values(points)
        return np.pad(v, ((0, 0), (0, self.ambient - v.shape[1])))

    def energy_density_values(self, points: np.ndarray) -> np.ndarray:
        return self.inner.energy_density_values(points)

    def tangent_jacobian(self, points: np.ndarray) -> np.ndarray:
        J = self.inner.tangent_jacobian(points)
        return np.pad(J, ((0, 0), (0, 0), (0, self.ambient - J.shape[2])))

    def sample_at(self, point) -> MapSample:
        pts = np.atleast_2d(np.asarray(point, dtype=float))
        return MapSample(value=self.values(pts)[0], jacobian=self.tangent_jacobian(pts)[0])

    def harmonicity_residual_values(self, points: np.ndarray) -> np.ndarray:
        return self.inner.harmonicity_residual_values(points)


def embed_in_larger_sphere(inner, n_new: int):
    """Zero-pad a map into S^{n_new}."""
    if n_new + 1 <= inner.ambient_dim:
        raise ValidationError(
            f"padding target S^{n_new} does not exceed current ambient "
            f"dimension {inner.ambient_dim}")
    if n_new % 2 != 0:
        raise ValidationError("padded target must be even-dimensional S^{2m}")
    base = inner.inner if isinstance(inner, PaddedMap) else inner
    return PaddedMap(inner=base, ambient=n_new + 1)


# ---------------------------------------------------------------------------
# shared map operations

def energy_density(mapping, mesh: SphereMesh) -> fem.Density:
    """Per-vertex rho = half |grad Phi|^2 in round gauge, from analytic derivatives."""
    vals = mapping.energy_density_values(mesh.vertices)
    return fem.density(np.maximum(vals, 0.0))


def degree(mapping, mesh: SphereMesh) -> int:
    """Topological degree from the energy identity: round(integral rho / 4 pi).

    The quadrature uses area-normalized vertex weights (exact for constant
    densities, second order otherwise), so coarse meshes do not bias the
    integer test through the deficit of the polyhedral area.
    """
    a = fem.vertex_areas(mesh)
    rho = mapping.energy_density_values(mesh.vertices)
    est = float(rho @ a) / float(a.sum())
    d = round(est)
    if abs(est - d) > 0.1:
        raise ValidationError(
            f"energy/4pi = {est:.4f} is not near an integer: "
            "map not harmonic or mesh too coarse")
    return int(d)


def harmonicity_residual(mapping, sample_points: np.ndarray) -> float:
    """Max pointwise defect of the harmonic map equation; 0 for rational maps."""
    return float(np.max(mapping.harmonicity_residual_values(sample_points)))


# ---------------------------------------------------------------------------
# descriptor grammar: "veronese:m" | "rational:p(z)/q(z)" | "pad:<inner>:<n>"

_TERM_RE = re.compile(
    r"^(?P<coef>\([^()]*\)|[^z]*)?\*?(?:(?P<z>z)(?:\^(?P<pow>\d+))?)?$")


def _parse_complex(text: str) -> complex:
    t = text.strip().replace(" ", "")
    if t in ("", "+"):
        return 1.0 + 0j
    if t == "-":
        return -1.0 + 0j
    if t.startswith("(") and t.endswith(")"):
        t = t[1:-1]
    t = t.replace("i", "j")
    try:
        return complex(t)
    except ValueError as exc:
        raise ValidationError(f"cannot parse coefficient {text!r}") from exc


def _split_terms(s: str) -> list[str]:
    terms, depth, start = [], 0, 0
    for i, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch in "+-" and depth == 0 and i > start:
            prev = s[i - 1]
            if prev not in "eE(*+-":          # keep exponents and signs intact
                terms.append(s[start:i])
                start = i
    terms.append(s[start:])
    return [t for t in terms if t.strip()]


def parse_polynomial(text: str) -> np.ndarray:
    """Ascending complex coefficients of a polynomial in z."""
    s = text.strip().replace(" ", "")
    if not s:
        raise ValidationError("empty polynomial")
    coeffs: dict[int, complex] = {}
    for term in _split_terms(s):
        m = _TERM_RE.match(term)
        if not m or (m.group("coef") in (None, "") and m.group("z") is None):
            raise ValidationError(f"cannot parse polynomial term {term!r}")
        power = 0
        if m.group("z"):
            power = int(m.group("pow") or 1)
        coef = _parse_complex(m.group("coef") or "")
        coeffs[power] = coeffs.get(power, 0j) + coef
    deg = max(coeffs)
    out = np.zeros(deg + 1, dtype=complex)
    for k, v in coeffs.items():
        out[k] = v
    return out


def _split_fraction(s: str) -> tuple[str, str]:
    depth = 0
    for i, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "/" and depth == 0:
            return s[:i], s[i + 1:]
    return s, "1"


def parse_map(descriptor: str):
    """Build a map from its descriptor string."""
    kind, sep, rest = descriptor.strip().partition(":")
    if not sep:
        raise ValidationError(f"map descriptor needs a kind prefix, got {descriptor!r}")
    if kind == "veronese":
        try:
            m = int(rest)
        except ValueError as exc:
            raise ValidationError(f"bad veronese degree {rest!r}") from exc
        return veronese(m)
    if kind == "rational":
        num, den = _split_fraction(rest.strip())
        num = num[1:-1] if num.startswith("(") and num.endswith(")") else num
        den = den[1:-1] if den.startswith("(") and den.endswith(")") else den
        return rational_map(parse_polynomial(num), parse_polynomial(den))
    if kind == "pad":
        inner_desc, sep2, n_str = rest.rpartition(":")
        if not sep2:
            raise ValidationError("pad descriptor is pad:<inner>:<n>")
        try:
            n_new = int(n_str)
        except ValueError as exc:
            raise ValidationError(f"bad pad dimension {n_str!r}") from exc
        return embed_in_larger_sphere(parse_map(inner_desc), n_new)
    raise ValidationError(f"unknown map kind {kind!r}")

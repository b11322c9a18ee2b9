"""Harmonic sequences on chart grids and the identities they satisfy.

Every harmonic map into a round sphere generates a ladder of complex line
bundles spanned pointwise by sections f_p, built from f_0 = Phi by repeated
z-derivatives.  This module samples those sections on stereographic charts
with exact analytic derivatives (Taylor jets), checks the defining
differential identities as residuals, constructs conjugate fields (the
pointwise rotation exchanging the positive and negative halves of the
ladder), and pushes linearization data down the ladder to test candidate
Jacobi fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import _jets
from ._jets import Jet, jet_const, jet_var
from .errors import SolverError, ValidationError
from .maps import PaddedMap, PolynomialMap, RationalMap
from .mesh import ChartGrid, chart_grid, icosphere, stereo_to_sphere

SEQUENCE_RESIDUAL_TOL = 1e-8     # analytic derivatives: rounding only
FD_RESIDUAL_TOL = 1e-4           # Richardson-extrapolated differences


# ---------------------------------------------------------------------------
# jet evaluation of maps on charts

@dataclass(frozen=True)
class FieldContext:
    """Chart-local jets shared by map sections and candidate fields."""

    mapping: object
    side: int
    x: tuple                      # three scalar jets of the sphere position
    f0: Jet                       # vector jet of the map values
    pq: tuple | None              # homogeneous (P, Q) jets for rational maps


def _expand(scalar_jet: Jet) -> Jet:
    """Insert a component axis so a scalar jet broadcasts against vectors."""
    return Jet(scalar_jet.coef[..., None, :, :], scalar_jet.order)


def _take(j: Jet, idx) -> Jet:
    return Jet(j.coef[idx], j.order)


def _sphere_jets(z0: np.ndarray, side: int, rotation=None,
                 south: bool = False) -> tuple:
    """Jets of the three ambient coordinates of the chart preimage.

    North-type charts invert z = (X + iY)/(1 + Z) (optionally rotated);
    the south chart inverts z = (X - iY)/(1 - Z), which is the holomorphic
    coordinate 1/w of the same orientation.
    """
    Z = jet_var(z0, side)
    W = Z.conj()
    denom = Z.mul(W) + 1.0
    if south:
        raw = [Z + W, (Z - W).scale(1j), Z.mul(W) - 1.0]
    else:
        raw = [Z + W, (Z - W).scale(-1j), 1.0 - Z.mul(W)]
    comps = [r.div(denom) for r in raw]
    if rotation is not None:
        R = np.asarray(rotation)
        comps = [comps[0].scale(R[i, 0]) + comps[1].scale(R[i, 1])
                 + comps[2].scale(R[i, 2]) for i in range(3)]
    return tuple(comps)


def _poly_jet(poly, xjets: tuple, side: int) -> Jet:
    """Evaluate a trivariate polynomial on coordinate jets."""
    tops = poly.exps.max(axis=0)
    powers = []
    for axis in range(3):
        col = [jet_const(np.ones(xjets[axis].value.shape), side)]
        for _ in range(int(tops[axis])):
            col.append(col[-1].mul(xjets[axis]))
        powers.append(col)
    total = None
    for (ex, ey, ez), c in zip(poly.exps, poly.coeffs):
        term = powers[0][ex].mul(powers[1][ey]).mul(powers[2][ez]).scale(c)
        total = term if total is None else total + term
    return total


def _horner_jet(coeffs: np.ndarray, t: Jet, side: int) -> Jet:
    out = jet_const(np.full(t.value.shape, coeffs[-1], dtype=complex), side)
    for c in coeffs[-2::-1]:
        out = out.mul(t) + c
    return out


def _rational_jets(mapping: RationalMap, xjets: tuple, side: int):
    """Vector jet of a rational map's values plus homogeneous (P, Q) jets.

    Points are routed through the global chart (|t| <= 1) or its reversed-
    coefficient counterpart so every denominator stays bounded.
    """
    x1, x2, x3 = xjets
    z3 = x3.value.real
    deg = mapping.d
    pc = np.pad(np.asarray(mapping.p, dtype=complex),
                (0, deg + 1 - len(mapping.p)))
    qc = np.pad(np.asarray(mapping.q, dtype=complex),
                (0, deg + 1 - len(mapping.q)))
    npts = z3.shape[0]
    P = np.zeros((npts, side, side), dtype=complex)
    Q = np.zeros_like(P)
    for north in (True, False):
        idx = np.nonzero(z3 >= 0 if north else z3 < 0)[0]
        if idx.size == 0:
            continue
        sx1, sx2, sx3 = (_take(x1, idx), _take(x2, idx), _take(x3, idx))
        if north:
            t = (sx1 + sx2.scale(1j)).div(sx3 + 1.0)
            cp, cq = pc, qc
        else:
            t = (sx1 - sx2.scale(1j)).div(1.0 - sx3)
            cp, cq = pc[::-1], qc[::-1]
        P[idx] = _horner_jet(cp, t, side).coef
        Q[idx] = _horner_jet(cq, t, side).coef
    Pj, Qj = Jet(P, side - 1), Jet(Q, side - 1)
    return _embed_projective(Pj, Qj), (Pj, Qj)


def _embed_projective(P: Jet, Q: Jet) -> Jet:
    """Target-sphere values of the projective point [P : Q], as a vector jet."""
    Pc, Qc = P.conj(), Q.conj()
    cross = P.mul(Qc)
    a1 = cross + cross.conj()
    a2 = (cross - cross.conj()).scale(-1j)
    a3 = Q.mul(Qc) - P.mul(Pc)
    n = P.mul(Pc) + Q.mul(Qc)
    comps = [a.div(n) for a in (a1, a2, a3)]
    return _jets.jet_stack(comps)


def _context(mapping, z0: np.ndarray, side: int, rotation=None,
             south: bool = False) -> FieldContext:
    xjets = _sphere_jets(z0, side, rotation=rotation, south=south)
    if isinstance(mapping, RationalMap):
        f0, pq = _rational_jets(mapping, xjets, side)
        return FieldContext(mapping, side, xjets, f0, pq)
    if isinstance(mapping, PolynomialMap):
        comps = [_poly_jet(p, xjets, side) for p in mapping.components]
        return FieldContext(mapping, side, xjets, _jets.jet_stack(comps), None)
    if isinstance(mapping, PaddedMap):
        inner = _context(mapping.inner, z0, side, rotation=rotation,
                         south=south)
        pad = mapping.ambient_dim - inner.f0.coef.shape[-3]
        coef = np.pad(inner.f0.coef, [(0, 0)] * (inner.f0.coef.ndim - 3)
                      + [(0, pad), (0, 0), (0, 0)])
        return FieldContext(mapping, side, xjets, Jet(coef, inner.f0.order),
                            inner.pq)
    raise ValidationError(f"unsupported map type {type(mapping).__name__}")


def _split_context(mapping, points: np.ndarray, side: int):
    """Contexts over the two global charts covering arbitrary sphere points.

    Returns (contexts, index arrays); each context's base coordinate is the
    chart coordinate of its subset, with |z0| <= 1 throughout.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    north = pts[:, 2] >= 0.0
    out = []
    for mask, south in ((north, False), (~north, True)):
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            out.append((None, idx))
            continue
        p = pts[idx]
        if south:
            z0 = (p[:, 0] - 1j * p[:, 1]) / (1.0 - p[:, 2])
        else:
            z0 = (p[:, 0] + 1j * p[:, 1]) / (1.0 + p[:, 2])
        out.append((_context(mapping, z0, side, south=south), idx))
    return out


# ---------------------------------------------------------------------------
# sequence construction

@dataclass(frozen=True)
class HarmonicSequence:
    """Ladder sections sampled on one chart, with their analytic jets."""

    mapping: object
    chart: ChartGrid
    mode: str
    section_jets: tuple                  # vector jets of f_0 .. f_T
    next_density: np.ndarray | None      # |f_{T+1}|^2/|f_T|^2 samples (~0)
    terminated: bool
    termination_index: int
    fd_step: float | None = None

    @property
    def sections(self) -> tuple:
        return tuple(j.value for j in self.section_jets)

    @property
    def densities(self) -> tuple:
        squares = [_jets.hermitian_square(j).value.real
                   for j in self.section_jets]
        return tuple(squares[p + 1] / squares[p]
                     for p in range(len(squares) - 1))


def _ladder(f0: Jet, depth: int, termination_tol: float | None,
            chart_points=None):
    """Run the z-derivative recursion; returns (jets, next_density, T).

    With a termination tolerance, stops as soon as the next rung is
    uniformly below tol (relative) and reports the last kept index;
    otherwise builds exactly `depth` rungs past f_0.
    """
    jets = [f0]
    squares = [_jets.hermitian_square(f0)]
    next_density = None
    for p in range(depth):
        S = squares[p]
        floor = 1e-12 * float(np.max(S.value.real)) if p else 1e-12
        small = S.value.real < floor
        if np.any(small):
            i = int(np.argmin(S.value.real))
            where = (f", z = {chart_points[i]:.4f}"
                     if chart_points is not None else "")
            raise SolverError(
                f"harmonic sequence singular at sample {i}{where}: "
                f"|f_{p}|^2 = {S.value.real[i]:.3e}")
        T = S.dz().div(S)
        nxt = jets[p].dz() - jets[p].mul(_expand(T))
        if not np.all(np.isfinite(nxt.coef)):
            raise SolverError("harmonic sequence recursion blew up "
                                 f"at rung {p + 1}")
        Snxt = _jets.hermitian_square(nxt)
        gamma = Snxt.value.real / S.value.real
        if termination_tol is not None and \
                float(np.max(gamma)) < termination_tol ** 2:
            next_density = gamma
            return jets, next_density, p
        jets.append(nxt)
        squares.append(Snxt)
    return jets, next_density, depth


def build_sequence(mapping, chart: ChartGrid, *, mode: str = "analytic",
                   termination_tol: float = 1e-6, side: int | None = None,
                   fd_step: float = 1e-3) -> HarmonicSequence:
    """Sample the ladder f_0 .. f_T on a chart grid.

    Analytic mode evaluates exact chart jets of the map; fd mode rebuilds
    the base jets from centered finite differences with one Richardson
    step (valid to third derivatives, which covers maps into S^2).
    """
    m = mapping.m
    if side is None:
        side = m + 5
    z0 = np.asarray(chart.points, dtype=complex)
    if mode == "analytic":
        ctx = _context(mapping, z0, side, rotation=chart.rotation)
        f0 = ctx.f0
    elif mode == "fd":
        side = min(side, _jets.FD_MAX_ORDER + 1)
        f0 = _fd_f0(mapping, chart, fd_step, side)
    else:
        raise ValidationError(f"unknown derivative mode {mode!r}")
    jets, next_density, T = _ladder(f0, m + 1, termination_tol,
                                    chart_points=z0)
    return HarmonicSequence(
        mapping=mapping, chart=chart, mode=mode,
        section_jets=tuple(jets), next_density=next_density,
        terminated=next_density is not None, termination_index=T,
        fd_step=fd_step if mode == "fd" else None)


def _fd_f0(mapping, chart: ChartGrid, h: float, side: int) -> Jet:
    z0 = np.asarray(chart.points, dtype=complex)

    def sample(z):
        pts = stereo_to_sphere(z.ravel(), chart.rotation)
        vals = mapping.values(pts)
        return vals.reshape(z.shape + (vals.shape[-1],))

    coarse = sample(_jets.fd_offsets(z0, h))
    fine = sample(_jets.fd_offsets(z0, h / 2))
    # component axis to -3, stencil axis last
    coarse = np.moveaxis(coarse, -1, 1).reshape(z0.size, -1, 25)
    fine = np.moveaxis(fine, -1, 1).reshape(z0.size, -1, 25)
    return _jets.fd_jets(coarse, fine, h, side)


def default_chart(mapping, *, radius: float = 0.5, n: int = 13,
                  probe_level: int = 2) -> ChartGrid:
    """Chart centered where the ladder densities are farthest from zero.

    Probes coarse-mesh vertices, computing min_p gamma_p in round gauge,
    and centers the grid at the argmax; this keeps the grid away from
    branch points and other higher singularities.
    """
    verts = icosphere(probe_level).vertices
    m = mapping.m
    side = m + 2
    score = np.full(len(verts), np.inf)
    for ctx, idx in _split_context(mapping, verts, side):
        if ctx is None:
            continue
        try:
            jets, _, T = _ladder(ctx.f0, m, None)
        except SolverError:
            # a probe point sits on a singularity: exclude it
            score[idx] = -np.inf
            continue
        squares = np.stack([_jets.hermitian_square(j).value.real
                            for j in jets])                 # (m+1, k)
        gammas = squares[1:] / squares[:-1]
        base = (1.0 + np.abs(_chart_coord(verts[idx])) ** 2) ** 2 / 4.0
        score[idx] = np.min(gammas * base, axis=0)
    best = int(np.argmax(score))
    return chart_grid(verts[best], radius, n)


def _chart_coord(pts: np.ndarray) -> np.ndarray:
    """Coordinate of each point in whichever global chart covers it."""
    pts = np.atleast_2d(pts)
    north = pts[:, 2] >= 0
    out = np.empty(pts.shape[0], dtype=complex)
    out[north] = (pts[north, 0] + 1j * pts[north, 1]) / (1.0 + pts[north, 2])
    south = ~north
    out[south] = (pts[south, 0] - 1j * pts[south, 1]) / (1.0 - pts[south, 2])
    return out


# ---------------------------------------------------------------------------
# identity residuals

@dataclass(frozen=True)
class ResidualRow:
    identity: str
    chart_center: tuple
    max_residual: float
    converged: bool


def verify_identities(seq: HarmonicSequence) -> tuple:
    """Residuals of the four ladder identities, one row per identity.

    dbar:     d f_p / dzbar = -gamma_{p-1} f_{p-1}            (p = 1..T)
    toda:     d^2 ln gamma_p / dz dzbar = gamma_{p+1} - 2 gamma_p
              + gamma_{p-1}, with gamma_{-1} = gamma_0        (p = 0..T-1)
    orthogonality:  <f_p, f_q> = 0 Hermitian, p != q
    isotropy:       (f_p, f_q) = 0 bilinear, p, q >= 1
    """
    jets = seq.section_jets
    T = seq.termination_index
    squares = [_jets.hermitian_square(j) for j in jets]
    gamma_jets = [squares[p + 1].div(squares[p]) for p in range(T)]
    gamma_vals = [g.value.real for g in gamma_jets]

    if T >= 1:
        num = den = 0.0
        for p in range(1, T + 1):
            lhs = jets[p].dzbar().value
            rhs = -gamma_vals[p - 1][:, None] * jets[p - 1].value
            num = max(num, float(np.max(np.abs(lhs - rhs))))
            den = max(den, float(np.max(np.abs(lhs))),
                      float(np.max(np.abs(rhs))))
        dbar = num / den
    else:
        dbar = 0.0

    num = den = 0.0
    for p in range(T):
        g = gamma_jets[p]
        lhs = g.dz().div(g).coefficient(0, 1).real
        above = seq.next_density if p + 1 == T else gamma_vals[p + 1]
        if above is None:
            continue
        below = gamma_vals[0] if p == 0 else gamma_vals[p - 1]
        rhs = above - 2.0 * gamma_vals[p] + below
        num = max(num, float(np.max(np.abs(lhs - rhs))))
        den = max(den, float(np.max(np.abs(lhs))),
                  float(np.max(np.abs(rhs))), 1e-300)
    toda = num / den if den else 0.0

    values = seq.sections
    norms = [np.linalg.norm(v, axis=1) for v in values]
    ortho = 0.0
    for p in range(T + 1):
        for q in range(p + 1, T + 1):
            inner = np.abs(np.sum(values[p] * values[q].conj(), axis=1))
            ortho = max(ortho, float(np.max(inner / (norms[p] * norms[q]))))

    isot = 0.0
    for p in range(1, T + 1):
        for q in range(p, T + 1):
            inner = np.abs(np.sum(values[p] * values[q], axis=1))
            isot = max(isot, float(np.max(inner / (norms[p] * norms[q]))))

    tol = SEQUENCE_RESIDUAL_TOL if seq.mode == "analytic" else FD_RESIDUAL_TOL
    center = tuple(float(c) for c in seq.chart.center)
    return tuple(ResidualRow(name, center, res, res < tol)
                 for name, res in (("dbar", dbar), ("toda", toda),
                                   ("orthogonality", ortho),
                                   ("isotropy", isot)))


def residual_table_csv(rows) -> str:
    lines = ["identity,chart_center,max_residual,converged"]
    for r in rows:
        center = " ".join(f"{c:.6f}" for c in r.chart_center)
        lines.append(f"{r.identity},{center},{r.max_residual:.6e},"
                     f"{r.converged}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# candidate Jacobi fields

@dataclass(frozen=True)
class RotationField:
    """V = A Phi for an antisymmetric ambient generator A."""

    matrix: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("rotation generator must be square")
        if np.max(np.abs(A + A.T)) > 1e-12 * (1.0 + np.max(np.abs(A))):
            raise ValidationError("rotation generator must be antisymmetric")
        object.__setattr__(self, "matrix", A)

    def values(self, mapping, points) -> np.ndarray:
        return mapping.values(points) @ self.matrix.T

    def jet_field(self, ctx: FieldContext) -> Jet:
        coef = np.einsum("ij,njab->niab", self.matrix, ctx.f0.coef)
        return Jet(coef, ctx.f0.order)


@dataclass(frozen=True)
class MobiusField:
    """V = d/dt of the map postcomposed with a Mobius flow, at t = 0.

    The generator is a traceless 2x2 complex matrix acting on homogeneous
    target coordinates (P, Q); the derivative is evaluated in homogeneous
    form, which stays finite at every point of the sphere.
    """

    rmap: RationalMap
    generator: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.generator, dtype=complex)
        if g.shape != (2, 2):
            raise ValidationError("Mobius generator must be a 2x2 matrix")
        if abs(g[0, 0] + g[1, 1]) > 1e-12 * (1.0 + np.max(np.abs(g))):
            raise ValidationError("Mobius generator must be traceless")
        object.__setattr__(self, "generator", g)

    def values(self, mapping, points) -> np.ndarray:
        ctxs = _split_context(self.rmap, points, 2)
        pts = np.atleast_2d(points)
        out = np.empty((pts.shape[0], 3))
        for ctx, idx in ctxs:
            if ctx is None:
                continue
            out[idx] = self.jet_field(ctx).value.real
        return out

    def jet_field(self, ctx: FieldContext) -> Jet:
        if ctx.pq is None:
            raise ValidationError("Mobius fields require a rational map")
        P, Q = ctx.pq
        g = self.generator
        Pd = P.scale(g[0, 0]) + Q.scale(g[0, 1])
        Qd = P.scale(g[1, 0]) + Q.scale(g[1, 1])
        Pc, Qc, Pdc, Qdc = P.conj(), Q.conj(), Pd.conj(), Qd.conj()
        cross_d = Pd.mul(Qc) + P.mul(Qdc)        # d/dt (P Qbar)
        a1d = cross_d + cross_d.conj()
        a2d = (cross_d - cross_d.conj()).scale(-1j)
        a3d = Qd.mul(Qc) + Q.mul(Qdc) - Pd.mul(Pc) - P.mul(Pdc)
        nd = Pd.mul(Pc) + P.mul(Pdc) + Qd.mul(Qc) + Q.mul(Qdc)
        cross = P.mul(Qc)
        a1 = cross + cross.conj()
        a2 = (cross - cross.conj()).scale(-1j)
        a3 = Q.mul(Qc) - P.mul(Pc)
        n = P.mul(Pc) + Q.mul(Qc)
        n2 = n.mul(n)
        comps = [ad.mul(n) - a.mul(nd)
                 for ad, a in ((a1d, a1), (a2d, a2), (a3d, a3))]
        return _jets.jet_stack([c.div(n2) for c in comps])


@dataclass(frozen=True)
class TangentPolyField:
    """V = W - (W . Phi) Phi for polynomial ambient components W."""

    components: tuple

    def values(self, mapping, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        W = np.stack([p(pts) for p in self.components], axis=1)
        phi = mapping.values(pts)
        return W - np.sum(W * phi, axis=1, keepdims=True) * phi

    def jet_field(self, ctx: FieldContext) -> Jet:
        W = _jets.jet_stack([_poly_jet(p, ctx.x, ctx.side)
                             for p in self.components])
        radial = _jets.jet_dot(W, ctx.f0)
        return W - ctx.f0.mul(_expand(radial))


def random_tangent_field(mapping, seed: int = 42) -> TangentPolyField:
    """Random degree-one tangential field, reproducible by seed."""
    from ._poly import TrivarPoly
    rng = np.random.default_rng(seed)
    dim = mapping.ambient_dim
    exps = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    comps = tuple(TrivarPoly(exps=exps, coeffs=rng.standard_normal(4))
                  for _ in range(dim))
    return TangentPolyField(components=comps)


def integrable_jacobi(rmap: RationalMap, generator, mesh) -> np.ndarray:
    """Mesh samples of the Mobius-generated Jacobi field, mass-normalized."""
    from .fem import vertex_areas
    fld = MobiusField(rmap=rmap, generator=np.asarray(generator,
                                                      dtype=complex))
    vals = fld.values(rmap, mesh.vertices)
    weight = vertex_areas(mesh)
    norm = float(np.sqrt(np.sum(weight[:, None] * vals ** 2)))
    if norm < 1e-14:
        return np.zeros_like(vals)
    return vals / norm


# ---------------------------------------------------------------------------
# conjugate fields

@dataclass(frozen=True)
class ConjugateDecomposition:
    points: np.ndarray
    v_plus: np.ndarray         # complex (n, dim): component in span{f_1..f_m}
    v_star: np.ndarray         # real (n, dim): 2 Im V_+

    @property
    def reconstruction(self) -> np.ndarray:
        return 2.0 * self.v_plus.real


def pointwise_sections(mapping, points, depth: int | None = None,
                       side: int | None = None) -> np.ndarray:
    """Values of f_1 .. f_depth at arbitrary sphere points, (n, depth, dim)."""
    m = mapping.m
    depth = m if depth is None else depth
    side = (depth + 2) if side is None else side
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((pts.shape[0], depth, mapping.ambient_dim), dtype=complex)
    for ctx, idx in _split_context(mapping, pts, side):
        if ctx is None:
            continue
        jets, _, T = _ladder(ctx.f0, depth, None)
        if T < depth:
            raise SolverError("ladder terminated before requested depth")
        for p in range(1, depth + 1):
            out[idx, p - 1] = jets[p].value
    return out


def conjugate_field(mapping, V: np.ndarray, points) -> ConjugateDecomposition:
    """Split a tangent field into ladder halves and rotate: V* = 2 Im V_+.

    V must be pointwise orthogonal to the map values.  The projection uses
    the pointwise Hermitian-orthogonal sections f_1..f_m; it fails with an
    error where a section degenerates (branch points).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    V = np.asarray(V, dtype=float)
    phi = mapping.values(pts)
    radial = np.max(np.abs(np.sum(V * phi, axis=1)))
    if radial > 1e-8 * (1.0 + np.max(np.abs(V))):
        raise ValidationError(
            f"field is not tangent: max |V . Phi| = {radial:.3e}")
    sections = pointwise_sections(mapping, pts)
    squares = np.sum(np.abs(sections) ** 2, axis=2)          # (n, m)
    floor = 1e-12 * float(np.median(squares))
    bad = np.nonzero(np.min(squares, axis=1) < floor)[0]
    if bad.size:
        raise SolverError(
            f"ladder span degenerates at sample {bad[0]} "
            f"(branch point of the map)")
    coeff = np.einsum("nd,npd->np", V, sections.conj()) / squares
    v_plus = np.einsum("np,npd->nd", coeff, sections)
    return ConjugateDecomposition(points=pts, v_plus=v_plus,
                                  v_star=2.0 * v_plus.imag)


def _gauss_sphere(n_theta: int, n_phi: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    ct = np.repeat(nodes, n_phi)
    st = np.sqrt(1.0 - ct ** 2)
    pp = np.tile(phi, n_theta)
    pts = np.stack([st * np.cos(pp), st * np.sin(pp), ct], axis=1)
    w = np.repeat(weights, n_phi) * (2.0 * np.pi / n_phi)
    return pts, w


def energy_quadratic_form(mapping, field, *, conjugate: bool = False,
                          nodes: tuple = (64, 128)) -> float:
    """Q_E(V) = integral of |grad V|^2 - |grad Phi|^2 |V|^2, round metric.

    Evaluated by Gauss-Legendre x uniform quadrature with analytic chart
    jets, so smooth fields integrate to near machine precision; with
    `conjugate` the integrand uses V* = 2 Im V_+ instead of V.
    """
    m = mapping.m
    side = m + 3
    pts, w = _gauss_sphere(*nodes)
    total = 0.0
    rho = mapping.energy_density_values(pts)
    for ctx, idx in _split_context(mapping, pts, side):
        if ctx is None:
            continue
        V = field.jet_field(ctx)
        if conjugate:
            jets, _, T = _ladder(ctx.f0, m, None)
            v_plus = None
            for p in range(1, m + 1):
                S = _jets.hermitian_square(jets[p])
                c = _jets.jet_dot(V, jets[p].conj()).div(S)
                term = jets[p].mul(_expand(c))
                v_plus = term if v_plus is None else v_plus + term
            V = v_plus.imag().scale(2.0)
        z0 = _chart_coord(pts[idx])
        conf = (1.0 + np.abs(z0) ** 2) ** 2 / 4.0
        gz = V.coefficient(1, 0)
        gzb = V.coefficient(0, 1)
        flat = 2.0 * np.sum(np.abs(gz) ** 2 + np.abs(gzb) ** 2, axis=1)
        vals = V.value.real
        dens = conf * flat - 2.0 * rho[idx] * np.sum(vals ** 2, axis=1)
        total += float(np.sum(w[idx] * dens))
    return total


# ---------------------------------------------------------------------------
# linearized ladder (gamma-hat chain)

@dataclass(frozen=True)
class GammaHatChain:
    mapping: object
    chart: ChartGrid
    mode: str
    depth: int
    gammahats: tuple              # values of ghat_0 .. ghat_{-depth}
    dzv_residuals: tuple          # one relative residual per rung 1..depth
    coarse_residuals: tuple | None  # fd mode: residuals at the doubled step
    converged: bool
    inconclusive: bool


def _chain_residuals(f0: Jet, V: Jet, depth: int):
    """Gamma-hat recursion plus the d/dz descent-identity residuals."""
    jets, _, T = _ladder(f0, depth, None)
    if T < depth:
        raise SolverError("ladder terminated before requested depth")
    squares = [_jets.hermitian_square(j) for j in jets]
    # downward data: f_{-p} = (-1)^p conj(f_p)/|f_p|^2, gamma_{-p} = gamma_{p-1}
    f_down = [jets[0]]
    for p in range(1, depth + 1):
        f_down.append(jets[p].conj().div(_expand(squares[p]))
                      .scale((-1.0) ** p))
    gamma_down = [None] + [squares[p].div(squares[p - 1])
                           for p in range(1, depth + 1)]

    ghat0 = -_jets.jet_dot(V.dz().dzbar(), jets[0])
    ghats = [ghat0, ghat0]        # indices 0 and -1 coincide
    v_down = [V]
    for p in range(depth):
        if p >= 1:
            ghats.append((ghats[p].div(gamma_down[p])).dz().dzbar()
                         + ghats[p].scale(2.0) - ghats[p - 1])
        v_next = -(v_down[p].dzbar()
                   + f_down[p + 1].mul(_expand(ghats[p + 1]))) \
            .div(_expand(gamma_down[p + 1]))
        v_down.append(v_next)

    residuals = []
    for p in range(1, depth + 1):
        csum = None
        for q in range(1, p + 1):
            term = ghats[q].div(gamma_down[q])
            csum = term if csum is None else csum + term
        lhs = v_down[p].dz().value
        rhs = (v_down[p - 1].value
               + _expand(squares[p].dz().div(squares[p])).value * (-1.0)
               * v_down[p].value
               - _expand(csum.dz()).value * f_down[p].value)
        scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))),
                    float(np.max(np.abs(v_down[0].value))))
        residuals.append(float(np.max(np.abs(lhs - rhs))) / scale)
    return [g.value for g in ghats[:depth + 1]], residuals


def gammahat_chain(mapping, field, chart: ChartGrid, *,
                   mode: str = "analytic", depth: int | None = None,
                   fd_step: float = 2e-3) -> GammaHatChain:
    """Push a candidate Jacobi field down the ladder and test the descent law.

    The chain transports the field's second-order data (gamma-hat) along the
    negative rungs; the descent identity holds iff the field is Jacobi.  In
    fd mode the residual is recomputed at a doubled step and convergence
    under refinement is required — noise-dominated output is flagged
    inconclusive rather than passed.
    """
    m = mapping.m
    depth = m if depth is None else depth
    if depth < 1:
        raise ValidationError("chain depth must be >= 1")
    z0 = np.asarray(chart.points, dtype=complex)
    if mode == "analytic":
        side = 2 * depth + 3
        ctx = _context(mapping, z0, side, rotation=chart.rotation)
        ghats, residuals = _chain_residuals(ctx.f0, field.jet_field(ctx),
                                            depth)
        worst = max(residuals)
        return GammaHatChain(
            mapping=mapping, chart=chart, mode=mode, depth=depth,
            gammahats=tuple(g.real for g in ghats),
            dzv_residuals=tuple(residuals), coarse_residuals=None,
            converged=worst < FD_RESIDUAL_TOL, inconclusive=False)
    if mode != "fd":
        raise ValidationError(f"unknown derivative mode {mode!r}")
    if depth > 1:
        raise ValidationError("fd jets support chain depth 1 only")

    def run(h):
        side = _jets.FD_MAX_ORDER + 1
        f0 = _fd_f0(mapping, chart, h, side)
        Vj = _fd_field(mapping, field, chart, h, side)
        return _chain_residuals(f0, Vj, depth)

    ghats, fine = run(fd_step)
    _, coarse = run(2.0 * fd_step)
    decreasing = all(f <= 0.7 * c + 1e-12 for f, c in zip(fine, coarse))
    small = max(fine) < FD_RESIDUAL_TOL
    return GammaHatChain(
        mapping=mapping, chart=chart, mode=mode, depth=depth,
        gammahats=tuple(g.real for g in ghats),
        dzv_residuals=tuple(fine), coarse_residuals=tuple(coarse),
        converged=decreasing or small, inconclusive=not (decreasing or small))


def _fd_field(mapping, field, chart: ChartGrid, h: float, side: int) -> Jet:
    z0 = np.asarray(chart.points, dtype=complex)

    def sample(z):
        pts = stereo_to_sphere(z.ravel(), chart.rotation)
        vals = field.values(mapping, pts)
        return vals.reshape(z.shape + (vals.shape[-1],))

    coarse = sample(_jets.fd_offsets(z0, h))
    fine = sample(_jets.fd_offsets(z0, h / 2))
    coarse = np.moveaxis(coarse, -1, 1).reshape(z0.size, -1, 25)
    fine = np.moveaxis(fine, -1, 1).reshape(z0.size, -1, 25)
    return _jets.fd_jets(coarse, fine, h, side)

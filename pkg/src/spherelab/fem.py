"""Piecewise-linear FEM forms for the conformal Laplacian pencil.

The stiffness form discretizes the Dirichlet energy, which in two dimensions
is conformally invariant, so it never sees a density.  The conformal factor
rho enters only through the mass form (dv_g = rho dv_round), lumped by
default so the pencil matrix stays a positive diagonal even for densities
with isolated zeros (conical points are handled by a small clamp).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import SolverError, ValidationError
from .mesh import SphereMesh

_CLAMP_SCALE = 1e-10


@dataclass(frozen=True)
class Density:
    """Per-vertex conformal weight with its assembly-time clamp floor."""

    values: np.ndarray
    floor: float

    def clamped(self) -> np.ndarray:
        return np.maximum(self.values, self.floor)


def density(values, floor: float | None = None) -> Density:
    """Validate per-vertex weights and attach the clamp floor.

    The floor defaults to 1e-10 times the mean weight (falling back to an
    absolute 1e-10 for an all-zero field, so the mass form stays definite).
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValidationError(f"density must be a flat per-vertex array, got shape {v.shape}")
    if np.any(~np.isfinite(v)):
        raise ValidationError("density contains non-finite entries")
    if np.any(v < 0):
        i = int(np.argmin(v))
        raise ValidationError(f"density must be nonnegative; entry {i} is {v[i]}")
    if floor is None:
        mean = float(v.mean())
        floor = _CLAMP_SCALE * mean if mean > 0 else _CLAMP_SCALE
    return Density(values=v, floor=float(floor))


def uniform_density(mesh: SphereMesh, value: float = 1.0) -> Density:
    return density(np.full(mesh.n_vertices, float(value)))


@dataclass(frozen=True)
class SymmetricForm:
    """Sparse symmetric quadratic form on mesh vertices."""

    matrix: sp.csr_matrix
    kind: str    # "stiffness" or "mass"

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def quadratic(self, u: np.ndarray) -> float:
        return float(u @ (self.matrix @ u))


def _as_matrix(form) -> sp.spmatrix:
    return form.matrix if isinstance(form, SymmetricForm) else form


def assemble_stiffness(mesh: SphereMesh) -> SymmetricForm:
    """Cotangent stiffness form; row sums vanish, no density enters."""
    tris = mesh.triangles
    p = mesh.vertices[tris]
    areas = mesh.triangle_areas()
    bad = np.nonzero(areas < 1e-16)[0]
    if bad.size:
        raise SolverError(f"degenerate triangle {int(bad[0])} (area {areas[bad[0]]:.3e})")

    rows, cols, vals = [], [], []
    # cotangent at the vertex opposite each edge
    for opp, (a, b) in ((2, (0, 1)), (0, (1, 2)), (1, (2, 0))):
        u = p[:, a] - p[:, opp]
        v = p[:, b] - p[:, opp]
        cot = np.einsum("ti,ti->t", u, v) / (2.0 * areas)
        w = 0.5 * cot
        ia, ib = tris[:, a], tris[:, b]
        rows += [ia, ib, ia, ib]
        cols += [ib, ia, ia, ib]
        vals += [-w, -w, w, w]

    n = mesh.n_vertices
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    K.sum_duplicates()
    return SymmetricForm(matrix=K, kind="stiffness")


def vertex_areas(mesh: SphereMesh) -> np.ndarray:
    """Barycentric vertex areas: one third of each incident triangle."""
    areas = mesh.triangle_areas()
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(areas / 3.0, 3))
    return out


def assemble_mass(mesh: SphereMesh, dens: Density, consistent: bool = False) -> SymmetricForm:
    """Mass form for dv = rho dv_round; lumped (diagonal) unless asked otherwise."""
    if dens.values.shape[0] != mesh.n_vertices:
        raise ValidationError(
            f"density has {dens.values.shape[0]} entries for {mesh.n_vertices} vertices")
    rho = np.maximum(dens.values, dens.floor)
    if not consistent:
        M = sp.diags(rho * vertex_areas(mesh), format="csr")
        return SymmetricForm(matrix=M, kind="mass")

    # consistent mass with piecewise-linear density: exact triangle integrals
    # int f_a f_b rho over T for rho = sum_c rho_c f_c
    tris = mesh.triangles
    areas = mesh.triangle_areas()
    r = rho[tris]
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            if a == b:
                others = [c for c in range(3) if c != a]
                m = areas * (r[:, a] / 10.0 + r[:, others[0]] / 30.0 + r[:, others[1]] / 30.0)
            else:
                c = 3 - a - b
                m = areas * (r[:, a] / 30.0 + r[:, b] / 30.0 + r[:, c] / 60.0)
            rows.append(tris[:, a])
            cols.append(tris[:, b])
            vals.append(m)
    n = mesh.n_vertices
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    M.sum_duplicates()
    return SymmetricForm(matrix=M, kind="mass")


def area(mesh: SphereMesh, dens: Density) -> float:
    """Total conformal area, consistent with the lumped mass trace."""
    return float(np.maximum(dens.values, dens.floor) @ vertex_areas(mesh))


def even_selection(mesh: SphereMesh) -> sp.csr_matrix:
    """Columns spanning functions with u(sigma x) = u(x), one per orbit."""
    return _parity_selection(mesh, +1.0)


def odd_selection(mesh: SphereMesh) -> sp.csr_matrix:
    """Columns spanning functions with u(sigma x) = -u(x)."""
    return _parity_selection(mesh, -1.0)


def _parity_selection(mesh: SphereMesh, sign: float) -> sp.csr_matrix:
    if mesh.antipodal is None:
        raise ValidationError("mesh carries no antipodal involution")
    sigma = mesh.antipodal
    reps = np.nonzero(np.arange(mesh.n_vertices) < sigma)[0]
    n_orb = reps.size
    rows = np.concatenate([reps, sigma[reps]])
    cols = np.concatenate([np.arange(n_orb), np.arange(n_orb)])
    vals = np.concatenate([np.ones(n_orb), sign * np.ones(n_orb)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_vertices, n_orb))


def restrict(form: SymmetricForm, selection: sp.spmatrix) -> SymmetricForm:
    """Restriction S^T A S of a form to a selected subspace."""
    A = selection.T @ form.matrix @ selection
    A = sp.csr_matrix((A + A.T) * 0.5)
    return SymmetricForm(matrix=A, kind=form.kind)


def save_matrix_market(form: SymmetricForm, path: str) -> None:
    """Export the form in MatrixMarket coordinate format."""
    scipy.io.mmwrite(path, sp.coo_matrix(form.matrix), symmetry="symmetric")

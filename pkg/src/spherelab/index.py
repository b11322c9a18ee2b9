"""Spectral and energy index/nullity of harmonic maps, with inequality checks.

The spectral index counts Laplace eigenvalues below 2 in the metric whose
conformal density is the map's energy density; its nullity is the
multiplicity of 2.  The energy index/nullity count negative and near-zero
eigenvalues of the second variation of the Dirichlet energy acting on
sections of the pullback tangent bundle, discretized in per-vertex
orthonormal frames of the target tangent space.  Projective-plane variants
restrict to the antipodally even sector of a symmetric mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import eigensolve, fem, maps
from .errors import ValidationError
from .mesh import SphereMesh


@dataclass(frozen=True)
class JacobiPencil:
    """Second-variation pencil reduced to the pointwise tangent constraint.

    Vector fields V along the map obey V(x) . Phi(x) = 0; expressing V in a
    per-vertex orthonormal frame of Phi(x)-perp reduces the problem to
    (2m) * n_vertices coordinates.  `stiffness` is the reduced form of
    (grad V, grad V) - |grad Phi|^2 |V|^2 and `mass` the reduced round mass.
    """

    stiffness: sp.spmatrix
    mass: sp.spmatrix
    frames: np.ndarray          # (n_vertices, dim, dim-1)

    @property
    def reduced_dim(self) -> int:
        return self.stiffness.shape[0]

    @property
    def block_size(self) -> int:
        return self.frames.shape[2]

    def reduce(self, field_values: np.ndarray) -> np.ndarray:
        """Frame coordinates of an ambient field, shape (n*(dim-1),)."""
        coords = np.einsum("nia,ni->na", self.frames, field_values)
        return coords.ravel()

    def reconstruct(self, reduced: np.ndarray) -> np.ndarray:
        """Ambient field from frame coordinates, shape (n, dim)."""
        n, _, b = self.frames.shape
        return np.einsum("nia,na->ni", self.frames, reduced.reshape(n, b))

    def quadratic(self, field_values: np.ndarray) -> float:
        v = self.reduce(field_values)
        return float(v @ (self.stiffness @ v))

    def rayleigh(self, field_values: np.ndarray) -> float:
        v = self.reduce(field_values)
        return float((v @ (self.stiffness @ v)) / (v @ (self.mass @ v)))


@dataclass(frozen=True)
class IndexReport:
    """All indices of one map on one mesh, plus verification bookkeeping."""

    map_descriptor: str
    surface: str                # "S2" or "RP2"
    mesh_level: int
    m: int
    d: int
    ind_S: int
    nul_S: int
    ind_E: int
    nul_E: int
    stable: bool
    guards: dict = field(default_factory=dict)
    stability_flags: dict = field(default_factory=dict)
    inequalities: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "map": self.map_descriptor,
            "surface": self.surface,
            "mesh_level": self.mesh_level,
            "m": self.m,
            "d": self.d,
            "ind_S": self.ind_S,
            "nul_S": self.nul_S,
            "ind_E": self.ind_E,
            "nul_E": self.nul_E,
            "stable": self.stable,
            "guards": self.guards,
            "stability_flags": self.stability_flags,
            "inequalities": self.inequalities,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "IndexReport":
        obj = json.loads(text)
        return IndexReport(
            map_descriptor=obj["map"], surface=obj["surface"],
            mesh_level=obj["mesh_level"], m=obj["m"], d=obj["d"],
            ind_S=obj["ind_S"], nul_S=obj["nul_S"],
            ind_E=obj["ind_E"], nul_E=obj["nul_E"], stable=obj["stable"],
            guards=obj.get("guards", {}),
            stability_flags=obj.get("stability_flags", {}),
            inequalities=obj.get("inequalities", []))


# ---------------------------------------------------------------------------
# spectral index

def _check_harmonic(mapping, mesh: SphereMesh, tol: float = 1e-8) -> None:
    res = maps.harmonicity_residual(mapping, mesh.vertices[:: max(1, mesh.n_vertices // 64)])
    if res > tol:
        raise ValidationError(f"map is not harmonic (residual {res:.2e} > {tol:g})")


def _spectral_threshold(mapping, mesh: SphereMesh, guard: float | None,
                        gauge_density: fem.Density | None,
                        seed: int) -> eigensolve.ThresholdCount:
    _check_harmonic(mapping, mesh)
    rho = maps.energy_density(mapping, mesh)
    K = fem.assemble_stiffness(mesh)
    M_rho = fem.assemble_mass(mesh, rho)
    count = _spectral_count_request(mapping, mesh)
    if gauge_density is None:
        spec = eigensolve.solve_lowest(K.matrix, M_rho.matrix, count, seed=seed)
        return eigensolve.count_threshold(spec, 2.0, guard=guard)
    M_g = fem.assemble_mass(mesh, gauge_density)
    shifted = (K.matrix - 2.0 * M_rho.matrix).tocsr()
    spec = eigensolve.solve_lowest(shifted, M_g.matrix, count, seed=seed)
    return eigensolve.count_threshold(spec, 0.0, guard=guard if guard else 0.1)


def spectral_index(mapping, mesh: SphereMesh, guard: float | None = None,
                   *, gauge_density: fem.Density | None = None,
                   seed: int = eigensolve.DEFAULT_SEED) -> tuple[int, int]:
    """(ind_S, nul_S): eigenvalues below 2 / equal to 2 in the map's metric.

    With `gauge_density` set, the same counts are produced from the shifted
    pencil (K - 2 M_rho, M_gauge) at threshold 0 — the conformal-covariance
    form, used to confirm gauge independence.
    """
    tc = _spectral_threshold(mapping, mesh, guard, gauge_density, seed)
    return tc.below, tc.at


def _spectral_count_request(mapping, mesh: SphereMesh) -> int:
    # enough room past the threshold-2 cluster: m^2 below + (2m+1) at + margin
    m = getattr(mapping, "m", 1)
    want = m * m + (2 * m + 1) + 12
    return min(want, max(mesh.n_vertices // 2 - 1, 2) - 1)


def _rp2_spectral_threshold(mapping, mesh: SphereMesh, guard: float | None,
                            seed: int) -> eigensolve.ThresholdCount:
    if not mapping.antipodally_even:
        raise ValidationError("map is not antipodally even; no projective quotient")
    if mesh.antipodal is None:
        raise ValidationError("mesh carries no antipodal involution")
    _check_harmonic(mapping, mesh)
    rho = maps.energy_density(mapping, mesh)
    K = fem.assemble_stiffness(mesh)
    M_rho = fem.assemble_mass(mesh, rho)
    S = fem.even_selection(mesh)
    K_e = fem.restrict(K, S)
    M_e = fem.restrict(M_rho, S)
    count = _spectral_count_request(mapping, mesh)
    spec = eigensolve.solve_lowest(K_e.matrix, M_e.matrix, count, seed=seed)
    return eigensolve.count_threshold(spec, 2.0, guard=guard)


def rp2_spectral_index(mapping, mesh: SphereMesh, guard: float | None = None,
                       *, seed: int = eigensolve.DEFAULT_SEED) -> tuple[int, int]:
    """Spectral index/nullity in the antipodally even sector."""
    tc = _rp2_spectral_threshold(mapping, mesh, guard, seed)
    return tc.below, tc.at


# ---------------------------------------------------------------------------
# energy (Jacobi) pencil

def jacobi_pencil(mapping, mesh: SphereMesh) -> JacobiPencil:
    """Assemble the reduced second-variation pencil of the Dirichlet energy."""
    values = mapping.values(mesh.vertices)
    norms = np.linalg.norm(values, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-10:
        raise ValidationError("map values leave the unit sphere; cannot build frames")
    frames = maps.orthonormal_complement_frames(values)
    n, dim, b = frames.shape

    K = fem.assemble_stiffness(mesh).matrix.tocsr()
    K.sort_indices()
    a = fem.vertex_areas(mesh)
    rho = mapping.energy_density_values(mesh.vertices)
    w = 2.0 * rho * a                      # lumped |grad Phi|^2 weight

    rows = np.repeat(np.arange(n), np.diff(K.indptr))
    cols = K.indices
    blocks = np.einsum("nia,nib->nab", frames[rows], frames[cols])
    blocks = blocks * K.data[:, None, None]
    diag_pos = np.flatnonzero(rows == cols)
    blocks[diag_pos] -= w[rows[diag_pos], None, None] * np.eye(b)[None, :, :]
    A = sp.bsr_matrix((blocks, cols, K.indptr), shape=(n * b, n * b)).tocsr()
    A = (A + A.T) * 0.5
    B = sp.diags(np.repeat(a, b)).tocsr()
    return JacobiPencil(stiffness=A, mass=B, frames=frames)


def jacobi_spectrum(mapping, mesh: SphereMesh, count: int,
                    seed: int = eigensolve.DEFAULT_SEED) -> eigensolve.SpectrumResult:
    """Lowest eigenvalues of the reduced second-variation pencil."""
    pencil = jacobi_pencil(mapping, mesh)
    return eigensolve.solve_lowest(pencil.stiffness, pencil.mass, count, seed=seed)


def _energy_count_request(mapping, mesh: SphereMesh, count: int | None) -> int:
    if count is not None:
        return count
    m = getattr(mapping, "m", 1)
    d = maps.degree(mapping, mesh)
    want = (4 * d + 2 * m * m) + 2 * (m - 1) * m * m + 16
    dim = 2 * m * mesh.n_vertices
    return min(want, max(dim // 2 - 1, 2) - 1)


# Kernel eigenvalues discretize to O(h^2) ~ 0.1 at level 3, while true
# negative modes sit at -2 or below and the first positive modes above 3.5,
# so a wide band classifies correctly across levels 3-5.
DEFAULT_ENERGY_GUARD = 0.5


def _energy_threshold(mapping, mesh: SphereMesh, guard: float,
                      count: int | None, seed: int) -> eigensolve.ThresholdCount:
    _check_harmonic(mapping, mesh)
    spec = jacobi_spectrum(mapping, mesh, _energy_count_request(mapping, mesh, count),
                           seed=seed)
    return eigensolve.count_threshold(spec, 0.0, guard=guard)


def energy_index(mapping, mesh: SphereMesh, guard: float = DEFAULT_ENERGY_GUARD,
                 *, count: int | None = None,
                 seed: int = eigensolve.DEFAULT_SEED) -> tuple[int, int]:
    """(ind_E, nul_E): negative and near-zero second-variation eigenvalues."""
    tc = _energy_threshold(mapping, mesh, guard, count, seed)
    return tc.below, tc.at


def rp2_energy_index(mapping, mesh: SphereMesh, guard: float = DEFAULT_ENERGY_GUARD,
                     *, count: int | None = None,
                     seed: int = eigensolve.DEFAULT_SEED):
    """Even-sector (ind_E, nul_E) plus the halving certificate.

    Returns ((ind_E, nul_E), halving) where halving reports the full-sphere
    counts and whether the even sector carries exactly half of each.
    """
    if not mapping.antipodally_even:
        raise ValidationError("map is not antipodally even; no projective quotient")
    if mesh.antipodal is None:
        raise ValidationError("mesh carries no antipodal involution")
    pencil = jacobi_pencil(mapping, mesh)
    b = pencil.block_size
    S_even = _sector_selection(mesh, pencil, even=True)
    A_e = (S_even.T @ pencil.stiffness @ S_even).tocsr()
    B_e = (S_even.T @ pencil.mass @ S_even).tocsr()
    n_req = _energy_count_request(mapping, mesh, count)
    req_even = min(max(n_req // 2 + 8, 8), max(A_e.shape[0] // 2 - 1, 2) - 1)
    spec_e = eigensolve.solve_lowest(A_e, B_e, req_even, seed=seed)
    tc_e = eigensolve.count_threshold(spec_e, 0.0, guard=guard)

    spec_full = eigensolve.solve_lowest(pencil.stiffness, pencil.mass, n_req, seed=seed)
    tc_full = eigensolve.count_threshold(spec_full, 0.0, guard=guard)
    halving = {
        "full_ind_E": tc_full.below,
        "full_nul_E": tc_full.at,
        "even_ind_E": tc_e.below,
        "even_nul_E": tc_e.at,
        "ok": (2 * tc_e.below == tc_full.below) and (2 * tc_e.at == tc_full.at),
    }
    return (tc_e.below, tc_e.at), halving


def _sector_selection(mesh: SphereMesh, pencil: JacobiPencil, even: bool) -> sp.spmatrix:
    """Vertex parity selection expanded to frame-coordinate blocks.

    Frames depend only on the map value, which antipodally even maps share
    between x and sigma(x), so the vertex-level selection acts blockwise.
    """
    S = fem.even_selection(mesh) if even else fem.odd_selection(mesh)
    return sp.kron(S, sp.eye(pencil.block_size), format="csr")


# ---------------------------------------------------------------------------
# inequality verification

def _ineq(name: str, lhs, rhs, strict: bool = False) -> dict:
    ok = lhs > rhs if strict else lhs >= rhs
    return {"name": name, "pass": bool(ok), "lhs": float(lhs), "rhs": float(rhs)}


def verify_inequalities(report: IndexReport) -> list[dict]:
    """Evaluate every applicable integer index inequality for the report.

    S2-domain inequalities and RP2-domain inequalities are disjoint except
    for the two ratio bounds, which hold on both surfaces.
    """
    m, d = report.m, report.d
    ind_S, nul_S = report.ind_S, report.nul_S
    ind_E, nul_E = report.ind_E, report.nul_E
    n_plus_1 = 2 * m + 1
    out = [
        _ineq("index_ratio_ambient", ind_S * n_plus_1, ind_E),
        _ineq("index_nullity_ratio", ind_S * n_plus_1, ind_E + nul_E - m * n_plus_1),
    ]
    if report.surface == "S2":
        out.append(_ineq("energy_vs_spectral_factor", ind_E, 2 * (m - 1) * ind_S))
        out.append(_ineq("spectral_vs_degree_nullity", ind_S, 2 * d - nul_S + 2))
        out.append(_ineq("degree_vs_nullity_quadratic", 8 * d, nul_S * nul_S - 1))
        out.append(_ineq("energy_nullity_floor", nul_E, 4 * d + 2 * m * m))
    else:
        out.append(_ineq("projective_degree_bound", 2 * ind_S, d - 1))
    return out


# ---------------------------------------------------------------------------
# report assembly

def compute_index_report(mapping, mesh: SphereMesh, surface: str = "S2",
                         *, descriptor: str = "", guard: float | None = None,
                         energy_guard: float = DEFAULT_ENERGY_GUARD,
                         seed: int = eigensolve.DEFAULT_SEED) -> IndexReport:
    """Run both eigenproblems and the inequality suite for one map."""
    if surface not in ("S2", "RP2"):
        raise ValidationError(f"surface must be 'S2' or 'RP2', got {surface!r}")
    d = maps.degree(mapping, mesh)
    m = getattr(mapping, "m", 1)
    flags: dict = {}
    if surface == "S2":
        tc_s = _spectral_threshold(mapping, mesh, guard, None, seed)
        tc_e = _energy_threshold(mapping, mesh, energy_guard, None, seed)
        ind_S, nul_S = tc_s.below, tc_s.at
        ind_E, nul_E = tc_e.below, tc_e.at
        flags["spectral_count_stable"] = tc_s.stable
        flags["energy_count_stable"] = tc_e.stable
        flags["parity_even_counts"] = (ind_E % 2 == 0) and (nul_E % 2 == 0)
    else:
        tc_s = _rp2_spectral_threshold(mapping, mesh, guard, seed)
        ind_S, nul_S = tc_s.below, tc_s.at
        (ind_E, nul_E), halving = rp2_energy_index(mapping, mesh, energy_guard, seed=seed)
        flags["spectral_count_stable"] = tc_s.stable
        flags["rp2_halving"] = halving["ok"]
        flags["halving_detail"] = halving
    report = IndexReport(
        map_descriptor=descriptor, surface=surface, mesh_level=mesh.level,
        m=m, d=d, ind_S=ind_S, nul_S=nul_S, ind_E=ind_E, nul_E=nul_E,
        stable=all(v for v in flags.values() if isinstance(v, bool)),
        guards={"spectral": guard if guard is not None else 0.05 * 2.0,
                "energy": energy_guard},
        stability_flags=flags)
    ineqs = verify_inequalities(report)
    return IndexReport(**{**report.__dict__, "inequalities": ineqs})


def so_generator_fields(mapping, mesh: SphereMesh) -> np.ndarray:
    """Fields A.Phi for a basis of antisymmetric generators, (n_gen, n, dim).

    These generate target rotations, hence lie in the kernel of the second
    variation; their Rayleigh quotients certify the solver's zero cluster.
    """
    values = mapping.values(mesh.vertices)
    dim = values.shape[1]
    fields = []
    for i in range(dim):
        for j in range(i + 1, dim):
            f = np.zeros_like(values)
            f[:, i] = -values[:, j]
            f[:, j] = values[:, i]
            fields.append(f)
    return np.stack(fields)


def jacobi_residual(mapping, mesh: SphereMesh,
                    field_values: np.ndarray) -> float:
    """Scale-free kernel residual of a candidate Jacobi field.

    Reduces the field to frame coordinates v and returns
    ||A v||_{M^-1} / (||v||_M * Lambda), where A, M are the reduced
    second-variation pencil and Lambda a Gershgorin bound on the pencil
    spectrum radius.  Exact discrete kernel vectors score at rounding
    level, smooth Jacobi fields at discretization level (~1e-4 on a
    level-4 mesh), and generic tangent fields at order one.

    The field must already be tangent: reconstruction from frame
    coordinates has to reproduce it.
    """
    field = np.asarray(field_values, dtype=float)
    pencil = jacobi_pencil(mapping, mesh)
    v = pencil.reduce(field)
    back = pencil.reconstruct(v)
    scale = float(np.max(np.abs(field)))
    if scale == 0.0:
        raise ValidationError("candidate Jacobi field is identically zero")
    if float(np.max(np.abs(field - back))) > 1e-8 * scale:
        raise ValidationError(
            "candidate Jacobi field is not tangent to the map")
    A, M = pencil.stiffness, pencil.mass
    mdiag = M.diagonal()
    absA = abs(A)
    radii = np.asarray(absA.sum(axis=1)).ravel()
    bound = float(np.max(radii / mdiag))
    Av = A @ v
    num = float(np.sqrt(Av @ (Av / mdiag)))
    den = float(np.sqrt(v @ (M @ v)))
    return num / (den * bound)

"""Normalized-eigenvalue maximization over conformal densities.

The scale-invariant functional is lambda_bar_k = lambda_k * Area, taken over
metrics rho * g_round in the round conformal class of the sphere or, through
antipodally even densities on the double cover, of the projective plane.  Its
suprema are 8*pi*k on the sphere and 4*pi*(2k+1) on the projective plane, and
neither is attained for k >= 2: maximizing families degenerate by blowing up
k-1 small round spheres ("bubbles") glued to a round base.

This module provides the two complementary experiments:

* ``limit_family`` builds the canonical degenerating densities - equal-area
  bubbles on a sphere base, or area-2u bubbles (antipodal pairs upstairs)
  against an area-3u projective base - and tabulates lambda_bar_k along a
  decreasing schedule of bubble scales, approaching the supremum from below.
* ``ascend`` climbs lambda_bar_k directly by projected subgradient ascent on
  the per-vertex log-density, using the Hadamard perturbation formula
  d(lambda_bar) = lambda * integral(d(rho) * (1 - Area * u^2)) for a
  mass-normalized eigenfunction u; when lambda_k is (nearly) multiple the
  step is the maximin convex combination of the cluster members' gradients,
  a Clarke subgradient of the cluster minimum that vanishes only at
  extremal metrics.

Densities stay positive by construction (multiplicative updates), and the
total area is renormalized after every accepted step, so trajectories report
lambda_bar directly as the k-th eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .eigensolve import DEFAULT_SEED, SpectrumResult, solve_lowest
from .errors import SolverError, ValidationError
from .fem import (Density, area, assemble_mass, assemble_stiffness, density,
                  even_selection, restrict, uniform_density, vertex_areas)
from .mesh import SphereMesh, icosphere, icosphere_polar

__all__ = [
    "AscentState",
    "BubbleSpec",
    "LimitFamily",
    "ascend",
    "bubble_density",
    "bubble_profile",
    "family_csv",
    "family_density",
    "lambda_bar",
    "lambda_bar_ceiling",
    "lambda_bar_derivative",
    "limit_family",
    "random_state",
    "trajectory_csv",
    "uniform_state",
]

#: Discretization slack applied to the theoretical suprema: a computed
#: normalized eigenvalue above ceiling * (1 + slack) indicates an
#: under-resolved mesh rather than a genuine metric, and is rejected.
CEILING_SLACK = 0.05

#: Relative gap under which lambda_k is considered non-simple (the analytic
#: derivative formula is then refused; only one-sided derivatives exist).
CLUSTER_REL_TOL = 0.02

#: Relative window around lambda_k whose members join the maximin ascent
#: direction.  Wide enough to catch eigenvalues that could swap with
#: lambda_k during a step, but deliberately much narrower than
#: CLUSTER_REL_TOL: eigenvalues a few percent above lambda_k must be free
#: to drift down toward it (maximizers equalize the cluster), which a
#: direction forcing the whole wide cluster upward would forbid.
ASCENT_WINDOW = 2e-3

#: Initial sup-norm step for log-density ascent.
DEFAULT_ASCENT_STEP = 0.5

#: Line search gives up once the step underflows this bound.
MIN_ASCENT_STEP = 1e-4

#: Pole-concentration factor for the projective-plane two-piece family,
#: whose bubble pair sits at the z-poles: the projective plane admits no
#: conformal rebalancing (only rotations commute with the antipodal map),
#: so small bubbles are resolved by shrinking the mesh near the poles
#: instead.  Factor 12 puts the polar edge length near 0.0014 at level 6.
DEFAULT_RP2_CONCENTRATION = 12.0

_SURFACES = ("s2", "rp2")

# Bubble sites used by the canonical families: far-apart unit vectors, the
# first k-1 of which host the bubbles (projective families use antipodal
# pairs of each site).
_S2_SITES = np.array([
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0],
])
_RP2_SITES = np.array([
    [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
])


def _normalize_surface(surface: str) -> str:
    s = str(surface).lower()
    if s not in _SURFACES:
        raise ValidationError(f"surface must be one of {_SURFACES}, got {surface!r}")
    return s


def lambda_bar_ceiling(surface: str, k: int) -> float:
    """Supremum of lambda_k * Area: 8*pi*k on S^2, 4*pi*(2k+1) on RP^2."""
    if k < 1:
        raise ValidationError(f"eigenvalue rank k must be >= 1, got {k}")
    if _normalize_surface(surface) == "s2":
        return 8.0 * math.pi * k
    return 4.0 * math.pi * (2 * k + 1)


# ---------------------------------------------------------------------------
# bubble densities


@dataclass(frozen=True)
class BubbleSpec:
    """One concentrating round-sphere summand of a conformal density.

    ``center`` is the unit vector the bubble concentrates at, ``target_area``
    the area it carries in the limit, and ``scale`` the stereographic-chart
    scale epsilon: the bubble profile is the area-target_area round metric of
    a sphere seen through the chart at ``center``, occupying an angular
    radius of roughly 2 * epsilon.
    """

    center: np.ndarray
    target_area: float
    scale: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if c.shape != (3,):
            raise ValidationError(f"bubble center must be a 3-vector, got shape {c.shape}")
        norm = float(np.linalg.norm(c))
        if abs(norm - 1.0) > 1e-8:
            raise ValidationError(f"bubble center must be a unit vector, |c| = {norm:.6g}")
        object.__setattr__(self, "center", c / norm)
        if not self.target_area > 0:
            raise ValidationError(f"bubble target_area must be positive, got {self.target_area}")
        if not self.scale > 0:
            raise ValidationError(f"bubble scale must be positive, got {self.scale}")


def bubble_profile(spec: BubbleSpec, points: np.ndarray) -> np.ndarray:
    """Round-gauge bubble density at unit-sphere ``points``.

    In the stereographic chart z at the bubble center the flat-gauge profile
    is (A/pi) * eps^2 / (eps^2 + |z|^2)^2; dividing by the round conformal
    factor 4 / (1 + |z|^2)^2 and substituting |z|^2 = (1-u)/(1+u) for
    u = <point, center> gives the closed form below, positive and smooth on
    the whole sphere with exact total integral A.
    """
    u = np.asarray(points, dtype=float) @ spec.center
    eps2 = spec.scale ** 2
    den = eps2 * (1.0 + u) + (1.0 - u)
    return (spec.target_area / math.pi) * eps2 / den ** 2


def _check_separation(specs: list[BubbleSpec]) -> None:
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            dot = float(np.clip(specs[i].center @ specs[j].center, -1.0, 1.0))
            angle = math.acos(dot)
            needed = 4.0 * max(specs[i].scale, specs[j].scale)
            if angle <= needed:
                raise ValidationError(
                    f"bubble charts overlap: centers {i} and {j} are "
                    f"{angle:.4f} rad apart but need > {needed:.4f} "
                    f"(4 x the larger scale)")


def bubble_density(mesh: SphereMesh, base: Density, specs) -> Density:
    """Base density plus one concentrating round-sphere profile per spec.

    Each bubble integrates to its target area exactly in the continuum; the
    discrete quadrature is checked per call and a bubble the mesh cannot
    resolve to 25% is rejected rather than silently mis-weighted.
    """
    specs = list(specs)
    for s in specs:
        if not isinstance(s, BubbleSpec):
            raise ValidationError(f"specs must be BubbleSpec instances, got {type(s).__name__}")
    if not specs:
        return base
    _check_separation(specs)
    areas = vertex_areas(mesh)
    values = base.values.copy()
    for i, spec in enumerate(specs):
        profile = bubble_profile(spec, mesh.vertices)
        discrete = float(profile @ areas)
        if abs(discrete - spec.target_area) > 0.25 * spec.target_area:
            raise SolverError(
                f"mesh level {mesh.level} does not resolve bubble {i} at "
                f"scale {spec.scale:g}: discrete area {discrete:.4g} vs "
                f"target {spec.target_area:g}")
        values += profile
    return density(values, floor=base.floor)


# ---------------------------------------------------------------------------
# normalized eigenvalues


def _require_even(mesh: SphereMesh, values: np.ndarray) -> None:
    if mesh.antipodal is None:
        raise ValidationError("projective-plane computation needs a mesh with "
                              "an antipodal involution")
    diff = float(np.max(np.abs(values[mesh.antipodal] - values)))
    scale = float(np.max(np.abs(values))) or 1.0
    if diff > 1e-8 * scale:
        raise ValidationError(
            f"projective-plane density must be antipodally even; "
            f"max |rho(sigma x) - rho(x)| = {diff:.3e}")


def _surface_spectrum(mesh: SphereMesh, dens: Density, surface: str, count: int,
                      seed: int) -> tuple[SpectrumResult, np.ndarray, float]:
    """Spectrum, full-vertex eigenvectors, and cover area for a surface."""
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh, dens)
    cover_area = area(mesh, dens)
    # Laplace pencils are nonnegative (the stiffness form is a sum of element
    # Gram matrices), so pass the rigorous floor: the default Gershgorin
    # bound collapses on pole-concentrated meshes with tiny mass entries.
    if surface == "rp2":
        _require_even(mesh, dens.values)
        S = even_selection(mesh)
        spec = solve_lowest(restrict(K, S).matrix, restrict(M, S).matrix,
                            count, seed=seed, spectral_floor=0.0)
        vectors = S @ spec.eigenvectors
    else:
        spec = solve_lowest(K.matrix, M.matrix, count, seed=seed,
                            spectral_floor=0.0)
        vectors = spec.eigenvectors
    return spec, vectors, cover_area


def lambda_bar(mesh: SphereMesh, dens: Density, k: int, surface: str = "s2",
               *, seed: int = DEFAULT_SEED) -> float:
    """Normalized eigenvalue lambda_k(rho) * Area(rho), scale-invariant.

    Eigenvalues are indexed from lambda_0 = 0, so k >= 1.  On the projective
    plane the density must be antipodally even; the spectrum is taken in the
    even sector and the area is half the cover integral.
    """
    surface = _normalize_surface(surface)
    if k < 1:
        raise ValidationError(f"eigenvalue rank k must be >= 1, got {k}")
    spec, _, cover_area = _surface_spectrum(mesh, dens, surface, k + 3, seed)
    surface_area = cover_area if surface == "s2" else 0.5 * cover_area
    value = float(spec.eigenvalues[k]) * surface_area
    ceiling = lambda_bar_ceiling(surface, k)
    if value > ceiling * (1.0 + CEILING_SLACK):
        raise SolverError(
            f"lambda_bar_{k} = {value:.4f} exceeds the supremum "
            f"{ceiling:.4f} beyond the {CEILING_SLACK:.0%} discretization "
            f"allowance; the mesh is too coarse for this density")
    return value


# ---------------------------------------------------------------------------
# canonical degenerating families


@dataclass(frozen=True)
class LimitFamily:
    """lambda_bar_k along a decreasing schedule of bubble scales."""

    surface: str
    k: int
    mesh_level: int
    epsilons: tuple
    lambda_bars: tuple
    target: float

    @property
    def rows(self) -> list:
        return list(zip(self.epsilons, self.lambda_bars))


def family_density(mesh: SphereMesh, surface: str, k: int, eps: float) -> Density:
    """The canonical k-piece degenerating density at bubble scale ``eps``.

    On the sphere: a round base of area 1 plus k-1 bubbles of area 1, so all
    k limit pieces are identical spheres.  On the projective plane: a round
    projective base of area 3 plus k-1 bubbles of area 2, each realized
    upstairs as an antipodal pair of area-2 spherical bubbles so the density
    stays even; the limit pieces then carry the extremal 3:2 area ratio.

    For k = 2 on the sphere the returned density is the Moebius-balanced
    representative of the same metric: pulling the bubble-plus-base metric
    back by the conformal dilation of ratio sqrt(eps) turns it into two
    antipodal bubbles of scale sqrt(eps) each (the uniform base is itself a
    scale-1 bubble, and a scale-a bubble at one pole equals a scale-1/a
    bubble at the other).  The metric - hence every eigenvalue - is exactly
    the one parametrized by ``eps``, but both pieces now live at the mesh-
    resolvable scale sqrt(eps) instead of eps against 1.  No such rebalancing
    exists on the projective plane (only rotations commute with the antipodal
    map), so concentrate the mesh at the bubble axis instead; see
    ``mesh.icosphere_polar``.
    """
    surface = _normalize_surface(surface)
    if k < 2:
        raise ValidationError(f"a degenerating family needs k >= 2, got {k}")
    if not eps > 0:
        raise ValidationError(f"bubble scale must be positive, got {eps}")
    if surface == "s2":
        if k == 2:
            root = math.sqrt(eps)
            north, south = _S2_SITES[0], _S2_SITES[1]
            zero = density(np.zeros(mesh.n_vertices))
            return bubble_density(mesh, zero, [BubbleSpec(north, 1.0, root),
                                               BubbleSpec(south, 1.0, root)])
        if k - 1 > len(_S2_SITES):
            raise ValidationError(f"no placement table for {k - 1} bubbles")
        base = uniform_density(mesh, 1.0 / (4.0 * math.pi))
        specs = [BubbleSpec(site, 1.0, eps) for site in _S2_SITES[:k - 1]]
    else:
        if k - 1 > len(_RP2_SITES):
            raise ValidationError(f"no placement table for {k - 1} bubble pairs")
        base = uniform_density(mesh, 6.0 / (4.0 * math.pi))
        specs = []
        for site in _RP2_SITES[:k - 1]:
            specs.append(BubbleSpec(site, 2.0, eps))
            specs.append(BubbleSpec(-site, 2.0, eps))
    return bubble_density(mesh, base, specs)


def limit_family(surface: str, k: int, eps_list, *, mesh_level: int = 6,
                 concentration: float | None = None,
                 seed: int = DEFAULT_SEED) -> LimitFamily:
    """Tabulate lambda_bar_k along the canonical degenerating family.

    ``eps_list`` must be positive and strictly decreasing; the normalized
    eigenvalue climbs toward (but never reaches) the supremum as the bubbles
    concentrate.

    ``concentration`` draws mesh vertices toward the z-poles (see
    ``mesh.icosphere_polar``).  It defaults to 1 (a uniform icosphere)
    except for the projective-plane k = 2 family, whose single bubble pair
    sits exactly at the poles and cannot be conformally rebalanced; there
    the default is ``DEFAULT_RP2_CONCENTRATION``.
    """
    surface = _normalize_surface(surface)
    if k < 2:
        raise ValidationError(f"a degenerating family needs k >= 2, got {k}")
    eps = [float(e) for e in eps_list]
    if not eps:
        raise ValidationError("eps_list must not be empty")
    if any(e <= 0 for e in eps):
        raise ValidationError("bubble scales must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError(f"eps_list must be strictly decreasing, got {eps}")
    if concentration is None:
        concentration = (DEFAULT_RP2_CONCENTRATION
                         if surface == "rp2" and k == 2 else 1.0)
    mesh = icosphere_polar(mesh_level, float(concentration))
    values = []
    for e in eps:
        dens = family_density(mesh, surface, k, e)
        values.append(lambda_bar(mesh, dens, k, surface, seed=seed))
    return LimitFamily(surface=surface, k=k, mesh_level=mesh_level,
                       epsilons=tuple(eps), lambda_bars=tuple(values),
                       target=lambda_bar_ceiling(surface, k))


def family_csv(family: LimitFamily) -> str:
    """Two-column CSV ``epsilon,lambda_bar`` (gnuplot-ready)."""
    lines = ["epsilon,lambda_bar"]
    for e, v in family.rows:
        lines.append(f"{e:.12g},{v:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# log-density ascent


@dataclass(frozen=True)
class AscentState:
    """One iterate of the log-density ascent.

    ``log_density`` is per-vertex; the density exp(log_density) is positive
    by construction and renormalized to surface area 1, so ``lambda_bar``
    equals ``lambda_k`` up to the recorded ``area`` rounding.  ``cluster_size``
    is the number of eigenvalues treated as coincident with lambda_k when the
    ascent direction was formed.
    """

    log_density: np.ndarray
    iteration: int
    lambda_k: float
    area: float
    lambda_bar: float
    step: float
    cluster_size: int

    def __post_init__(self):
        phi = np.asarray(self.log_density, dtype=float)
        if phi.ndim != 1 or not np.all(np.isfinite(phi)):
            raise ValidationError("log-density must be a finite per-vertex array")
        object.__setattr__(self, "log_density", phi)

    def density(self) -> Density:
        return density(np.exp(self.log_density))


def _cover_target(surface: str) -> float:
    # Surface area is renormalized to 1; on the cover that is 2 for RP^2.
    return 1.0 if surface == "s2" else 2.0


def _renormalize(phi: np.ndarray, areas: np.ndarray, target: float) -> np.ndarray:
    phi = np.clip(phi, -60.0, 60.0)
    total = float(np.exp(phi) @ areas)
    if not total > 0:
        raise SolverError("density integral vanished during renormalization")
    return phi + math.log(target / total)


class _Iterate:
    """Spectrum bookkeeping at one log-density (internal to ascend)."""

    def __init__(self, mesh, surface, k, phi, seed):
        self.phi = phi
        rho = np.exp(phi)
        dens = density(rho)
        spec, vectors, cover_area = _surface_spectrum(
            mesh, dens, surface, k + 7, seed)
        self.rho = rho
        self.cover_area = cover_area
        self.lambda_k = float(spec.eigenvalues[k])
        factor = 1.0 if surface == "s2" else 0.5
        self.area = factor * cover_area
        self.lambda_bar = self.lambda_k * self.area
        window = ASCENT_WINDOW * max(self.lambda_k, 1e-12)
        self.cluster = [i for i in range(1, len(spec.eigenvalues))
                        if abs(spec.eigenvalues[i] - self.lambda_k) <= window]
        self.vectors = vectors[:, self.cluster]


def _ascent_direction(it: _Iterate, areas: np.ndarray) -> np.ndarray:
    """Maximin Clarke subgradient of the cluster minimum, in log-density space.

    For each mass-normalized eigenfunction u_i in the cluster the derivative
    of lambda_bar along a log-density step d is <g_i, d> with per-vertex
    gradient g_i = lambda * rho * a * (1 - Area * u_i^2).  Because lambda_k
    is the minimum of its cluster, the useful search direction is the convex
    combination d = sum_j w_j g_j whose worst member derivative
    min_i <g_i, d> is largest - a linear program in the handful of cluster
    weights.  (The plain cluster mean can raise the cluster average while
    sinking its minimum, stalling the line search well short of the
    maximizer.)  At an extremal metric the member gradients sum to zero -
    the eigenspace squares sum to a constant - so no convex combination has
    a positive worst case and the zero direction is returned: ascent stalls
    exactly at maximizers.
    """
    m = it.vectors.shape[1]
    weights = it.rho * areas             # quadrature weights of d(rho)
    grads = it.lambda_k * weights[:, None] * (
        1.0 - it.cover_area * it.vectors ** 2)
    if m == 1:
        return grads[:, 0]

    def cluster_matrix(d):
        # First-order matrix of the cluster along log-density step d: its
        # eigenvalues are the derivatives of the sorted cluster eigenvalues.
        D = weights * d
        S = it.vectors.T @ (D[:, None] * it.vectors)
        return it.lambda_k * (float(D.sum()) * np.eye(m) - it.cover_area * S)

    fields = [grads[:, i] for i in range(m)]
    direction = None
    for _ in range(4):
        t, w = _maximin_weights(fields)
        if w is None:                    # solver hiccup: fall back to the mean
            return grads @ np.full(m, 1.0 / m)
        if t <= 0.0:                     # maximin-stationary: no ascent left
            return np.zeros(grads.shape[0])
        direction = np.column_stack(fields) @ w
        worst = cluster_matrix(direction)
        vals, vecs = np.linalg.eigh(worst)
        if vals[0] >= 0.5 * t:           # predicted ascent survives rotation
            break
        combo = it.vectors @ vecs[:, 0]  # violated direction: add its cut
        fields.append(it.lambda_k * weights * (1.0 - it.cover_area * combo ** 2))
    return direction


def _maximin_weights(fields) -> tuple:
    """Convex weights maximizing the worst inner product against ``fields``.

    Solves max_t { t : (G w)_i >= t, w >= 0, sum w = 1 } for the Gram matrix
    G of the candidate gradient fields; returns (t, w) in the units of G, or
    (0, None) if the program fails.
    """
    F = np.column_stack(fields)
    G = F.T @ F
    p = G.shape[0]
    scale = float(np.max(np.abs(G))) or 1.0
    cost = np.zeros(p + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([-G / scale, np.ones((p, 1))])
    a_eq = np.hstack([np.ones((1, p)), np.zeros((1, 1))])
    result = linprog(cost, A_ub=a_ub, b_ub=np.zeros(p), A_eq=a_eq,
                     b_eq=np.ones(1), bounds=[(0.0, 1.0)] * p + [(None, None)],
                     method="highs")
    if not result.success:
        return 0.0, None
    w = np.maximum(result.x[:p], 0.0)
    total = float(w.sum())
    if total <= 0.0:
        return 0.0, None
    return float(result.x[-1]) * scale, w / total


def uniform_state(mesh: SphereMesh, surface: str, k: int, *,
                  seed: int = DEFAULT_SEED) -> AscentState:
    """Ascent start at the round density, renormalized to surface area 1."""
    surface = _normalize_surface(surface)
    areas = vertex_areas(mesh)
    phi = _renormalize(np.zeros(mesh.n_vertices), areas, _cover_target(surface))
    return _state_from(mesh, surface, k, phi, 0, DEFAULT_ASCENT_STEP, seed)


def random_state(mesh: SphereMesh, surface: str, k: int, *,
                 seed: int = DEFAULT_SEED, amplitude: float = 0.5) -> AscentState:
    """Random smooth ascent start: a quadratic-in-position log-density.

    The log-density is x' Q x (plus a linear term on the sphere; omitted on
    the projective plane so the density stays antipodally even) with entries
    drawn from the seeded generator and rescaled to the requested sup-norm
    ``amplitude``.
    """
    surface = _normalize_surface(surface)
    if amplitude < 0:
        raise ValidationError(f"amplitude must be nonnegative, got {amplitude}")
    rng = np.random.default_rng(seed)
    x = mesh.vertices
    Q = rng.standard_normal((3, 3))
    Q = 0.5 * (Q + Q.T)
    phi = np.einsum("ni,ij,nj->n", x, Q, x)
    if surface == "s2":
        phi = phi + x @ rng.standard_normal(3)
    phi -= phi.mean()
    top = float(np.max(np.abs(phi)))
    if top > 0 and amplitude > 0:
        phi *= amplitude / top
    else:
        phi = np.zeros_like(phi)
    areas = vertex_areas(mesh)
    phi = _renormalize(phi, areas, _cover_target(surface))
    return _state_from(mesh, surface, k, phi, 0, DEFAULT_ASCENT_STEP, seed)


def _state_from(mesh, surface, k, phi, iteration, step, seed) -> AscentState:
    it = _Iterate(mesh, surface, k, phi, seed)
    return AscentState(log_density=phi, iteration=iteration,
                       lambda_k=it.lambda_k, area=it.area,
                       lambda_bar=it.lambda_bar, step=step,
                       cluster_size=len(it.cluster))


def ascend(mesh: SphereMesh, surface: str, k: int, state0: AscentState,
           steps: int, *, seed: int = DEFAULT_SEED,
           min_step: float = MIN_ASCENT_STEP) -> list:
    """Backtracking subgradient ascent of lambda_bar_k on the log-density.

    Returns the trajectory of states starting at ``state0``; lambda_bar is
    nondecreasing along it by construction.  Each iteration renormalizes the
    trial density to surface area 1, accepts the first step (halving from the
    carried step size) that increases lambda_bar, and grows the step on
    success; when the line search exhausts ``min_step`` the ascent has
    reached a point where the cluster subgradient gives no increase - the
    trajectory ends at the best state found.
    """
    surface = _normalize_surface(surface)
    if k < 1:
        raise ValidationError(f"eigenvalue rank k must be >= 1, got {k}")
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    if state0.log_density.shape[0] != mesh.n_vertices:
        raise ValidationError(
            f"state has {state0.log_density.shape[0]} vertices, mesh has "
            f"{mesh.n_vertices}")

    areas = vertex_areas(mesh)
    target = _cover_target(surface)
    phi = _renormalize(state0.log_density, areas, target)
    current = _Iterate(mesh, surface, k, phi, seed)
    ceiling = lambda_bar_ceiling(surface, k) * (1.0 + CEILING_SLACK)
    trajectory = [AscentState(log_density=phi, iteration=state0.iteration,
                              lambda_k=current.lambda_k, area=current.area,
                              lambda_bar=current.lambda_bar, step=state0.step,
                              cluster_size=len(current.cluster))]
    step = float(state0.step)

    for it in range(1, steps + 1):
        grad = _ascent_direction(current, areas)
        top = float(np.max(np.abs(grad)))
        if top == 0.0:
            break
        direction = grad / top

        accepted = None
        while step >= min_step:
            trial_phi = _renormalize(current.phi + step * direction, areas, target)
            trial = _Iterate(mesh, surface, k, trial_phi, seed)
            if trial.lambda_bar > current.lambda_bar * (1.0 + 1e-12):
                accepted = trial
                break
            step *= 0.5
        if accepted is None:
            break
        if accepted.lambda_bar > ceiling:
            raise SolverError(
                f"ascent produced lambda_bar = {accepted.lambda_bar:.4f} above "
                f"the supremum allowance {ceiling:.4f}; the mesh is too "
                f"coarse for this density")
        current = accepted
        step = min(step * 1.5, 1.0)
        trajectory.append(AscentState(
            log_density=current.phi, iteration=trajectory[0].iteration + it,
            lambda_k=current.lambda_k, area=current.area,
            lambda_bar=current.lambda_bar, step=step,
            cluster_size=len(current.cluster)))
    return trajectory


def trajectory_csv(states) -> str:
    """Ascent trajectory as ``iter,lambda_k,area,lambda_bar,step`` CSV."""
    lines = ["iter,lambda_k,area,lambda_bar,step"]
    for s in states:
        lines.append(f"{s.iteration},{s.lambda_k:.12g},{s.area:.12g},"
                     f"{s.lambda_bar:.12g},{s.step:.6g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# perturbation formula


def lambda_bar_derivative(mesh: SphereMesh, dens: Density, k: int,
                          direction, surface: str = "s2", *,
                          seed: int = DEFAULT_SEED) -> float:
    """Analytic derivative of lambda_bar_k along a density perturbation.

    For a simple eigenvalue with mass-normalized eigenfunction u the Hadamard
    formula gives d(lambda_bar) = lambda * integral(d(rho) * (1 - Area u^2));
    on the projective plane (cover-normalized u, cover integrals) the same
    expression holds with an overall factor 1/2.  Requires lambda_k simple:
    a cluster within the ascent tolerance is rejected because only one-sided
    directional derivatives exist there.
    """
    surface = _normalize_surface(surface)
    if k < 1:
        raise ValidationError(f"eigenvalue rank k must be >= 1, got {k}")
    delta = np.asarray(direction, dtype=float)
    if delta.shape != (mesh.n_vertices,):
        raise ValidationError(
            f"direction must be per-vertex with shape ({mesh.n_vertices},), "
            f"got {delta.shape}")
    if surface == "rp2":
        _require_even(mesh, delta)
    spec, vectors, cover_area = _surface_spectrum(mesh, dens, surface, k + 3, seed)
    vals = spec.eigenvalues
    lam = float(vals[k])
    gap = min(lam - vals[k - 1], vals[k + 1] - lam)
    if gap <= CLUSTER_REL_TOL * max(lam, 1e-12):
        raise ValidationError(
            f"lambda_{k} = {lam:.6g} is not simple (neighbour gap {gap:.3g}); "
            f"the perturbation formula needs a simple eigenvalue")
    u = vectors[:, k]
    areas = vertex_areas(mesh)
    factor = 1.0 if surface == "s2" else 0.5
    return factor * lam * float((delta * areas) @ (1.0 - cover_area * u ** 2))

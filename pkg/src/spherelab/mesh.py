"""Triangulated unit spheres with exact antipodal symmetry, plus stereographic
chart grids for smooth derivative checks.

The refinement family is built by midpoint subdivision of a centrally
symmetric icosahedron followed by radial projection, so every level inherits
a fixed-point-free antipodal involution.  Chart grids are deliberately
independent of the triangulation: identity checks on local charts need clean
grid stencils, not mesh stencils.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

# Centrally symmetric icosahedron: cyclic permutations of (0, +-1, +-phi).
_ICO_VERTS = np.array(
    [
        [-1.0, _PHI, 0.0], [1.0, _PHI, 0.0], [-1.0, -_PHI, 0.0], [1.0, -_PHI, 0.0],
        [0.0, -1.0, _PHI], [0.0, 1.0, _PHI], [0.0, -1.0, -_PHI], [0.0, 1.0, -_PHI],
        [_PHI, 0.0, -1.0], [_PHI, 0.0, 1.0], [-_PHI, 0.0, -1.0], [-_PHI, 0.0, 1.0],
    ]
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


@dataclass(frozen=True)
class SphereMesh:
    """Unit-sphere triangulation with an optional antipodal involution.

    vertices: (V, 3) unit vectors; triangles: (F, 3) index triples oriented
    counterclockwise seen from outside; antipodal: permutation array with
    vertices[antipodal[i]] == -vertices[i], or None.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    level: int
    antipodal: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def edges(self) -> np.ndarray:
        """Sorted unique undirected edges, shape (E, 2)."""
        e = np.vstack([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                       self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def is_manifold(self) -> bool:
        """Every undirected edge belongs to exactly two triangles."""
        e = np.vstack([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                       self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


@dataclass(frozen=True)
class ChartGrid:
    """Square grid of stereographic coordinates around a chart center.

    The chart maps z = 0 to ``center`` with projection point at the antipode:
    preimage(z) = rotation @ (2 Re z, 2 Im z, 1 - |z|^2) / (1 + |z|^2).
    """

    center: np.ndarray
    points: np.ndarray           # complex, shape (n*n,), row-major over the square
    spacing: float
    radius: float
    n: int
    rotation: np.ndarray = field(repr=False, default=None)

    def sphere_points(self) -> np.ndarray:
        """Preimages of the grid coordinates on the unit sphere, (n*n, 3)."""
        return stereo_to_sphere(self.points, self.rotation)


def rotation_to_pole(center) -> np.ndarray:
    """Rotation R with R @ (0,0,1) = center, chosen deterministically."""
    c = np.asarray(center, dtype=float)
    nrm = np.linalg.norm(c)
    if not np.isfinite(nrm) or abs(nrm - 1.0) > 1e-8:
        raise ValidationError(f"chart center must be a unit vector, |c| = {nrm}")
    c = c / nrm
    e3 = np.array([0.0, 0.0, 1.0])
    if c[2] > 1.0 - 1e-12:
        return np.eye(3)
    if c[2] < -1.0 + 1e-12:
        # half turn about the x-axis
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(e3, c)
    s = np.linalg.norm(axis)
    axis = axis / s
    cos, sin = c[2], s
    kx = np.array([[0.0, -axis[2], axis[1]],
                   [axis[2], 0.0, -axis[0]],
                   [-axis[1], axis[0], 0.0]])
    return np.eye(3) + sin * kx + (1.0 - cos) * (kx @ kx)


def stereo_to_sphere(z, rotation=None) -> np.ndarray:
    """Inverse stereographic map, z = 0 -> pole, z = infinity -> antipode."""
    z = np.asarray(z, dtype=complex)
    denom = 1.0 + np.abs(z) ** 2
    pts = np.stack([2.0 * z.real, 2.0 * z.imag, 1.0 - np.abs(z) ** 2], axis=-1)
    pts = pts / denom[..., None]
    if rotation is not None:
        pts = pts @ np.asarray(rotation).T
    return pts


def sphere_to_stereo(points, rotation=None) -> np.ndarray:
    """Forward stereographic coordinate of unit vectors (antipode of the pole
    projects to infinity)."""
    p = np.asarray(points, dtype=float)
    if rotation is not None:
        p = p @ np.asarray(rotation)   # rotate pole back to e3
    denom = 1.0 + p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return (p[..., 0] + 1j * p[..., 1]) / denom


def icosphere(level: int) -> SphereMesh:
    """Icosahedral sphere mesh with 10*4^level + 2 vertices.

    Midpoint subdivision + normalization preserves the central symmetry of
    the icosahedron, so the antipodal involution exists at every level; it is
    recovered by nearest-vertex matching and then verified exactly.
    """
    if not isinstance(level, (int, np.integer)) or not 0 <= level <= 8:
        raise ValidationError(f"subdivision level must be an integer in [0, 8], got {level!r}")

    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()

    for _ in range(level):
        verts, faces = _subdivide(verts, faces)

    faces = _orient_outward(verts, faces)
    anti = _match_antipodal(verts)
    verts.setflags(write=False)
    faces.setflags(write=False)
    anti.setflags(write=False)
    return SphereMesh(vertices=verts, triangles=faces, level=level, antipodal=anti)


def icosphere_polar(level: int, concentration: float) -> SphereMesh:
    """Icosphere with vertices drawn toward both poles of the z-axis.

    The colatitude measured from the nearest pole is remapped by
    theta -> (pi/2) g(t) with t = theta/(pi/2) and g(t) = t/c + (1-1/c) t^3,
    so local vertex spacing at either pole shrinks isotropically by the
    concentration factor c while the equator coarsens by at most 3x; the
    radial/tangential anisotropy of the map is (1 + 3(c-1)t^2)/(1 + (c-1)t^2),
    below 3 for every concentration.  The remap is odd under the antipodal
    map, so the involution of the uniform icosphere survives exactly.  Use it
    to resolve densities that concentrate at an antipodal pair of points,
    where conformal rebalancing is unavailable.
    """
    if not concentration >= 1.0:
        raise ValidationError(
            f"concentration must be >= 1, got {concentration!r}")
    base = icosphere(level)
    if concentration == 1.0:
        return base
    c = float(concentration)
    z = base.vertices[:, 2]
    a = np.abs(np.clip(z, -1.0, 1.0))
    t = np.arccos(a) / (np.pi / 2.0)          # 0 at the nearest pole
    g = t / c + (1.0 - 1.0 / c) * t ** 3
    theta = (np.pi / 2.0) * g
    new_z = np.sign(z) * np.cos(theta)
    sin_old = np.sqrt(np.maximum(1.0 - a * a, 0.0))
    scale = np.where(sin_old > 1e-15, np.sin(theta) / np.maximum(sin_old, 1e-300), 1.0)
    verts = np.column_stack([base.vertices[:, 0] * scale,
                             base.vertices[:, 1] * scale, new_z])
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    verts.setflags(write=False)
    return SphereMesh(vertices=verts, triangles=base.triangles, level=level,
                      antipodal=base.antipodal)


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    """One midpoint-split + normalize pass."""
    verts = list(verts)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        if key not in midpoint:
            v = verts[i] + verts[j]
            verts.append(v / np.linalg.norm(v))
            midpoint[key] = len(verts) - 1
        return midpoint[key]

    new_faces = np.empty((4 * len(faces), 3), dtype=faces.dtype)
    for t, (a, b, c) in enumerate(faces):
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces[4 * t:4 * t + 4] = [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), new_faces


def _orient_outward(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = verts[faces]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    outward = np.einsum("fi,fi->f", normal, p.mean(axis=1))
    flipped = faces.copy()
    flip = outward < 0
    flipped[flip] = flipped[flip][:, [0, 2, 1]]
    return flipped


def _match_antipodal(verts: np.ndarray) -> np.ndarray:
    tree = cKDTree(verts)
    dist, idx = tree.query(-verts, k=1)
    if np.max(dist) > 1e-10:
        raise ValidationError("mesh is not centrally symmetric: no antipodal partner "
                              f"within 1e-10 (worst {np.max(dist):.3e})")
    if np.any(idx[idx] != np.arange(len(verts))) or np.any(idx == np.arange(len(verts))):
        raise ValidationError("antipodal matching is not a fixed-point-free involution")
    return idx


def chart_grid(center, radius: float, n: int) -> ChartGrid:
    """n x n stereographic grid filling [-radius, radius]^2, z = 0 at center."""
    if radius <= 0:
        raise ValidationError(f"chart radius must be positive, got {radius}")
    if n < 3:
        raise ValidationError(f"grid needs n >= 3 points per side, got {n}")
    ticks = np.linspace(-radius, radius, n)
    re, im = np.meshgrid(ticks, ticks, indexing="ij")
    pts = (re + 1j * im).ravel()
    rot = rotation_to_pole(center)
    c = np.asarray(center, dtype=float)
    return ChartGrid(center=c / np.linalg.norm(c), points=pts,
                     spacing=2.0 * radius / (n - 1), radius=float(radius), n=int(n),
                     rotation=rot)


def save_off(mesh: SphereMesh, path: str) -> None:
    """Write the mesh in OFF format."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.edges().shape[0]}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")

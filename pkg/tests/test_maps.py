"""Tests for harmonic map construction, evaluation, and the descriptor grammar."""

import numpy as np
import pytest

from spherelab import fem, maps
from spherelab.errors import ValidationError
from spherelab.mesh import icosphere, stereo_to_sphere


def random_unit_points(n, seed=42):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def mesh3():
    return icosphere(3)


@pytest.fixture(scope="module")
def mesh4():
    return icosphere(4)


# ---------------------------------------------------------------------------
# polynomial maps

class TestVeronese:
    def test_unit_sphere_constraint_100_random_points(self):
        pts = random_unit_points(100)
        for m in range(1, 5):
            vals = maps.veronese(m).values(pts)
            assert np.max(np.abs(np.sum(vals**2, axis=1) - 1.0)) < 1e-12

    def test_m1_components_span_coordinates(self):
        pts = random_unit_points(40)
        vals = maps.veronese(1).values(pts)
        # columns must be an orthogonal change of basis of (x, y, z)
        coeff, *_ = np.linalg.lstsq(pts, vals, rcond=None)
        assert np.allclose(pts @ coeff, vals, atol=1e-12)
        assert np.allclose(coeff.T @ coeff, np.eye(3), atol=1e-10)

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_energy_density_constant(self, mesh3, m):
        rho = maps.veronese(m).energy_density_values(mesh3.vertices)
        assert np.max(np.abs(rho - m * (m + 1) / 2.0)) < 1e-10

    def test_component_count(self):
        for m in range(1, 5):
            assert maps.veronese(m).ambient_dim == 2 * m + 1

    def test_antipodal_evenness_flag(self):
        assert maps.veronese(2).antipodally_even is True
        assert maps.veronese(3).antipodally_even is False
        assert maps.veronese(4).antipodally_even is True

    def test_even_map_is_exactly_even(self):
        pts = random_unit_points(50, seed=7)
        v = maps.veronese(2)
        assert np.array_equal(v.values(pts), v.values(-pts))

    def test_odd_map_is_exactly_odd(self):
        pts = random_unit_points(50, seed=8)
        v = maps.veronese(3)
        assert np.array_equal(v.values(pts), -v.values(-pts))

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_degree_formula(self, mesh3, m):
        assert maps.degree(maps.veronese(m), mesh3) == m * (m + 1) // 2

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            maps.veronese(0)
        with pytest.raises(ValidationError):
            maps.veronese(5)


class TestPolynomialJacobian:
    def test_finite_difference_match(self):
        pts = random_unit_points(20, seed=3)
        v = maps.veronese(3)
        J = v.tangent_jacobian(pts)
        frames = maps.orthonormal_complement_frames(pts)
        h = 1e-6
        for a in range(2):
            e = frames[:, :, a]
            xp = pts + h * e
            xm = pts - h * e
            fd = (v.values(xp) - v.values(xm)) / (2 * h)
            assert np.max(np.abs(J[:, a, :] - fd)) < 1e-7

    def test_sample_orthogonality(self):
        pts = random_unit_points(30, seed=4)
        for m in (1, 2, 3, 4):
            v = maps.veronese(m)
            for p in pts:
                s = v.sample_at(p)
                assert np.abs(s.value @ s.value - 1.0) < 1e-12
                assert np.max(np.abs(s.jacobian @ s.value)) < 1e-10

    def test_jacobian_recovers_density(self):
        pts = random_unit_points(30, seed=5)
        v = maps.veronese(2)
        J = v.tangent_jacobian(pts)
        rho = 0.5 * np.einsum("naj,naj->n", J, J)
        assert np.allclose(rho, v.energy_density_values(pts), atol=1e-10)


class TestFrames:
    def test_orthonormal_and_tangent(self):
        pts = random_unit_points(50, seed=6)
        F = maps.orthonormal_complement_frames(pts)
        gram = np.einsum("nia,nib->nab", F, F)
        assert np.max(np.abs(gram - np.eye(2))) < 1e-12
        assert np.max(np.abs(np.einsum("nia,ni->na", F, pts))) < 1e-12

    def test_deterministic(self):
        pts = random_unit_points(10, seed=9)
        assert np.array_equal(maps.orthonormal_complement_frames(pts),
                              maps.orthonormal_complement_frames(pts))


# ---------------------------------------------------------------------------
# rational maps

class TestRationalMap:
    def test_identity_density_is_one(self, mesh3):
        ident = maps.rational_map([0, 1])
        rho = ident.energy_density_values(mesh3.vertices)
        assert np.max(np.abs(rho - 1.0)) < 1e-12

    def test_identity_values(self):
        pts = random_unit_points(50, seed=11)
        ident = maps.rational_map([0, 1])
        assert np.max(np.abs(ident.values(pts) - pts)) < 1e-12

    def test_z_squared_energy(self, mesh3):
        r2 = maps.rational_map([0, 0, 1])
        rho = r2.energy_density_values(mesh3.vertices)
        a = fem.vertex_areas(mesh3)
        integral = 4.0 * np.pi * float(rho @ a) / float(a.sum())
        assert abs(integral - 8 * np.pi) / (8 * np.pi) < 0.01

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_monomial_degree(self, mesh3, d):
        coeffs = [0] * d + [1]
        assert maps.degree(maps.rational_map(coeffs), mesh3) == d

    def test_unit_sphere_everywhere_including_poles(self, mesh3):
        r = maps.rational_map([1, 0, 0, 1], [0, 1])   # (1 + z^3)/z: pole at 0
        vals = r.values(mesh3.vertices)
        assert np.max(np.abs(np.sum(vals**2, axis=1) - 1.0)) < 1e-12
        assert np.all(np.isfinite(r.energy_density_values(mesh3.vertices)))

    def test_south_chart_matches_direct_formula(self):
        pts = random_unit_points(200, seed=12)
        pts = pts[pts[:, 2] < -0.1]
        r = maps.rational_map([1, 2, 1j], [3, 0, 0, 1])
        z = (pts[:, 0] + 1j * pts[:, 1]) / (1.0 + pts[:, 2])
        f = (1 + 2 * z + 1j * z**2) / (3 + z**3)
        direct = np.stack([2 * f.real, 2 * f.imag, 1 - np.abs(f) ** 2], axis=1)
        direct /= (1.0 + np.abs(f) ** 2)[:, None]
        assert np.max(np.abs(r.values(pts) - direct)) < 1e-10

    def test_jacobian_finite_difference(self):
        # points well inside the north chart; step in the chart coordinate
        rng = np.random.default_rng(13)
        t = 0.5 * (rng.standard_normal(30) + 1j * rng.standard_normal(30))
        t = t[np.abs(t) < 0.9][:15]        # stay inside the north chart
        pts = stereo_to_sphere(t)
        r = maps.rational_map([0.5, -1, 0, 2], [1, 1j])
        J = r.tangent_jacobian(pts)
        lam = 2.0 / (1.0 + np.abs(t) ** 2)
        h = 1e-6
        fd_u = (r.values(stereo_to_sphere(t + h)) - r.values(stereo_to_sphere(t - h))) / (2 * h)
        fd_v = (r.values(stereo_to_sphere(t + 1j * h)) - r.values(stereo_to_sphere(t - 1j * h))) / (2 * h)
        assert np.max(np.abs(J[:, 0, :] * lam[:, None] - fd_u)) < 1e-6
        assert np.max(np.abs(J[:, 1, :] * lam[:, None] - fd_v)) < 1e-6

    def test_jacobian_conformal_and_tangent(self):
        pts = random_unit_points(60, seed=14)
        r = maps.rational_map([1, 0, 1j, 2])
        J = r.tangent_jacobian(pts)
        vals = r.values(pts)
        rho = r.energy_density_values(pts)
        assert np.max(np.abs(np.einsum("naj,nj->na", J, vals))) < 1e-10
        assert np.allclose(np.einsum("nj,nj->n", J[:, 0], J[:, 1]), 0.0, atol=1e-10)
        assert np.allclose(np.einsum("nj,nj->n", J[:, 0], J[:, 0]), rho, atol=1e-9)
        assert np.allclose(np.einsum("nj,nj->n", J[:, 1], J[:, 1]), rho, atol=1e-9)

    def test_validation(self):
        with pytest.raises(ValidationError):
            maps.rational_map([0], [0])
        with pytest.raises(ValidationError):
            maps.rational_map([2], [1])            # constant
        with pytest.raises(ValidationError):
            maps.rational_map([1, 1], [2, 2])      # shared root -1


class TestMobius:
    def test_identity_is_same_map(self):
        r = maps.rational_map([0, 0, 1])
        out = maps.mobius_postcompose(r, 1, 0, 0, 1)
        pts = random_unit_points(30, seed=15)
        assert np.max(np.abs(out.values(pts) - r.values(pts))) < 1e-12

    def test_dilation_preserves_degree(self, mesh3):
        r = maps.rational_map([0, 0, 1])
        out = maps.mobius_postcompose(r, 2, 0, 0, 1)
        assert out.d == 2
        assert maps.degree(out, mesh3) == 2

    def test_postcomposition_formula(self):
        r = maps.rational_map([1, 0, 1], [0, 1])   # (1+z^2)/z
        a, b, c, d = 1 + 1j, 2, -1, 0.5j
        out = maps.mobius_postcompose(r, a, b, c, d)
        pts = random_unit_points(40, seed=16)
        pts = pts[np.abs(pts[:, 2]) < 0.8]
        z = (pts[:, 0] + 1j * pts[:, 1]) / (1.0 + pts[:, 2])
        f = (1 + z**2) / z
        g = (a * f + b) / (c * f + d)
        expect = np.stack([2 * g.real, 2 * g.imag, 1 - np.abs(g) ** 2], axis=1)
        expect /= (1.0 + np.abs(g) ** 2)[:, None]
        assert np.max(np.abs(out.values(pts) - expect)) < 1e-10

    def test_singular_matrix_rejected(self):
        r = maps.rational_map([0, 1])
        with pytest.raises(ValidationError):
            maps.mobius_postcompose(r, 1, 2, 2, 4)


# ---------------------------------------------------------------------------
# harmonicity

class TestHarmonicity:
    def test_veronese_residual_small(self):
        pts = random_unit_points(60, seed=17)
        for m in range(1, 5):
            assert maps.harmonicity_residual(maps.veronese(m), pts) < 1e-10

    def test_rational_certified_zero(self):
        pts = random_unit_points(60, seed=18)
        assert maps.harmonicity_residual(maps.rational_map([0, 0, 1]), pts) == 0.0

    def test_perturbed_component_fails(self):
        pts = random_unit_points(60, seed=19)
        v = maps.veronese(2)
        bad_comp = list(v.components)
        # add a non-harmonic cubic bump to one component
        from spherelab._poly import TrivarPoly
        bump = TrivarPoly(exps=np.array([[3, 0, 0]]), coeffs=np.array([0.5]))
        bad_comp[0] = TrivarPoly(
            exps=np.vstack([bad_comp[0].exps, bump.exps]),
            coeffs=np.concatenate([bad_comp[0].coeffs, bump.coeffs]))
        bad = maps.PolynomialMap(m=2, components=tuple(bad_comp),
                                 scale=v.scale, antipodally_even=False)
        assert maps.harmonicity_residual(bad, pts) > 0.1

    def test_degree_error_message(self, mesh3):
        v = maps.veronese(2)
        bad_rho = type("Fake", (), {
            "energy_density_values": lambda self, pts: 1.7 * np.ones(len(pts))})()
        with pytest.raises(ValidationError, match="map not harmonic or mesh too coarse"):
            maps.degree(bad_rho, mesh3)


class TestEigenfunctionProperty:
    """Components of a harmonic map are eigenvalue-2 eigenfunctions of the
    Laplacian weighted by the map's own energy density."""

    @pytest.mark.parametrize("descriptor", ["veronese:2", "rational:z^2"])
    def test_lambda_two_residual(self, mesh3, mesh4, descriptor):
        mp = maps.parse_map(descriptor)
        rels = []
        for mesh in (mesh3, mesh4):
            K = fem.assemble_stiffness(mesh)
            M = fem.assemble_mass(mesh, maps.energy_density(mp, mesh))
            F = mp.values(mesh.vertices)
            R = K.matrix @ F - 2.0 * (M.matrix @ F)
            rels.append(np.max(np.linalg.norm(R, axis=0)
                               / np.linalg.norm(K.matrix @ F, axis=0)))
        assert rels[1] < 0.02
        assert rels[1] < 0.5 * rels[0]      # second-order refinement


# ---------------------------------------------------------------------------
# padding

class TestPadding:
    def test_pad_veronese1_into_s4(self, mesh3):
        padded = maps.embed_in_larger_sphere(maps.veronese(1), 4)
        assert padded.ambient_dim == 5
        assert padded.m == 2
        assert padded.linearly_full is False
        vals = padded.values(mesh3.vertices)
        assert vals.shape == (mesh3.n_vertices, 5)
        assert np.all(vals[:, 3:] == 0.0)
        rho = padded.energy_density_values(mesh3.vertices)
        assert np.max(np.abs(rho - 1.0)) < 1e-10
        assert maps.degree(padded, mesh3) == 1

    def test_pad_validation(self):
        with pytest.raises(ValidationError):
            maps.embed_in_larger_sphere(maps.veronese(1), 2)
        with pytest.raises(ValidationError):
            maps.embed_in_larger_sphere(maps.veronese(1), 5)

    def test_nested_padding_flattens(self):
        p1 = maps.embed_in_larger_sphere(maps.veronese(1), 4)
        p2 = maps.embed_in_larger_sphere(p1, 6)
        assert p2.inner is maps.veronese(1)
        assert p2.ambient_dim == 7

    def test_padded_sample(self):
        padded = maps.embed_in_larger_sphere(maps.rational_map([0, 1]), 4)
        s = padded.sample_at([0.0, 0.0, 1.0])
        assert s.value.shape == (5,)
        assert s.jacobian.shape == (2, 5)
        assert np.max(np.abs(s.jacobian @ s.value)) < 1e-10


# ---------------------------------------------------------------------------
# descriptor grammar

class TestParseMap:
    def test_veronese(self):
        assert maps.parse_map("veronese:3") is maps.veronese(3)

    def test_rational_monomial(self):
        r = maps.parse_map("rational:z^3/1")
        assert isinstance(r, maps.RationalMap)
        assert r.d == 3
        assert r.p == (0j, 0j, 0j, 1 + 0j)

    def test_rational_default_denominator(self):
        r = maps.parse_map("rational:z^2")
        assert r.q == (1 + 0j,)

    def test_rational_full_fraction(self):
        r = maps.parse_map("rational:(z^2+1)/(z^2-1)")
        assert r.p == (1 + 0j, 0j, 1 + 0j)
        assert r.q == (-1 + 0j, 0j, 1 + 0j)

    def test_complex_coefficients(self):
        r = maps.parse_map("rational:(1+2i)z^2-3z+0.5i")
        assert r.p == (0.5j, -3 + 0j, 1 + 2j)

    def test_pad(self):
        p = maps.parse_map("pad:veronese:1:4")
        assert isinstance(p, maps.PaddedMap)
        assert p.ambient_dim == 5

    def test_pad_rational(self):
        p = maps.parse_map("pad:rational:z^2:4")
        assert p.inner.d == 2

    def test_errors(self):
        for bad in ["veronese", "veronese:x", "sphere:1", "rational:",
                    "pad:veronese:1", "rational:z^/1"]:
            with pytest.raises(ValidationError):
                maps.parse_map(bad)

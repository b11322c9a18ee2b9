"""Eigenvalue maximization: bubbles, degenerating families, subgradient ascent."""

import math

import numpy as np
import pytest

from spherelab import optimize
from spherelab.errors import SolverError, ValidationError
from spherelab.fem import density, uniform_density, vertex_areas
from spherelab.mesh import icosphere, icosphere_polar
from spherelab.optimize import (AscentState, BubbleSpec, ascend,
                                bubble_density, bubble_profile, family_csv,
                                family_density, lambda_bar,
                                lambda_bar_ceiling, lambda_bar_derivative,
                                limit_family, random_state, trajectory_csv,
                                uniform_state)


@pytest.fixture(scope="module")
def m3():
    return icosphere(3)


@pytest.fixture(scope="module")
def m4():
    return icosphere(4)


@pytest.fixture(scope="module")
def m5():
    return icosphere(5)


# ---------------------------------------------------------------------------
# ceilings


@pytest.mark.parametrize("k, value", [(1, 8 * math.pi), (2, 16 * math.pi),
                                      (3, 24 * math.pi)])
def test_sphere_ceiling(k, value):
    assert lambda_bar_ceiling("s2", k) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("k, value", [(1, 12 * math.pi), (2, 20 * math.pi),
                                      (3, 28 * math.pi)])
def test_projective_ceiling(k, value):
    assert lambda_bar_ceiling("rp2", k) == pytest.approx(value, rel=1e-15)


def test_ceiling_rejects_bad_rank():
    with pytest.raises(ValidationError):
        lambda_bar_ceiling("s2", 0)


def test_ceiling_rejects_bad_surface():
    with pytest.raises(ValidationError):
        lambda_bar_ceiling("torus", 1)


# ---------------------------------------------------------------------------
# bubble profiles


def test_bubble_spec_normalizes_center():
    spec = BubbleSpec([0.0, 0.0, 1.0 + 5e-9], 1.0, 0.1)
    assert np.linalg.norm(spec.center) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("center", [[0, 0, 2.0], [1, 1, 1], [0.5, 0, 0]])
def test_bubble_spec_rejects_non_unit_center(center):
    with pytest.raises(ValidationError):
        BubbleSpec(center, 1.0, 0.1)


def test_bubble_spec_rejects_bad_shape():
    with pytest.raises(ValidationError):
        BubbleSpec([0.0, 0.0, 1.0, 0.0], 1.0, 0.1)


@pytest.mark.parametrize("area, scale", [(0.0, 0.1), (-1.0, 0.1),
                                         (1.0, 0.0), (1.0, -0.2)])
def test_bubble_spec_rejects_nonpositive_parameters(area, scale):
    with pytest.raises(ValidationError):
        BubbleSpec([0.0, 0.0, 1.0], area, scale)


def test_bubble_profile_uniform_at_unit_scale(m3):
    # scale 1 and area 4*pi give back the round density exactly
    spec = BubbleSpec([0.0, 0.0, 1.0], 4.0 * math.pi, 1.0)
    values = bubble_profile(spec, m3.vertices)
    assert np.max(np.abs(values - 1.0)) < 1e-12


def test_bubble_profile_positive_and_peaked(m4):
    spec = BubbleSpec([0.0, 0.0, 1.0], 1.0, 0.1)
    values = bubble_profile(spec, m4.vertices)
    assert np.all(values > 0)
    assert np.argmax(values) == np.argmax(m4.vertices[:, 2])


def test_bubble_mass_documented_example(m4, m5):
    # scale 0.1, target area 1: the discrete mass is within 3 percent
    spec = BubbleSpec([0.0, 0.0, 1.0], 1.0, 0.1)
    for m, tol in ((m4, 3e-2), (m5, 3e-2)):
        mass = bubble_profile(spec, m.vertices) @ vertex_areas(m)
        assert mass == pytest.approx(1.0, rel=tol)


def test_bubble_mass_converges_with_level(m4, m5):
    spec = BubbleSpec([0.0, 0.0, 1.0], 1.0, 0.1)
    err4 = abs(bubble_profile(spec, m4.vertices) @ vertex_areas(m4) - 1.0)
    err5 = abs(bubble_profile(spec, m5.vertices) @ vertex_areas(m5) - 1.0)
    assert err5 < err4 < 1e-3


def test_bubble_density_empty_specs_is_identity(m3):
    base = uniform_density(m3, 2.0)
    assert bubble_density(m3, base, []) is base


def test_bubble_density_rejects_non_spec(m3):
    with pytest.raises(ValidationError):
        bubble_density(m3, uniform_density(m3), [0.1])


def test_bubble_density_rejects_overlapping_charts(m4):
    a = BubbleSpec([0.0, 0.0, 1.0], 1.0, 0.1)
    b = BubbleSpec([math.sin(0.2), 0.0, math.cos(0.2)], 1.0, 0.1)
    with pytest.raises(ValidationError):
        bubble_density(m4, uniform_density(m4), [a, b])


def test_bubble_density_rejects_unresolved_scale():
    coarse = icosphere(2)
    spec = BubbleSpec([0.0, 0.0, 1.0], 1.0, 0.005)
    with pytest.raises(SolverError):
        bubble_density(coarse, uniform_density(coarse), [spec])


def test_antipodal_bubble_pair_is_even_to_rounding(m4):
    specs = [BubbleSpec([0.0, 0.0, 1.0], 2.0, 0.1),
             BubbleSpec([0.0, 0.0, -1.0], 2.0, 0.1)]
    dens = bubble_density(m4, uniform_density(m4), specs)
    gap = np.max(np.abs(dens.values[m4.antipodal] - dens.values))
    assert gap <= 1e-13 * np.max(dens.values)


# ---------------------------------------------------------------------------
# normalized eigenvalues


def test_round_sphere_first_normalized_eigenvalue(m4):
    value = lambda_bar(m4, uniform_density(m4), 1, "s2")
    assert value == pytest.approx(8.0 * math.pi, rel=1e-2)


def test_round_projective_first_normalized_eigenvalue(m4):
    value = lambda_bar(m4, uniform_density(m4), 1, "rp2")
    assert value == pytest.approx(12.0 * math.pi, rel=1e-2)


def test_lambda_bar_scale_invariance(m4):
    one = lambda_bar(m4, uniform_density(m4, 1.0), 1, "s2")
    ten = lambda_bar(m4, uniform_density(m4, 10.0), 1, "s2")
    assert ten == pytest.approx(one, rel=1e-9)


def test_lambda_bar_rejects_bad_rank(m3):
    with pytest.raises(ValidationError):
        lambda_bar(m3, uniform_density(m3), 0, "s2")


def test_lambda_bar_rejects_odd_density_on_projective_plane(m3):
    values = 1.0 + 0.5 * m3.vertices[:, 2]
    with pytest.raises(ValidationError):
        lambda_bar(m3, density(values), 1, "rp2")


# ---------------------------------------------------------------------------
# canonical degenerating families


def test_family_density_rejects_small_rank(m3):
    with pytest.raises(ValidationError):
        family_density(m3, "s2", 1, 0.1)


def test_family_density_rejects_nonpositive_scale(m3):
    with pytest.raises(ValidationError):
        family_density(m3, "s2", 2, 0.0)


def test_family_density_rejects_unplaceable_rank(m3):
    with pytest.raises(ValidationError):
        family_density(m3, "rp2", 5, 0.1)


def test_sphere_two_piece_density_is_even_and_unit_pieces(m5):
    # the balanced representative: two antipodal bubbles of area 1 each
    dens = family_density(m5, "s2", 2, 0.04)
    assert np.array_equal(dens.values[m5.antipodal], dens.values)
    total = dens.values @ vertex_areas(m5)
    assert total == pytest.approx(2.0, rel=1e-2)


def test_projective_two_piece_density_areas(m5):
    # cover: uniform base of area 6 plus an antipodal pair of area-2 bubbles
    dens = family_density(m5, "rp2", 2, 0.05)
    gap = np.max(np.abs(dens.values[m5.antipodal] - dens.values))
    assert gap <= 1e-13 * np.max(dens.values)
    total = dens.values @ vertex_areas(m5)
    assert total == pytest.approx(10.0, rel=1e-2)


def test_balanced_representative_matches_plain_construction(m5):
    # bubble-plus-round-base and its conformal rebalancing are isometric,
    # so both discretizations give the same normalized eigenvalue
    for eps, tol in ((0.2, 2e-3), (0.12, 5e-3)):
        base = uniform_density(m5, 1.0 / (4.0 * math.pi))
        plain = bubble_density(m5, base, [BubbleSpec([0, 0, 1.0], 1.0, eps)])
        lb_plain = lambda_bar(m5, plain, 2, "s2")
        lb_balanced = lambda_bar(m5, family_density(m5, "s2", 2, eps), 2, "s2")
        assert lb_balanced == pytest.approx(lb_plain, rel=tol)


def test_limit_family_rejects_bad_schedules():
    with pytest.raises(ValidationError):
        limit_family("s2", 2, [], mesh_level=2)
    with pytest.raises(ValidationError):
        limit_family("s2", 2, [0.1, 0.2], mesh_level=2)
    with pytest.raises(ValidationError):
        limit_family("s2", 2, [0.1, -0.05], mesh_level=2)
    with pytest.raises(ValidationError):
        limit_family("s2", 1, [0.1], mesh_level=2)


def test_sphere_family_climbs_toward_supremum():
    fam = limit_family("s2", 2, [0.09, 0.04, 0.016, 0.0064], mesh_level=5)
    ratios = np.array(fam.lambda_bars) / fam.target
    assert fam.target == pytest.approx(16.0 * math.pi, rel=1e-15)
    assert np.all(np.diff(ratios) > 0)
    assert np.all(ratios < 1.0)
    assert 0.70 < ratios[0] < 0.80
    assert ratios[-1] > 0.96


def test_projective_family_climbs_toward_supremum():
    fam = limit_family("rp2", 2, [0.05, 0.03, 0.02, 0.012, 0.008, 0.005],
                       mesh_level=5)
    ratios = np.array(fam.lambda_bars) / fam.target
    assert fam.target == pytest.approx(20.0 * math.pi, rel=1e-15)
    assert np.all(np.diff(ratios) > 0)
    assert np.all(ratios < 1.0)
    assert 0.70 < ratios[0] < 0.80
    assert ratios[-1] > 0.95


def test_family_rows_and_csv():
    fam = limit_family("s2", 2, [0.2, 0.1], mesh_level=4)
    assert fam.rows == list(zip(fam.epsilons, fam.lambda_bars))
    text = family_csv(fam)
    lines = text.strip().split("\n")
    assert lines[0] == "epsilon,lambda_bar"
    assert len(lines) == 3
    eps, lb = lines[1].split(",")
    assert float(eps) == pytest.approx(0.2)
    assert float(lb) == pytest.approx(fam.lambda_bars[0], rel=1e-10)
    assert text.endswith("\n")


# ---------------------------------------------------------------------------
# ascent


def test_uniform_state_is_round_and_normalized(m3):
    st = uniform_state(m3, "s2", 1)
    assert st.area == pytest.approx(1.0, rel=1e-12)
    assert st.lambda_bar == pytest.approx(8.0 * math.pi, rel=1e-2)
    assert st.cluster_size == 3      # the full first eigenspace


def test_uniform_projective_state_cluster(m3):
    st = uniform_state(m3, "rp2", 1)
    assert st.area == pytest.approx(1.0, rel=1e-12)
    assert st.lambda_bar == pytest.approx(12.0 * math.pi, rel=2e-2)
    assert st.cluster_size == 5      # the full degree-2 even eigenspace


def test_random_state_is_reproducible_and_normalized(m3):
    a = random_state(m3, "s2", 1, seed=42)
    b = random_state(m3, "s2", 1, seed=42)
    assert np.array_equal(a.log_density, b.log_density)
    assert a.area == pytest.approx(1.0, rel=1e-12)
    c = random_state(m3, "s2", 1, seed=43)
    assert not np.array_equal(a.log_density, c.log_density)


def test_random_projective_state_is_exactly_even(m3):
    st = random_state(m3, "rp2", 1, seed=42)
    assert np.array_equal(st.log_density[m3.antipodal], st.log_density)


def test_random_state_rejects_negative_amplitude(m3):
    with pytest.raises(ValidationError):
        random_state(m3, "s2", 1, amplitude=-0.1)


def test_ascend_validates_arguments(m3):
    st = uniform_state(m3, "s2", 1)
    with pytest.raises(ValidationError):
        ascend(m3, "s2", 0, st, 10)
    with pytest.raises(ValidationError):
        ascend(m3, "s2", 1, st, 0)
    other = icosphere(2)
    with pytest.raises(ValidationError):
        ascend(other, "s2", 1, st, 10)


def test_ascent_trajectory_is_monotone_and_recovers_round(m3):
    st = random_state(m3, "s2", 1, seed=42)
    states = ascend(m3, "s2", 1, st, 150)
    values = [s.lambda_bar for s in states]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert states[-1].lambda_bar > 0.985 * 8.0 * math.pi
    assert all(s.area == pytest.approx(1.0, rel=1e-10) for s in states)
    assert [s.iteration for s in states] == list(range(len(states)))


def test_projective_ascent_recovers_round(m3):
    st = random_state(m3, "rp2", 1, seed=42)
    states = ascend(m3, "rp2", 1, st, 150)
    values = [s.lambda_bar for s in states]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert states[-1].lambda_bar > 0.985 * 12.0 * math.pi


def test_ascent_stalls_at_the_round_maximizer(m3):
    # the round metric is the k=1 maximizer: ascent gains nothing beyond
    # discretization noise there
    for surface, target in (("s2", 8.0 * math.pi), ("rp2", 12.0 * math.pi)):
        st = uniform_state(m3, surface, 1)
        states = ascend(m3, surface, 1, st, 40)
        gain = states[-1].lambda_bar / states[0].lambda_bar - 1.0
        assert 0.0 <= gain < 1e-3


def test_ascent_state_validation():
    with pytest.raises(ValidationError):
        AscentState(log_density=np.array([np.inf, 0.0]), iteration=0,
                    lambda_k=1.0, area=1.0, lambda_bar=1.0, step=0.5,
                    cluster_size=1)


def test_trajectory_csv_format(m3):
    st = random_state(m3, "s2", 1, seed=42)
    states = ascend(m3, "s2", 1, st, 5)
    text = trajectory_csv(states)
    lines = text.strip().split("\n")
    assert lines[0] == "iter,lambda_k,area,lambda_bar,step"
    assert len(lines) == len(states) + 1
    first = lines[1].split(",")
    assert int(first[0]) == states[0].iteration
    assert float(first[3]) == pytest.approx(states[0].lambda_bar, rel=1e-10)


# ---------------------------------------------------------------------------
# perturbation formula


@pytest.fixture(scope="module")
def fd_setup(m4):
    rho = np.exp(0.8 * m4.vertices[:, 2] ** 2)
    return m4, rho


def _fd_directions(mesh, surface, count=4):
    rng = np.random.default_rng(7)
    x = mesh.vertices
    out = []
    for _ in range(count):
        delta = (x @ rng.standard_normal(3)) ** 2 + x @ rng.standard_normal(3)
        if surface == "rp2":
            delta = 0.5 * (delta + delta[mesh.antipodal])
        out.append(delta - delta.mean())
    return out


@pytest.mark.parametrize("surface", ["s2", "rp2"])
def test_derivative_matches_finite_differences(fd_setup, surface):
    mesh, rho = fd_setup
    for delta in _fd_directions(mesh, surface):
        analytic = lambda_bar_derivative(mesh, density(rho), 1, delta, surface)
        t = 1e-5
        plus = lambda_bar(mesh, density(rho + t * delta), 1, surface)
        minus = lambda_bar(mesh, density(rho - t * delta), 1, surface)
        fd = (plus - minus) / (2.0 * t)
        assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_derivative_refuses_degenerate_eigenvalue(fd_setup):
    # the axisymmetric density keeps lambda_2 = lambda_3 (an exact pair)
    mesh, rho = fd_setup
    delta = _fd_directions(mesh, "s2", count=1)[0]
    with pytest.raises(ValidationError):
        lambda_bar_derivative(mesh, density(rho), 2, delta, "s2")


def test_derivative_validates_direction(fd_setup):
    mesh, rho = fd_setup
    with pytest.raises(ValidationError):
        lambda_bar_derivative(mesh, density(rho), 1, np.ones(7), "s2")
    odd = mesh.vertices[:, 2].copy()
    with pytest.raises(ValidationError):
        lambda_bar_derivative(mesh, density(rho), 1, odd, "rp2")

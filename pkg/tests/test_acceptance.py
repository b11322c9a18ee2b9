"""End-to-end acceptance runs for the library's headline guarantees.

Each test exercises one published guarantee at its stated tolerance: the
round-sphere spectrum, the integer index tables and their inequality suite,
the exact-arithmetic enumeration, harmonic-sequence identities, Jacobi-field
oracles, and the isoperimetric eigenvalue limits.  Everything here goes
through public entry points only; mesh levels, seeds, and eigenvalue guards
are pinned so the runs are reproducible.
"""

import math
import time

import numpy as np
import pytest

from spherelab import arithmetic, eigensolve, fem, index, maps, report
from spherelab import sequence as sq
from spherelab.mesh import icosphere
from spherelab.optimize import ascend, limit_family, random_state

DILATION = np.array([[0.5, 0.0], [0.0, -0.5]])
TRANSLATION = np.array([[0.0, 1.0], [0.0, 0.0]])

# every map the index criteria mention, verified as one bundle each
BUNDLE_SPECS = (
    ("veronese:1", "S2"),
    ("veronese:2", "S2"),
    ("veronese:3", "S2"),
    ("veronese:2", "RP2"),
    ("veronese:4", "RP2"),
    ("rational:z^1", "S2"),
    ("rational:z^2", "S2"),
    ("rational:z^3", "S2"),
    ("rational:z^4", "S2"),
)


@pytest.fixture(scope="module")
def mesh4():
    return icosphere(4)


@pytest.fixture(scope="module")
def bundles():
    return {(desc, surf): report.run_bundle(desc, {"surface": surf,
                                                   "mesh_level": 4})
            for desc, surf in BUNDLE_SPECS}


def bundle_report(bundles, desc, surface="S2"):
    b = bundles[(desc, surface)]
    assert b.status == "complete", b.errors
    return b.index_report


# ---------------------------------------------------------------------------
# 1. round-sphere spectrum


def test_round_sphere_spectrum():
    # first 16 eigenvalues are l(l+1) with multiplicities 1, 3, 5, 7;
    # relative error < 1% at mesh level 5, within 60 s
    start = time.perf_counter()
    m = icosphere(5)
    K = fem.assemble_stiffness(m)
    M = fem.assemble_mass(m, fem.uniform_density(m))
    spec = eigensolve.solve_lowest(K.matrix, M.matrix, 16)
    elapsed = time.perf_counter() - start
    exact = np.array([0.0] + [2.0] * 3 + [6.0] * 5 + [12.0] * 7)
    assert spec.eigenvalues[0] == pytest.approx(0.0, abs=1e-8)
    rel = np.abs(spec.eigenvalues[1:] - exact[1:]) / exact[1:]
    assert np.max(rel) < 0.01
    assert [len(c) for c in spec.clusters] == [1, 3, 5, 7]
    assert elapsed < 60.0


def test_projective_round_spectrum(mesh4):
    # even sector: 0, then 6 with multiplicity 5
    K = fem.restrict(fem.assemble_stiffness(mesh4),
                     fem.even_selection(mesh4))
    M = fem.restrict(fem.assemble_mass(mesh4, fem.uniform_density(mesh4)),
                     fem.even_selection(mesh4))
    spec = eigensolve.solve_lowest(K.matrix, M.matrix, 6)
    assert spec.eigenvalues[0] == pytest.approx(0.0, abs=1e-8)
    assert np.all(np.abs(spec.eigenvalues[1:] - 6.0) / 6.0 < 0.01)
    assert [len(c) for c in spec.clusters] == [1, 5]


# ---------------------------------------------------------------------------
# 2. spectral index tables


def test_veronese_index_pairs(bundles):
    # sphere values m^2 and 2m+1; projective values m(m-1)/2 and 2m+1;
    # exact integers with stable guard flags at mesh level 4
    expected = {
        ("veronese:1", "S2"): (1, 3),
        ("veronese:2", "S2"): (4, 5),
        ("veronese:3", "S2"): (9, 7),
        ("veronese:2", "RP2"): (1, 5),
        ("veronese:4", "RP2"): (6, 9),
    }
    for (desc, surf), pair in expected.items():
        r = bundle_report(bundles, desc, surf)
        assert (r.ind_S, r.nul_S) == pair, (desc, surf)
        assert r.mesh_level >= 4
        assert r.stable, (desc, surf, r.stability_flags)


# ---------------------------------------------------------------------------
# 3. holomorphic self-maps


def test_rational_map_indices(bundles):
    # degree d: spectral index 2d-1, nullity 3, and energy stability
    for d in (1, 2, 3, 4):
        r = bundle_report(bundles, f"rational:z^{d}")
        assert r.d == d
        assert r.ind_S == 2 * d - 1, d
        assert r.nul_S == 3, d
        assert r.ind_E == 0, d


# ---------------------------------------------------------------------------
# 4. energy index of the degree-2 rotationally symmetric map


def test_veronese_energy_index(bundles):
    # ind_E = 10 and nul_E >= 20, integer-exact at two mesh levels
    assert index.energy_index(maps.veronese(2), icosphere(3)) == (10, 20)
    r = bundle_report(bundles, "veronese:2")
    assert r.mesh_level == 4
    assert r.ind_E == 10
    assert r.nul_E >= 20


# ---------------------------------------------------------------------------
# 5. projective halving of Jacobi counts


def test_projective_halving(bundles):
    # even-sector counts are exactly half the double cover's counts
    quotient = bundle_report(bundles, "veronese:2", "RP2")
    cover = bundle_report(bundles, "veronese:2", "S2")
    assert 2 * quotient.ind_E == cover.ind_E == 10
    assert 2 * quotient.nul_E == cover.nul_E == 20
    detail = quotient.stability_flags["halving_detail"]
    assert quotient.stability_flags["rp2_halving"] is True
    assert detail["full_ind_E"] == 2 * quotient.ind_E
    assert detail["full_nul_E"] == 2 * quotient.nul_E


# ---------------------------------------------------------------------------
# 6. integer inequality suite


def test_inequality_suite_on_all_bundles(bundles):
    # every closed-form inequality holds on every measured bundle
    for key, b in bundles.items():
        assert b.status == "complete", (key, b.errors)
        assert b.verdicts, key
        failed = [v["fact"] for v in b.verdicts if not v["pass"]]
        assert not failed, (key, failed)
        assert b.passed, key


def test_degree_bound_equality_case(bundles):
    # 2 ind_S >= d - 1 on the projective plane, with equality exactly at d = 3
    for desc in ("veronese:2", "veronese:4"):
        r = bundle_report(bundles, desc, "RP2")
        assert 2 * r.ind_S >= r.d - 1
        assert (2 * r.ind_S == r.d - 1) == (r.d == 3), desc


# ---------------------------------------------------------------------------
# 7. exact-arithmetic enumeration


def test_exception_enumeration_and_cutoff():
    start = time.perf_counter()
    exceptions = arithmetic.enumerate_exceptions()
    cutoff = arithmetic.derived_search_cutoff()
    elapsed = time.perf_counter() - start
    assert exceptions == {(2, 3), (2, 4), (4, 10)}
    assert cutoff == 6
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 8. isoperimetric eigenvalue limits


def test_bubbling_family_sphere():
    # two-bubble families approach 16 pi from below, monotonically,
    # finishing within 5%
    fam = limit_family("s2", 2, [0.09, 0.04, 0.016, 0.0064, 0.0036],
                       mesh_level=6)
    ratios = np.array(fam.lambda_bars) / fam.target
    assert fam.target == pytest.approx(16.0 * math.pi, rel=1e-15)
    assert np.all(np.diff(ratios) > 0)
    assert np.all(ratios < 1.0 + 1e-6)
    assert ratios[-1] > 0.95


def test_bubbling_family_projective():
    # even families on the projective plane approach 20 pi the same way
    fam = limit_family("rp2", 2, [0.05, 0.03, 0.02, 0.012, 0.008, 0.005,
                                  0.003], mesh_level=6)
    ratios = np.array(fam.lambda_bars) / fam.target
    assert fam.target == pytest.approx(20.0 * math.pi, rel=1e-15)
    assert np.all(np.diff(ratios) > 0)
    assert np.all(ratios < 1.0 + 1e-6)
    assert ratios[-1] > 0.95


def test_ascent_sphere(mesh4):
    # subgradient ascent from a random metric reaches 8 pi within 2%
    states = ascend(mesh4, "s2", 1, random_state(mesh4, "s2", 1, seed=42), 150)
    assert states[-1].lambda_bar > 0.98 * 8.0 * math.pi
    values = [s.lambda_bar for s in states]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_ascent_projective(mesh4):
    # the even-sector ascent reaches 12 pi within 2%
    states = ascend(mesh4, "rp2", 1, random_state(mesh4, "rp2", 1, seed=42),
                    150)
    assert states[-1].lambda_bar > 0.98 * 12.0 * math.pi


# ---------------------------------------------------------------------------
# 9. harmonic-sequence identities


def test_sequence_identities():
    # analytic-mode residuals below 1e-8 and termination at step m
    for m in (1, 2):
        mapping = maps.veronese(m)
        seq = sq.build_sequence(mapping, sq.default_chart(mapping))
        rows = sq.verify_identities(seq)
        assert [r.identity for r in rows] == ["dbar", "toda",
                                              "orthogonality", "isotropy"]
        for row in rows:
            assert row.max_residual < 1e-8, (m, row)
            assert row.converged
        assert seq.terminated
        assert seq.termination_index == m


def test_conjugate_laws():
    # conjugation is an involution up to sign and preserves the energy form
    for mapping, seed in ((maps.veronese(2), 7), (maps.rational_map([0, 0, 0, 1]), 4)):
        points = icosphere(2).vertices
        if not mapping.antipodally_even:
            keep = np.abs(np.abs(points[:, 2]) - 1.0) > 1e-9
            points = points[keep]         # branch points of z^d sit at poles
        fld = sq.random_tangent_field(mapping, seed=seed)
        V = fld.values(mapping, points)
        star = sq.conjugate_field(mapping, V, points).v_star
        again = sq.conjugate_field(mapping, star, points).v_star
        assert np.max(np.abs(again + V)) < 1e-6
        qe = sq.energy_quadratic_form(mapping, fld)
        qec = sq.energy_quadratic_form(mapping, fld, conjugate=True)
        assert qec == pytest.approx(qe, rel=1e-6)


def test_jacobi_count_evenness(bundles):
    # conjugation pairs Jacobi eigenfields, so sphere counts are even
    for (desc, surf), b in bundles.items():
        if surf != "S2":
            continue
        r = bundle_report(bundles, desc, surf)
        assert r.ind_E % 2 == 0, desc
        assert r.nul_E % 2 == 0, desc


# ---------------------------------------------------------------------------
# 10. Jacobi-field oracle


def test_mobius_jacobi_residual(mesh4):
    # conformal variation fields sit in the Jacobi kernel: relative
    # residual < 1e-3 at mesh level 4
    for d, generator in ((1, DILATION), (2, DILATION), (2, TRANSLATION),
                         (3, DILATION)):
        mapping = maps.rational_map([0] * d + [1])
        v = sq.integrable_jacobi(mapping, generator, mesh4)
        assert index.jacobi_residual(mapping, mesh4, v) < 1e-3, (d, generator)


def test_rayleigh_within_guard(mesh4):
    # their Rayleigh quotients stay within the zero-cluster guard
    for d in (1, 2, 3):
        mapping = maps.rational_map([0] * d + [1])
        pencil = index.jacobi_pencil(mapping, mesh4)
        v = sq.integrable_jacobi(mapping, DILATION, mesh4)
        assert abs(pencil.rayleigh(v)) < index.DEFAULT_ENERGY_GUARD, d


def test_descent_chain_converges():
    # the descent identity residual vanishes under derivative refinement
    mapping = maps.rational_map([0, 0, 1])
    chart = sq.default_chart(mapping, radius=0.4, n=7)
    fld = sq.MobiusField(rmap=mapping, generator=DILATION)
    residuals = []
    for step in (8e-3, 4e-3, 2e-3):
        chain = sq.gammahat_chain(mapping, fld, chart, mode="fd",
                                  fd_step=step)
        assert chain.converged
        residuals.append(max(chain.dzv_residuals))
    assert residuals[0] > residuals[1] > residuals[2]
    exact = sq.gammahat_chain(mapping, fld, chart)
    assert max(exact.dzv_residuals) < 1e-4
    assert exact.converged

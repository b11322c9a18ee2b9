"""Self-contained verification bundles and the fact-to-test traceability table.

A bundle gathers, for one harmonic map, everything the library verifies about
it - the index counts, the integer inequality suite, harmonic-sequence
residuals, and exact-arithmetic cross-checks - together with the provenance
(resolved configuration, seeds, tolerances, build id) needed to reproduce the
run bit for bit.  Each verdict names a fact id; the traceability table is the
inverse view, listing every fact in scope with its precise statement and the
test functions that exercise it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import __version__, arithmetic, maps, sequence
from .errors import ValidationError
from .eigensolve import DEFAULT_SEED
from .index import DEFAULT_ENERGY_GUARD, IndexReport, compute_index_report
from .mesh import icosphere

__all__ = [
    "Fact",
    "VerificationBundle",
    "bundle_config",
    "fact_statement",
    "run_bundle",
    "traceability",
    "traceability_markdown",
]


# ---------------------------------------------------------------------------
# fact registry


@dataclass(frozen=True)
class Fact:
    """One verifiable mathematical statement and the tests that check it."""

    fact_id: str
    statement: str
    tests: tuple

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))


_FACTS = (
    # spectra
    Fact("round_sphere_spectrum",
         "The round-sphere Laplacian has eigenvalues l(l+1) with "
         "multiplicity 2l+1.",
         ("test_eigensolve.py::test_round_sphere_level5",
          "test_acceptance.py::test_round_sphere_spectrum")),
    Fact("projective_round_spectrum",
         "The even (projective-plane) sector of the round sphere starts "
         "0, then 6 with multiplicity 5.",
         ("test_eigensolve.py::test_rp2_even_sector",
          "test_acceptance.py::test_projective_round_spectrum")),
    # index values
    Fact("veronese_spectral_index",
         "The degree-m rotationally symmetric full map has spectral index "
         "m^2 and spectral nullity 2m+1 on the sphere.",
         ("test_index.py::test_veronese1",
          "test_index.py::test_veronese2",
          "test_acceptance.py::test_veronese_index_pairs")),
    Fact("projective_veronese_index",
         "On the projective plane (even m) the quotient map has spectral "
         "index m(m-1)/2 and spectral nullity 2m+1.",
         ("test_index.py::test_veronese2",
          "test_index.py::test_veronese4",
          "test_acceptance.py::test_veronese_index_pairs")),
    Fact("rational_spectral_index",
         "A degree-d rational (holomorphic) self-map of the sphere has "
         "spectral index 2d-1 and spectral nullity 3.",
         ("test_index.py::test_low_degree_table",
          "test_acceptance.py::test_rational_map_indices")),
    Fact("rational_energy_minimality",
         "Holomorphic maps are energy-stable: the energy index vanishes.",
         ("test_index.py::test_holomorphic_maps_are_stable",
          "test_acceptance.py::test_rational_map_indices")),
    Fact("veronese_energy_index",
         "The degree-2 rotationally symmetric map into the 4-sphere has "
         "energy index 10 and energy nullity at least 20.",
         ("test_index.py::test_veronese2",
          "test_acceptance.py::test_veronese_energy_index")),
    Fact("projective_halving",
         "Even-sector Jacobi counts of the quotient map are exactly half "
         "the sphere counts of its double cover (m = 2).",
         ("test_index.py::test_halving_veronese2",
          "test_acceptance.py::test_projective_halving")),
    # integer inequality suite (ids match IndexReport verdict names)
    Fact("index_ratio_ambient",
         "(2m+1) ind_S >= ind_E.",
         ("test_index.py::test_measured_reports_satisfy_all",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("index_nullity_ratio",
         "(2m+1) ind_S >= ind_E + nul_E - m(2m+1).",
         ("test_index.py::test_measured_reports_satisfy_all",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("energy_vs_spectral_factor",
         "ind_E >= 2(m-1) ind_S.",
         ("test_index.py::test_veronese1_vacuous_factor",
          "test_index.py::test_measured_reports_satisfy_all",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("spectral_vs_degree_nullity",
         "ind_S >= 2d - nul_S + 2.",
         ("test_index.py::test_measured_reports_satisfy_all",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("degree_vs_nullity_quadratic",
         "8d >= nul_S^2 - 1.",
         ("test_index.py::test_measured_reports_satisfy_all",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("energy_nullity_floor",
         "nul_E >= 4d + 2m^2.",
         ("test_index.py::test_veronese2",
          "test_index.py::test_measured_reports_satisfy_all",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("projective_degree_bound",
         "2 ind_S >= d - 1 for even maps seen on the projective plane.",
         ("test_index.py::test_veronese2_projective_equality_case",
          "test_acceptance.py::test_inequality_suite_on_all_bundles")),
    Fact("projective_degree_bound_equality",
         "Equality 2 ind_S = d - 1 on the projective plane holds exactly "
         "when d = 3.",
         ("test_index.py::test_veronese2_projective_equality_case",
          "test_arithmetic.py::test_quotient_degree_bound_equality_only_at_m2",
          "test_acceptance.py::test_degree_bound_equality_case")),
    # exact-arithmetic closed forms
    Fact("energy_index_floor_closed_form",
         "ind_E >= 2(m-1)(2d - [sqrt(8d+1)]_odd + 2) whenever "
         "d >= m(m+1)/2.",
         ("test_arithmetic.py::test_values",
          "test_arithmetic.py::test_rejects_degree_below_area_floor")),
    Fact("spectral_index_floor_closed_form",
         "(2m+1) ind_S >= (2d - nul_S + 2)(m-1) + 2d - m - m^2, exact "
         "rational arithmetic with integer sharpening.",
         ("test_arithmetic.py::test_integer_sharpening",
          "test_arithmetic.py::test_degenerate_ambient_reduces_to_two_thirds_rule")),
    Fact("exception_enumeration",
         "The degree bound ind_S >= (d-1)/2 for even maps can fail only at "
         "(m, d) in {(2,3), (2,4), (4,10)}.",
         ("test_arithmetic.py::test_expected_set",
          "test_arithmetic.py::test_stable_under_larger_sweep",
          "test_acceptance.py::test_exception_enumeration_and_cutoff")),
    Fact("search_cutoff",
         "No failure of the degree bound is possible for m > 6; the cutoff "
         "is re-derived from the closed forms.",
         ("test_arithmetic.py::test_cutoff_is_six",
          "test_acceptance.py::test_exception_enumeration_and_cutoff")),
    # harmonic-sequence identities
    Fact("sequence_dbar",
         "Along the sequence, d f_p / dzbar = -gamma_{p-1} f_{p-1}.",
         ("test_sequence.py::test_veronese_residuals_at_machine_precision",
          "test_sequence.py::test_rational_residuals_at_machine_precision",
          "test_acceptance.py::test_sequence_identities")),
    Fact("sequence_toda",
         "The densities satisfy d^2 ln gamma_p / dz dzbar = gamma_{p+1} "
         "- 2 gamma_p + gamma_{p-1}.",
         ("test_sequence.py::test_veronese_residuals_at_machine_precision",
          "test_sequence.py::test_rational_residuals_at_machine_precision",
          "test_acceptance.py::test_sequence_identities")),
    Fact("sequence_orthogonality",
         "Distinct sequence sections are Hermitian-orthogonal.",
         ("test_sequence.py::test_veronese_residuals_at_machine_precision",
          "test_acceptance.py::test_sequence_identities")),
    Fact("sequence_isotropy",
         "Sequence sections from p = 1 on are bilinearly isotropic.",
         ("test_sequence.py::test_veronese_residuals_at_machine_precision",
          "test_acceptance.py::test_sequence_identities")),
    Fact("sequence_termination",
         "The sequence of the degree-m rotationally symmetric map "
         "terminates at step p = m.",
         ("test_sequence.py::test_veronese_terminates_at_m",
          "test_sequence.py::test_rational_terminates_at_one",
          "test_acceptance.py::test_sequence_identities")),
    Fact("conjugate_laws",
         "Conjugation of tangent fields is a pointwise isometry, splits "
         "norms in half, and preserves the energy form.",
         ("test_sequence.py::test_pointwise_isometry",
          "test_sequence.py::test_half_norm_identity",
          "test_sequence.py::test_conjugation_preserves_energy_form_veronese",
          "test_acceptance.py::test_conjugate_laws")),
    Fact("jacobi_count_evenness",
         "Negative and near-zero Jacobi eigenvalue counts are even for "
         "sphere-domain maps: conjugation pairs each eigenfield V with V*.",
         ("test_index.py::test_counts_are_even_on_sphere",
          "test_acceptance.py::test_jacobi_count_evenness")),
    # variational fields
    Fact("mobius_jacobi_fields",
         "Conformal (Mobius) variation fields satisfy the Jacobi equation; "
         "the discrete kernel residual stays under 1e-3 at level 4.",
         ("test_sequence.py::test_mobius_fields_pass_kernel_residual",
          "test_acceptance.py::test_mobius_jacobi_residual")),
    Fact("symmetry_rayleigh_zero",
         "Rayleigh quotients of symmetry-generated fields lie within the "
         "zero-cluster guard of the Jacobi pencil.",
         ("test_sequence.py::test_rayleigh_quotient_within_guard",
          "test_acceptance.py::test_rayleigh_within_guard")),
    Fact("descent_chain",
         "The descent-chain identity for Jacobi fields holds with residual "
         "converging under chart refinement.",
         ("test_sequence.py::test_mobius_dilation_satisfies_descent_identity",
          "test_sequence.py::test_fd_mode_converges_for_jacobi_field",
          "test_acceptance.py::test_descent_chain_converges")),
    # eigenvalue optimization
    Fact("bubbling_sphere_limit",
         "Two-piece degenerating conformal densities on the sphere push "
         "lambda_2 * Area monotonically toward 16 pi, never beyond.",
         ("test_optimize.py::test_sphere_family_climbs_toward_supremum",
          "test_acceptance.py::test_bubbling_family_sphere")),
    Fact("bubbling_projective_limit",
         "Degenerating even densities on the projective plane push "
         "lambda_2 * Area monotonically toward 20 pi, never beyond.",
         ("test_optimize.py::test_projective_family_climbs_toward_supremum",
          "test_acceptance.py::test_bubbling_family_projective")),
    Fact("ascent_sphere_supremum",
         "Subgradient ascent from a random conformal metric reaches the "
         "k = 1 supremum 8 pi on the sphere within 2 percent.",
         ("test_optimize.py::test_ascent_trajectory_is_monotone_and_recovers_round",
          "test_acceptance.py::test_ascent_sphere")),
    Fact("ascent_projective_supremum",
         "Subgradient ascent from a random even conformal metric reaches "
         "the k = 1 supremum 12 pi on the projective plane within 2 percent.",
         ("test_optimize.py::test_projective_ascent_recovers_round",
          "test_acceptance.py::test_ascent_projective")),
)

_FACT_INDEX = {f.fact_id: f for f in _FACTS}


def fact_statement(fact_id: str) -> str:
    """The registered statement for a fact id."""
    try:
        return _FACT_INDEX[fact_id].statement
    except KeyError:
        raise ValidationError(f"unknown fact id {fact_id!r}") from None


def traceability() -> tuple:
    """The full fact-to-test table, checked for registry consistency."""
    seen = set()
    for f in _FACTS:
        if f.fact_id in seen:
            raise ValidationError(f"duplicate fact id {f.fact_id!r}")
        seen.add(f.fact_id)
        if not f.tests:
            raise ValidationError(f"fact {f.fact_id!r} names no tests")
        for t in f.tests:
            name, sep, func = t.partition("::")
            if not sep or not name.endswith(".py") or not func.startswith("test_"):
                raise ValidationError(
                    f"fact {f.fact_id!r} has malformed test reference {t!r}")
    return _FACTS


def traceability_markdown() -> str:
    """The traceability table as a Markdown document."""
    lines = ["| Fact | Statement | Tests |", "| --- | --- | --- |"]
    for f in traceability():
        tests = "<br>".join(f"`{t}`" for t in f.tests)
        lines.append(f"| `{f.fact_id}` | {f.statement} | {tests} |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# verification bundles


_DEFAULT_CONFIG = {
    "surface": "S2",
    "mesh_level": 4,
    "seed": DEFAULT_SEED,
    "guard": None,
    "energy_guard": DEFAULT_ENERGY_GUARD,
    "chart_radius": 0.5,
    "chart_points": 13,
}


def bundle_config(overrides: dict | None = None) -> dict:
    """The resolved bundle configuration (defaults plus overrides)."""
    config = dict(_DEFAULT_CONFIG)
    for key, value in (overrides or {}).items():
        if key not in config:
            raise ValidationError(f"unknown bundle config key {key!r}")
        config[key] = value
    if config["surface"] not in ("S2", "RP2"):
        raise ValidationError(
            f"surface must be 'S2' or 'RP2', got {config['surface']!r}")
    return config


def _build_id(descriptor: str, config: dict) -> str:
    blob = json.dumps({"version": __version__, "descriptor": descriptor,
                       "config": config}, sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class VerificationBundle:
    """Everything verified about one map, with reproducible provenance.

    ``status`` is "complete" when every stage ran, "partial" when any stage
    recorded an error (the error list says which and why).  All fields are
    JSON-safe; ``to_json``/``from_json`` round-trip losslessly.
    """

    descriptor: str
    surface: str
    status: str
    index_report: IndexReport | None
    verdicts: tuple
    residuals: tuple
    errors: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "verdicts", tuple(self.verdicts))
        object.__setattr__(self, "residuals", tuple(self.residuals))
        object.__setattr__(self, "errors", tuple(self.errors))

    @property
    def passed(self) -> bool:
        return (self.status == "complete"
                and all(v["pass"] for v in self.verdicts)
                and all(r["converged"] for r in self.residuals))

    def to_json(self) -> str:
        payload = {
            "descriptor": self.descriptor,
            "surface": self.surface,
            "status": self.status,
            "index_report": (None if self.index_report is None
                             else json.loads(self.index_report.to_json())),
            "verdicts": list(self.verdicts),
            "residuals": list(self.residuals),
            "errors": list(self.errors),
            "provenance": self.provenance,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "VerificationBundle":
        obj = json.loads(text)
        report = obj["index_report"]
        return VerificationBundle(
            descriptor=obj["descriptor"], surface=obj["surface"],
            status=obj["status"],
            index_report=(None if report is None
                          else IndexReport.from_json(json.dumps(report))),
            verdicts=tuple(obj["verdicts"]),
            residuals=tuple(obj["residuals"]),
            errors=tuple(obj["errors"]),
            provenance=obj["provenance"])


def _verdict(fact_id: str, passed: bool, lhs, rhs) -> dict:
    return {"fact": fact_id, "statement": fact_statement(fact_id),
            "pass": bool(passed), "lhs": lhs, "rhs": rhs}


def _inequality_verdicts(report: IndexReport) -> list:
    out = [_verdict(item["name"], item["pass"], item["lhs"], item["rhs"])
           for item in report.inequalities]
    if report.surface == "RP2":
        equality = (2 * report.ind_S == report.d - 1)
        out.append(_verdict("projective_degree_bound_equality",
                            equality == (report.d == 3),
                            2 * report.ind_S, report.d - 1))
    return out


def _closed_form_verdicts(descriptor: str, report: IndexReport) -> list:
    out = []
    m, d = report.m, report.d
    if report.surface == "S2":
        if d >= m * (m + 1) // 2:
            bound = arithmetic.ind_E_lower_bound(m, d)
            out.append(_verdict("energy_index_floor_closed_form",
                                report.ind_E >= bound, report.ind_E, bound))
        bound = arithmetic.ceil_int(
            arithmetic.ind_S_lower_bound(m, d, report.nul_S))
        out.append(_verdict("spectral_index_floor_closed_form",
                            report.ind_S >= bound, report.ind_S, bound))
    if descriptor.startswith("veronese:"):
        closed_d, ind_sphere, ind_quotient = arithmetic.veronese_closed_forms(
            m, include_projective=(report.surface == "RP2"))
        expected_nul = 2 * m + 1
        if report.surface == "S2":
            ok = (report.d == closed_d and report.ind_S == ind_sphere
                  and report.nul_S == expected_nul)
            out.append(_verdict("veronese_spectral_index", ok,
                                [report.d, report.ind_S, report.nul_S],
                                [closed_d, ind_sphere, expected_nul]))
        else:
            ok = (report.d == closed_d and report.ind_S == ind_quotient
                  and report.nul_S == expected_nul)
            out.append(_verdict("projective_veronese_index", ok,
                                [report.d, report.ind_S, report.nul_S],
                                [closed_d, ind_quotient, expected_nul]))
    if descriptor.startswith("rational:") and report.surface == "S2":
        out.append(_verdict("rational_spectral_index",
                            report.ind_S == 2 * d - 1,
                            report.ind_S, 2 * d - 1))
        out.append(_verdict("rational_energy_minimality",
                            report.ind_E == 0, report.ind_E, 0))
    return out


def _residual_rows(mapping, config: dict) -> list:
    chart = sequence.default_chart(mapping, radius=config["chart_radius"],
                                   n=config["chart_points"])
    seq = sequence.build_sequence(mapping, chart)
    rows = [{"identity": r.identity,
             "chart_center": [float(c) for c in r.chart_center],
             "max_residual": float(r.max_residual),
             "converged": bool(r.converged)}
            for r in sequence.verify_identities(seq)]
    inner = getattr(mapping, "inner", mapping)
    expected = int(getattr(inner, "m", 1))
    rows.append({"identity": "termination",
                 "chart_center": rows[0]["chart_center"] if rows else [],
                 "max_residual": float(abs(seq.termination_index - expected)),
                 "converged": seq.termination_index == expected})
    return rows


def run_bundle(descriptor: str, config: dict | None = None) -> VerificationBundle:
    """Run every verification stage for one map descriptor.

    Stages: parse -> index counts (with the inequality suite) -> harmonic
    sequence residuals -> exact-arithmetic cross-checks.  Any stage error is
    recorded and the bundle is marked partial instead of raising; the result
    is deterministic for a fixed configuration.
    """
    config = bundle_config(config)
    provenance = {
        "config": config,
        "build_id": _build_id(descriptor, config),
        "version": __version__,
        "tolerances": {
            "sequence_analytic": sequence.SEQUENCE_RESIDUAL_TOL,
            "sequence_fd": sequence.FD_RESIDUAL_TOL,
        },
    }
    errors: list = []

    def attempt(stage, fn):
        try:
            return fn()
        except Exception as exc:       # recorded, never raised
            errors.append({"stage": stage, "kind": type(exc).__name__,
                           "message": str(exc)})
            return None

    verdicts: list = []
    residuals: list = []
    report = None
    mapping = attempt("parse", lambda: maps.parse_map(descriptor))
    if mapping is not None:
        mesh = attempt("mesh", lambda: icosphere(config["mesh_level"]))
        if mesh is not None:
            report = attempt("index", lambda: compute_index_report(
                mapping, mesh, config["surface"], descriptor=descriptor,
                guard=config["guard"], energy_guard=config["energy_guard"],
                seed=config["seed"]))
        if report is not None:
            verdicts.extend(_inequality_verdicts(report))
            extra = attempt("arithmetic",
                            lambda: _closed_form_verdicts(descriptor, report))
            if extra:
                verdicts.extend(extra)
        rows = attempt("sequence", lambda: _residual_rows(mapping, config))
        if rows:
            residuals.extend(rows)

    return VerificationBundle(
        descriptor=descriptor, surface=config["surface"],
        status="partial" if errors else "complete",
        index_report=report, verdicts=tuple(verdicts),
        residuals=tuple(residuals), errors=tuple(errors),
        provenance=provenance)

"""Tests for verification bundles and the fact-to-test traceability table."""

import json
import pathlib
import re

import pytest

from spherelab import report
from spherelab.errors import ValidationError

TESTS_DIR = pathlib.Path(__file__).parent


@pytest.fixture(scope="module")
def veronese2_bundle():
    return report.run_bundle("veronese:2", {"mesh_level": 3})


@pytest.fixture(scope="module")
def rational2_bundle():
    return report.run_bundle("rational:z^2", {"mesh_level": 3})


class TestConfig:
    def test_defaults(self):
        config = report.bundle_config()
        assert config["surface"] == "S2"
        assert config["mesh_level"] == 4
        assert config["seed"] == 42

    def test_overrides(self):
        config = report.bundle_config({"mesh_level": 3, "surface": "RP2"})
        assert config["mesh_level"] == 3
        assert config["surface"] == "RP2"

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown bundle config"):
            report.bundle_config({"mesh": 3})

    def test_bad_surface_rejected(self):
        with pytest.raises(ValidationError, match="surface"):
            report.bundle_config({"surface": "T2"})


class TestRunBundle:
    def test_veronese2_all_verdicts_pass(self, veronese2_bundle):
        b = veronese2_bundle
        assert b.status == "complete"
        assert b.errors == ()
        assert b.verdicts and all(v["pass"] for v in b.verdicts)
        assert b.residuals and all(r["converged"] for r in b.residuals)
        assert b.passed

    def test_veronese2_measures_expected_integers(self, veronese2_bundle):
        r = veronese2_bundle.index_report
        assert (r.ind_S, r.nul_S) == (4, 5)
        assert r.ind_E == 10

    def test_rational_verdicts(self, rational2_bundle):
        by_fact = {v["fact"]: v for v in rational2_bundle.verdicts}
        spectral = by_fact["rational_spectral_index"]
        assert spectral["pass"] and spectral["lhs"] == 3
        minimal = by_fact["rational_energy_minimality"]
        assert minimal["pass"] and minimal["lhs"] == 0

    def test_projective_bundle(self):
        b = report.run_bundle("veronese:2", {"surface": "RP2", "mesh_level": 3})
        by_fact = {v["fact"]: v for v in b.verdicts}
        assert by_fact["projective_veronese_index"]["pass"]
        # d = 3 is the unique equality case of the projective degree bound
        equality = by_fact["projective_degree_bound_equality"]
        assert equality["pass"] and equality["lhs"] == equality["rhs"] == 2

    def test_malformed_descriptor_yields_partial(self):
        b = report.run_bundle("not-a-map", {"mesh_level": 3})
        assert b.status == "partial"
        assert b.index_report is None
        assert b.verdicts == () and b.residuals == ()
        assert [e["stage"] for e in b.errors] == ["parse"]
        assert b.errors[0]["kind"] == "ValidationError"
        assert not b.passed

    def test_incompatible_surface_yields_partial(self):
        # odd maps have no projective quotient; the index stage records it
        b = report.run_bundle("veronese:1", {"surface": "RP2", "mesh_level": 3})
        assert b.status == "partial"
        assert any(e["stage"] == "index" for e in b.errors)
        # the sequence stage is chart-based and still runs
        assert any(r["identity"] == "dbar" for r in b.residuals)

    def test_every_verdict_names_a_registered_fact(self, veronese2_bundle):
        for v in veronese2_bundle.verdicts:
            assert v["statement"] == report.fact_statement(v["fact"])

    def test_termination_row(self, veronese2_bundle):
        row = [r for r in veronese2_bundle.residuals
               if r["identity"] == "termination"]
        assert len(row) == 1 and row[0]["converged"]
        assert row[0]["max_residual"] == 0.0

    def test_provenance_records_run(self, veronese2_bundle):
        prov = veronese2_bundle.provenance
        assert prov["config"]["mesh_level"] == 3
        assert prov["config"]["seed"] == 42
        assert prov["tolerances"]["sequence_analytic"] == 1e-8
        assert re.fullmatch(r"[0-9a-f]{12}", prov["build_id"])

    def test_deterministic(self, veronese2_bundle):
        again = report.run_bundle("veronese:2", {"mesh_level": 3})
        assert again.to_json() == veronese2_bundle.to_json()


class TestSerialization:
    def test_round_trip(self, veronese2_bundle):
        text = veronese2_bundle.to_json()
        back = report.VerificationBundle.from_json(text)
        assert back == veronese2_bundle
        assert back.to_json() == text

    def test_partial_round_trip(self):
        b = report.run_bundle("rational:", {"mesh_level": 3})
        back = report.VerificationBundle.from_json(b.to_json())
        assert back == b and back.status == "partial"

    def test_json_keys_sorted_and_complete(self, veronese2_bundle):
        obj = json.loads(veronese2_bundle.to_json())
        assert list(obj) == sorted(obj)
        assert set(obj) == {"descriptor", "surface", "status", "index_report",
                            "verdicts", "residuals", "errors", "provenance"}


class TestTraceability:
    def test_registry_is_consistent(self):
        rows = report.traceability()
        ids = [f.fact_id for f in rows]
        assert len(ids) == len(set(ids))
        assert all(f.tests for f in rows)

    def test_inequality_facts_registered(self):
        ids = {f.fact_id for f in report.traceability()}
        for name in ("index_ratio_ambient", "index_nullity_ratio",
                     "energy_vs_spectral_factor", "spectral_vs_degree_nullity",
                     "degree_vs_nullity_quadratic", "energy_nullity_floor",
                     "projective_degree_bound"):
            assert name in ids

    def test_unknown_fact_rejected(self):
        with pytest.raises(ValidationError, match="unknown fact"):
            report.fact_statement("no_such_fact")

    def test_every_referenced_test_exists(self):
        sources = {p.name: p.read_text() for p in TESTS_DIR.glob("test_*.py")}
        for fact in report.traceability():
            for ref in fact.tests:
                file_name, _, func = ref.partition("::")
                assert file_name in sources, f"{fact.fact_id}: no file {file_name}"
                assert re.search(rf"def {re.escape(func)}\b", sources[file_name]), \
                    f"{fact.fact_id}: {ref} not found"

    def test_markdown_table(self):
        md = report.traceability_markdown()
        lines = md.strip().splitlines()
        assert lines[0].startswith("| Fact |")
        assert len(lines) == len(report.traceability()) + 2
        assert "`round_sphere_spectrum`" in md

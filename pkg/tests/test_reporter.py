from pathlib import Path

import pytest

from ivrepro.errors import NoSpecs
from ivrepro.reporter import (FIGURE_KINDS, emit_figures, figure_data,
                              render_csv, render_report, render_svg)

STUDY_INFO = {"title": "A Study", "authors": "A. Researcher", "year": "2021",
              "journal": "The Journal of Politics",
              "replication_url": "https://doi.org/10.7910/DVN/FAKE01"}


def bundle_dict(rating="HIGH", warnings=(), outcome="y"):
    return {
        "spec": {"outcome": outcome, "treatment": "d", "instruments": ["z"],
                 "controls": ["x1"], "fixed_effects": [], "cluster_vars": ["g"],
                 "weight": None, "if_condition": None, "software": "stata",
                 "source_file": "analysis.do", "line": 4,
                 "command": "ivreg2 y x1 (d = z), cluster(g)",
                 "table_ref": None, "nonlinear": False},
        "tsls": {"coefficient": -1.46, "se": 0.463, "t": -3.15, "p": 0.002,
                 "ci_low": -2.37, "ci_high": -0.55, "n": 4352, "G": 1098,
                 "dof": 1097, "vcov": "cluster", "dropped": []},
        "ols": {"coefficient": -0.626, "se": 0.2, "t": -3.1, "p": 0.002,
                "ci_low": -1.02, "ci_high": -0.23, "n": 4352, "G": 1098,
                "dof": 1097, "vcov": "cluster", "dropped": []},
        "effective_F": 827.2,
        "bootstrap_F": 925.5,
        "ar": {"statistic": 9.5, "p": 0.002},
        "ar_ci": {"low": -2.5, "high": -0.6, "open_low": False, "open_high": False},
        "tf": {"applicable": True, "pass_at_5pct": True,
               "adjusted_critical": 1.96, "ci_low": -2.37, "ci_high": -0.55,
               "note": ""},
        "boot_c": [-2.42, -0.62],
        "boot_t": [-2.37, -0.55],
        "boot_taus": [-1.5, -1.4, -1.45, -1.47, -1.52],
        "jackknife": {"min": -1.49, "max": -1.31, "most_influential": 11001,
                      "delta": 0.15, "relative_shift": 0.10, "unit": "cluster",
                      "skipped": 0, "estimates": [-1.49, -1.42, -1.31]},
        "rho": 0.9,
        "ratio": 2.33,
        "warnings": list(warnings),
        "incomplete": [],
        "rating": rating,
        "seed": 42,
        "iters": 1000,
        "cap": {"applied": False, "n_full": 4352, "n_capped": 4352},
        "notes": [],
        "resolution_audit": [],
        "vcov_convention": "cluster",
    }


class TestRenderReport:
    def test_summary_rows_in_order(self):
        bundles = [bundle_dict("HIGH"), bundle_dict("MODERATE", outcome="y2"),
                   bundle_dict("HIGH", outcome="y3")]
        text = render_report(bundles, STUDY_INFO, "0.1.0+rules-1.0", 42, 1000)
        lines = [l for l in text.splitlines() if l.startswith("| ")]
        ratings = [l.split("|")[-2].strip() for l in lines[1:4]]
        assert ratings == ["HIGH", "MODERATE", "HIGH"]

    def test_empty_raises(self):
        with pytest.raises(NoSpecs):
            render_report([], STUDY_INFO, "v", 42, 1000)

    def test_byte_identical_for_identical_bundles(self):
        a = render_report([bundle_dict()], STUDY_INFO, "v", 42, 1000)
        b = render_report([bundle_dict()], STUDY_INFO, "v", 42, 1000)
        assert a == b

    def test_formatting_precision(self):
        text = render_report([bundle_dict()], STUDY_INFO, "v", 42, 1000)
        assert "| Effective F | 827.2 |" in text          # 1 decimal
        assert "| Coefficient | -1.460 | -0.626 |" in text  # 3 decimals

    def test_nonlinear_flag_rendered(self):
        b = bundle_dict()
        b["spec"]["nonlinear"] = True
        text = render_report([b], STUDY_INFO, "v", 42, 1000)
        assert "Non-Linear Model Approximation" in text

    def test_warnings_listed(self):
        b = bundle_dict("MODERATE", warnings=["ARInsignificant", "JackknifeSensitive"])
        text = render_report([b], STUDY_INFO, "v", 42, 1000)
        assert "- ARInsignificant" in text
        assert "- JackknifeSensitive" in text
        assert "**Rating: MODERATE**" in text

    def test_every_report_number_is_in_bundle(self):
        # spot check: the report never invents numbers (tF CI comes from tf dict)
        b = bundle_dict()
        text = render_report([b], STUDY_INFO, "v", 42, 1000)
        assert f"{b['effective_F']:.1f}" in text
        assert f"{b['boot_c'][0]:.3f}" in text


class TestFigures:
    def test_coef_comparison_has_six_interval_rows(self):
        figs = figure_data(bundle_dict(), 1)
        coef = figs[0]
        assert coef.kind == "coef_comparison"
        labels = [r[0] for r in coef.rows]
        assert labels == ["OLS", "2SLS analytic", "2SLS bootstrap-c",
                          "2SLS bootstrap-t", "2SLS tF", "2SLS AR"]

    def test_four_kinds_emitted(self, tmp_path):
        written = emit_figures(bundle_dict(), tmp_path, 1)
        names = sorted(Path(p).name for p in written)
        for kind in FIGURE_KINDS:
            assert f"spec1_{kind}.svg" in names
            assert f"spec1_{kind}.csv" in names

    def test_svg_bytes_deterministic(self, tmp_path):
        a = emit_figures(bundle_dict(), tmp_path / "a", 1)
        b = emit_figures(bundle_dict(), tmp_path / "b", 1)
        for pa, pb in zip(sorted(a), sorted(b)):
            assert Path(pa).read_bytes() == Path(pb).read_bytes()

    def test_jackknife_csv_matches_estimates(self, tmp_path):
        b = bundle_dict()
        emit_figures(b, tmp_path, 1)
        csv = (tmp_path / "spec1_jackknife_distribution.csv").read_text()
        rows = [l.split(",") for l in csv.splitlines()[1:]]
        got = sorted(float(r[1]) for r in rows)
        assert got == sorted(b["jackknife"]["estimates"])

    def test_svg_renders_without_nan_text(self):
        b = bundle_dict()
        b["tf"] = {"applicable": True, "pass_at_5pct": False,
                   "adjusted_critical": None, "ci_low": None, "ci_high": None,
                   "note": "F below table floor"}
        for fig in figure_data(b, 1):
            svg = render_svg(fig)
            assert "nan" not in svg.lower() or "NaN" not in svg

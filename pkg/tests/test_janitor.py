import json
from pathlib import Path

import pytest

from ivrepro.errors import AnchorAmbiguous, AnchorNotFound, EsampleSourceNotFound
from ivrepro.ivspec import IVSpecification
from ivrepro.janitor import (apply_repair_rules, default_rules, inject_export,
                             load_janitor_config, plan_esample, repair_script,
                             rewrite_capture_drop, repro_path)
from ivrepro.stata import SourceScript, segment_commands

GOLDEN_DIR = Path(__file__).parent / "fixtures" / "janitor"


def stata(text, path="t.do"):
    return SourceScript.from_text(text, path=path)


def r_script(text, path="t.R"):
    return SourceScript.from_text(text, path=path, language="r")


class TestPathRules:
    def test_cd_commented_with_log_entry(self):
        s = stata('cd "C:\\Users\\john\\data"\nreg y x\n')
        out, log = apply_repair_rules(s)
        assert out.text.splitlines()[0].startswith("// [janitor:path.cd]")
        assert log[0].rule_id == "path.cd" and log[0].line == 1

    def test_use_path_relativized(self):
        s = stata('use "C:\\Users\\john\\data\\main.dta", clear\n')
        out, log = apply_repair_rules(s)
        assert 'use "main.dta", clear' in out.text
        assert log[0].rule_id == "path.relativize"

    def test_global_path_macro_inlined_then_commented(self):
        s = stata('global datadir "C:\\data"\nuse "$datadir\\panel.dta", clear\nreg y x\n')
        out, log = apply_repair_rules(s)
        lines = out.text.splitlines()
        assert lines[0].startswith("// [janitor:path.global.def]")
        assert 'use "panel.dta", clear' in out.text
        rule_ids = {e.rule_id for e in log}
        assert "path.global.def" in rule_ids

    def test_setwd_commented_in_r(self):
        s = r_script('setwd("/home/author/project")\nx <- 1\n')
        out, _ = apply_repair_rules(s)
        assert out.text.splitlines()[0].startswith("# [janitor:path.setwd]")

    def test_relative_path_untouched(self):
        s = stata('use "data/main.dta", clear\n')
        out, log = apply_repair_rules(s)
        assert out.text == s.text and log == []


class TestSuppressRules:
    def test_stata_graphics_commented(self):
        s = stata("graph twoway (scatter y x)\nreg y x\n")
        out, _ = apply_repair_rules(s)
        assert out.text.splitlines()[0].startswith("// [janitor:graphics]")
        assert out.text.splitlines()[1] == "reg y x"

    def test_graphics_false_positive_untouched(self):
        s = r_script("x <- estimate_plot_data(df)\n")
        out, log = apply_repair_rules(s)
        assert out.text == s.text and log == []

    def test_string_literal_untouched(self):
        s = r_script('msg <- "see plot(x) for details"\n')
        out, log = apply_repair_rules(s)
        assert out.text == s.text and log == []

    def test_deprecated_r_packages(self):
        s = r_script("library(rgdal)\nlibrary(dplyr)\nrequire(maptools)\n")
        out, _ = apply_repair_rules(s)
        lines = out.text.splitlines()
        assert lines[0].startswith("# [janitor:package.deprecated]")
        assert lines[1] == "library(dplyr)"
        assert lines[2].startswith("# [janitor:package.deprecated]")

    def test_deprecated_list_extendable_without_code(self, tmp_path):
        cfg_path = tmp_path / "janitor.json"
        cfg_path.write_text(json.dumps({"deprecated_r_packages": ["oldpkg"]}))
        cfg = load_janitor_config(cfg_path)
        s = r_script("library(oldpkg)\n")
        out, _ = apply_repair_rules(s, config=cfg)
        assert out.text.startswith("# [janitor:package.deprecated]")

    def test_output_table_and_log_commands(self):
        s = stata("log using results.log, replace\nesttab using t.tex\nreg y x\nlog close\n")
        out, _ = apply_repair_rules(s)
        lines = out.text.splitlines()
        assert lines[0].startswith("// [janitor:logging]")
        assert lines[1].startswith("// [janitor:output_table]")
        assert lines[2] == "reg y x"
        assert lines[3].startswith("// [janitor:logging]")

    def test_parmest_block_commented_as_unit(self):
        s = stata("parmest, saving(est.dta)\nuse est.dta, clear\nrestore\nreg y x\n")
        out, _ = apply_repair_rules(s)
        lines = out.text.splitlines()
        assert all(l.startswith("// [janitor:parmest.block]") for l in lines[:3])
        assert lines[3] == "reg y x"


class TestMergeRule:
    def test_pre11_merge_rewritten(self):
        s = stata('merge cow year using "file.dta"\n')
        out, log = apply_repair_rules(s)
        assert out.text == 'merge m:1 cow year using "file.dta"\n'
        assert log[0].rule_id == "merge.m1"

    def test_modern_merge_untouched(self):
        s = stata('merge 1:1 id using "file.dta"\n')
        out, log = apply_repair_rules(s)
        assert out.text == s.text

    def test_golden_file(self):
        src = SourceScript.load(GOLDEN_DIR / "class5_merge.do")
        out, _ = apply_repair_rules(src)
        assert out.text == (GOLDEN_DIR / "class5_merge.golden.do").read_text()


class TestCaptureDrop:
    def test_backup_restore_golden(self):
        src = SourceScript.load(GOLDEN_DIR / "class3_capture_drop.do")
        out, _ = repair_script(src)
        golden = (GOLDEN_DIR / "class3_capture_drop.golden.do").read_text()
        assert out.text == golden
        assert "capture rename __jbak_vb vb" in out.text  # the restore branch

    def test_gen_without_capture_drop_unchanged(self):
        s = stata("gen vb = a + b\n")
        assert rewrite_capture_drop(s).text == s.text

    def test_rewrite_idempotent(self):
        s = stata("capture drop vb\ngen vb = a + b\nreg y vb\n")
        once = rewrite_capture_drop(s)
        twice = rewrite_capture_drop(once)
        assert once.text == twice.text


class TestRepairIdempotence:
    @pytest.mark.parametrize("fixture", [
        "class1_paths.do", "class3_capture_drop.do", "class5_merge.do",
        "class10_delimit.do",
    ])
    def test_stata_fixture_idempotent(self, fixture):
        src = SourceScript.load(GOLDEN_DIR / fixture)
        once, log1 = repair_script(src)
        twice, log2 = repair_script(once)
        assert once.text == twice.text
        assert log2 == []

    def test_r_fixture_idempotent(self):
        src = SourceScript.load(GOLDEN_DIR / "class8_graphics.R")
        once, _ = repair_script(src)
        twice, log2 = repair_script(once)
        assert once.text == twice.text and log2 == []

    def test_audit_completeness(self):
        src = SourceScript.load(GOLDEN_DIR / "class1_paths.do")
        out, log = apply_repair_rules(src)
        before = src.text.splitlines()
        after = out.text.splitlines()
        changed = {i + 1 for i, (a, b) in enumerate(zip(before, after)) if a != b}
        logged = set()
        for e in log:
            span = len(e.original.splitlines())
            logged.update(range(e.line, e.line + span))
        assert changed == {l for l in logged
                           if l <= len(before) and before[l - 1] != after[l - 1]}
        for e in log:
            assert e.original != e.replacement


def rueda_spec(line=3, cond="e(sample)"):
    return IVSpecification(
        outcome="e_vote_buying", treatment="lm_pob_mesa",
        instruments=["lz_pob_mesa_f"], controls=["l4.margin_index2"],
        cluster_vars=["muni_code"], if_condition=cond,
        source_file="main.do", line=line,
        command_text="ivreg2 e_vote_buying l4.margin_index2 "
                     "(lm_pob_mesa = lz_pob_mesa_f)"
                     + (f" if {cond}" if cond else "") + ", cluster(muni_code)")


ESAMPLE_SCRIPT = """use "panel.dta", clear
reg e_vote_buying lm_pob_mesa l4.margin_index2, cluster(muni_code)
ivreg2 e_vote_buying l4.margin_index2 (lm_pob_mesa = lz_pob_mesa_f) if e(sample), cluster(muni_code)
"""


class TestPlanEsample:
    def test_esample_full_panel_plan(self):
        plan = plan_esample(stata(ESAMPLE_SCRIPT, path="main.do"), rueda_spec())
        assert plan.mode == "esample_full_panel"
        assert plan.flag_column == "janitor_esample"
        assert plan.reestimation.startswith("reg e_vote_buying")

    def test_plain_spec_post_command(self):
        text = "use \"p.dta\", clear\nivreg2 y (d = z), cluster(g)\n"
        spec = IVSpecification(outcome="y", treatment="d", instruments=["z"],
                               cluster_vars=["g"], source_file="m.do", line=2,
                               command_text="ivreg2 y (d = z), cluster(g)")
        plan = plan_esample(stata(text, path="m.do"), spec)
        assert plan.mode == "post_command"
        assert plan.flag_column is None and plan.reestimation is None

    def test_capture_noisily_source_found(self):
        text = ("use \"p.dta\", clear\n"
                "capture noisily reg e_vote_buying lm_pob_mesa, cluster(muni_code)\n"
                "ivreg2 e_vote_buying l4.margin_index2 (lm_pob_mesa = lz_pob_mesa_f) "
                "if e(sample), cluster(muni_code)\n")
        plan = plan_esample(stata(text, path="main.do"), rueda_spec(line=3))
        assert plan.reestimation.startswith("reg e_vote_buying lm_pob_mesa")

    def test_no_prior_estimation_fails(self):
        text = ("use \"p.dta\", clear\n"
                "sum y\n"
                "ivreg2 e_vote_buying l4.margin_index2 (lm_pob_mesa = lz_pob_mesa_f) "
                "if e(sample), cluster(muni_code)\n")
        with pytest.raises(EsampleSourceNotFound):
            plan_esample(stata(text, path="main.do"), rueda_spec(line=3))


class TestInjection:
    def test_block_after_target_with_flag(self):
        script = stata(ESAMPLE_SCRIPT, path="main.do")
        plan = plan_esample(script, rueda_spec())
        out = inject_export(script, plan)
        txt = out.text
        assert txt.count("##REPRO_MARKER spec=1") == 1
        assert "quietly gen byte janitor_esample = e(sample)" in txt
        assert 'export delimited using "analysis_data_spec_1.csv", replace' in txt
        # reestimation lands before the target command
        assert txt.index("quietly reg e_vote_buying") < txt.index("ivreg2 ")

    def test_delimit_region_wrapped(self):
        src = SourceScript.load(GOLDEN_DIR / "class10_delimit.do")
        spec = IVSpecification(outcome="y", treatment="d", instruments=["z"],
                               cluster_vars=["g"], source_file="class10_delimit.do",
                               line=3, command_text="ivreg2 y (d = z), cluster(g)")
        plan = plan_esample(src, spec)
        out = inject_export(src, plan)
        golden = (GOLDEN_DIR / "class10_delimit.golden.do").read_text()
        assert out.text == golden
        assert "#delimit cr" in out.text.split("##REPRO_MARKER")[0].rsplit("ivreg2", 1)[1]

    def test_continuation_anchor_lands_after_full_command(self):
        text = ("use \"p.dta\", clear\n"
                "ivreg2 y ///\n"
                "  x1 ///\n"
                "  (d = z), cluster(g)\n"
                "sum y\n")
        spec = IVSpecification(outcome="y", treatment="d", instruments=["z"],
                               controls=["x1"], cluster_vars=["g"],
                               source_file="m.do", line=2,
                               command_text="ivreg2 y x1 (d = z), cluster(g)")
        script = stata(text, path="m.do")
        plan = plan_esample(script, spec)
        out = inject_export(script, plan)
        lines = out.text.splitlines()
        marker_at = next(i for i, l in enumerate(lines) if "REPRO_MARKER" in l)
        assert lines[marker_at - 2].strip().startswith("(d = z)")

    def test_two_plans_content_anchored(self):
        text = ("use \"p.dta\", clear\n"
                "ivreg2 y1 (d = z), cluster(g)\n"
                "ivreg2 y2 (d = z), cluster(g)\n")
        script = stata(text, path="m.do")
        s1 = IVSpecification(outcome="y1", treatment="d", instruments=["z"],
                             cluster_vars=["g"], source_file="m.do", line=2,
                             command_text="ivreg2 y1 (d = z), cluster(g)")
        s2 = IVSpecification(outcome="y2", treatment="d", instruments=["z"],
                             cluster_vars=["g"], source_file="m.do", line=3,
                             command_text="ivreg2 y2 (d = z), cluster(g)")
        p1 = plan_esample(script, s1, spec_index=1)
        p2 = plan_esample(script, s2, spec_index=2)
        anchors = [p1.anchor, p2.anchor]
        out = inject_export(script, p1, protected_anchors=anchors)
        out = inject_export(out, p2, protected_anchors=anchors)
        txt = out.text
        assert txt.count("##REPRO_MARKER spec=1") == 1
        assert txt.count("##REPRO_MARKER spec=2") == 1
        assert txt.index("spec=1") < txt.index("spec=2")
        assert txt.index("analysis_data_spec_1.csv") < txt.index("ivreg2 y2")

    def test_nontarget_iv_commented_out(self):
        text = ("ivreg2 y1 (d = z), cluster(g)\n"
                "ivreg2 y_other (d = z2), cluster(g)\n")
        script = stata(text, path="m.do")
        spec = IVSpecification(outcome="y1", treatment="d", instruments=["z"],
                               cluster_vars=["g"], source_file="m.do", line=1,
                               command_text="ivreg2 y1 (d = z), cluster(g)")
        plan = plan_esample(script, spec)
        out = inject_export(script, plan)
        lines = out.text.splitlines()
        nontarget = next(l for l in lines if "y_other" in l)
        assert nontarget.startswith("// [janitor:inject.comment_nontarget_iv]")

    def test_anchor_not_found(self):
        script = stata("reg y x\n", path="m.do")
        from ivrepro.janitor import ExportPlan
        plan = ExportPlan(spec_index=1, anchor="ivreg2 y (d = z)",
                          mode="post_command", treatment="d")
        with pytest.raises(AnchorNotFound):
            inject_export(script, plan)

    def test_anchor_ambiguous(self):
        script = stata("ivreg2 y (d = z)\nivreg2 y (d = z)\n", path="m.do")
        from ivrepro.janitor import ExportPlan
        plan = ExportPlan(spec_index=1, anchor="ivreg2 y (d = z)",
                          mode="post_command", treatment="d")
        with pytest.raises(AnchorAmbiguous):
            inject_export(script, plan)

    def test_original_statements_survive_in_order(self):
        script = stata(ESAMPLE_SCRIPT, path="main.do")
        plan = plan_esample(script, rueda_spec())
        out = inject_export(script, plan)
        kept = [c.logical_text for c in segment_commands(out).commands
                if not c.logical_text.startswith(("display", "export", "quietly",
                                                  "capture"))]
        original = [c.logical_text for c in segment_commands(script).commands]
        assert [t for t in kept if t in original] == original


def test_repro_path_suffix():
    assert repro_path("analysis.do").name == "analysis_repro.do"


def test_rule_registry_ids_unique():
    ids = [r.id for r in default_rules()]
    assert len(ids) == len(set(ids))

"""Stage sequencing, resumability, and the two execution backends.

Stages run in the fixed order profile -> fetch -> extract -> clean -> run ->
diagnose -> report, each reading only the declared artifacts of earlier
stages and writing its own into the workspace.  The direct backend estimates
from already-tabular data so the suite needs no Stata installation; the
external backend shells out to the author's interpreter and harvests marked
logs.
"""
from __future__ import annotations

import json
import re
import shutil
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import acquisition, ivspec, janitor, reporter, workspace as ws_mod
from .diagnostics import run_template
from .errors import (InterpreterMissing, NoSpecificationsFound, PipelineError,
                     ResumePrereqMissing, StageFailed)
from .estimator import build_design, compare_estimates, fit_2sls, prepare
from .janitor import REGISTRY_VERSION
from .resolver import PanelSpec
from .stata import SourceScript, segment_commands
from .workspace import (STAGES, StageRecord, Workspace, append_stage_record,
                        latest_records, run_external, utc_now)

FULL_VERSION = f"{ws_mod.PIPELINE_VERSION}+{REGISTRY_VERSION}"

NA_VALUES = ["", "."]

SCRIPT_EXTS = (".do", ".r", ".py")


@dataclass
class PipelineConfig:
    seed: int = 42
    iters: int = 1000
    max_obs: int = 100000
    timeout: float = 600
    cluster_limit: int = 2000
    obs_sample: int = 200
    workers: int = 1
    direct: bool = False
    paper_text: str | None = None
    package_dir: str | None = None
    interpreter_paths: dict = field(default_factory=dict)
    transport: object = None          # injectable for tests; not serialized

    def __post_init__(self):
        for name in ("seed", "iters", "max_obs", "timeout", "cluster_limit",
                     "obs_sample", "workers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")

    def to_json_dict(self):
        d = asdict(self)
        d.pop("transport", None)
        return d


# --------------------------------------------------------------------------
# artifact paths

def _study_info_path(ws):
    return ws.work / "study_info.json"


def _metadata_path(ws):
    return ws.work / "metadata.json"


def _panel_path(ws):
    return ws.work / "panel.json"


def _cleaning_log_path(ws):
    return ws.work / "cleaning_log.json"


def _estimates_path(ws):
    return ws.work / "estimates.json"


def _diagnostics_path(ws):
    return ws.work / "diagnostics.json"


def _analysis_data_path(ws, k):
    return ws.work / f"analysis_data_spec_{k}.csv"


def _report_path(ws):
    return ws.out / "report.md"


# --------------------------------------------------------------------------
# stage implementations

def stage_profile(ws: Workspace, config: PipelineConfig):
    if config.paper_text:
        text = Path(config.paper_text).read_text(encoding="utf-8", errors="replace")
        info = acquisition.extract_study_info(text)
    elif _study_info_path(ws).exists():
        return [str(_study_info_path(ws))]
    elif config.package_dir:
        info = acquisition.StudyInfo(title=ws.study_id, authors="", year="",
                                     journal="", replication_url="")
    else:
        raise StageFailed("profile", "no --paper-text given and no study_info.json present")
    acquisition.write_study_info(info, _study_info_path(ws))
    return [str(_study_info_path(ws))]


def stage_fetch(ws: Workspace, config: PipelineConfig):
    manifest_path = ws.raw / "manifest.json"
    if config.package_dir:
        manifest = acquisition.manifest_from_directory(config.package_dir, ws.raw)
    else:
        info = json.loads(_study_info_path(ws).read_text(encoding="utf-8"))
        url = info.get("replication_url", "")
        if not url:
            raise StageFailed("fetch", "study_info.json has no replication_url; "
                                       "use --package-dir to supply materials")
        ref = acquisition.classify_repository(url)
        manifest = acquisition.fetch_package(ref, ws.raw, transport=config.transport)
    acquisition.write_manifest(manifest, manifest_path)
    return [str(manifest_path)]


def _package_scripts(ws):
    scripts = []
    for p in sorted(ws.raw.rglob("*")):
        if p.suffix.lower() in SCRIPT_EXTS and p.is_file():
            scripts.append(SourceScript.load(p))
    return scripts


def _detect_panel(scripts):
    for script in scripts:
        if script.language != "stata":
            continue
        for cmd in segment_commands(script).commands:
            m = re.match(r"^(?:xtset|tsset)\s+(\w+)(?:\s+(\w+))?", cmd.logical_text)
            if m and m.group(2):
                return {"unit": m.group(1), "time": m.group(2)}
    return None


def stage_extract(ws: Workspace, config: PipelineConfig):
    scripts = _package_scripts(ws)
    if not scripts:
        raise NoSpecificationsFound("no analysis scripts (.do/.R/.py) in the package")
    specs, issues = ivspec.extract_specifications(scripts)
    for spec in specs:
        spec.source_file = str(Path(spec.source_file).resolve()
                               .relative_to(ws.raw.resolve()))
    ivspec.write_metadata(specs, _metadata_path(ws))
    panel = _detect_panel(scripts)
    _panel_path(ws).write_text(
        json.dumps(panel, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if issues:
        (ws.logs / "extract_issues.txt").write_text(
            "\n".join(issues) + "\n", encoding="utf-8")
    return [str(_metadata_path(ws)), str(_panel_path(ws))]


def stage_clean(ws: Workspace, config: PipelineConfig):
    specs = ivspec.read_metadata(_metadata_path(ws))
    log = []
    artifacts = []

    by_file = {}
    for idx, spec in enumerate(specs, start=1):
        by_file.setdefault(spec.source_file, []).append((idx, spec))

    # repair every script in the package; inject exports into spec-bearing
    # ones.  Executable copies keep their original basenames so build-chain
    # references (`do prep.do`) resolve inside work/.
    for script in _package_scripts(ws):
        rel = str(Path(script.path).resolve().relative_to(ws.raw.resolve()))
        script.path = rel
        repaired, entries = janitor.repair_script(script)
        log.extend(entries)
        items = by_file.get(rel, [])
        if items and script.language == "stata":
            plans = [janitor.plan_esample(repaired, spec, spec_index=idx)
                     for idx, spec in items]
            anchors = [p.anchor for p in plans]
            for plan in plans:
                repaired = janitor.inject_export(repaired, plan,
                                                 protected_anchors=anchors,
                                                 log=log)
        staged = ws.work / Path(rel).name
        if not staged.exists() or items:
            staged.write_text(repaired.text, encoding="utf-8")
        if items:
            audit = ws.work / janitor.repro_path(Path(rel).name).name
            audit.write_text(repaired.text, encoding="utf-8")
            artifacts.append(str(audit))

    # stage the rest of the package flat into work/ so relativized paths hit
    for p in sorted(ws.raw.rglob("*")):
        if not p.is_file() or p.suffix.lower() in SCRIPT_EXTS:
            continue
        if p.name == "manifest.json" and p.parent == ws.raw:
            continue
        target = ws.work / p.name
        if not target.exists():
            shutil.copyfile(p, target)

    janitor.write_cleaning_log(log, _cleaning_log_path(ws))
    artifacts.append(str(_cleaning_log_path(ws)))
    return artifacts


def _load_table(path) -> pd.DataFrame:
    return pd.read_csv(path, na_values=NA_VALUES, keep_default_na=True)


def _data_file_for(ws, spec) -> Path:
    """Locate the tabular data a spec's script loads (direct backend)."""
    script = SourceScript.load(ws.raw / spec.source_file)
    candidates = []
    if script.language == "stata":
        for cmd in segment_commands(script).commands:
            if cmd.first_line > spec.line:
                break
            m = re.search(r"(?:import delimited|insheet)\s+(?:using\s+)?\"([^\"]+)\"",
                          cmd.logical_text)
            if m:
                candidates.append(m.group(1))
                continue
            m = re.match(r"^use\s+\"([^\"]+)\"", cmd.logical_text)
            if m:
                candidates.append(m.group(1))
    else:
        for m in re.finditer(
                r"(?:read\.csv|read_csv|fread|read\.table|read_dta|read\.dta)"
                r"\s*\(\s*[\"']([^\"']+)[\"']", script.text):
            candidates.append(m.group(1))
    search_dirs = [ (ws.raw / spec.source_file).parent, ws.raw ]
    for cand in reversed(candidates):
        name = Path(cand.replace("\\", "/")).name
        stem = Path(name).stem
        for d in search_dirs:
            for suffix in (".csv", ".tab"):
                hit = next(iter(sorted(d.rglob(stem + suffix))), None)
                if hit:
                    return hit
    csvs = sorted(ws.raw.rglob("*.csv"))
    if len(csvs) == 1:
        return csvs[0]
    raise StageFailed("run", f"cannot locate a delimited data file for spec at "
                             f"{spec.source_file}:{spec.line}")


def _panel_for(ws, table) -> PanelSpec | None:
    if not _panel_path(ws).exists():
        return None
    panel = json.loads(_panel_path(ws).read_text(encoding="utf-8"))
    if not panel:
        return None
    if panel["unit"] in table.columns and panel["time"] in table.columns:
        return PanelSpec(unit=panel["unit"], time=panel["time"])
    return None


def _run_direct(ws, config, specs):
    estimates = []
    artifacts = []
    for idx, spec in enumerate(specs, start=1):
        src = _data_file_for(ws, spec)
        sep = "\t" if src.suffix.lower() == ".tab" else ","
        table = pd.read_csv(src, sep=sep, na_values=NA_VALUES)
        out = _analysis_data_path(ws, idx)
        table.to_csv(out, index=False)
        artifacts.append(str(out))
        panel = _panel_for(ws, table)
        bundle = build_design(table, spec, panel=panel)
        fit = fit_2sls(prepare(bundle))
        estimates.append({
            "spec_index": idx,
            "coefficient": fit["second"].coefficient,
            "standard_error": fit["second"].se,
            "n_obs": fit["second"].n,
            "source": "direct",
        })
    return estimates, artifacts


def _run_external(ws, config, specs):
    repaired = sorted(ws.work.glob("*_repro.do"))
    if not repaired:
        raise StageFailed("run", "no repaired scripts to execute")
    estimates = []
    artifacts = []
    for script in repaired:
        record = run_external(script, "stata_batch", timeout=config.timeout,
                              ws=ws, interpreter_paths=config.interpreter_paths)
        artifacts.extend([record.stdout_log, record.stderr_log])
        if record.timed_out:
            raise StageFailed("run", f"{script.name} timed out after "
                                     f"{config.timeout}s")
        # Stata batch mode writes <stem>.log in the working directory
        batch_log = ws.work / (script.stem + ".log")
        log_text = ""
        if batch_log.exists():
            log_text = batch_log.read_text(encoding="utf-8", errors="replace")
        else:
            log_text = Path(record.stdout_log).read_text(encoding="utf-8",
                                                         errors="replace")
        estimates.extend(
            e.__dict__ | {"source": "marked_log"}
            for e in ivspec.parse_marked_log(log_text))
        if record.exit_code != 0:
            raise StageFailed("run", f"{script.name} exited {record.exit_code}")
    for idx in range(1, len(specs) + 1):
        if not _analysis_data_path(ws, idx).exists():
            raise StageFailed("run", f"expected export analysis_data_spec_{idx}.csv "
                                     f"was not produced")
        artifacts.append(str(_analysis_data_path(ws, idx)))
    return estimates, artifacts


def stage_run(ws: Workspace, config: PipelineConfig):
    specs = ivspec.read_metadata(_metadata_path(ws))
    if config.direct:
        estimates, artifacts = _run_direct(ws, config, specs)
    else:
        try:
            estimates, artifacts = _run_external(ws, config, specs)
        except InterpreterMissing as exc:
            # fall back to direct estimation when the data is already tabular
            try:
                estimates, artifacts = _run_direct(ws, config, specs)
            except PipelineError:
                raise StageFailed("run", f"{exc}; and no tabular data for the "
                                         f"direct fallback") from exc
    _estimates_path(ws).write_text(
        json.dumps(estimates, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts.append(str(_estimates_path(ws)))
    return artifacts


def stage_diagnose(ws: Workspace, config: PipelineConfig):
    specs = ivspec.read_metadata(_metadata_path(ws))
    references = {e["spec_index"]: e for e in
                  json.loads(_estimates_path(ws).read_text(encoding="utf-8"))}
    results = []
    failures = []
    for idx, spec in enumerate(specs, start=1):
        try:
            table = _load_table(_analysis_data_path(ws, idx))
            panel = _panel_for(ws, table)
            bundle = build_design(table, spec, panel=panel)
            db = run_template(
                bundle, spec.to_json_dict(), seed=config.seed,
                iters=config.iters, max_obs=config.max_obs,
                cluster_limit=config.cluster_limit,
                obs_sample=config.obs_sample, workers=config.workers)
            entry = db.to_json_dict()
            ref = references.get(idx)
            if ref is not None:
                match = compare_estimates(ref["coefficient"], db.tsls.coefficient)
                cv = match.to_json_dict() | {"reference_source": ref.get("source", "")}
                ref_se = ref.get("standard_error")
                if ref_se is not None:
                    se_match = compare_estimates(ref_se, db.tsls.se)
                    cv["se_pass"] = se_match.passed
                    if match.passed and not se_match.passed:
                        cv["note"] = "VCOV convention mismatch"
                entry["cross_validation"] = cv
            results.append(entry)
        except (PipelineError, ValueError, KeyError, OSError,
                np.linalg.LinAlgError) as exc:
            failures.append({"spec_index": idx, "error": f"{type(exc).__name__}: {exc}"})
    if not results:
        raise StageFailed("diagnose", f"all specifications failed: {failures}")
    doc = {
        "pipeline_version": FULL_VERSION,
        "seed": config.seed,
        "iters": config.iters,
        "specs": results,
        "failed_specs": failures,
    }
    _diagnostics_path(ws).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [str(_diagnostics_path(ws))]


def stage_report(ws: Workspace, config: PipelineConfig):
    doc = json.loads(_diagnostics_path(ws).read_text(encoding="utf-8"))
    study_info = json.loads(_study_info_path(ws).read_text(encoding="utf-8"))
    bundles = doc["specs"]
    text = reporter.render_report(bundles, study_info, doc["pipeline_version"],
                                  seed=doc["seed"], iters=doc["iters"])
    _report_path(ws).write_text(text, encoding="utf-8")
    artifacts = [str(_report_path(ws))]
    fig_dir = ws.out / "figures"
    for i, b in enumerate(bundles, start=1):
        artifacts.extend(reporter.emit_figures(b, fig_dir, i))
    return artifacts


STAGE_FUNCS = {
    "profile": stage_profile,
    "fetch": stage_fetch,
    "extract": stage_extract,
    "clean": stage_clean,
    "run": stage_run,
    "diagnose": stage_diagnose,
    "report": stage_report,
}


# --------------------------------------------------------------------------
# driver

def run_pipeline(ws: Workspace, config: PipelineConfig,
                 from_stage: str | None = None, to_stage: str | None = None,
                 raise_on_failure: bool = False) -> list:
    """Execute the stage sequence, resuming from `from_stage` if given.

    Returns one StageRecord per stage.  On a stage failure the remaining
    stages are recorded as skipped; the failure raises only when
    `raise_on_failure` is set.
    """
    if from_stage is not None and from_stage not in STAGES:
        raise ValueError(f"unknown stage {from_stage!r}")
    if to_stage is not None and to_stage not in STAGES:
        raise ValueError(f"unknown stage {to_stage!r}")
    start = STAGES.index(from_stage) if from_stage else 0
    stop = STAGES.index(to_stage) if to_stage else len(STAGES) - 1

    records = []
    config_dict = config.to_json_dict()

    if start > 0:
        prior = latest_records(ws)
        for stage in STAGES[:start]:
            rec = prior.get(stage)
            reused = rec is not None and rec.status == "skipped" \
                and rec.detail == "reused"
            if rec is None or (rec.status != "ok" and not reused):
                raise ResumePrereqMissing(
                    f"cannot resume from {from_stage}: stage {stage} has no "
                    f"ok record")
            missing = [a for a in rec.artifacts if not Path(a).exists()]
            if missing:
                raise ResumePrereqMissing(
                    f"cannot resume from {from_stage}: stage {stage} artifacts "
                    f"missing on disk: {missing}")
        for stage in STAGES[:start]:
            rec = StageRecord(stage=stage, status="skipped", started=utc_now(),
                              ended=utc_now(), detail="reused",
                              artifacts=prior[stage].artifacts,
                              config=config_dict)
            append_stage_record(ws, rec)
            records.append(rec)

    failed_stage = None
    first_error = None
    for stage in STAGES[start:stop + 1]:
        if failed_stage is not None:
            rec = StageRecord(stage=stage, status="skipped", started=utc_now(),
                              ended=utc_now(), detail=f"blocked by {failed_stage}",
                              config=config_dict)
            append_stage_record(ws, rec)
            records.append(rec)
            continue
        started = utc_now()
        try:
            artifacts = STAGE_FUNCS[stage](ws, config)
            rec = StageRecord(stage=stage, status="ok", started=started,
                              ended=utc_now(), artifacts=artifacts,
                              config=config_dict)
        except (PipelineError, OSError, ValueError, KeyError) as exc:
            # corrupt or missing artifacts are expected failure modes here,
            # not bugs: record and skip the rest
            rec = StageRecord(stage=stage, status="failed", started=started,
                              ended=utc_now(),
                              error=f"{type(exc).__name__}: {exc}",
                              config=config_dict)
            failed_stage = stage
            first_error = exc
        append_stage_record(ws, rec)
        records.append(rec)

    if failed_stage is not None and raise_on_failure:
        raise StageFailed(failed_stage, first_error)
    return records

"""Workspaces, stage records, the knowledge base, and external execution.

One study = one workspace with four fixed subdirectories (raw/, work/, out/,
logs/).  Stage records land in logs/stages.jsonl as JSON lines with the
schema {stage, status, started, ended, error, artifacts, detail,
pipeline_version, config}; the last record per stage wins when resuming.
Filesystem failures surface as the built-in OSError.
"""
from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

from .errors import InterpreterMissing, InvalidStudyId

PIPELINE_VERSION = "0.1.0"

STAGES = ("profile", "fetch", "extract", "clean", "run", "diagnose", "report")

STUDY_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

INTERPRETERS = ("stata_batch", "r_script", "python", "none")

DEFAULT_TIMEOUT = 600


@dataclass
class Workspace:
    study_id: str
    root: Path
    pipeline_version: str = PIPELINE_VERSION

    @property
    def raw(self):
        return self.root / "raw"

    @property
    def work(self):
        return self.root / "work"

    @property
    def out(self):
        return self.root / "out"

    @property
    def logs(self):
        return self.root / "logs"

    @property
    def stage_log_path(self):
        return self.logs / "stages.jsonl"

    @property
    def knowledge_base_path(self):
        return self.logs / "knowledge_base.md"


def init_workspace(study_id: str, root) -> Workspace:
    """Create (idempotently) the directory skeleton and version stamp."""
    if not study_id or not STUDY_ID_RE.match(study_id):
        raise InvalidStudyId(f"study id {study_id!r} is not filesystem-safe")
    root = Path(root)
    ws = Workspace(study_id=study_id, root=root)
    for sub in (ws.raw, ws.work, ws.out, ws.logs):
        sub.mkdir(parents=True, exist_ok=True)
    stamp = root / "pipeline_version.txt"
    stamp.write_text(PIPELINE_VERSION + "\n", encoding="utf-8")
    return ws


@dataclass
class StageRecord:
    stage: str
    status: str                   # ok | failed | skipped
    started: str
    ended: str
    error: str | None = None
    artifacts: list = field(default_factory=list)
    detail: str = ""              # "reused" on resume, "blocked by <stage>" on skip
    pipeline_version: str = PIPELINE_VERSION
    config: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {"stage": self.stage, "status": self.status,
                "started": self.started, "ended": self.ended,
                "error": self.error, "artifacts": list(self.artifacts),
                "detail": self.detail, "pipeline_version": self.pipeline_version,
                "config": dict(self.config)}


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def append_stage_record(ws: Workspace, record: StageRecord):
    ws.logs.mkdir(parents=True, exist_ok=True)
    with ws.stage_log_path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")


def read_stage_records(ws: Workspace) -> list:
    if not ws.stage_log_path.exists():
        return []
    records = []
    for line in ws.stage_log_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        records.append(StageRecord(
            stage=d["stage"], status=d["status"], started=d["started"],
            ended=d["ended"], error=d.get("error"),
            artifacts=d.get("artifacts", []), detail=d.get("detail", ""),
            pipeline_version=d.get("pipeline_version", ""),
            config=d.get("config", {})))
    return records


def latest_records(ws: Workspace) -> dict:
    out = {}
    for rec in read_stage_records(ws):
        out[rec.stage] = rec
    return out


# --------------------------------------------------------------------------
# knowledge base

@dataclass
class ResolutionEntry:
    date: str
    title: str
    context: str
    problem: str
    fix: str
    impact: str


def append_resolution(entry: ResolutionEntry, kb_path) -> Path:
    """Append one structured block to the knowledge-base file.

    Entries are append-only; prior blocks are never touched.
    """
    for name in ("title", "context", "problem", "fix", "impact"):
        if not getattr(entry, name, "").strip():
            raise ValueError(f"resolution entry field {name!r} must be non-empty")
    date.fromisoformat(entry.date)  # raises ValueError on bad dates
    block = (
        f"## [{entry.date}] {entry.title}\n\n"
        f"**Context:** {entry.context}\n"
        f"**Problem:** {entry.problem}\n"
        f"**Fix:** {entry.fix}\n"
        f"**Impact:** {entry.impact}\n\n"
    )
    kb_path = Path(kb_path)
    kb_path.parent.mkdir(parents=True, exist_ok=True)
    with kb_path.open("a", encoding="utf-8") as fh:
        fh.write(block)
    return kb_path


# --------------------------------------------------------------------------
# external execution

@dataclass
class ExecutionRecord:
    interpreter: str
    command_line: str
    exit_code: int
    duration: float
    stdout_log: str
    stderr_log: str
    timed_out: bool = False

    @property
    def ok(self):
        return self.exit_code == 0 and not self.timed_out


def find_interpreter(interpreter: str, paths: dict | None = None) -> str:
    """Resolve the binary for an interpreter from config, env, or PATH."""
    paths = paths or {}
    if interpreter == "none":
        raise InterpreterMissing("interpreter 'none' cannot execute scripts")
    if interpreter not in INTERPRETERS:
        raise InterpreterMissing(f"unknown interpreter {interpreter!r}")
    if paths.get(interpreter):
        return paths[interpreter]
    if interpreter == "stata_batch":
        env = os.environ.get("STATA_BIN")
        if env:
            return env
        for name in ("stata-mp", "stata-se", "stata"):
            found = shutil.which(name)
            if found:
                return found
        raise InterpreterMissing(
            "no Stata binary: set STATA_BIN or configure interpreter paths")
    if interpreter == "r_script":
        env = os.environ.get("RSCRIPT_BIN")
        if env:
            return env
        found = shutil.which("Rscript")
        if found:
            return found
        raise InterpreterMissing("no Rscript binary on PATH")
    return sys.executable  # python


def run_external(script, interpreter: str, timeout: float = DEFAULT_TIMEOUT,
                 ws: Workspace | None = None,
                 interpreter_paths: dict | None = None) -> ExecutionRecord:
    """Run one script in batch mode with captured output.

    Working directory is the workspace work/ dir when given.  Log files exist
    even if the process fails or times out.
    """
    script = Path(script)
    binary = find_interpreter(interpreter, interpreter_paths)
    if interpreter == "stata_batch":
        cmd = [binary, "-b", "do", script.name]
    else:
        cmd = [binary, str(script)]
    cwd = ws.work if ws is not None else script.parent
    log_dir = ws.logs if ws is not None else script.parent
    log_dir.mkdir(parents=True, exist_ok=True)
    stdout_log = log_dir / f"{script.stem}.out.log"
    stderr_log = log_dir / f"{script.stem}.err.log"

    started = time.monotonic()
    timed_out = False
    with stdout_log.open("wb") as out_fh, stderr_log.open("wb") as err_fh:
        proc = subprocess.Popen(cmd, cwd=str(cwd), stdout=out_fh, stderr=err_fh)
        try:
            exit_code = proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
            exit_code = -9
            timed_out = True
    duration = time.monotonic() - started
    return ExecutionRecord(
        interpreter=interpreter, command_line=" ".join(cmd),
        exit_code=exit_code, duration=duration,
        stdout_log=str(stdout_log), stderr_log=str(stderr_log),
        timed_out=timed_out)

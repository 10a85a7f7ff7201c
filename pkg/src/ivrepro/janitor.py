"""Source-to-source repair of author scripts for headless batch execution.

Every change is audited: one cleaning-log entry per applied rule instance,
with the pre-transformation line number.  Repairs are idempotent -- running
the pass on its own output changes nothing, because rewritten lines carry a
``[janitor:<rule>]`` marker and rewritten constructs no longer match their
rule.  Injection of export/marker blocks is anchored by content, never by
line number, so repeated injections cannot drift.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import AnchorAmbiguous, AnchorNotFound, EsampleSourceNotFound
from .stata import SourceScript, segment_commands, build_macro_table

REGISTRY_VERSION = "rules-1.0"

MARKER_TAG = "[janitor:"

# verbs whose run leaves e(sample) / e(b) behind
ESTIMATION_VERBS = (
    "regress", "reg", "ivreg2", "ivregress", "xtivreg2", "xtreg", "areg",
    "reghdfe", "probit", "logit", "ologit", "oprobit", "poisson", "nbreg",
    "tobit", "ivprobit", "ivtobit", "qreg", "rreg", "glm", "cnsreg",
)

STATA_GRAPHICS_VERBS = (
    "graph", "twoway", "histogram", "scatter", "kdensity", "spmap",
    "binscatter", "cibplot", "marginsplot", "coefplot", "grmap",
)
STATA_INTERACTIVE_VERBS = ("pause", "browse", "edit", "window")
STATA_OUTPUT_VERBS = ("outreg2", "outreg", "esttab", "estout", "outtable",
                      "tabout", "texsave", "sutex")
STATA_LOG_VERBS = ("log", "cmdlog", "translate")

DEPRECATED_R_PACKAGES = ("rgdal", "rgeos", "maptools")
R_GRAPHICS_FUNCS = ("plot", "ggplot", "ggsave", "pdf", "png", "jpeg", "tiff",
                    "dev.off", "hist", "barplot", "boxplot", "x11", "quartz")
R_INTERACTIVE_FUNCS = ("View", "browser", "readline", "file.choose")
R_OUTPUT_FUNCS = ("stargazer", "modelsummary", "texreg", "htmlreg")
PY_GRAPHICS_PATTERNS = (r"plt\.show", r"plt\.savefig", r"\.show")
PY_INTERACTIVE_FUNCS = ("input", "breakpoint")

STATA_PATH_CMDS = ("use", "do", "run", "save", "import", "export", "insheet",
                   "outsheet", "append", "merge", "joinby", "include")
R_IO_FUNCS = ("read.csv", "read.table", "read.dta", "read_dta", "read_csv",
              "readRDS", "load", "source", "write.csv", "fread", "haven::read_dta")

ABS_PATH_RE = re.compile(r'"((?:[A-Za-z]:[\\/]|/(?!/)|~[/\\])[^"]*)"')


@dataclass
class RepairRule:
    id: str
    variation_class: int
    matcher: str
    action: str  # comment_out | rewrite | inject


@dataclass
class CleaningLogEntry:
    file: str
    line: int
    rule_id: str
    original: str
    replacement: str

    def to_json_dict(self):
        return {"file": self.file, "line": self.line, "rule_id": self.rule_id,
                "original": self.original, "replacement": self.replacement}


@dataclass
class ExportPlan:
    spec_index: int
    anchor: str                     # logical text of the target command
    mode: str                       # post_command | esample_full_panel
    flag_column: str | None = None
    reestimation: str | None = None
    treatment: str = ""


def default_rules():
    """The version-stamped registry of repair rules."""
    return [
        RepairRule("path.cd", 1, "cd to an absolute directory", "comment_out"),
        RepairRule("path.setwd", 1, "R setwd() call", "comment_out"),
        RepairRule("path.relativize", 1, "absolute path in an IO command", "rewrite"),
        RepairRule("path.global.def", 1, "global macro holding an absolute path", "comment_out"),
        RepairRule("path.global.inline", 1, "inline a path macro reference", "rewrite"),
        RepairRule("graphics", 8, "graphics command in batch mode", "comment_out"),
        RepairRule("interactive", 8, "interactive command in batch mode", "comment_out"),
        RepairRule("output_table", 8, "output-table package call", "comment_out"),
        RepairRule("logging", 1, "author log using/close", "comment_out"),
        RepairRule("package.deprecated", 9, "deprecated R package load", "comment_out"),
        RepairRule("merge.m1", 5, "pre-Stata-11 merge without key clause", "rewrite"),
        RepairRule("parmest.block", 10, "parmest..restore block", "comment_out"),
        RepairRule("capture_drop.backup", 3, "capture drop X; gen X = expr", "rewrite"),
        RepairRule("inject.export", 10, "data export + estimate marker", "inject"),
        RepairRule("inject.reestimation", 5, "re-run e(sample) source before target", "inject"),
        RepairRule("inject.comment_nontarget_iv", 5, "comment non-target IV command", "comment_out"),
    ]


def load_janitor_config(path=None):
    """Seeded suppression/deprecation lists, extendable without code changes."""
    cfg = {
        "deprecated_r_packages": list(DEPRECATED_R_PACKAGES),
        "stata_graphics_verbs": list(STATA_GRAPHICS_VERBS),
    }
    if path and Path(path).exists():
        extra = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in cfg:
            cfg[key] = list(dict.fromkeys(cfg[key] + list(extra.get(key, []))))
    return cfg


def _comment_prefix(language):
    return "// " if language == "stata" else "# "


def _mark(language, rule_id):
    return f"{_comment_prefix(language)}{MARKER_TAG}{rule_id}] "


def _is_marked(line):
    return MARKER_TAG in line


def _in_string(line, pos):
    quote = None
    for i, ch in enumerate(line[:pos]):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
    return quote is not None


def _strip_stata_prefixes(text):
    t = text.strip()
    while True:
        parts = t.split(None, 1)
        if parts and parts[0].rstrip(":") in ("quietly", "qui", "noisily",
                                              "noi", "capture", "cap"):
            t = parts[1].strip() if len(parts) > 1 else ""
            continue
        m = re.match(r"^by(?:sort)?\s+[\w\s]+?:\s*(.*)$", t)
        if m:
            t = m.group(1).strip()
            continue
        return t


def _verb_of(logical_text):
    t = _strip_stata_prefixes(logical_text)
    return t.split()[0].rstrip(",:") if t.split() else ""


class _Editor:
    """Line-level edit buffer; applies comments/rewrites in one pass."""

    def __init__(self, text, path, language):
        self.lines = text.split("\n")
        self.path = path
        self.language = language
        self.log = []
        self._commented = set()

    def comment_span(self, first_line, last_line, rule_id):
        idx0, idx1 = first_line - 1, last_line - 1
        if any(i in self._commented for i in range(idx0, idx1 + 1)):
            return
        original = "\n".join(self.lines[idx0:idx1 + 1])
        mark = _mark(self.language, rule_id)
        for i in range(idx0, idx1 + 1):
            if not _is_marked(self.lines[i]):
                self.lines[i] = mark + self.lines[i]
            self._commented.add(i)
        replacement = "\n".join(self.lines[idx0:idx1 + 1])
        self.log.append(CleaningLogEntry(self.path, first_line, rule_id,
                                         original, replacement))

    def rewrite_line(self, line_no, new_text, rule_id):
        idx = line_no - 1
        original = self.lines[idx]
        if original == new_text:
            return
        self.lines[idx] = new_text
        self.log.append(CleaningLogEntry(self.path, line_no, rule_id,
                                         original, new_text))

    def text(self):
        return "\n".join(self.lines)


def _relativize_paths(line):
    """Replace quoted absolute paths by their basename."""
    def repl(m):
        p = m.group(1).replace("\\", "/")
        base = p.rstrip("/").rsplit("/", 1)[-1]
        return f'"{base}"'
    return ABS_PATH_RE.sub(repl, line)


def _apply_stata_rules(script, editor, rule_ids, config):
    seg = segment_commands(script)
    table = build_macro_table(seg)
    graphics = tuple(config["stata_graphics_verbs"])

    # path macros: global defs whose value is an absolute path
    path_macros = {}
    for off, kind, name, value in table.defs:
        if re.match(r"^(?:[A-Za-z]:[\\/]|/(?!/)|~[/\\])", value.strip().strip('"')):
            path_macros[name] = value.strip().strip('"')

    in_parmest = False
    for cmd in seg.commands:
        if _is_marked(cmd.text.split("\n", 1)[0]):
            continue
        logical = cmd.logical_text
        verb = _verb_of(logical)

        if in_parmest:
            editor.comment_span(cmd.first_line, cmd.last_line, "parmest.block")
            if verb == "restore":
                in_parmest = False
            continue

        if verb == "parmest" and "parmest.block" in rule_ids:
            editor.comment_span(cmd.first_line, cmd.last_line, "parmest.block")
            in_parmest = True
            continue

        # global macro defs holding absolute paths
        m = re.match(r"^(?:qui(?:etly)?\s+)?(global|local)\s+(\w+)", logical)
        if m and m.group(2) in path_macros and "path.global.def" in rule_ids:
            editor.comment_span(cmd.first_line, cmd.last_line, "path.global.def")
            continue

        if verb == "cd" and "path.cd" in rule_ids:
            arg = logical[2:].strip().strip('"')
            if re.match(r"^(?:[A-Za-z]:[\\/]|/|~)", arg):
                editor.comment_span(cmd.first_line, cmd.last_line, "path.cd")
                continue

        if verb in graphics and "graphics" in rule_ids:
            editor.comment_span(cmd.first_line, cmd.last_line, "graphics")
            continue
        if verb in STATA_INTERACTIVE_VERBS and "interactive" in rule_ids:
            editor.comment_span(cmd.first_line, cmd.last_line, "interactive")
            continue
        if verb in STATA_OUTPUT_VERBS and "output_table" in rule_ids:
            editor.comment_span(cmd.first_line, cmd.last_line, "output_table")
            continue
        if verb in STATA_LOG_VERBS and "logging" in rule_ids:
            if verb != "log" or re.match(r"^log\s+(using|close|off|on)\b", logical):
                editor.comment_span(cmd.first_line, cmd.last_line, "logging")
                continue

        # pre-11 merge: merge <varlist> using ... with no explicit key clause
        if verb == "merge" and "merge.m1" in rule_ids:
            body = _strip_stata_prefixes(logical)
            if re.match(r"^merge\s+(?!(?:1:1|1:m|m:1|m:m)\b)\w", body) \
                    and re.search(r"\busing\b", body):
                line = editor.lines[cmd.first_line - 1]
                mm = re.search(r"\bmerge\b", line)
                if mm and not _in_string(line, mm.start()):
                    new = line[:mm.end()] + " m:1" + line[mm.end():]
                    editor.rewrite_line(cmd.first_line, new, "merge.m1")
            # fall through: merge may also carry a path to relativize

        # inline path macro references, then relativize absolute paths
        for li in range(cmd.first_line, cmd.last_line + 1):
            line = editor.lines[li - 1]
            if _is_marked(line):
                continue
            new = line
            for name, value in path_macros.items():
                token = "$" + name
                if token in new:
                    new = new.replace("${%s}" % name, value).replace(token, value)
            if new != line and "path.global.inline" in rule_ids:
                editor.rewrite_line(li, new, "path.global.inline")
                line = new
            if verb in STATA_PATH_CMDS and "path.relativize" in rule_ids:
                new = _relativize_paths(line)
                if new != line:
                    editor.rewrite_line(li, new, "path.relativize")


def _apply_r_python_rules(script, editor, rule_ids, config):
    language = script.language
    deprecated = tuple(config["deprecated_r_packages"])
    for li, line in enumerate(editor.lines, start=1):
        if _is_marked(line) or not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("#"):
            continue

        def first_call(funcs):
            for fn in funcs:
                m = re.search(r"(?<![\w.$])%s\s*\(" % re.escape(fn), line)
                if m and not _in_string(line, m.start()):
                    return fn
            return None

        if language == "r":
            if "path.setwd" in rule_ids and re.match(r"^setwd\s*\(", stripped):
                editor.comment_span(li, li, "path.setwd")
                continue
            if "package.deprecated" in rule_ids:
                m = re.match(r"^(?:library|require)\s*\(\s*[\"']?(\w+)[\"']?\s*\)", stripped)
                if m and m.group(1) in deprecated:
                    editor.comment_span(li, li, "package.deprecated")
                    continue
            if "graphics" in rule_ids and first_call(R_GRAPHICS_FUNCS):
                editor.comment_span(li, li, "graphics")
                continue
            if "interactive" in rule_ids and first_call(R_INTERACTIVE_FUNCS):
                editor.comment_span(li, li, "interactive")
                continue
            if "output_table" in rule_ids and first_call(R_OUTPUT_FUNCS):
                editor.comment_span(li, li, "output_table")
                continue
            if "path.relativize" in rule_ids and first_call(R_IO_FUNCS):
                new = _relativize_paths(line)
                if new != line:
                    editor.rewrite_line(li, new, "path.relativize")
        else:  # python
            if "graphics" in rule_ids:
                hit = any(re.search(p + r"\s*\(", line) and
                          not _in_string(line, re.search(p + r"\s*\(", line).start())
                          for p in PY_GRAPHICS_PATTERNS)
                if hit:
                    editor.comment_span(li, li, "graphics")
                    continue
            if "interactive" in rule_ids and first_call(PY_INTERACTIVE_FUNCS):
                editor.comment_span(li, li, "interactive")
                continue


def apply_repair_rules(script: SourceScript, rules=None, config=None):
    """Run the registry over one script.

    Returns (repaired SourceScript, list of CleaningLogEntry).  Unmatched
    constructs pass through unchanged; nothing here is fatal.
    """
    rules = rules if rules is not None else default_rules()
    rule_ids = {r.id for r in rules}
    config = config or load_janitor_config()
    editor = _Editor(script.text, script.path, script.language)
    if script.language == "stata":
        _apply_stata_rules(script, editor, rule_ids, config)
    else:
        _apply_r_python_rules(script, editor, rule_ids, config)
    repaired = SourceScript(path=script.path, language=script.language,
                            text=editor.text())
    return repaired, editor.log


# --------------------------------------------------------------------------
# capture drop / gen backup-restore rewrite

CAPTURE_DROP_RE = re.compile(r"^(?:cap(?:ture)?)\s+drop\s+(\w+)\s*$")
GEN_RE = re.compile(
    r"^(?:qui(?:etly)?\s+)?(?:g(?:en(?:erate)?)?)\s+"
    r"(?:(?:byte|int|long|float|double|str\d+)\s+)?(\w+)\s*=")

BACKUP_PREFIX = "__jbak_"


def rewrite_capture_drop(script: SourceScript, log=None):
    """Replace ``capture drop X`` + ``gen X = expr`` with a backup-restore
    block so a failed gen cannot destroy a preexisting variable."""
    seg = segment_commands(script)
    cmds = seg.commands
    edits = []  # (start_offset, end_offset, replacement_text, line, original)
    for i, cmd in enumerate(cmds[:-1]):
        m = CAPTURE_DROP_RE.match(cmd.logical_text)
        if not m:
            continue
        nxt = cmds[i + 1]
        g = GEN_RE.match(nxt.logical_text)
        if not g or g.group(1) != m.group(1):
            continue
        var = m.group(1)
        gen_text = nxt.logical_text
        bak = BACKUP_PREFIX + var
        block_lines = [
            f"// {MARKER_TAG}capture_drop.backup] {var}",
            f"capture confirm variable {var}",
            "if _rc == 0 {",
            f"    rename {var} {bak}",
            "}",
            f"capture noisily {gen_text}",
            "if _rc != 0 {",
            f"    capture rename {bak} {var}",
            "}",
            "else {",
            f"    capture drop {bak}",
            "}",
        ]
        block = "\n".join(block_lines) + "\n"
        if cmd.delimiter_mode == "semicolon":
            block = "#delimit cr\n" + block + "#delimit ;\n"
        original = script.text[cmd.start:nxt.end]
        edits.append((cmd.start, nxt.end, block, cmd.first_line, original))
    if not edits:
        return script
    text = script.text
    for start, end, block, line, original in reversed(edits):
        text = text[:start] + block + text[end:]
        if log is not None:
            log.append(CleaningLogEntry(script.path, line,
                                        "capture_drop.backup", original, block))
    return SourceScript(path=script.path, language=script.language, text=text)


# --------------------------------------------------------------------------
# export planning and injection

def _find_target(cmds, spec):
    matches = [c for c in cmds
               if c.first_line == spec.line or
               " ".join(c.logical_text.split()) == " ".join(spec.command_text.split())]
    if not matches:
        raise AnchorNotFound(
            f"specification command not found at {spec.source_file}:{spec.line}")
    return matches[0]


def plan_esample(script: SourceScript, spec, spec_index=1) -> ExportPlan:
    """Decide where and how to export the analysis dataset for one spec.

    ``if e(sample)`` forces a full-panel export with a 0/1 flag column and a
    re-estimation of the conditioning command, so lag terms can be recomputed
    downstream on the complete panel.
    """
    seg = segment_commands(script)
    target = _find_target(seg.commands, spec)
    anchor = " ".join(target.logical_text.split())
    if spec.if_condition and "e(sample)" in spec.if_condition:
        source = None
        for cmd in seg.commands:
            if cmd.start >= target.start:
                break
            if _verb_of(cmd.logical_text) in ESTIMATION_VERBS:
                source = cmd
        if source is None:
            raise EsampleSourceNotFound(
                f"no estimation command precedes 'if e(sample)' at "
                f"{spec.source_file}:{spec.line}")
        return ExportPlan(
            spec_index=spec_index, anchor=anchor, mode="esample_full_panel",
            flag_column="janitor_esample",
            reestimation=_strip_stata_prefixes(source.logical_text),
            treatment=spec.treatment)
    return ExportPlan(spec_index=spec_index, anchor=anchor, mode="post_command",
                      treatment=spec.treatment)


def export_block(plan: ExportPlan):
    lines = [
        f"// {MARKER_TAG}inject.export] spec {plan.spec_index}",
        f'display "##REPRO_MARKER spec={plan.spec_index}'
        f' coef=" _b[{plan.treatment}] " se=" _se[{plan.treatment}]'
        f' " N=" e(N) "##"',
    ]
    if plan.mode == "esample_full_panel":
        lines += [
            f"capture drop {plan.flag_column}",
            f"quietly gen byte {plan.flag_column} = e(sample)",
        ]
    lines.append(f'export delimited using "analysis_data_spec_{plan.spec_index}.csv", replace')
    return "\n".join(lines) + "\n"


def inject_export(script: SourceScript, plan: ExportPlan,
                  protected_anchors=None, log=None) -> SourceScript:
    """Insert the export/marker block after the complete target command.

    The insertion point is located by content, so earlier injections cannot
    shift it.  Inside a ``#delimit ;`` region the block is wrapped in mode
    switches.  IV commands that are not the target of any plan are commented
    out entirely (wrapping them in capture would corrupt e(sample)/e(b)).
    """
    protected = set(protected_anchors or ()) | {plan.anchor}
    seg = segment_commands(script)
    norm = lambda t: " ".join(t.split())
    matches = [c for c in seg.commands if norm(c.logical_text) == plan.anchor]
    if not matches:
        raise AnchorNotFound(f"anchor not found: {plan.anchor!r}")
    if len(matches) > 1:
        raise AnchorAmbiguous(f"anchor occurs {len(matches)} times: {plan.anchor!r}")
    target = matches[0]

    edits = []  # (offset, inserted_text)
    block = export_block(plan)
    if target.delimiter_mode == "semicolon":
        block = "#delimit cr\n" + block + "#delimit ;\n"
    insert_at = target.end
    if not script.text[:insert_at].endswith("\n"):
        block = "\n" + block
    edits.append((insert_at, block))

    if plan.reestimation:
        pre = (f"// {MARKER_TAG}inject.reestimation] spec {plan.spec_index}\n"
               f"quietly {plan.reestimation}\n")
        if target.delimiter_mode == "semicolon":
            pre = "#delimit cr\n" + pre + "#delimit ;\n"
        edits.append((target.start, pre))

    # comment out non-target IV commands (unless protected by another plan)
    from .ivspec import _is_iv_command
    mark = _mark("stata", "inject.comment_nontarget_iv")
    comment_spans = []
    for cmd in seg.commands:
        if cmd is target or norm(cmd.logical_text) in protected:
            continue
        if _is_marked(cmd.text.split("\n", 1)[0]):
            continue
        if _is_iv_command(cmd.logical_text):
            comment_spans.append(cmd)

    text = script.text
    for cmd in sorted(comment_spans, key=lambda c: -c.start):
        raw = text[cmd.start:cmd.end]
        commented = "\n".join(
            (mark + ln if ln.strip() and not _is_marked(ln) else ln)
            for ln in raw.split("\n"))
        text = text[:cmd.start] + commented + text[cmd.end:]
        if log is not None:
            log.append(CleaningLogEntry(script.path, cmd.first_line,
                                        "inject.comment_nontarget_iv", raw, commented))

    # re-locate the anchor in the possibly updated text by content
    reseg = segment_commands(SourceScript(script.path, "stata", text))
    matches = [c for c in reseg.commands if norm(c.logical_text) == plan.anchor]
    if len(matches) != 1:
        raise AnchorAmbiguous(f"anchor not unique after commenting: {plan.anchor!r}")
    target = matches[0]
    final_edits = [(target.end, edits[0][1])]
    if plan.reestimation:
        final_edits.append((target.start, edits[1][1]))
    for offset, inserted in sorted(final_edits, key=lambda e: -e[0]):
        text = text[:offset] + inserted + text[offset:]
        if log is not None:
            line = text[:offset].count("\n") + 1
            rule = "inject.export" if inserted is final_edits[0][1] else "inject.reestimation"
            log.append(CleaningLogEntry(script.path, line, rule, "", inserted))

    return SourceScript(path=script.path, language=script.language, text=text)


def repair_script(script: SourceScript, rules=None, config=None):
    """Full repair pass: registry rules then the capture-drop rewrite."""
    repaired, log = apply_repair_rules(script, rules=rules, config=config)
    if script.language == "stata":
        repaired = rewrite_capture_drop(repaired, log=log)
    return repaired, log


def repro_path(path):
    p = Path(path)
    return p.with_name(p.stem + "_repro" + p.suffix)


def write_cleaning_log(entries, path):
    payload = [e.to_json_dict() for e in entries]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")

"""Detection and structured extraction of 2SLS specifications from author code.

Covers the Stata family (ivreg2, ivregress 2sls, xtivreg2, reghdfe with an
endogenous block, ivprobit, ivtobit), R calls (ivreg, iv_robust, feols with an
IV part) and Python IV2SLS, plus ranking/deduplication of the extracted
specifications and parsing of marked execution logs.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MarkerNotFound, NoSpecificationsFound, ParseFailure
from .stata import SourceScript, segment_commands, build_macro_table, expand_macros

STATA_IV_VERBS = ("ivreg2", "ivregress", "xtivreg2", "ivreg28", "ivreg29",
                  "ivprobit", "ivtobit")
NONLINEAR_VERBS = ("ivprobit", "ivtobit")
STATA_PREFIXES = ("quietly", "qui", "noisily", "noi", "capture", "cap", "xi")
WRAPPER_VERBS = ("bootstrap", "jackknife", "bs", "jknife", "svy")
R_IV_FUNCS = ("ivreg", "iv_robust", "feols", "felm")

MAIN_FILE_KEYWORDS = ("main", "table", "result")


@dataclass
class IVSpecification:
    outcome: str
    treatment: str
    instruments: list
    controls: list = field(default_factory=list)
    fixed_effects: list = field(default_factory=list)
    cluster_vars: list = field(default_factory=list)
    weight: dict | None = None          # {"kind": aweight|pweight|fweight|generic, "var": name}
    if_condition: str | None = None
    software: str = "stata"
    source_file: str = ""
    line: int = 0
    command_text: str = ""
    table_ref: str | None = None
    nonlinear: bool = False

    def dedup_key(self):
        return (self.outcome, self.treatment,
                tuple(self.instruments), tuple(self.controls))

    def to_json_dict(self):
        return {
            "outcome": self.outcome,
            "treatment": self.treatment,
            "instruments": list(self.instruments),
            "controls": list(self.controls),
            "fixed_effects": list(self.fixed_effects),
            "cluster_vars": list(self.cluster_vars),
            "weight": self.weight,
            "if_condition": self.if_condition,
            "software": self.software,
            "source_file": self.source_file,
            "line": self.line,
            "command": self.command_text,
            "table_ref": self.table_ref,
            "nonlinear": self.nonlinear,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            outcome=d["outcome"], treatment=d["treatment"],
            instruments=list(d["instruments"]), controls=list(d.get("controls", [])),
            fixed_effects=list(d.get("fixed_effects", [])),
            cluster_vars=list(d.get("cluster_vars", [])),
            weight=d.get("weight"), if_condition=d.get("if_condition"),
            software=d.get("software", "stata"), source_file=d.get("source_file", ""),
            line=d.get("line", 0), command_text=d.get("command", ""),
            table_ref=d.get("table_ref"), nonlinear=d.get("nonlinear", False),
        )


@dataclass
class RawIVCall:
    verb: str
    text: str                  # logical command text (or R call text)
    language: str
    source_file: str
    line: int
    wrapped: bool = False
    wrapper: str | None = None
    in_program_body: bool = False
    nonlinear: bool = False
    unresolved_macros: tuple = ()
    delimiter_mode: str = "newline"
    manual_parts: tuple | None = None   # (first_stage, predicted_var, second_stage)
    table_ref: str | None = None


@dataclass
class ExtractedEstimate:
    spec_index: int
    coefficient: float
    standard_error: float | None
    n_obs: int | None
    source: str = "marked_log"   # marked_log | direct

    def __post_init__(self):
        if self.standard_error is not None and self.standard_error < 0:
            raise ValueError(
                f"negative standard error {self.standard_error} for spec "
                f"{self.spec_index}: column misalignment in the log parse")


# --------------------------------------------------------------------------
# detection

def _strip_prefixes(text):
    """Drop quietly/capture/xi/by prefixes; return remaining command text."""
    t = text.strip()
    while True:
        m = re.match(r"^(by(?:sort)?\s+[\w\s]+?):\s*(.*)$", t)
        if m:
            t = m.group(2).strip()
            continue
        parts = t.split(None, 1)
        if parts and parts[0].rstrip(":") in STATA_PREFIXES:
            t = parts[1].strip() if len(parts) > 1 else ""
            continue
        return t


def _has_endog_block(text):
    # a top-level parenthetical containing '=' marks the endogenous block
    depth = 0
    start = None
    for i, ch in enumerate(text):
        if ch == "(":
            if depth == 0:
                start = i
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0 and start is not None:
                if "=" in text[start:i]:
                    return True
                start = None
    return False


def _program_wrappers(commands):
    """Names of program-define blocks whose body contains an IV verb."""
    names = []
    current = None
    body = []
    for cmd in commands:
        m = re.match(r"^program\s+(?:define\s+)?(\w+)", cmd.logical_text)
        if m and current is None:
            current = m.group(1)
            body = []
            continue
        if current is not None:
            if re.match(r"^end\b", cmd.logical_text):
                if any(_is_iv_command(b) for b in body):
                    names.append(current)
                current = None
            else:
                body.append(cmd.logical_text)
    return names


def _is_iv_command(logical_text):
    t = _strip_prefixes(logical_text)
    verb = t.split()[0] if t.split() else ""
    if verb in STATA_IV_VERBS:
        if verb == "ivregress":
            return bool(re.match(r"^ivregress\s+2sls\b", t))
        return True
    if verb == "reghdfe" and _has_endog_block(t):
        return True
    return False


def detect_iv_calls(script: SourceScript) -> list:
    """Find IV estimation calls in one source script.

    Calls inside bootstrap/jackknife/parmby wrappers and user programs are
    detected and marked wrapped; they are never silently dropped.
    """
    if script.language == "stata":
        return _detect_stata(script)
    if script.language == "r":
        return _detect_r(script)
    return _detect_python(script)


TABLE_REF_RE = re.compile(r"\btable\s+([A-Za-z]?\d+[A-Za-z]?)\b", re.IGNORECASE)


def _table_ref_near(script_text, cmd):
    """Table reference from a comment on the command line or just above it."""
    lines = script_text.splitlines()
    first_idx = cmd.first_line - 1
    candidates = []
    if 0 <= first_idx < len(lines) and "//" in lines[first_idx]:
        candidates.append(lines[first_idx].split("//", 1)[1])
    for offset in (1, 2):
        i = first_idx - offset
        if 0 <= i < len(lines) and lines[i].strip().startswith(("*", "//")):
            candidates.append(lines[i])
    for text in candidates:
        m = TABLE_REF_RE.search(text)
        if m:
            return f"Table {m.group(1)}"
    return None


def _detect_stata(script):
    seg = segment_commands(script)
    table = build_macro_table(seg)
    commands = expand_macros(seg.commands, table)
    user_wrappers = _program_wrappers(commands)
    calls = []
    in_program = False
    for cmd in commands:
        t = cmd.logical_text
        if re.match(r"^program\s+(define\s+)?\w+", t):
            in_program = True
        if in_program and re.match(r"^end\b", t):
            in_program = False
            continue
        stripped = _strip_prefixes(t)
        if not stripped:
            continue
        verb = stripped.split()[0].rstrip(",:")
        # wrapper prefix form: bootstrap ...: ivreg2 ...
        if verb in WRAPPER_VERBS and ":" in stripped:
            inner = stripped.split(":", 1)[1].strip()
            if _is_iv_command(inner):
                calls.append(RawIVCall(
                    verb=_strip_prefixes(inner).split()[0], text=inner,
                    language="stata", source_file=script.path,
                    line=cmd.first_line, wrapped=True, wrapper=verb,
                    unresolved_macros=cmd.unresolved_macros,
                    delimiter_mode=cmd.delimiter_mode))
            continue
        # parmby "ivreg2 ...", by(...)
        if verb == "parmby":
            m = re.match(r'^parmby\s+"([^"]*)"', stripped)
            if m and _is_iv_command(m.group(1)):
                calls.append(RawIVCall(
                    verb=_strip_prefixes(m.group(1)).split()[0], text=m.group(1),
                    language="stata", source_file=script.path,
                    line=cmd.first_line, wrapped=True, wrapper="parmby",
                    unresolved_macros=cmd.unresolved_macros,
                    delimiter_mode=cmd.delimiter_mode))
            continue
        if verb in user_wrappers:
            calls.append(RawIVCall(
                verb=verb, text=stripped, language="stata",
                source_file=script.path, line=cmd.first_line,
                wrapped=True, wrapper=verb,
                unresolved_macros=cmd.unresolved_macros,
                delimiter_mode=cmd.delimiter_mode))
            continue
        if _is_iv_command(stripped):
            calls.append(RawIVCall(
                verb=verb, text=stripped, language="stata",
                source_file=script.path, line=cmd.first_line,
                in_program_body=in_program,
                nonlinear=verb in NONLINEAR_VERBS,
                unresolved_macros=cmd.unresolved_macros,
                delimiter_mode=cmd.delimiter_mode,
                table_ref=_table_ref_near(script.text, cmd)))
    calls.extend(_detect_manual_2sls(script.path, commands))
    return calls


def _detect_manual_2sls(path, commands):
    """Adjacent-regression manual 2SLS: regress D on Z, predict fitted,
    regress Y on fitted.  Other hand-rolled encodings are not parsed."""
    calls = []
    plain = [c for c in commands if _strip_prefixes(c.logical_text)]
    for i, cmd in enumerate(plain[:-2]):
        t1 = _strip_prefixes(cmd.logical_text)
        if not re.match(r"^reg(?:ress)?\s", t1):
            continue
        t2 = _strip_prefixes(plain[i + 1].logical_text)
        pm = re.match(r"^predict\s+(\w+)(?:\s*,\s*xb)?\s*$", t2)
        if not pm:
            continue
        fitted = pm.group(1)
        t3 = _strip_prefixes(plain[i + 2].logical_text)
        m3 = re.match(r"^reg(?:ress)?\s+(.*)$", t3)
        if not m3 or not re.search(r"\b%s\b" % re.escape(fitted), m3.group(1)):
            continue
        calls.append(RawIVCall(
            verb="manual_2sls", text=t3, language="stata", source_file=path,
            line=plain[i + 2].first_line,
            manual_parts=(t1, fitted, t3),
            delimiter_mode=plain[i + 2].delimiter_mode))
    return calls


def parse_manual_2sls(call: RawIVCall) -> IVSpecification:
    """Reconstruct the specification from a detected manual 2SLS chain."""
    first, fitted, second = call.manual_parts
    body1, _opts1 = _split_options(re.sub(r"^reg(?:ress)?\s+", "", first))
    body2, opts2 = _split_options(re.sub(r"^reg(?:ress)?\s+", "", second))
    toks1 = body1.split()
    toks2 = body2.split()
    if len(toks1) < 2 or len(toks2) < 2:
        raise ParseFailure(f"manual 2SLS stages too short: {first!r} / {second!r}")
    treatment = toks1[0]
    outcome = toks2[0]
    second_rhs = [t for t in toks2[1:] if t != fitted]
    instruments = [t for t in toks1[1:] if t not in second_rhs]
    if not instruments:
        raise ParseFailure(f"manual 2SLS has no excluded instrument: {first!r}")
    if treatment in instruments:
        raise ParseFailure(f"manual 2SLS treatment among instruments: {first!r}")
    cluster_vars = []
    cl = _option_arg(opts2, "cluster")
    if cl:
        cluster_vars = cl.split()
    return IVSpecification(
        outcome=outcome, treatment=treatment, instruments=instruments,
        controls=second_rhs, cluster_vars=cluster_vars,
        software="stata", source_file=call.source_file, line=call.line,
        command_text=f"{first} ; predict {fitted} ; {second}",
    )


def _extract_call(text, start):
    """Return the full func(...) call text starting at offset `start`."""
    i = text.find("(", start)
    if i == -1:
        return None
    depth = 0
    for j in range(i, len(text)):
        if text[j] == "(":
            depth += 1
        elif text[j] == ")":
            depth -= 1
            if depth == 0:
                return text[start:j + 1]
    return None


def _detect_r(script):
    calls = []
    for m in re.finditer(r"\b(ivreg|iv_robust|feols|felm)\s*\(", script.text):
        call = _extract_call(script.text, m.start())
        if call is None:
            continue
        if m.group(1) in ("feols", "felm"):
            # needs an IV part: a second formula after the last '|'
            inner = call[call.find("(") + 1:-1]
            if not re.search(r"\|[^|]*~", inner):
                continue
        line = script.text.count("\n", 0, m.start()) + 1
        calls.append(RawIVCall(verb=m.group(1), text=call, language="r",
                               source_file=script.path, line=line))
    return calls


def _detect_python(script):
    calls = []
    for m in re.finditer(r"\bIV2SLS\s*\(", script.text):
        call = _extract_call(script.text, m.start())
        if call is None:
            continue
        line = script.text.count("\n", 0, m.start()) + 1
        calls.append(RawIVCall(verb="IV2SLS", text=call, language="python",
                               source_file=script.path, line=line))
    return calls


# --------------------------------------------------------------------------
# Stata parsing

WEIGHT_RE = re.compile(r"\[\s*(aw|pw|fw|iw|aweight|pweight|fweight|iweight|weight)\s*=\s*([^\]]+)\]")
WEIGHT_KIND = {"aw": "aweight", "aweight": "aweight",
               "pw": "pweight", "pweight": "pweight",
               "fw": "fweight", "fweight": "fweight",
               "iw": "generic", "iweight": "generic", "weight": "generic"}


def _split_options(text):
    """Split 'body, options' at the first top-level comma (quote-aware)."""
    depth = 0
    in_string = False
    for i, ch in enumerate(text):
        if ch == '"':
            in_string = not in_string
        elif in_string:
            continue
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return text[:i], text[i + 1:]
    return text, ""


def _find_endog_block(text):
    depth = 0
    start = None
    for i, ch in enumerate(text):
        if ch == "(":
            if depth == 0:
                start = i
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0 and start is not None:
                if "=" in text[start:i]:
                    return start, i + 1
                start = None
    return None


def _option_arg(options, *names):
    for name in names:
        m = re.search(r"\b%s\s*\(" % re.escape(name), options)
        if m:
            inner = _extract_call(options, m.start())
            if inner:
                return inner[inner.find("(") + 1:-1].strip()
    return None


def parse_stata_iv(call: RawIVCall, macro_table=None) -> IVSpecification:
    """Parse one detected Stata IV command into a structured specification."""
    text = _strip_prefixes(call.text)
    if call.unresolved_macros:
        raise ParseFailure(
            f"unresolved macros {call.unresolved_macros} in: {call.text}",
            span=call.text)
    verb = text.split()[0]
    rest = text[len(verb):].strip()
    if verb == "ivregress":
        sub = rest.split(None, 1)
        if not sub or sub[0] != "2sls":
            raise ParseFailure(f"unsupported ivregress subcommand: {call.text}")
        rest = sub[1] if len(sub) > 1 else ""

    body, options = _split_options(rest)

    weight = None
    wm = WEIGHT_RE.search(body)
    if wm:
        weight = {"kind": WEIGHT_KIND.get(wm.group(1), "generic"),
                  "var": wm.group(2).strip()}
        body = body[:wm.start()] + " " + body[wm.end():]

    if_condition = None
    ifm = re.search(r"\bif\s+(.+?)(?:\s+in\s+[\d/]+\s*)?$", body)
    if ifm:
        if_condition = ifm.group(1).strip()
        body = body[:ifm.start()].strip()
    else:
        inm = re.search(r"\bin\s+[\d/]+\s*$", body)
        if inm:
            body = body[:inm.start()].strip()

    blk = _find_endog_block(body)
    if blk is None:
        raise ParseFailure(f"no (endogenous = instruments) block in: {call.text}")
    a, b = blk
    inner = body[a + 1:b - 1]
    lhs, rhs = inner.split("=", 1)
    endog = lhs.split()
    instruments = rhs.split()
    if len(endog) != 1:
        raise ParseFailure(
            f"expected a single endogenous regressor, got {endog}: {call.text}")
    treatment = endog[0]
    if not instruments:
        raise ParseFailure(f"empty instrument list: {call.text}")
    if treatment in instruments:
        raise ParseFailure(
            f"treatment {treatment} appears among instruments: {call.text}")

    pre = body[:a].split()
    post = body[b:].split()
    if not pre:
        raise ParseFailure(f"missing outcome variable: {call.text}")
    outcome = pre[0]
    controls = pre[1:] + post
    overlap = set(instruments) & set(controls)
    if overlap:
        raise ParseFailure(
            f"instruments also appear as controls {sorted(overlap)}: {call.text}")

    cluster_vars = []
    fixed_effects = []
    cl = _option_arg(options, "cluster")
    if cl is None:
        vce = _option_arg(options, "vce")
        if vce and vce.split()[0].startswith("cl"):
            cl = " ".join(vce.split()[1:])
    if cl:
        cluster_vars = cl.split()
    absorb = _option_arg(options, "absorb")
    if absorb:
        fixed_effects = absorb.split()
    if verb == "xtivreg2" and re.search(r"\bfe\b", options):
        fixed_effects = fixed_effects or ["_panel_unit_"]

    return IVSpecification(
        outcome=outcome, treatment=treatment, instruments=instruments,
        controls=controls, fixed_effects=fixed_effects,
        cluster_vars=cluster_vars, weight=weight, if_condition=if_condition,
        software="stata", source_file=call.source_file, line=call.line,
        command_text=call.text, table_ref=call.table_ref,
        nonlinear=call.verb in NONLINEAR_VERBS,
    )


# --------------------------------------------------------------------------
# R parsing

def _split_r_args(inner):
    args = []
    depth = 0
    quote = None
    cur = []
    for ch in inner:
        if quote:
            cur.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
            cur.append(ch)
        elif ch in "([{":
            depth += 1
            cur.append(ch)
        elif ch in ")]}":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            args.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if cur:
        args.append("".join(cur).strip())
    return args


def _expand_r_terms(side):
    """Formula side -> term list; 'A*B' expands to A, B, A:B."""
    terms = []
    for raw in re.split(r"\+", side):
        t = raw.strip()
        if not t or t in ("1", "0", "."):
            continue
        if "*" in t and ":" not in t:
            parts = [p.strip() for p in t.split("*")]
            terms.extend(parts)
            terms.append(":".join(parts))
        else:
            terms.append(t)
    # de-duplicate preserving order
    seen = set()
    out = []
    for t in terms:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def build_formula_environment(script_text):
    """Collect named formulas, applying update(base, . ~ . +/- term) edits."""
    env = {}
    for m in re.finditer(r"(\w+)\s*<-\s*([^\n]+)", script_text):
        name, value = m.group(1), m.group(2).strip()
        um = re.match(r"update\s*\(\s*(\w+)\s*,\s*(.+)\)\s*$", value)
        if um and um.group(1) in env:
            base = env[um.group(1)]
            edit = um.group(2).strip()
            em = re.match(r"\.\s*~\s*\.\s*(.*)$", edit)
            if em:
                lhs, rhs = base.split("~", 1)
                tail = em.group(1).strip()
                new_rhs = rhs.strip()
                for op_m in re.finditer(r"([+-])\s*([\w.():*]+)", tail):
                    op, term = op_m.group(1), op_m.group(2)
                    if op == "+":
                        new_rhs = f"{new_rhs} + {term}"
                    else:
                        parts = [p.strip() for p in new_rhs.split("+")]
                        parts = [p for p in parts if p != term]
                        new_rhs = " + ".join(parts)
                env[name] = f"{lhs.strip()} ~ {new_rhs}"
            continue
        if "~" in value and not value.startswith(("function", "lm(", "glm(")):
            env[name] = value
    return env


def parse_r_iv(call: RawIVCall, formula_environment=None) -> IVSpecification:
    """Parse an R IV call (AER::ivreg / estimatr::iv_robust / fixest::feols)."""
    env = formula_environment or {}
    inner = call.text[call.text.find("(") + 1:-1]
    args = _split_r_args(inner)
    if not args:
        raise ParseFailure(f"empty call: {call.text}")

    formula = None
    named = {}
    for i, a in enumerate(args):
        m = re.match(r"^(\w+)\s*=\s*(.+)$", a, re.S)
        if m and m.group(1) not in ("data",) and "~" not in m.group(1):
            named[m.group(1)] = m.group(2).strip()
        elif i == 0:
            formula = a
    formula = named.get("formula", named.get("fml", formula))
    if formula is None:
        raise ParseFailure(f"no formula found: {call.text}")
    formula = formula.strip().strip('"')
    if formula in env:
        formula = env[formula]

    if "~" not in formula:
        raise ParseFailure(f"not a formula: {formula}")
    outcome, rhs = formula.split("~", 1)
    outcome = outcome.strip()
    parts = [p.strip() for p in rhs.split("|")]
    if len(parts) == 1 and "instruments" in named:
        # old-style AER::ivreg(formula, instruments = ~ ...): same set logic
        # as the two-part form
        inst_part = named["instruments"].strip()
        if inst_part in env:
            inst_part = env[inst_part]
        parts = [parts[0], inst_part.lstrip("~").strip()]

    if call.verb in ("feols", "felm") and len(parts) >= 2 \
            and any("~" in p for p in parts[1:]):
        # fixest: y ~ controls | fe | endog ~ inst
        # lfe:    y ~ controls | fe | (endog ~ inst) | cluster
        controls = _expand_r_terms(parts[0])
        iv_idx = next(i for i in range(1, len(parts)) if "~" in parts[i])
        fixed_effects = []
        for p in parts[1:iv_idx]:
            if p.strip() != "0":
                fixed_effects.extend(_expand_r_terms(p))
        iv_part = parts[iv_idx].strip()
        if iv_part.startswith("(") and iv_part.endswith(")"):
            iv_part = iv_part[1:-1]
        iv_lhs, iv_rhs = iv_part.split("~", 1)
        endog = _expand_r_terms(iv_lhs)
        instruments = _expand_r_terms(iv_rhs)
        if len(endog) != 1:
            raise ParseFailure(f"expected one endogenous regressor: {call.text}")
        treatment = endog[0]
        cluster_tail = [p.strip() for p in parts[iv_idx + 1:]
                        if p.strip() and p.strip() != "0"]
        if cluster_tail and "cluster" not in named and "clusters" not in named:
            named["cluster"] = cluster_tail[0].split()[0]
    elif len(parts) == 2:
        # two-part formula: y ~ d + x | z + x
        struct = _expand_r_terms(parts[0])
        instside = _expand_r_terms(parts[1])
        endog = [t for t in struct if t not in instside]
        instruments = [t for t in instside if t not in struct]
        controls = [t for t in struct if t in instside]
        fixed_effects = []
        if len(endog) != 1:
            raise ParseFailure(
                f"expected exactly one endogenous regressor, got {endog}: {call.text}")
        treatment = endog[0]
        if not instruments:
            raise ParseFailure(f"no excluded instrument: {call.text}")
    else:
        raise ParseFailure(f"unrecognized IV formula: {formula}")

    if treatment in instruments:
        raise ParseFailure(f"treatment {treatment} among instruments: {call.text}")
    overlap = set(instruments) & set(controls)
    if overlap:
        raise ParseFailure(
            f"instruments also appear as controls {sorted(overlap)}: {call.text}")

    cluster_vars = []
    for key in ("clusters", "cluster"):
        if key in named:
            cluster_vars = [named[key].lstrip("~").strip().strip('"')]
            break
    weight = None
    if "weights" in named:
        weight = {"kind": "generic", "var": named["weights"].lstrip("~").strip()}
    if_condition = named.get("subset")

    return IVSpecification(
        outcome=outcome, treatment=treatment, instruments=instruments,
        controls=controls, fixed_effects=fixed_effects,
        cluster_vars=cluster_vars, weight=weight, if_condition=if_condition,
        software="r", source_file=call.source_file, line=call.line,
        command_text=call.text,
    )


# --------------------------------------------------------------------------
# selection

def _rank_key(spec: IVSpecification):
    fname = Path(spec.source_file).name.lower()
    main_file = any(k in fname for k in MAIN_FILE_KEYWORDS)
    return (
        0 if spec.table_ref else 1,
        0 if main_file else 1,
        -len(spec.controls),
        spec.source_file,
        spec.line,
    )


def select_primary_specs(specs, limit=3):
    """Deduplicate on (Y, D, Z, X) and keep the top-ranked specifications.

    Ranking is lexicographic: explicit table reference, then main-results
    filename, then control-set size; ties break on (file, line) so the
    result is deterministic.  Specs are ranked before collapsing so each
    duplicate group is represented by its best-ranked member; that makes the
    selection stable under removal of any non-selected spec.
    """
    if not specs:
        raise NoSpecificationsFound("no IV specifications to select from")
    unique = []
    seen = set()
    for spec in sorted(specs, key=_rank_key):
        key = spec.dedup_key()
        if key in seen:
            continue
        seen.add(key)
        unique.append(spec)
    return unique[:limit]


# --------------------------------------------------------------------------
# package-level extraction

def extract_specifications(scripts, limit=3):
    """Parse every script, pool the detected calls, select primary specs.

    Wrapped calls (bootstrap/parmby/user programs) are attempted like plain
    ones; calls that fail to parse are skipped and reported in the returned
    issue list rather than failing the whole stage.
    """
    all_specs = []
    issues = []
    for script in sorted(scripts, key=lambda s: s.path):
        env = build_formula_environment(script.text) if script.language == "r" else None
        for call in detect_iv_calls(script):
            if call.in_program_body:
                issues.append(f"{call.source_file}:{call.line}: IV call inside "
                              f"program body skipped")
                continue
            try:
                if call.verb == "manual_2sls":
                    spec = parse_manual_2sls(call)
                elif call.language == "stata":
                    spec = parse_stata_iv(call)
                elif call.language == "r":
                    spec = parse_r_iv(call, env)
                else:
                    issues.append(f"{call.source_file}:{call.line}: python IV2SLS "
                                  f"detected; extraction not supported")
                    continue
            except ParseFailure as exc:
                issues.append(f"{call.source_file}:{call.line}: {exc}")
                continue
            all_specs.append(spec)
    selected = select_primary_specs(all_specs, limit=limit)
    return selected, issues


def write_metadata(specs, path):
    payload = [s.to_json_dict() for s in specs]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_metadata(path):
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [IVSpecification.from_json_dict(d) for d in payload]


# --------------------------------------------------------------------------
# marked-log parsing

MARKER_RE = re.compile(
    r"##REPRO_MARKER\s+spec=(\d+)\s+coef=([-+0-9.eE]+)\s+se=([-+0-9.eE]+)\s+N=([0-9.eE+]+)##")
TABLE_BEGIN_RE = re.compile(r"##REPRO_TABLE\s+spec=(\d+)\s+var=(\S+)##")
TABLE_END = "##REPRO_END##"
NUM_RE = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def _parse_table_block(lines, varname):
    """Extract (coef, se, n) for one variable from a Stata-style output table.

    Handles equation-name header rows (label plus ``|`` and nothing else) and
    wrapped rows where the standard error lands on the following physical
    line.
    """
    n_obs = None
    for ln in lines:
        m = re.search(r"Number of obs\s*=\s*([\d,]+)", ln)
        if m:
            n_obs = int(m.group(1).replace(",", ""))
        m = re.search(r"\bN\s*=\s*([\d,]+)", ln)
        if m and n_obs is None:
            n_obs = int(m.group(1).replace(",", ""))

    for idx, ln in enumerate(lines):
        if "|" not in ln:
            continue
        label, _, tail = ln.partition("|")
        if label.strip() != varname:
            continue
        nums = [t for t in tail.split() if NUM_RE.match(t)]
        coef = float(nums[0]) if nums else None
        se = float(nums[1]) if len(nums) > 1 else None
        if coef is not None and se is None:
            # wrapped row: merge the continuation line before aligning columns
            for nxt in lines[idx + 1:idx + 3]:
                if "|" not in nxt:
                    continue
                lab2, _, tail2 = nxt.partition("|")
                if lab2.strip():
                    break
                nums2 = [t for t in tail2.split() if NUM_RE.match(t)]
                if nums2:
                    se = float(nums2[0])
                    break
        if coef is not None:
            return coef, se, n_obs
    return None, None, n_obs


def parse_marked_log(log_text: str) -> list:
    """Parse estimates from a log produced by janitor-instrumented scripts."""
    estimates = []
    lines = log_text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        m = MARKER_RE.search(line)
        if m:
            estimates.append(ExtractedEstimate(
                spec_index=int(m.group(1)),
                coefficient=float(m.group(2)),
                standard_error=float(m.group(3)),
                n_obs=int(float(m.group(4))),
            ))
            i += 1
            continue
        m = TABLE_BEGIN_RE.search(line)
        if m:
            spec_index, varname = int(m.group(1)), m.group(2)
            block = []
            i += 1
            while i < len(lines) and TABLE_END not in lines[i] \
                    and not TABLE_BEGIN_RE.search(lines[i]) \
                    and not MARKER_RE.search(lines[i]):
                block.append(lines[i])
                i += 1
            if i < len(lines) and TABLE_END in lines[i]:
                i += 1
            coef, se, n_obs = _parse_table_block(block, varname)
            if coef is None:
                raise MarkerNotFound(
                    f"marked table for spec {spec_index} lacks a row for {varname}")
            estimates.append(ExtractedEstimate(
                spec_index=spec_index, coefficient=coef,
                standard_error=se, n_obs=n_obs))
            continue
        i += 1
    if not estimates:
        raise MarkerNotFound("no ##REPRO_MARKER blocks found in log")
    return estimates

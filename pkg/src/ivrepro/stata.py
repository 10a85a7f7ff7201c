"""Stata .do file segmentation and macro expansion.

Splits raw script text into statements while tracking ``#delimit`` state,
``///`` continuations and all three comment styles.  Segmentation is lossless:
the command spans plus the skipped spans concatenate back to the input text
byte for byte, which is what lets the janitor edit scripts by content anchor
without corrupting untouched regions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

# all legal abbreviations of #delimit: #d, #de, #del, #deli, #delim, #delimi, #delimit
DELIMIT_RE = re.compile(r"^\s*#d(?:e(?:l(?:i(?:m(?:i(?:t)?)?)?)?)?)?\b\s*(.*)$")

LANGUAGE_BY_EXT = {".do": "stata", ".ado": "stata", ".r": "r", ".py": "python"}


@dataclass
class SourceScript:
    path: str
    language: str
    text: str

    @classmethod
    def load(cls, path) -> "SourceScript":
        p = Path(path)
        language = LANGUAGE_BY_EXT.get(p.suffix.lower(), "stata")
        raw = p.read_bytes()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            text = raw.decode("utf-8", errors="replace")
        return cls(path=str(p), language=language, text=text)

    @classmethod
    def from_text(cls, text, path="<memory>", language="stata"):
        return cls(path=path, language=language, text=text)


@dataclass
class StataCommand:
    verb: str
    text: str                 # raw span, comments and continuations included
    start: int                # byte offset of span start in the script text
    end: int                  # byte offset one past span end
    first_line: int           # 1-based
    last_line: int
    delimiter_mode: str       # "newline" | "semicolon"
    logical_text: str = ""    # comments stripped, continuations joined
    suspect: bool = False
    unresolved_macros: tuple = ()


@dataclass
class SkipSpan:
    text: str
    start: int
    end: int


@dataclass
class Segmented:
    """Full segmentation of one script: commands plus skipped spans."""
    commands: list
    skips: list

    def roundtrip(self) -> str:
        parts = sorted(
            [(c.start, c.text) for c in self.commands]
            + [(s.start, s.text) for s in self.skips]
        )
        return "".join(p[1] for p in parts)


def _line_of(text, pos, newline_positions):
    # 1-based line number for byte offset pos
    import bisect
    return bisect.bisect_right(newline_positions, pos - 1) + 1


def _strip_comments(raw, mode):
    """Logical text of a command span: remove /* */, // tails, join /// lines.

    Comment markers inside double-quoted strings are literal text.
    """
    out = []
    i = 0
    n = len(raw)
    in_string = False
    while i < n:
        ch = raw[i]
        if ch == '"':
            in_string = not in_string
            out.append(ch)
            i += 1
            continue
        if in_string:
            if ch == "\n":
                in_string = False  # Stata strings do not span lines
            out.append(ch)
            i += 1
            continue
        if ch == "/" and i + 1 < n and raw[i + 1] == "*":
            depth = 1
            j = i + 2
            while j < n and depth:
                if raw.startswith("/*", j):
                    depth += 1
                    j += 2
                elif raw.startswith("*/", j):
                    depth -= 1
                    j += 2
                else:
                    j += 1
            out.append(" ")
            i = j
            continue
        if raw.startswith("///", i):
            # swallow through end of line, join with a space
            j = raw.find("\n", i)
            if j == -1:
                break
            out.append(" ")
            i = j + 1
            continue
        if raw.startswith("//", i) and (i == 0 or raw[i - 1] in " \t\n"):
            j = raw.find("\n", i)
            if j == -1:
                break
            i = j  # keep the newline; caller may rely on it as separator
            continue
        out.append(ch)
        i += 1
    text = "".join(out)
    if mode == "semicolon":
        text = text.rstrip().rstrip(";")
    return " ".join(text.split())


def segment_commands(script: SourceScript) -> Segmented:
    """Segment a Stata script into commands, tracking #delimit state.

    Returns every byte of the input exactly once across command and skip
    spans.  A trailing unterminated construct yields a final command with
    ``suspect=True`` rather than an error.
    """
    if script.language != "stata":
        raise ValueError(f"segment_commands expects stata source, got {script.language}")
    text = script.text
    n = len(text)
    newline_positions = [m.start() for m in re.finditer("\n", text)]
    commands = []
    skips = []
    mode = "newline"
    i = 0

    def add_skip(a, b):
        if b > a:
            skips.append(SkipSpan(text=text[a:b], start=a, end=b))

    def add_command(a, b, suspect=False):
        raw = text[a:b]
        logical = _strip_comments(raw, mode)
        verb = logical.split()[0].rstrip(",:") if logical.split() else ""
        commands.append(StataCommand(
            verb=verb, text=raw, start=a, end=b,
            first_line=_line_of(text, a, newline_positions),
            last_line=_line_of(text, max(a, b - 1), newline_positions),
            delimiter_mode=mode, logical_text=logical, suspect=suspect,
        ))

    while i < n:
        # --- between statements: consume blank lines, comment lines, #delimit
        line_end = text.find("\n", i)
        line_end = n if line_end == -1 else line_end + 1
        line = text[i:line_end]
        stripped = line.strip()
        if not stripped:
            add_skip(i, line_end)
            i = line_end
            continue
        m = DELIMIT_RE.match(line)
        if m:
            arg = m.group(1).strip().rstrip(";").strip()
            mode = "semicolon" if arg == ";" or (not arg and ";" in m.group(1)) else "newline"
            if ";" in m.group(1) and not arg:
                mode = "semicolon"
            add_skip(i, line_end)
            i = line_end
            continue
        if stripped.startswith("*") and not stripped.startswith("*/"):
            # comment statement: to end of line (newline mode) or ';' (semicolon mode)
            if mode == "semicolon":
                j = text.find(";", i)
                j = n if j == -1 else j + 1
                # include trailing newline if the ';' ends its line
                if j < n and text[j] == "\n":
                    j += 1
                add_skip(i, j)
                i = j
            else:
                j = i
                while True:  # honor /// continuations inside comment lines
                    le = text.find("\n", j)
                    le = n if le == -1 else le + 1
                    if "///" in text[j:le] and le < n:
                        j = le
                        continue
                    break
                add_skip(i, le)
                i = le
            continue
        if stripped.startswith("//") and not stripped.startswith("///"):
            add_skip(i, line_end)
            i = line_end
            continue
        if stripped.startswith("/*"):
            # block comment between statements
            close = text.find("*/", i)
            if close == -1:
                add_skip(i, n)
                i = n
                continue
            j = close + 2
            if j < n and text[j] == "\n":
                j += 1
            add_skip(i, j)
            i = j
            continue

        # --- statement proper
        start = i
        j = i
        suspect = False
        if mode == "semicolon":
            in_string = False
            while j < n:
                if text[j] == '"':
                    in_string = not in_string
                    j += 1
                    continue
                if in_string:
                    if text[j] == "\n":
                        in_string = False
                    j += 1
                    continue
                if text.startswith("/*", j):
                    close = text.find("*/", j + 2)
                    if close == -1:
                        j = n
                        suspect = True
                        break
                    j = close + 2
                    continue
                if text.startswith("//", j) and not text.startswith("///", j) \
                        and (j == 0 or text[j - 1] in " \t\n"):
                    le = text.find("\n", j)
                    j = n if le == -1 else le + 1
                    continue
                if text[j] == ";":
                    j += 1
                    break
                j += 1
            else:
                suspect = True
            if j <= start:
                j = n
                suspect = True
            if j < n and text[j] == "\n" and text[start:j].rstrip().endswith(";"):
                j += 1
            add_command(start, j, suspect=suspect and j >= n)
            i = j
        else:
            while True:
                le = text.find("\n", j)
                le = n if le == -1 else le + 1
                seg = text[j:le]
                # open block comment spanning lines keeps the command going
                opens = seg.count("/*")
                closes = seg.count("*/")
                if opens > closes:
                    close = text.find("*/", j)
                    if close == -1:
                        j = n
                        suspect = True
                        break
                    j = close + 2
                    continue
                # find a trailing /// continuation or // comment; slashes
                # inside double-quoted strings are literal
                continues = False
                in_string = False
                for pos in range(len(seg)):
                    if seg[pos] == '"':
                        in_string = not in_string
                    elif not in_string and seg.startswith("//", pos):
                        if seg.startswith("///", pos):
                            continues = True
                        break
                if continues:
                    j = le
                    if le >= n:
                        suspect = True
                        break
                    continue
                j = le
                break
            add_command(start, j, suspect=suspect)
            i = j

    return Segmented(commands=commands, skips=skips)


# --------------------------------------------------------------------------
# macros

MACRO_DEF_RE = re.compile(
    r"^(?:qui(?:etly)?\s+)?(global|local)\s+(\w+)\s*(?:=\s*)?(.*)$"
)
GLOBAL_REF_RE = re.compile(r"\$\{?(\w+)\}?")
LOCAL_REF_RE = re.compile(r"`(\w+)'")


@dataclass
class MacroTable:
    """Global/local macro definitions in document order."""
    defs: list = field(default_factory=list)  # (offset, kind, name, value)

    def define(self, offset, kind, name, value):
        self.defs.append((offset, kind, name, value))

    def lookup(self, name, before=None):
        value = None
        for off, _kind, nm, val in self.defs:
            if nm != name:
                continue
            if before is not None and off >= before:
                break
            value = val
        return value


def build_macro_table(segmented: Segmented) -> MacroTable:
    table = MacroTable()
    for cmd in segmented.commands:
        m = MACRO_DEF_RE.match(cmd.logical_text)
        if not m:
            continue
        kind, name, value = m.group(1), m.group(2), m.group(3).strip()
        if len(value) >= 2 and value[0] == '"' and value[-1] == '"':
            value = value[1:-1]
        table.define(cmd.start, kind, name, value)
    return table


def expand_macros(commands, table: MacroTable, max_depth=8):
    """Substitute $name / `name' references; flag what stays unresolved.

    Returns a new command list.  Unresolved references never pass silently:
    they are listed on the command so the extract stage can fail that
    specification instead of handing a literal ``$controls`` downstream.
    """
    out = []
    for cmd in commands:
        txt = cmd.logical_text
        unresolved = set()
        for _ in range(max_depth):
            changed = False

            def sub_global(m):
                nonlocal changed
                val = table.lookup(m.group(1), before=cmd.start)
                if val is None:
                    unresolved.add("$" + m.group(1))
                    return m.group(0)
                changed = True
                return val

            def sub_local(m):
                nonlocal changed
                val = table.lookup(m.group(1), before=cmd.start)
                if val is None:
                    unresolved.add("`%s'" % m.group(1))
                    return m.group(0)
                changed = True
                return val

            unresolved.clear()
            txt = GLOBAL_REF_RE.sub(sub_global, txt)
            txt = LOCAL_REF_RE.sub(sub_local, txt)
            if not changed:
                break
        new = StataCommand(
            verb=cmd.verb, text=cmd.text, start=cmd.start, end=cmd.end,
            first_line=cmd.first_line, last_line=cmd.last_line,
            delimiter_mode=cmd.delimiter_mode, logical_text=txt,
            suspect=cmd.suspect, unresolved_macros=tuple(sorted(unresolved)),
        )
        out.append(new)
    return out

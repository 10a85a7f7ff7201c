"""Mapping of variable terms from parsed specifications onto dataset columns.

Resolution runs through fixed tiers (exact, case-insensitive, edit distance
up to 2, bidirectional prefix) and never guesses between equally good
candidates: ambiguity surfaces as an unresolved result.  Time-series and
factor operators either match a realized encoding already present in the
export or produce a derivation recipe evaluated on the panel.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (DegenerateFactor, NotAnExpression, PanelRequired,
                     UnresolvedOperand)


@dataclass
class ColumnCatalog:
    names: list
    kinds: dict = field(default_factory=dict)   # name -> numeric|integer|string
    n_rows: int = 0
    na_counts: dict = field(default_factory=dict)

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> "ColumnCatalog":
        kinds = {}
        for c in df.columns:
            if pd.api.types.is_integer_dtype(df[c]):
                kinds[c] = "integer"
            elif pd.api.types.is_numeric_dtype(df[c]):
                kinds[c] = "numeric"
            else:
                kinds[c] = "string"
        return cls(names=list(df.columns), kinds=kinds, n_rows=len(df),
                   na_counts={c: int(df[c].isna().sum()) for c in df.columns})

    def __contains__(self, name):
        return name in self.names


@dataclass
class Resolution:
    query: str
    column: str | None = None
    recipe: "LagRecipe | None" = None
    tier: str = "unresolved"     # exact|case_insensitive|edit_distance|prefix|derived|unresolved
    distance: int | None = None
    note: str = ""


@dataclass
class PanelSpec:
    unit: str
    time: str


@dataclass
class LagRecipe:
    base_column: str
    ops: list            # [(op, k)] applied right to left, e.g. L2D -> D then L2

    def describe(self):
        chain = "".join(f"{op}{k if k != 1 else ''}" for op, k in self.ops)
        return f"{chain}.{self.base_column}"


def levenshtein(a: str, b: str, cutoff: int = 2) -> int:
    """Edit distance with early exit once the best row minimum exceeds cutoff."""
    if abs(len(a) - len(b)) > cutoff:
        return cutoff + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        best = i
        for j, cb in enumerate(b, 1):
            cost = 0 if ca == cb else 1
            val = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            cur.append(val)
            best = min(best, val)
        if best > cutoff:
            return cutoff + 1
        prev = cur
    return prev[-1]


def _normalize(term):
    t = term.strip()
    if len(t) >= 2 and t[0] == "`" and t[-1] == "`":
        t = t[1:-1]
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        t = t[1:-1]
    return t


def resolve_column(term: str, catalog: ColumnCatalog) -> Resolution:
    """Four-tier lookup of one variable term against the column catalog."""
    q = _normalize(term)
    names = catalog.names

    # exact (raw, plus leading-underscore encodings either side)
    for cand in (q, q.lstrip("_"), "_" + q):
        if cand in names:
            return Resolution(query=term, column=cand, tier="exact")

    # truncated name: stem + '~' resolves when the stem prefixes one column
    if q.endswith("~"):
        stem = q[:-1]
        hits = [n for n in names if n.startswith(stem)]
        if len(hits) == 1:
            return Resolution(query=term, column=hits[0], tier="prefix",
                              note="truncated")
        return Resolution(query=term, tier="unresolved",
                          note=f"truncation stem matches {len(hits)} columns")

    low = q.casefold()
    ci = [n for n in names if n.casefold() == low]
    if len(ci) == 1:
        return Resolution(query=term, column=ci[0], tier="case_insensitive")
    if len(ci) > 1:
        return Resolution(query=term, tier="unresolved",
                          note="case-insensitive tie")

    best = None
    best_d = 3
    tie = False
    for n in names:
        d = levenshtein(q, n, cutoff=2)
        if d < best_d:
            best, best_d, tie = n, d, False
        elif d == best_d and d <= 2:
            tie = True
    if best_d <= 2:
        if tie:
            return Resolution(query=term, tier="unresolved",
                              note=f"multiple columns at edit distance {best_d}")
        return Resolution(query=term, column=best, tier="edit_distance",
                          distance=best_d)

    pref = [n for n in names
            if (n.startswith(q) or q.startswith(n)) and n != q]
    if len(pref) == 1:
        return Resolution(query=term, column=pref[0], tier="prefix")
    if len(pref) > 1:
        return Resolution(query=term, tier="unresolved",
                          note=f"{len(pref)} prefix candidates")

    return Resolution(query=term, tier="unresolved", note="no candidate")


# --------------------------------------------------------------------------
# time-series operators

TS_TERM_RE = re.compile(r"^((?:[LFDlfd]\d*)+)\.(.+)$")
TS_OPS_RE = re.compile(r"([LFDlfd])(\d*)")


def _parse_ops(opstring):
    return [(m.group(1).upper(), int(m.group(2) or 1))
            for m in TS_OPS_RE.finditer(opstring)]


def resolve_ts_term(term, catalog: ColumnCatalog, panel: PanelSpec | None = None,
                    table: pd.DataFrame | None = None) -> Resolution:
    """Resolve a term that may carry L./F./D. operators.

    Tries realized encodings first (``l4margin_index2``, ``l4_margin_index2``);
    falls back to a derivation recipe over the panel.  When both exist and a
    table is supplied, the version with fewer missing values wins: an exported
    lag column restricted to the estimation sample can carry extra NAs that a
    full-panel recomputation avoids.
    """
    m = TS_TERM_RE.match(_normalize(term))
    if not m:
        return resolve_column(term, catalog)
    opstring, base = m.group(1), m.group(2)
    ops = _parse_ops(opstring)

    encoded = None
    note = ""
    for cand, enc_note in ((opstring.lower() + base, "dot-stripped"),
                           (opstring.lower() + "_" + base, "underscore-separated"),
                           (_normalize(term), "verbatim")):
        if cand in catalog:
            encoded, note = cand, enc_note
            break

    recipe = None
    base_res = resolve_column(base, catalog)
    if base_res.column is not None and panel is not None:
        recipe = LagRecipe(base_column=base_res.column, ops=ops)

    if encoded is not None and recipe is not None and table is not None:
        recomputed = apply_lag_recipe(table, recipe, panel)
        if int(table[encoded].isna().sum()) > int(recomputed.isna().sum()):
            return Resolution(query=term, recipe=recipe, tier="derived",
                              note=f"recomputed: {encoded} has more NAs")
    if encoded is not None:
        return Resolution(query=term, column=encoded, tier="exact", note=note)
    if recipe is not None:
        return Resolution(query=term, recipe=recipe, tier="derived",
                          note=f"recipe {recipe.describe()}")
    if base_res.column is not None and panel is None:
        raise PanelRequired(
            f"term {term} needs a lag recipe but no panel (unit, time) is declared")
    return Resolution(query=term, tier="unresolved",
                      note=f"base column {base} not found")


def apply_lag_recipe(table: pd.DataFrame, recipe: LagRecipe,
                     panel: PanelSpec) -> pd.Series:
    """Evaluate a lag/lead/difference chain with time-gap awareness.

    Lags look up the value at time t-k within the unit; a gap in the time
    variable yields a missing value, matching Stata semantics.
    """
    unit, time = panel.unit, panel.time
    values = table[recipe.base_column]

    def shifted(series, k):
        if k == 0:
            return series.copy()
        key = pd.DataFrame({
            "__u": table[unit].to_numpy(),
            "__t": table[time].to_numpy() - k,
        })
        lookup = pd.DataFrame({
            "__u": table[unit].to_numpy(),
            "__t": table[time].to_numpy(),
            "__v": series.to_numpy(),
        })
        merged = key.merge(lookup, on=["__u", "__t"], how="left")
        return pd.Series(merged["__v"].to_numpy(), index=table.index)

    out = values
    for op, k in reversed(recipe.ops):
        if op == "L":
            out = shifted(out, k)
        elif op == "F":
            out = shifted(out, -k)
        else:  # D: k-th difference
            for _ in range(k):
                out = out - shifted(out, 1)
    return out


# --------------------------------------------------------------------------
# factor expansion

FACTOR_RE = re.compile(r"^i\.(.+)$")


def expand_factor(term, catalog: ColumnCatalog, table: pd.DataFrame):
    """Expand ``i.var`` into dummy columns, generating them when absent.

    Existing ``_Ivar_*`` columns (the xi convention) are reused; otherwise one
    0/1 column per level is created with the lowest-sorting level dropped as
    the base.  Returns the list of dummy column names.
    """
    m = FACTOR_RE.match(_normalize(term))
    if not m:
        raise NotAnExpression(f"{term} is not an i. factor term")
    raw = m.group(1)
    pattern = re.compile(r"^_I%s_.+$" % re.escape(raw), re.IGNORECASE)
    existing = [n for n in catalog.names if pattern.match(n)]
    if existing:
        return existing

    res = resolve_column(raw, catalog)
    if res.column is None:
        raise UnresolvedOperand(f"factor base {raw} not found")
    col = table[res.column]
    levels = sorted(pd.unique(col.dropna()).tolist())
    if len(levels) < 2:
        raise DegenerateFactor(f"{res.column} has {len(levels)} level(s)")
    created = []
    for level in levels[1:]:
        label = str(int(level)) if isinstance(level, float) and float(level).is_integer() else str(level)
        name = f"_I{raw}_{label}"
        table[name] = np.where(col.isna(), np.nan, (col == level).astype(float))
        created.append(name)
    catalog.names.extend(c for c in created if c not in catalog.names)
    return created


# --------------------------------------------------------------------------
# computed expressions

_TOKEN_RE = re.compile(r"\s*(zero1|log|ln|exp|sqrt|abs|[()+\-*/]|[\w.]+)")


class _ExprParser:
    """Tiny recursive-descent parser: functions, + - * /, parentheses."""

    FUNCS = {"zero1", "log", "ln", "exp", "sqrt", "abs"}

    def __init__(self, text, table, catalog):
        self.tokens = self._tokenize(text)
        self.pos = 0
        self.table = table
        self.catalog = catalog
        self.saw_operator = False

    @staticmethod
    def _tokenize(text):
        tokens = []
        i = 0
        while i < len(text):
            m = _TOKEN_RE.match(text, i)
            if not m:
                raise NotAnExpression(f"cannot tokenize expression at: {text[i:]!r}")
            tokens.append(m.group(1))
            i = m.end()
        return tokens

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def parse(self):
        val = self.expr()
        if self.peek() is not None:
            raise NotAnExpression(f"trailing tokens: {self.tokens[self.pos:]}")
        return val

    def expr(self):
        val = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            self.saw_operator = True
            rhs = self.term()
            val = val + rhs if op == "+" else val - rhs
        return val

    def term(self):
        val = self.factor()
        while self.peek() in ("*", "/"):
            op = self.take()
            self.saw_operator = True
            rhs = self.factor()
            with np.errstate(divide="ignore", invalid="ignore"):
                val = val * rhs if op == "*" else val / rhs
        return val

    def factor(self):
        tok = self.take()
        if tok is None:
            raise NotAnExpression("unexpected end of expression")
        if tok == "(":
            val = self.expr()
            if self.take() != ")":
                raise NotAnExpression("unbalanced parentheses")
            return val
        if tok == "-":
            self.saw_operator = True
            return -self.factor()
        if tok in self.FUNCS:
            self.saw_operator = True
            if self.take() != "(":
                raise NotAnExpression(f"{tok} must be called with parentheses")
            inner = self.expr()
            if self.take() != ")":
                raise NotAnExpression("unbalanced parentheses")
            return self._apply(tok, inner)
        if re.match(r"^\d+(\.\d*)?$|^\.\d+$", tok):
            return float(tok)
        res = resolve_column(tok, self.catalog)
        if res.column is None:
            raise UnresolvedOperand(f"operand {tok} not found in catalog")
        return self.table[res.column].to_numpy(dtype=float)

    @staticmethod
    def _apply(fn, values):
        with np.errstate(divide="ignore", invalid="ignore"):
            if fn == "zero1":
                lo, hi = np.nanmin(values), np.nanmax(values)
                if hi == lo:
                    raise ZeroDivisionError("zero1 on a constant column")
                return (values - lo) / (hi - lo)
            if fn in ("log", "ln"):
                return np.log(values)
            if fn == "exp":
                return np.exp(values)
            if fn == "sqrt":
                return np.sqrt(values)
            return np.abs(values)


def materialize_expression(expr, table: pd.DataFrame,
                           catalog: ColumnCatalog | None = None) -> str:
    """Evaluate a computed-expression term and append it as a new column.

    Bare column names are rejected (NotAnExpression): callers should fall
    back to plain resolution in that case.
    """
    catalog = catalog or ColumnCatalog.from_dataframe(table)
    parser = _ExprParser(expr, table, catalog)
    values = parser.parse()
    if not parser.saw_operator:
        raise NotAnExpression(f"{expr!r} is a bare term, not an expression")
    name = "_expr_" + re.sub(r"\W+", "_", expr.strip()).strip("_")
    table[name] = np.asarray(values, dtype=float)
    if name not in catalog.names:
        catalog.names.append(name)
    return name


def split_cluster_spec(s: str, catalog: ColumnCatalog | None = None) -> list:
    """Split a cluster specification into variable names.

    Handles the R ``make.names`` artifact where ``"ccode year"`` became
    ``"ccode.year"``: a dotted token splits when the catalog holds both parts.
    """
    tokens = _normalize(s).split()
    out = []
    for tok in tokens:
        if "." in tok and catalog is not None and tok not in catalog:
            parts = tok.split(".")
            if all(p in catalog for p in parts):
                out.extend(parts)
                continue
        out.append(tok)
    return out

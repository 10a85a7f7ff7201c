"""OLS and 2SLS estimation with fixed-effect absorption, weights, and
cluster-robust inference.

Conventions (recorded in diagnostics output so mismatches are explainable):
cluster VCOV uses the sandwich with small-sample factor
(G/(G-1)) * ((n-1)/(n-K)) and t degrees of freedom G-1; without clustering,
HC1 with dof n-K.  2SLS residuals are recomputed from the original regressor,
never from the first-stage fit.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg as sla
from scipy import stats

from .errors import (ConditionParseError, EmptySample, NonConvergence,
                     RankDeficient, UnresolvedTerm, WeakRankInstrument)
from .resolver import (ColumnCatalog, PanelSpec, apply_lag_recipe,
                       expand_factor, materialize_expression, resolve_column,
                       resolve_ts_term, split_cluster_spec)
from .errors import NotAnExpression, UnresolvedOperand


@dataclass
class DesignMatrixBundle:
    y: np.ndarray
    D: np.ndarray
    Z: np.ndarray                  # n x m
    X: np.ndarray                  # n x k, includes intercept unless absorbed
    x_labels: list
    z_labels: list
    weights: np.ndarray | None = None
    cluster_ids: np.ndarray | None = None     # integer codes
    cluster_labels: np.ndarray | None = None  # original values, for jackknife ids
    fe_ids: list | None = None                 # list of integer-code arrays
    absorbed: bool = False
    dof_absorbed: int = 0
    esample_applied: bool = False
    resolution_audit: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.y)

    @property
    def m(self):
        return self.Z.shape[1]

    @property
    def k(self):
        return self.X.shape[1]

    @property
    def n_clusters(self):
        if self.cluster_ids is None:
            return None
        return int(self.cluster_ids.max()) + 1 if len(self.cluster_ids) else 0

    def subset(self, mask):
        """Row subset with cluster/FE codes refactorized."""
        mask = np.asarray(mask)
        cl = self.cluster_ids[mask] if self.cluster_ids is not None else None
        cl_lab = self.cluster_labels[mask] if self.cluster_labels is not None else None
        if cl is not None:
            _, cl = np.unique(cl, return_inverse=True)
        fe = None
        if self.fe_ids is not None:
            fe = [np.unique(f[mask], return_inverse=True)[1] for f in self.fe_ids]
        return DesignMatrixBundle(
            y=self.y[mask], D=self.D[mask], Z=self.Z[mask], X=self.X[mask],
            x_labels=list(self.x_labels), z_labels=list(self.z_labels),
            weights=self.weights[mask] if self.weights is not None else None,
            cluster_ids=cl, cluster_labels=cl_lab, fe_ids=fe,
            absorbed=self.absorbed, dof_absorbed=self.dof_absorbed,
            esample_applied=self.esample_applied,
        )


@dataclass
class EstimateResult:
    coefficient: float
    se: float
    t: float
    p: float
    ci_low: float
    ci_high: float
    n: int
    G: int | None
    dof: int
    vcov: str                      # "cluster" | "hc1"
    dropped: list = field(default_factory=list)

    def to_json_dict(self):
        return {"coefficient": self.coefficient, "se": self.se, "t": self.t,
                "p": self.p, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "n": self.n, "G": self.G, "dof": self.dof, "vcov": self.vcov,
                "dropped": list(self.dropped)}


@dataclass
class FirstStageResult:
    pi: np.ndarray                 # coefficients on the instruments
    vcov_pi: np.ndarray            # robust/cluster block
    vcov_pi_conventional: np.ndarray
    fitted: np.ndarray
    conventional_F: float
    n: int


@dataclass
class MatchReport:
    reference: float
    candidate: float
    tolerance: float
    passed: bool

    def to_json_dict(self):
        return {"reference": self.reference, "candidate": self.candidate,
                "tolerance": self.tolerance, "pass": self.passed}


def compare_estimates(reference: float, candidate: float) -> MatchReport:
    """Tolerance rule for cross-validating extracted vs re-estimated values."""
    tol = max(0.01 * abs(reference), 1e-6)
    return MatchReport(reference=reference, candidate=candidate, tolerance=tol,
                       passed=abs(reference - candidate) <= tol)


# --------------------------------------------------------------------------
# linear algebra helpers

def _drop_collinear(A, labels, protect=0):
    """QR with column pivoting; returns (kept column indices, dropped labels).

    The first `protect` columns must survive or the design is unusable.
    """
    n, k = A.shape
    if k == 0:
        return list(range(k)), []
    _, R, piv = sla.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, k) * np.finfo(float).eps if diag.size and diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    keep = sorted(piv[:rank])
    dropped = [labels[i] for i in piv[rank:]]
    for p in range(protect):
        if p not in keep:
            raise RankDeficient(f"protected column {labels[p]} is collinear")
    return keep, dropped


def _wls_fit(A, y, w):
    if w is None:
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
        return beta
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    yw = y * (sw[:, None] if y.ndim > 1 else sw)
    beta, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    return beta


def _sandwich(A, resid, w, cluster_ids, K):
    """Cluster-robust or HC1 sandwich VCOV for a WLS fit on design A."""
    n = A.shape[0]
    wvec = w if w is not None else np.ones(n)
    Aw = A * wvec[:, None]
    bread = np.linalg.inv(A.T @ Aw)
    scores = Aw * resid[:, None]
    if cluster_ids is not None:
        G = int(cluster_ids.max()) + 1
        S = np.zeros((G, A.shape[1]))
        np.add.at(S, cluster_ids, scores)
        meat = S.T @ S
        factor = (G / (G - 1)) * ((n - 1) / (n - K)) if G > 1 and n > K else 1.0
        dof = G - 1
        kind = "cluster"
    else:
        meat = scores.T @ scores
        factor = n / (n - K) if n > K else 1.0
        dof = n - K
        kind = "hc1"
        G = None
    V = factor * bread @ meat @ bread
    return V, dof, kind, G


def _result_for(idx, beta, V, dof, n, G, kind, dropped):
    coef = float(beta[idx])
    se = float(np.sqrt(max(V[idx, idx], 0.0)))
    if se > 0:
        t = coef / se
        p = 2 * stats.t.sf(abs(t), dof) if dof > 0 else float("nan")
    else:
        t = float("inf") if coef != 0 else 0.0
        p = 0.0 if coef != 0 else 1.0
    crit = stats.t.ppf(0.975, dof) if dof > 0 else float("nan")
    return EstimateResult(
        coefficient=coef, se=se, t=t, p=p,
        ci_low=coef - crit * se, ci_high=coef + crit * se,
        n=n, G=G, dof=dof, vcov=kind, dropped=dropped)


# --------------------------------------------------------------------------
# estimation

def fit_ols(bundle: DesignMatrixBundle) -> EstimateResult:
    """OLS of y on [D, X] with the shared VCOV conventions."""
    A = np.column_stack([bundle.D, bundle.X])
    labels = ["__D__"] + list(bundle.x_labels)
    keep, dropped = _drop_collinear(A, labels, protect=1)
    A = A[:, keep]
    beta = _wls_fit(A, bundle.y, bundle.weights)
    resid = bundle.y - A @ beta
    K = A.shape[1] + bundle.dof_absorbed
    V, dof, kind, G = _sandwich(A, resid, bundle.weights, bundle.cluster_ids, K)
    return _result_for(0, beta, V, dof, bundle.n, G, kind, dropped)


def _first_stage(bundle: DesignMatrixBundle):
    # instruments must retain rank after partialling out the controls
    gx = _wls_fit(bundle.X, bundle.Z, bundle.weights)
    zt = bundle.Z - bundle.X @ gx
    sv = np.linalg.svd(zt, compute_uv=False)
    scale = np.linalg.norm(bundle.Z) or 1.0
    if sv.size == 0 or sv[-1] <= 1e-10 * scale:
        raise WeakRankInstrument(
            "instruments are collinear with the controls after partialling")

    A1 = np.column_stack([bundle.Z, bundle.X])
    labels = list(bundle.z_labels) + list(bundle.x_labels)
    keep, dropped = _drop_collinear(A1, labels, protect=0)
    if any(i < bundle.m and i not in keep for i in range(bundle.m)):
        raise WeakRankInstrument(
            f"instrument(s) collinear with controls: {dropped}")
    A1 = A1[:, keep]
    gamma = _wls_fit(A1, bundle.D, bundle.weights)
    fitted = A1 @ gamma
    resid = bundle.D - fitted
    K1 = A1.shape[1] + bundle.dof_absorbed
    V1, dof1, _, _ = _sandwich(A1, resid, bundle.weights, bundle.cluster_ids, K1)

    zidx = [keep.index(i) for i in range(bundle.m)]
    pi = gamma[zidx]
    vcov_pi = V1[np.ix_(zidx, zidx)]

    # conventional (homoskedastic) VCOV for the same block
    w = bundle.weights if bundle.weights is not None else np.ones(bundle.n)
    Aw = A1 * w[:, None]
    bread = np.linalg.inv(A1.T @ Aw)
    sigma2 = float(resid @ (w * resid)) / max(bundle.n - K1, 1)
    Vc = sigma2 * bread
    vcov_conv = Vc[np.ix_(zidx, zidx)]
    try:
        conventional_F = float(pi @ np.linalg.solve(vcov_conv, pi)) / bundle.m
    except np.linalg.LinAlgError:
        conventional_F = float("nan")
    return FirstStageResult(pi=pi, vcov_pi=vcov_pi,
                            vcov_pi_conventional=vcov_conv,
                            fitted=fitted, conventional_F=conventional_F,
                            n=bundle.n), dropped


def fit_2sls(bundle: DesignMatrixBundle) -> dict:
    """Two-stage least squares; returns {"second": ..., "first": ...}.

    The second-stage VCOV uses residuals recomputed from the original
    treatment, the standard 2SLS variance rather than OLS-on-fitted.
    """
    if bundle.m < 1:
        raise WeakRankInstrument("no instruments")
    first, _ = _first_stage(bundle)
    A2 = np.column_stack([first.fitted, bundle.X])
    labels = ["__Dhat__"] + list(bundle.x_labels)
    keep, dropped = _drop_collinear(A2, labels, protect=1)
    A2 = A2[:, keep]
    beta = _wls_fit(A2, bundle.y, bundle.weights)
    # structural residuals from original D
    orig = np.column_stack([bundle.D, bundle.X])[:, keep]
    resid = bundle.y - orig @ beta
    K = A2.shape[1] + bundle.dof_absorbed
    V, dof, kind, G = _sandwich(A2, resid, bundle.weights, bundle.cluster_ids, K)
    second = _result_for(0, beta, V, dof, bundle.n, G, kind, dropped)
    return {"second": second, "first": first}


def absorb_fixed_effects(bundle: DesignMatrixBundle, tol=1e-8,
                         max_sweeps=1000) -> DesignMatrixBundle:
    """Project out fixed effects by alternating within-group demeaning.

    One factor converges in a single sweep (exact within transform); multiple
    factors iterate to `tol`.  The intercept column is dropped because it is
    absorbed.  Degrees of freedom lost are tracked for the small-sample
    corrections.
    """
    if not bundle.fe_ids:
        return bundle
    w = bundle.weights if bundle.weights is not None else np.ones(bundle.n)

    keep_cols = [j for j, lab in enumerate(bundle.x_labels) if lab != "_cons"]
    M = np.column_stack([bundle.y, bundle.D, bundle.Z, bundle.X[:, keep_cols]])
    factors = [np.asarray(f) for f in bundle.fe_ids]
    counts = [np.bincount(f, weights=w) for f in factors]

    for sweeps in range(1, max_sweeps + 1):
        delta = 0.0
        for f, cnt in zip(factors, counts):
            sums = np.zeros((len(cnt), M.shape[1]))
            np.add.at(sums, f, M * w[:, None])
            means = sums / cnt[:, None]
            M = M - means[f]
            delta = max(delta, float(np.abs(means).max()))
        if delta < tol or len(factors) == 1:
            break
    else:
        raise NonConvergence(
            f"fixed-effect absorption did not reach {tol} in {max_sweeps} sweeps",
            sweeps=max_sweeps)

    dof = 0
    for i, cnt in enumerate(counts):
        levels = len(cnt)
        dof += levels if i == 0 else levels - 1

    ny = M[:, 0]
    nD = M[:, 1]
    nZ = M[:, 2:2 + bundle.m]
    nX = M[:, 2 + bundle.m:]
    return DesignMatrixBundle(
        y=ny, D=nD, Z=nZ, X=nX,
        x_labels=[bundle.x_labels[j] for j in keep_cols],
        z_labels=list(bundle.z_labels),
        weights=bundle.weights, cluster_ids=bundle.cluster_ids,
        cluster_labels=bundle.cluster_labels, fe_ids=None,
        absorbed=True, dof_absorbed=bundle.dof_absorbed + dof,
        esample_applied=bundle.esample_applied,
        resolution_audit=bundle.resolution_audit, notes=list(bundle.notes),
    )


def prepare(bundle: DesignMatrixBundle) -> DesignMatrixBundle:
    """Absorb fixed effects if any; no-op otherwise."""
    return absorb_fixed_effects(bundle) if bundle.fe_ids else bundle


# --------------------------------------------------------------------------
# sample conditions

_COND_TOKEN = re.compile(
    r"\s*(>=|<=|==|!=|~=|[()><!&|]|\"[^\"]*\"|'[^']*'|[\w.]+)")


class _ConditionParser:
    """Stata-style boolean conditions: comparisons joined by & and |."""

    def __init__(self, text, table):
        self.tokens = self._tokenize(text)
        self.pos = 0
        self.table = table

    @staticmethod
    def _tokenize(text):
        tokens = []
        i = 0
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            m = _COND_TOKEN.match(text, i)
            if not m:
                raise ConditionParseError(f"bad condition syntax at: {text[i:]!r}")
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
        mask = self.or_expr()
        if self.peek() is not None:
            raise ConditionParseError(f"trailing tokens: {self.tokens[self.pos:]}")
        return mask

    def or_expr(self):
        left = self.and_expr()
        while self.peek() == "|":
            self.take()
            right = self.and_expr()
            left = left | right
        return left

    def and_expr(self):
        left = self.atom()
        while self.peek() == "&":
            self.take()
            right = self.atom()
            left = left & right
        return left

    def atom(self):
        tok = self.peek()
        if tok == "!":
            self.take()
            return ~self.atom()
        if tok == "(":
            self.take()
            inner = self.or_expr()
            if self.take() != ")":
                raise ConditionParseError("unbalanced parentheses in condition")
            return inner
        return self.comparison()

    def value(self):
        tok = self.take()
        if tok is None:
            raise ConditionParseError("unexpected end of condition")
        if tok[0] in "\"'":
            return tok[1:-1]
        try:
            return float(tok)
        except ValueError:
            pass
        if tok in self.table.columns:
            return self.table[tok].to_numpy()
        raise ConditionParseError(f"unknown column in condition: {tok}")

    def comparison(self):
        left = self.value()
        op = self.take()
        if op not in (">=", "<=", "==", "!=", "~=", ">", "<"):
            raise ConditionParseError(f"expected comparison operator, got {op!r}")
        right = self.value()
        with np.errstate(invalid="ignore"):
            if op == ">=":
                out = left >= right
            elif op == "<=":
                out = left <= right
            elif op == "==":
                out = left == right
            elif op in ("!=", "~="):
                out = left != right
            elif op == ">":
                out = left > right
            else:
                out = left < right
        return np.asarray(out, dtype=bool)


def evaluate_condition(text, table: pd.DataFrame) -> np.ndarray:
    """Row mask for a Stata-style if condition; missing values compare False."""
    return _ConditionParser(text, table).parse()


# --------------------------------------------------------------------------
# design construction

ESAMPLE_TOKEN = "e(sample)"
ESAMPLE_FLAG = "janitor_esample"


def _resolve_term(term, table, catalog, panel, audit):
    """Resolve one RHS term to one or more numeric columns."""
    if term.startswith("i."):
        cols = expand_factor(term, catalog, table)
        audit.append({"term": term, "column": "+".join(cols), "tier": "derived"})
        return cols
    res = resolve_ts_term(term, catalog, panel=panel, table=table)
    if res.recipe is not None:
        name = "_ts_" + re.sub(r"\W+", "_", term)
        table[name] = apply_lag_recipe(table, res.recipe, panel)
        if name not in catalog.names:
            catalog.names.append(name)
        audit.append({"term": term, "column": name, "tier": "derived"})
        return [name]
    if res.column is not None:
        audit.append({"term": term, "column": res.column, "tier": res.tier})
        return [res.column]
    try:
        name = materialize_expression(term, table, catalog)
        audit.append({"term": term, "column": name, "tier": "derived"})
        return [name]
    except (NotAnExpression, UnresolvedOperand):
        pass
    raise UnresolvedTerm(f"cannot resolve term {term!r}: {res.note}")


def build_design(table: pd.DataFrame, spec, panel: PanelSpec | None = None,
                 use_esample_flag=True) -> DesignMatrixBundle:
    """Assemble the numeric bundle for one specification.

    Order matters: lags/factors/expressions are materialized on the full
    table first, then the estimation-sample flag and any explicit if
    condition are applied, then listwise deletion.
    """
    table = table.copy()
    catalog = ColumnCatalog.from_dataframe(table)
    audit = []
    notes = []

    y_col = _resolve_term(spec.outcome, table, catalog, panel, audit)[0]
    d_col = _resolve_term(spec.treatment, table, catalog, panel, audit)[0]
    z_cols = []
    for t in spec.instruments:
        z_cols.extend(_resolve_term(t, table, catalog, panel, audit))
    x_cols = []
    for t in spec.controls:
        x_cols.extend(_resolve_term(t, table, catalog, panel, audit))

    fe_cols = []
    for t in spec.fixed_effects:
        if t == "_panel_unit_":
            if panel is None:
                raise UnresolvedTerm("panel fixed effects need a panel declaration")
            fe_cols.append(panel.unit)
            audit.append({"term": t, "column": panel.unit, "tier": "derived"})
            continue
        fe_cols.append(_resolve_term(t, table, catalog, panel, audit)[0])

    cluster_cols = []
    for raw in spec.cluster_vars:
        for t in split_cluster_spec(raw, catalog):
            res = resolve_column(t, catalog)
            if res.column is None:
                raise UnresolvedTerm(f"cluster variable {t!r} not found")
            cluster_cols.append(res.column)
            audit.append({"term": t, "column": res.column, "tier": res.tier})
    if len(cluster_cols) > 1:
        notes.append(f"multi-way clustering requested ({cluster_cols}); "
                     f"inference uses {cluster_cols[0]}")

    w_col = None
    if spec.weight:
        res = resolve_column(spec.weight["var"], catalog)
        if res.column is None:
            raise UnresolvedTerm(f"weight variable {spec.weight['var']!r} not found")
        w_col = res.column
        audit.append({"term": spec.weight["var"], "column": w_col, "tier": res.tier})
        if spec.weight["kind"] == "fweight":
            notes.append("fweight treated as robust weighting")

    # sample restriction
    mask = np.ones(len(table), dtype=bool)
    cond = (spec.if_condition or "").strip()
    if cond:
        if ESAMPLE_TOKEN in cond:
            if cond != ESAMPLE_TOKEN:
                raise ConditionParseError(
                    f"e(sample) may only appear alone, got {cond!r}")
            if use_esample_flag and ESAMPLE_FLAG in table.columns:
                mask &= (table[ESAMPLE_FLAG].to_numpy() == 1)
            else:
                notes.append("if e(sample) present but no janitor_esample flag "
                             "column; condition not applied")
        else:
            mask &= evaluate_condition(cond, table)
    elif ESAMPLE_FLAG in table.columns and use_esample_flag:
        pass  # flag only honored when the spec asked for e(sample)

    needed = [y_col, d_col] + z_cols + x_cols + fe_cols + cluster_cols
    if w_col:
        needed.append(w_col)
    needed = list(dict.fromkeys(needed))
    sub = table.loc[mask, needed]
    numeric = {}
    for c in dict.fromkeys([y_col, d_col] + z_cols + x_cols + ([w_col] if w_col else [])):
        numeric[c] = pd.to_numeric(sub[c], errors="coerce")
    complete = np.ones(len(sub), dtype=bool)
    for c, s in numeric.items():
        complete &= s.notna().to_numpy()
    for c in fe_cols + cluster_cols:
        complete &= sub[c].notna().to_numpy()
    if w_col:
        wv = numeric[w_col].to_numpy()
        if np.any(wv[complete] < 0):
            raise EmptySample("negative weights in sample")
        complete &= ~(wv == 0)

    sub = sub.loc[complete]
    if not len(sub):
        raise EmptySample("no rows remain after sample restrictions")

    y = pd.to_numeric(sub[y_col], errors="coerce").to_numpy(dtype=float)
    D = pd.to_numeric(sub[d_col], errors="coerce").to_numpy(dtype=float)
    Z = np.column_stack([pd.to_numeric(sub[c], errors="coerce").to_numpy(dtype=float)
                         for c in z_cols])
    Xparts = [pd.to_numeric(sub[c], errors="coerce").to_numpy(dtype=float)
              for c in x_cols]
    Xparts.append(np.ones(len(sub)))
    X = np.column_stack(Xparts)
    x_labels = list(x_cols) + ["_cons"]

    weights = pd.to_numeric(sub[w_col], errors="coerce").to_numpy(dtype=float) if w_col else None
    cl = cl_lab = None
    if cluster_cols:
        raw = sub[cluster_cols[0]].to_numpy()
        _, cl = np.unique(raw, return_inverse=True)
        cl_lab = raw
    fe = [np.unique(sub[c].to_numpy(), return_inverse=True)[1] for c in fe_cols] or None

    bundle = DesignMatrixBundle(
        y=y, D=D, Z=Z, X=X, x_labels=x_labels, z_labels=list(z_cols),
        weights=weights, cluster_ids=cl, cluster_labels=cl_lab, fe_ids=fe,
        esample_applied=bool(cond and ESAMPLE_TOKEN in cond
                             and ESAMPLE_FLAG in table.columns),
        resolution_audit=audit, notes=notes,
    )
    if bundle.n <= bundle.k + bundle.m:
        raise EmptySample(
            f"sample too small: n={bundle.n} <= k+m={bundle.k + bundle.m}")
    return bundle

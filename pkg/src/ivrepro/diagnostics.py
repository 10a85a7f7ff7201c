"""The fixed IV diagnostic template: instrument strength, weak-instrument
robust inference, resampling sensitivity, OLS comparison, and the credibility
rating.

Everything here is deterministic given (data, seed, iters): bootstrap
replicate r draws from a generator seeded with seed XOR r, so worker count
and replicate order cannot change any output.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (SingularVcov, TooManyDegenerateReplicates, ZeroVariance)
from .estimator import (DesignMatrixBundle, EstimateResult, FirstStageResult,
                        _wls_fit, fit_2sls, fit_ols, prepare)

WEAK_F_CUTOFF = 10.0
JACKKNIFE_SHIFT_CUTOFF = 0.20
AR_ALPHA = 0.05

RATINGS = ("HIGH", "MODERATE", "LOW", "VERY_LOW")

WARNING_FLAGS = ("WeakInstrument", "ARInsignificant", "JackknifeSensitive",
                 "BootCIncludesZero", "SignDisagreement")

# Adjusted 5%-level critical values for the single-instrument IV t-test as a
# function of the first-stage F: the tF procedure of Lee, McCrary, Moreira &
# Porter (2022, AER 112(10)).  Values derived numerically from the paper's
# worst-case-size characterization (rho = +-1) by scripts/derive_tf_table.py;
# they reproduce the published anchors cv(10) = 3.43 and cv -> 1.96 at
# F = 104.7, with no finite adjustment below F = z^2 = 3.84.
TF_TABLE_FLOOR = 3.8415
TF_TABLE = (
    (3.85, 45.4464),
    (3.9, 30.6795),
    (4.0, 18.6658),
    (4.2, 12.3047),
    (4.5, 9.0468),
    (5.0, 6.8578),
    (5.5, 5.7983),
    (6.0, 5.1549),
    (6.5, 4.7158),
    (7.0, 4.3936),
    (7.5, 4.1453),
    (8.0, 3.947),
    (9.0, 3.6476),
    (10.0, 3.4304),
    (11.0, 3.2643),
    (12.0, 3.1325),
    (14.0, 2.9353),
    (16.0, 2.7937),
    (18.0, 2.6863),
    (20.0, 2.6018),
    (25.0, 2.4512),
    (30.0, 2.3508),
    (35.0, 2.2783),
    (40.0, 2.223),
    (50.0, 2.1435),
    (60.0, 2.0883),
    (70.0, 2.0474),
    (80.0, 2.0155),
    (90.0, 1.9899),
    (100.0, 1.9687),
    (104.75, 1.96),
)


@dataclass
class JackknifeResult:
    minimum: float
    maximum: float
    most_influential: object
    delta: float
    relative_shift: float
    unit: str                     # "cluster" | "observation"
    estimates: list = field(default_factory=list)
    skipped: int = 0

    def to_json_dict(self):
        return {"min": self.minimum, "max": self.maximum,
                "most_influential": self.most_influential, "delta": self.delta,
                "relative_shift": self.relative_shift, "unit": self.unit,
                "skipped": self.skipped, "estimates": list(self.estimates)}


@dataclass
class DiagnosticsBundle:
    spec: dict
    tsls: EstimateResult
    ols: EstimateResult
    effective_F: float | None
    bootstrap_F: float | None
    ar: dict
    ar_ci: dict
    tf: dict
    boot_c: tuple
    boot_t: tuple
    boot_taus: list
    jackknife: JackknifeResult
    rho: float
    ratio: float | None
    warnings: list
    incomplete: list
    rating: str
    seed: int
    iters: int
    cap: dict
    notes: list = field(default_factory=list)
    resolution_audit: list = field(default_factory=list)
    vcov_convention: str = ("cluster: (G/(G-1))*((n-1)/(n-K)) sandwich, dof G-1; "
                            "otherwise HC1, dof n-K")

    def to_json_dict(self):
        return {
            "spec": self.spec,
            "tsls": self.tsls.to_json_dict(),
            "ols": self.ols.to_json_dict(),
            "effective_F": self.effective_F,
            "bootstrap_F": self.bootstrap_F,
            "ar": self.ar,
            "ar_ci": self.ar_ci,
            "tf": self.tf,
            "boot_c": list(self.boot_c),
            "boot_t": list(self.boot_t),
            "boot_taus": list(self.boot_taus),
            "jackknife": self.jackknife.to_json_dict(),
            "rho": self.rho if np.isfinite(self.rho) else None,
            "ratio": self.ratio,
            "warnings": sorted(self.warnings),
            "incomplete": sorted(self.incomplete),
            "rating": self.rating,
            "seed": self.seed,
            "iters": self.iters,
            "cap": self.cap,
            "notes": list(self.notes),
            "resolution_audit": list(self.resolution_audit),
            "vcov_convention": self.vcov_convention,
        }


# --------------------------------------------------------------------------
# instrument strength

def effective_f(first: FirstStageResult, qzz: np.ndarray) -> float:
    """Robust-variance first-stage strength statistic (Montiel Olea &
    Pflueger 2013).

    Single instrument: pi^2 / V(pi).  Multiple instruments: the quadratic
    form pi' Qzz pi over trace(V Qzz), which reduces to the former when m=1.
    """
    pi = np.atleast_1d(first.pi)
    V = np.atleast_2d(first.vcov_pi)
    if pi.size == 1:
        v = float(V[0, 0])
        if not np.isfinite(v) or v <= 0:
            raise SingularVcov("first-stage variance is zero or non-finite")
        return float(pi[0] ** 2 / v)
    qzz = np.atleast_2d(qzz)
    denom = float(np.trace(V @ qzz))
    if not np.isfinite(denom) or denom <= 0:
        raise SingularVcov("trace(V Qzz) is zero or non-finite")
    return float(pi @ qzz @ pi / denom)


def instrument_qzz(bundle: DesignMatrixBundle) -> np.ndarray:
    """Second-moment matrix of the instruments after partialling out X."""
    w = bundle.weights if bundle.weights is not None else np.ones(bundle.n)
    gamma = _wls_fit(bundle.X, bundle.Z, w)
    zt = bundle.Z - bundle.X @ gamma
    return (zt * w[:, None]).T @ zt / float(w.sum())


# --------------------------------------------------------------------------
# Anderson-Rubin

def _reduced_form_pieces(bundle: DesignMatrixBundle):
    """Coefficients and cluster scores for y and D regressed on [Z, X]."""
    A = np.column_stack([bundle.Z, bundle.X])
    n, K = A.shape
    w = bundle.weights if bundle.weights is not None else np.ones(n)
    Aw = A * w[:, None]
    bread = np.linalg.pinv(A.T @ Aw)
    cy = bread @ Aw.T @ bundle.y
    cd = bread @ Aw.T @ bundle.D
    ry = bundle.y - A @ cy
    rd = bundle.D - A @ cd
    if bundle.cluster_ids is not None:
        G = int(bundle.cluster_ids.max()) + 1
        Sy = np.zeros((G, K))
        Sd = np.zeros((G, K))
        np.add.at(Sy, bundle.cluster_ids, Aw * ry[:, None])
        np.add.at(Sd, bundle.cluster_ids, Aw * rd[:, None])
        factor = (G / (G - 1)) * ((n - 1) / (n - K - bundle.dof_absorbed)) \
            if G > 1 and n > K + bundle.dof_absorbed else 1.0
        dof = G - 1
    else:
        Sy = Aw * ry[:, None]
        Sd = Aw * rd[:, None]
        Kfull = K + bundle.dof_absorbed
        factor = n / (n - Kfull) if n > Kfull else 1.0
        dof = n - Kfull
        G = None
    m = bundle.m
    return cy[:m], cd[:m], Sy, Sd, bread, factor, dof, m


def ar_test(bundle: DesignMatrixBundle, beta0: float = 0.0) -> dict:
    """Anderson-Rubin test of the structural coefficient via the reduced form.

    Regresses (y - beta0*D) on instruments and controls and Wald-tests the
    instrument coefficients jointly at zero with the cluster-robust VCOV.
    """
    cy, cd, Sy, Sd, bread, factor, dof, m = _reduced_form_pieces(bundle)
    c = cy - beta0 * cd
    S = Sy - beta0 * Sd
    meat = S.T @ S
    V = factor * bread @ meat @ bread
    Vzz = V[:m, :m]
    try:
        stat = float(c @ np.linalg.solve(Vzz, c)) / m
    except np.linalg.LinAlgError as exc:
        raise SingularVcov(f"AR variance block singular: {exc}") from exc
    stat = max(stat, 0.0)
    p = float(stats.f.sf(stat, m, dof)) if dof > 0 else float("nan")
    return {"statistic": stat, "p": p}


def ar_confidence_interval(bundle: DesignMatrixBundle, tau: float, se: float,
                           alpha: float = AR_ALPHA, half_width: float = 6.0,
                           step_frac: float = 0.01) -> dict:
    """Invert the AR test over a grid tau +- 6*SE at step SE/100."""
    if se <= 0 or not np.isfinite(se):
        return {"low": tau, "high": tau, "open_low": False, "open_high": False}
    cy, cd, Sy, Sd, bread, factor, dof, m = _reduced_form_pieces(bundle)
    grid = tau + np.arange(-half_width / step_frac, half_width / step_frac + 1) \
        * (se * step_frac)
    crit = stats.f.ppf(1 - alpha, m, dof) if dof > 0 else float("inf")
    accepted = []
    for b0 in grid:
        c = cy - b0 * cd
        S = Sy - b0 * Sd
        Vzz = (factor * bread @ (S.T @ S) @ bread)[:m, :m]
        try:
            stat = float(c @ np.linalg.solve(Vzz, c)) / m
        except np.linalg.LinAlgError:
            continue
        if stat <= crit:
            accepted.append(b0)
    if not accepted:
        return {"low": float("nan"), "high": float("nan"),
                "open_low": False, "open_high": False}
    return {"low": float(min(accepted)), "high": float(max(accepted)),
            "open_low": bool(np.isclose(min(accepted), grid[0])),
            "open_high": bool(np.isclose(max(accepted), grid[-1]))}


# --------------------------------------------------------------------------
# bootstrap

def _resample_bundle(bundle: DesignMatrixBundle, rng) -> DesignMatrixBundle:
    """Pairs resample: clusters with replacement when clustered, else rows.

    Each drawn cluster becomes its own cluster in the replicate, so a cluster
    drawn twice contributes two independent blocks to the sandwich.
    """
    if bundle.cluster_ids is not None:
        G = bundle.n_clusters
        draws = rng.integers(0, G, size=G)
        order = np.argsort(bundle.cluster_ids, kind="stable")
        sorted_ids = bundle.cluster_ids[order]
        starts = np.searchsorted(sorted_ids, np.arange(G), side="left")
        ends = np.searchsorted(sorted_ids, np.arange(G), side="right")
        idx_parts = []
        new_cl = []
        for j, g in enumerate(draws):
            rows = order[starts[g]:ends[g]]
            idx_parts.append(rows)
            new_cl.append(np.full(len(rows), j))
        idx = np.concatenate(idx_parts)
        cl = np.concatenate(new_cl)
    else:
        idx = rng.integers(0, bundle.n, size=bundle.n)
        cl = None
    fe = [f[idx] for f in bundle.fe_ids] if bundle.fe_ids else None
    if fe is not None:
        fe = [np.unique(f, return_inverse=True)[1] for f in fe]
    return DesignMatrixBundle(
        y=bundle.y[idx], D=bundle.D[idx], Z=bundle.Z[idx], X=bundle.X[idx],
        x_labels=list(bundle.x_labels), z_labels=list(bundle.z_labels),
        weights=bundle.weights[idx] if bundle.weights is not None else None,
        cluster_ids=cl,
        cluster_labels=bundle.cluster_labels[idx] if bundle.cluster_labels is not None else None,
        fe_ids=fe, dof_absorbed=0,
    )


def _one_replicate(bundle, seed, r, max_redraws):
    rng = np.random.default_rng(seed ^ r)
    redraws = 0
    while True:
        try:
            rb = prepare(_resample_bundle(bundle, rng))
            fit = fit_2sls(rb)
            tau = fit["second"].coefficient
            se = fit["second"].se
            pi = float(fit["first"].pi[0]) if len(fit["first"].pi) == 1 else float("nan")
            if not (np.isfinite(tau) and np.isfinite(se) and se > 0):
                raise FloatingPointError("degenerate replicate")
            return tau, se, pi, redraws
        except Exception:
            redraws += 1
            if redraws > max_redraws:
                return float("nan"), float("nan"), float("nan"), redraws


def bootstrap_suite(bundle: DesignMatrixBundle, iters: int = 1000,
                    seed: int = 42, workers: int = 1) -> dict:
    """Cluster (or pairs) bootstrap: percentile CI, percentile-t CI, and the
    bootstrap analogue of the first-stage F."""
    if iters < 2:
        raise ValueError("iters must be >= 2")
    base_b = prepare(bundle)
    base = fit_2sls(base_b)
    tau_hat = base["second"].coefficient
    se_hat = base["second"].se
    pi_hat = float(base["first"].pi[0]) if base_b.m == 1 else None

    max_redraws = max(2, iters // 10)
    indices = range(1, iters + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda r: _one_replicate(bundle, seed, r, max_redraws), indices))
    else:
        rows = [_one_replicate(bundle, seed, r, max_redraws) for r in indices]

    taus = np.array([r[0] for r in rows])
    ses = np.array([r[1] for r in rows])
    pis = np.array([r[2] for r in rows])
    redraws = int(sum(r[3] for r in rows))
    ok = np.isfinite(taus) & np.isfinite(ses)
    if redraws > 0.1 * iters or ok.sum() < iters:
        raise TooManyDegenerateReplicates(
            f"{redraws} redraws over {iters} replicates")

    boot_c = (float(np.quantile(taus, 0.025)), float(np.quantile(taus, 0.975)))
    tstars = (taus - tau_hat) / ses
    boot_t = (float(tau_hat - np.quantile(tstars, 0.975) * se_hat),
              float(tau_hat - np.quantile(tstars, 0.025) * se_hat))
    bootstrap_F = None
    if pi_hat is not None and np.isfinite(pis).all():
        var_pi = float(np.var(pis, ddof=1))
        if var_pi > 0:
            bootstrap_F = float(pi_hat ** 2 / var_pi)
    return {"boot_c": boot_c, "boot_t": boot_t, "bootstrap_F": bootstrap_F,
            "taus": taus.tolist(), "redraws": redraws}


# --------------------------------------------------------------------------
# tF

def tf_test(tau: float, se: float, first_stage_F: float, m: int = 1) -> dict:
    """tF check: adjusted 5% critical value as a function of first-stage F.

    Only defined for single-instrument designs.  Below the table floor the
    adjustment is unbounded, so the check fails with a flag.
    """
    if m != 1:
        return {"applicable": False, "pass_at_5pct": None,
                "adjusted_critical": None, "ci_low": None, "ci_high": None,
                "note": "multiple instruments"}
    F = float(first_stage_F)
    if not np.isfinite(F) or F < TF_TABLE_FLOOR:
        return {"applicable": True, "pass_at_5pct": False,
                "adjusted_critical": None, "ci_low": None, "ci_high": None,
                "note": "F below table floor"}
    fs = np.array([r[0] for r in TF_TABLE])
    cvs = np.array([r[1] for r in TF_TABLE])
    if F >= fs[-1]:
        cv = float(cvs[-1])
    elif F <= fs[0]:
        cv = float(cvs[0])
    else:
        cv = float(np.interp(np.log(F), np.log(fs), cvs))
    tstat = abs(tau / se) if se > 0 else float("inf")
    return {"applicable": True, "pass_at_5pct": bool(tstat >= cv),
            "adjusted_critical": cv,
            "ci_low": tau - cv * se, "ci_high": tau + cv * se, "note": ""}


# --------------------------------------------------------------------------
# jackknife

def jackknife(bundle: DesignMatrixBundle, cluster_limit: int = 2000,
              obs_sample: int = 200, seed: int = 42) -> JackknifeResult:
    """Leave-one-out re-estimation over clusters, falling back to a fixed-seed
    observation sample when the cluster count (or unclustered n) is large."""
    base = fit_2sls(prepare(bundle))["second"].coefficient

    use_clusters = (bundle.cluster_ids is not None
                    and bundle.n_clusters <= cluster_limit)
    estimates = []
    ids = []
    skipped = 0
    if use_clusters:
        labels = bundle.cluster_labels
        for g in range(bundle.n_clusters):
            mask = bundle.cluster_ids != g
            try:
                fit = fit_2sls(prepare(bundle.subset(mask)))
                estimates.append(fit["second"].coefficient)
                gid = labels[bundle.cluster_ids == g][0] if labels is not None else g
                ids.append(gid)
            except Exception:
                skipped += 1
        unit = "cluster"
    else:
        rng = np.random.default_rng(seed)
        if bundle.n > obs_sample:
            chosen = np.sort(rng.choice(bundle.n, size=obs_sample, replace=False))
        else:
            chosen = np.arange(bundle.n)
        for i in chosen:
            mask = np.ones(bundle.n, dtype=bool)
            mask[i] = False
            try:
                fit = fit_2sls(prepare(bundle.subset(mask)))
                estimates.append(fit["second"].coefficient)
                ids.append(int(i))
            except Exception:
                skipped += 1
        unit = "observation"

    if not estimates:
        return JackknifeResult(minimum=float("nan"), maximum=float("nan"),
                               most_influential=None, delta=float("nan"),
                               relative_shift=float("nan"), unit=unit,
                               skipped=skipped)
    arr = np.asarray(estimates)
    deltas = np.abs(arr - base)
    top = int(np.argmax(deltas))
    delta = float(deltas[top])
    rel = delta / abs(base) if base != 0 else float("inf")
    ident = ids[top]
    if isinstance(ident, (np.integer,)):
        ident = int(ident)
    elif isinstance(ident, (np.floating,)):
        ident = float(ident)
        if ident.is_integer():
            ident = int(ident)
    return JackknifeResult(
        minimum=float(arr.min()), maximum=float(arr.max()),
        most_influential=ident, delta=delta, relative_shift=float(rel),
        unit=unit, estimates=[float(v) for v in arr], skipped=skipped)


# --------------------------------------------------------------------------
# first-stage correlation, sampling cap

def first_stage_rho(bundle: DesignMatrixBundle, first: FirstStageResult) -> float:
    """|corr(D, D_hat)| after partialling controls and FE out of both."""
    w = bundle.weights if bundle.weights is not None else np.ones(bundle.n)
    gb = _wls_fit(bundle.X, np.column_stack([bundle.D, first.fitted]), w)
    resid = np.column_stack([bundle.D, first.fitted]) - bundle.X @ gb
    rd, rf = resid[:, 0], resid[:, 1]
    sd, sf = rd.std(), rf.std()
    if sd <= 0 or sf <= 0 or not (np.isfinite(sd) and np.isfinite(sf)):
        raise ZeroVariance("no variation left after partialling")
    rho = float(np.corrcoef(rd, rf)[0, 1])
    return abs(rho)


def cap_sample(table: pd.DataFrame, max_obs: int = 100000, seed: int = 42,
               cluster_col: str | None = None) -> pd.DataFrame:
    """Cap the table for resampling diagnostics; analytic estimates never
    pass through here.  Cluster-preserving when a cluster column is given."""
    n = len(table)
    if n <= max_obs:
        return table
    rng = np.random.default_rng(seed)
    if cluster_col and cluster_col in table.columns:
        values = table[cluster_col].to_numpy()
        uniq = pd.unique(values)
        order = rng.permutation(len(uniq))
        sizes = pd.Series(values).value_counts()
        keep = []
        total = 0
        for j in order:
            c = uniq[j]
            size = int(sizes[c])
            if total + size > max_obs:
                continue
            keep.append(c)
            total += size
            if total >= max_obs:
                break
        if keep:
            mask = np.isin(values, np.asarray(keep))
            return table.loc[mask]
    idx = np.sort(rng.choice(n, size=max_obs, replace=False))
    return table.iloc[idx]


def _cap_bundle(bundle: DesignMatrixBundle, max_obs: int, seed: int):
    """Row cap at the bundle level, cluster-preserving; returns (bundle, info)."""
    if bundle.n <= max_obs:
        return bundle, {"applied": False, "n_full": bundle.n, "n_capped": bundle.n}
    rng = np.random.default_rng(seed)
    if bundle.cluster_ids is not None:
        order = rng.permutation(bundle.n_clusters)
        sizes = np.bincount(bundle.cluster_ids)
        keep = np.zeros(bundle.n_clusters, dtype=bool)
        total = 0
        for g in order:
            if total + sizes[g] > max_obs:
                continue
            keep[g] = True
            total += int(sizes[g])
            if total >= max_obs:
                break
        mask = keep[bundle.cluster_ids]
        if mask.any():
            return bundle.subset(mask), {"applied": True, "n_full": bundle.n,
                                         "n_capped": int(mask.sum())}
    idx = np.sort(rng.choice(bundle.n, size=max_obs, replace=False))
    mask = np.zeros(bundle.n, dtype=bool)
    mask[idx] = True
    return bundle.subset(mask), {"applied": True, "n_full": bundle.n,
                                 "n_capped": max_obs}


# --------------------------------------------------------------------------
# warnings and rating

def rating_for(warning_count: int) -> str:
    if warning_count == 0:
        return "HIGH"
    if warning_count <= 2:
        return "MODERATE"
    if warning_count <= 4:
        return "LOW"
    return "VERY_LOW"


def evaluate(statistics: dict) -> dict:
    """Apply the warning catalog and map the count to a credibility rating.

    Absent statistics are listed as incomplete rather than treated as passes
    or failures.
    """
    warnings = []
    incomplete = []

    eff = statistics.get("effective_F")
    if eff is None:
        incomplete.append("effective_F")
    elif eff < WEAK_F_CUTOFF:
        warnings.append("WeakInstrument")

    ar_p = (statistics.get("ar") or {}).get("p")
    if ar_p is None or not np.isfinite(ar_p):
        incomplete.append("ar")
    elif ar_p >= AR_ALPHA:
        warnings.append("ARInsignificant")

    shift = statistics.get("jackknife_relative_shift")
    if shift is None or not np.isfinite(shift):
        incomplete.append("jackknife")
    elif shift > JACKKNIFE_SHIFT_CUTOFF:
        warnings.append("JackknifeSensitive")

    boot_c = statistics.get("boot_c")
    if not boot_c or any(not np.isfinite(v) for v in boot_c):
        incomplete.append("boot_c")
    elif boot_c[0] <= 0.0 <= boot_c[1]:
        warnings.append("BootCIncludesZero")

    t2, to = statistics.get("tsls"), statistics.get("ols")
    if t2 is None or to is None:
        incomplete.append("ols_comparison")
    else:
        if (np.sign(t2["coefficient"]) != np.sign(to["coefficient"])
                and t2["p"] < 0.05 and to["p"] < 0.05):
            warnings.append("SignDisagreement")

    return {"warnings": warnings, "incomplete": incomplete,
            "rating": rating_for(len(warnings))}


# --------------------------------------------------------------------------
# template driver

def run_template(bundle: DesignMatrixBundle, spec_dict: dict, seed: int = 42,
                 iters: int = 1000, max_obs: int = 100000,
                 cluster_limit: int = 2000, obs_sample: int = 200,
                 workers: int = 1) -> DiagnosticsBundle:
    """Compute every statistic in the template for one built design."""
    prepared = prepare(bundle)
    both = fit_2sls(prepared)
    tsls, first = both["second"], both["first"]
    ols = fit_ols(prepared)

    qzz = instrument_qzz(prepared)
    try:
        eff = effective_f(first, qzz)
    except SingularVcov:
        eff = None
    ar = ar_test(prepared, 0.0)
    ar_ci = ar_confidence_interval(prepared, tsls.coefficient, tsls.se)
    tf = tf_test(tsls.coefficient, tsls.se,
                 eff if eff is not None else float("nan"), m=prepared.m)

    resample_bundle, cap_info = _cap_bundle(bundle, max_obs, seed)
    boot = bootstrap_suite(resample_bundle, iters=iters, seed=seed,
                           workers=workers)
    jk = jackknife(resample_bundle, cluster_limit=cluster_limit,
                   obs_sample=obs_sample, seed=seed)
    try:
        rho = first_stage_rho(prepared, first)
    except ZeroVariance:
        rho = float("nan")

    ratio = None
    if ols.coefficient != 0:
        ratio = abs(tsls.coefficient / ols.coefficient)

    verdict = evaluate({
        "effective_F": eff,
        "ar": ar,
        "jackknife_relative_shift": jk.relative_shift,
        "boot_c": boot["boot_c"],
        "tsls": tsls.to_json_dict(),
        "ols": ols.to_json_dict(),
    })

    return DiagnosticsBundle(
        spec=spec_dict, tsls=tsls, ols=ols, effective_F=eff,
        bootstrap_F=boot["bootstrap_F"], ar=ar, ar_ci=ar_ci, tf=tf,
        boot_c=boot["boot_c"], boot_t=boot["boot_t"], boot_taus=boot["taus"],
        jackknife=jk, rho=rho, ratio=ratio,
        warnings=verdict["warnings"], incomplete=verdict["incomplete"],
        rating=verdict["rating"], seed=seed, iters=iters, cap=cap_info,
        notes=list(bundle.notes), resolution_audit=list(bundle.resolution_audit),
    )

"""Standardized per-study Markdown report and deterministic figure artifacts.

The report is a pure function of (diagnostic bundles, study info, pipeline
version): no timestamps, no environment state, fixed section order, fixed
number formatting (3 decimals for coefficients, 1 for F statistics).  Figures
are SVG built from a fixed template with CSV sidecars carrying the numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import NoSpecs

FIGURE_KINDS = ("coef_comparison", "f_comparison", "boot_distribution",
                "jackknife_distribution")


@dataclass
class FigureData:
    kind: str
    columns: list
    rows: list
    caption: str


def _f3(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "n/a"
    return f"{x:.3f}"


def _f1(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "n/a"
    return f"{x:.1f}"


def _ci(pair):
    if not pair or any(v is None or not math.isfinite(v) for v in pair):
        return "n/a"
    return f"[{pair[0]:.3f}, {pair[1]:.3f}]"


def _yesno(flag):
    if flag is None:
        return "n/a"
    return "Yes" if flag else "No"


def render_report(bundles, study_info: dict, pipeline_version: str,
                 seed: int, iters: int) -> str:
    """Render the study report; identical inputs yield identical bytes."""
    if not bundles:
        raise NoSpecs("no diagnostic bundles to report")
    lines = []
    add = lines.append
    add(f"# Reproduction report: {study_info.get('title', '(untitled)')}")
    add("")
    add(f"- Authors: {study_info.get('authors', '')}")
    add(f"- Year: {study_info.get('year', '')}")
    add(f"- Journal: {study_info.get('journal', '')}")
    add(f"- Replication package: {study_info.get('replication_url', '')}")
    add(f"- Pipeline version: {pipeline_version}")
    add(f"- Seed: {seed} | Bootstrap iterations: {iters}")
    add("")
    add("## Executive summary")
    add("")
    add("| Spec | Outcome | Treatment | Rating |")
    add("|------|---------|-----------|--------|")
    for i, b in enumerate(bundles, start=1):
        spec = b["spec"]
        add(f"| {i} | `{spec['outcome']}` | `{spec['treatment']}` | {b['rating']} |")
    add("")

    for i, b in enumerate(bundles, start=1):
        spec = b["spec"]
        tsls, ols = b["tsls"], b["ols"]
        add(f"## Specification {i}")
        add("")
        add("### Design")
        add("")
        add(f"- Software: {spec['software']}")
        add(f"- Source: `{spec['source_file']}:{spec['line']}`")
        add(f"- Command: `{spec['command']}`")
        if spec.get("nonlinear"):
            add("- **Non-Linear Model Approximation**: the original call is a "
                "nonlinear IV command; estimates below use the linear 2SLS "
                "approximation.")
        add("")
        add("### Variables")
        add("")
        add(f"- Outcome: `{spec['outcome']}`")
        add(f"- Treatment: `{spec['treatment']}`")
        add(f"- Instruments: {', '.join('`%s`' % z for z in spec['instruments'])}")
        controls = ", ".join("`%s`" % c for c in spec["controls"]) or "none"
        add(f"- Controls: {controls}")
        fe = ", ".join("`%s`" % f for f in spec["fixed_effects"]) or "none"
        add(f"- Fixed effects: {fe}")
        cl = ", ".join("`%s`" % c for c in spec["cluster_vars"]) or "none"
        add(f"- Clustering: {cl}")
        w = spec.get("weight")
        add(f"- Weights: {('`%s` (%s)' % (w['var'], w['kind'])) if w else 'none'}")
        add(f"- Sample condition: {('`%s`' % spec['if_condition']) if spec.get('if_condition') else 'none'}")
        add("")
        add("### Estimates")
        add("")
        add("| | 2SLS | OLS |")
        add("|---|------|-----|")
        add(f"| Coefficient | {_f3(tsls['coefficient'])} | {_f3(ols['coefficient'])} |")
        add(f"| Std. error | {_f3(tsls['se'])} | {_f3(ols['se'])} |")
        add(f"| p-value | {_f3(tsls['p'])} | {_f3(ols['p'])} |")
        add(f"| 95% CI | {_ci((tsls['ci_low'], tsls['ci_high']))} | "
            f"{_ci((ols['ci_low'], ols['ci_high']))} |")
        add(f"| N | {tsls['n']} | {ols['n']} |")
        gt = tsls["G"] if tsls["G"] is not None else "n/a"
        go = ols["G"] if ols["G"] is not None else "n/a"
        add(f"| Clusters | {gt} | {go} |")
        add("")
        add("### Diagnostics")
        add("")
        add("| Statistic | Value |")
        add("|-----------|-------|")
        add(f"| Effective F | {_f1(b['effective_F'])} |")
        add(f"| Bootstrap F | {_f1(b['bootstrap_F'])} |")
        add(f"| AR statistic | {_f3(b['ar']['statistic'])} |")
        add(f"| AR p-value | {_f3(b['ar']['p'])} |")
        ar_ci = b.get("ar_ci") or {}
        add(f"| AR 95% CI | {_ci((ar_ci.get('low'), ar_ci.get('high')))} |")
        tf = b["tf"]
        if tf.get("applicable"):
            add(f"| tF adjusted critical | {_f3(tf.get('adjusted_critical'))} |")
            add(f"| tF p<0.05 | {_yesno(tf.get('pass_at_5pct'))} |")
        else:
            add("| tF p<0.05 | n/a (multiple instruments) |")
        add(f"| Bootstrap-c 95% CI | {_ci(b['boot_c'])} |")
        add(f"| Bootstrap-t 95% CI | {_ci(b['boot_t'])} |")
        jk = b["jackknife"]
        add(f"| Jackknife range | {_ci((jk['min'], jk['max']))} |")
        add(f"| Most influential {jk['unit']} | {jk['most_influential']} "
            f"(delta={_f3(jk['delta'])}, shift={_f3(jk['relative_shift'])}) |")
        add(f"| First-stage abs. correlation | {_f3(b['rho'])} |")
        add(f"| abs(2SLS/OLS) ratio | {_f3(b['ratio'])} |")
        add("")
        cv = b.get("cross_validation")
        if cv:
            add("### Reproduction check")
            add("")
            add(f"- Reference ({cv.get('reference_source', '')}): "
                f"{_f3(cv['reference'])}; re-estimated: {_f3(cv['candidate'])}; "
                f"match: {_yesno(cv['pass'])}")
            if cv.get("note"):
                add(f"- Flag: {cv['note']}")
            add("")
        add("### Warnings")
        add("")
        if b["warnings"]:
            for wname in sorted(b["warnings"]):
                add(f"- {wname}")
        else:
            add("- none")
        if b.get("incomplete"):
            add("")
            add(f"Incomplete statistics: {', '.join(sorted(b['incomplete']))}")
        add("")
        add(f"**Rating: {b['rating']}**")
        add("")
        add("### Figures")
        add("")
        for kind in FIGURE_KINDS:
            add(f"- [{kind}](figures/spec{i}_{kind}.svg) "
                f"([data](figures/spec{i}_{kind}.csv))")
        add("")

    return "\n".join(lines)


# --------------------------------------------------------------------------
# figures

def _fmt(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def figure_data(bundle: dict, spec_index: int) -> list:
    """Build all four figure datasets for one specification."""
    tsls, ols, tf = bundle["tsls"], bundle["ols"], bundle["tf"]
    ar_ci = bundle.get("ar_ci") or {}
    figs = []

    rows = [
        ("OLS", ols["coefficient"], ols["ci_low"], ols["ci_high"]),
        ("2SLS analytic", tsls["coefficient"], tsls["ci_low"], tsls["ci_high"]),
        ("2SLS bootstrap-c", tsls["coefficient"], bundle["boot_c"][0], bundle["boot_c"][1]),
        ("2SLS bootstrap-t", tsls["coefficient"], bundle["boot_t"][0], bundle["boot_t"][1]),
        ("2SLS tF", tsls["coefficient"], tf.get("ci_low"), tf.get("ci_high")),
        ("2SLS AR", tsls["coefficient"], ar_ci.get("low"), ar_ci.get("high")),
    ]
    figs.append(FigureData(
        kind="coef_comparison",
        columns=["interval", "estimate", "low", "high"],
        rows=[list(r) for r in rows],
        caption=f"Spec {spec_index}: OLS and 2SLS estimates with analytic, "
                f"bootstrap-c, bootstrap-t, tF, and Anderson-Rubin intervals"))

    figs.append(FigureData(
        kind="f_comparison",
        columns=["statistic", "value"],
        rows=[["effective_F", bundle["effective_F"]],
              ["bootstrap_F", bundle["bootstrap_F"]],
              ["weak_cutoff", 10.0]],
        caption=f"Spec {spec_index}: first-stage strength"))

    taus = bundle.get("boot_taus") or []
    hist_rows = []
    if taus:
        lo, hi = min(taus), max(taus)
        if hi == lo:
            hist_rows = [[lo, hi, len(taus)]]
        else:
            nbins = 30
            width = (hi - lo) / nbins
            counts = [0] * nbins
            for t in taus:
                j = min(int((t - lo) / width), nbins - 1)
                counts[j] += 1
            hist_rows = [[lo + j * width, lo + (j + 1) * width, counts[j]]
                         for j in range(nbins)]
    figs.append(FigureData(
        kind="boot_distribution",
        columns=["bin_low", "bin_high", "count"],
        rows=hist_rows,
        caption=f"Spec {spec_index}: bootstrap distribution of the 2SLS "
                f"coefficient ({len(taus)} replicates)"))

    jk = bundle["jackknife"]
    jk_rows = [[rank + 1, est] for rank, est in enumerate(sorted(jk["estimates"]))]
    figs.append(FigureData(
        kind="jackknife_distribution",
        columns=["rank", "estimate"],
        rows=jk_rows,
        caption=f"Spec {spec_index}: leave-one-{jk['unit']}-out estimates"))
    return figs


def _svg_header(width, height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{title}</text>',
    ]


def _scale(vals, lo_px, hi_px):
    finite = [v for v in vals if v is not None and math.isfinite(v)]
    if not finite:
        finite = [0.0, 1.0]
    lo, hi = min(finite), max(finite)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def to_px(v):
        return lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px)
    return to_px, lo, hi


def render_svg(fig: FigureData) -> str:
    """Fixed-template SVG: element order and formatting are deterministic."""
    W, H = 640, 400
    parts = _svg_header(W, H, fig.caption[:90])
    left, right, top, bottom = 170, 610, 40, 360

    if fig.kind == "coef_comparison":
        vals = []
        for _, est, lo, hi in fig.rows:
            vals += [est, lo, hi]
        to_px, lo, hi = _scale(vals + [0.0], left, right)
        zero_x = to_px(0.0)
        parts.append(f'<line x1="{zero_x:.1f}" y1="{top}" x2="{zero_x:.1f}" '
                     f'y2="{bottom}" stroke="#999" stroke-dasharray="4,3"/>')
        step = (bottom - top) / (len(fig.rows) + 1)
        for j, (label, est, lo_v, hi_v) in enumerate(fig.rows):
            y = top + (j + 1) * step
            parts.append(f'<text x="{left-8}" y="{y+4:.1f}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="11">{label}</text>')
            if lo_v is not None and hi_v is not None and \
                    math.isfinite(lo_v) and math.isfinite(hi_v):
                parts.append(f'<line x1="{to_px(lo_v):.1f}" y1="{y:.1f}" '
                             f'x2="{to_px(hi_v):.1f}" y2="{y:.1f}" '
                             f'stroke="#2b6cb0" stroke-width="2"/>')
            if est is not None and math.isfinite(est):
                parts.append(f'<circle cx="{to_px(est):.1f}" cy="{y:.1f}" r="4" '
                             f'fill="#1a365d"/>')
    elif fig.kind == "f_comparison":
        vals = [r[1] for r in fig.rows if r[1] is not None]
        to_px, lo, hi = _scale([0.0] + vals, left, right)
        step = (bottom - top) / (len(fig.rows) + 1)
        for j, (label, value) in enumerate(fig.rows):
            y = top + (j + 1) * step
            parts.append(f'<text x="{left-8}" y="{y+4:.1f}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="11">{label}</text>')
            if value is None or not math.isfinite(value):
                continue
            parts.append(f'<rect x="{to_px(0):.1f}" y="{y-8:.1f}" '
                         f'width="{max(to_px(value)-to_px(0), 0):.1f}" height="16" '
                         f'fill="#2b6cb0"/>')
            parts.append(f'<text x="{to_px(value)+4:.1f}" y="{y+4:.1f}" '
                         f'font-family="sans-serif" font-size="11">{_fmt(value)}</text>')
    elif fig.kind == "boot_distribution":
        if fig.rows:
            xs = [r[0] for r in fig.rows] + [r[1] for r in fig.rows]
            to_px, lo, hi = _scale(xs, left, right)
            max_count = max(r[2] for r in fig.rows) or 1
            for bin_lo, bin_hi, count in fig.rows:
                x0, x1 = to_px(bin_lo), to_px(bin_hi)
                h = (bottom - top - 10) * count / max_count
                parts.append(f'<rect x="{x0:.1f}" y="{bottom-h:.1f}" '
                             f'width="{max(x1-x0-1, 0.5):.1f}" height="{h:.1f}" '
                             f'fill="#2b6cb0"/>')
    else:  # jackknife_distribution
        if fig.rows:
            ys = [r[1] for r in fig.rows]
            to_px, lo, hi = _scale(ys, left, right)
            step = (bottom - top) / (len(fig.rows) + 1)
            for rank, est in fig.rows:
                y = top + rank * step
                parts.append(f'<circle cx="{to_px(est):.1f}" cy="{y:.1f}" r="3" '
                             f'fill="#1a365d"/>')

    parts.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" '
                 f'stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_csv(fig: FigureData) -> str:
    lines = [",".join(fig.columns)]
    for row in fig.rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_figures(bundle: dict, out_dir, spec_index: int) -> list:
    """Write the four figure pairs (SVG + CSV) for one spec; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fig in figure_data(bundle, spec_index):
        base = out_dir / f"spec{spec_index}_{fig.kind}"
        svg_path = base.with_suffix(".svg")
        csv_path = base.with_suffix(".csv")
        svg_path.write_text(render_svg(fig), encoding="utf-8")
        csv_path.write_text(render_csv(fig), encoding="utf-8")
        written.extend([str(svg_path), str(csv_path)])
    return written

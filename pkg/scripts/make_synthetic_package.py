"""Regenerate the bundled synthetic replication packages used by the
end-to-end tests.

synthetic_package/   one strong IV spec, 40-row clustered dataset, a script
                     with the usual batch-mode hazards (cd, log, graph)
multispec_package/   three specs: strong baseline, weak instrument, and an
                     e(sample) restriction after a conditioning regression

Run from the repo root:  python scripts/make_synthetic_package.py
"""
from pathlib import Path

import numpy as np

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

DO_FILE = '''* Synthetic replication package: main analysis
cd "C:\\Users\\author\\project"
log using results.log, replace
import delimited using "data.csv", clear
ivreg2 y x1 (d = z), first cluster(g)
graph twoway (scatter y d)
log close
'''

PAPER_TXT = """The Synthetic Effect of D on Y: Evidence from Simulated Districts
A. Researcher and B. Collaborator
The Journal of Politics, 2021

Abstract: We study the effect of d on y using z as an instrument across
simulated districts.

Data Availability Statement: Replication materials are available at
https://doi.org/10.7910/DVN/FAKE01 in the JOP Dataverse.
"""

MULTI_DO = '''* Synthetic replication package: three specifications
import delimited using "multi.csv", clear
* Table 1: baseline effect on y1
ivreg2 y1 x1 (d = z1), first cluster(g)
* Table 2: alternative outcome, weaker instrument
ivreg2 y2 x1 (d = z2), cluster(g)
reg y3 d x1, cluster(g)
ivreg2 y3 (d = z1) if e(sample), cluster(g)
'''

MULTI_PAPER = """Three Margins of the Synthetic Effect
C. Author
American Political Science Review, 2022

Data Availability Statement: Replication materials are available at
https://doi.org/10.7910/DVN/FAKE02 in the APSR Dataverse.
"""


def _write_csv(path, header, columns, n):
    lines = [header]
    for i in range(n):
        lines.append(",".join(
            str(int(col[i])) if header.split(",")[j] == "g"
            else repr(float(col[i]))
            for j, col in enumerate(columns)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_single():
    out = FIXTURES / "synthetic_package"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240101)
    n, G = 40, 8
    g = np.repeat(np.arange(1, G + 1), n // G)
    z = rng.normal(size=n)
    x1 = rng.normal(size=n)
    d = 0.8 * z + 0.2 * x1 + rng.normal(size=n) * 0.6
    cluster_shock = rng.normal(size=G) * 0.4
    y = 1.8 * d + 0.5 * x1 + cluster_shock[g - 1] + rng.normal(size=n) * 0.5
    _write_csv(out / "data.csv", "y,d,z,x1,g", [y, d, z, x1, g], n)
    (out / "analysis.do").write_text(DO_FILE, encoding="utf-8")
    (out / "paper.txt").write_text(PAPER_TXT, encoding="utf-8")
    print(f"wrote {out}")


def make_multi():
    out = FIXTURES / "multispec_package"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240202)
    n, G = 60, 10
    g = np.repeat(np.arange(1, G + 1), n // G)
    x1 = rng.normal(size=n)
    z1 = rng.normal(size=n)
    z2 = rng.normal(size=n)
    d = 0.9 * z1 + 0.05 * z2 + 0.3 * x1 + rng.normal(size=n) * 0.5
    shock = rng.normal(size=G) * 0.3
    y1 = 1.5 * d + 0.4 * x1 + shock[g - 1] + rng.normal(size=n) * 0.5
    y2 = 0.8 * d - 0.2 * x1 + shock[g - 1] + rng.normal(size=n) * 1.2
    y3 = 1.2 * d + shock[g - 1] + rng.normal(size=n) * 0.6
    _write_csv(out / "multi.csv", "y1,y2,y3,d,z1,z2,x1,g",
               [y1, y2, y3, d, z1, z2, x1, g], n)
    (out / "main_analysis.do").write_text(MULTI_DO, encoding="utf-8")
    (out / "paper.txt").write_text(MULTI_PAPER, encoding="utf-8")
    print(f"wrote {out}")


def main():
    make_single()
    make_multi()


if __name__ == "__main__":
    main()

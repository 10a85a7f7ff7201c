import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivrepro.errors import DegenerateFactor, NotAnExpression, PanelRequired
from ivrepro.resolver import (ColumnCatalog, PanelSpec, apply_lag_recipe,
                              expand_factor, levenshtein,
                              materialize_expression, resolve_column,
                              resolve_ts_term, split_cluster_spec)


class TestResolveColumn:
    def test_exact(self):
        cat = ColumnCatalog(names=["x", "y"])
        r = resolve_column("x", cat)
        assert r.tier == "exact" and r.column == "x" and r.distance is None

    def test_case_insensitive(self):
        cat = ColumnCatalog(names=["GDPGrowth"])
        r = resolve_column("gdpgrowth", cat)
        assert r.tier == "case_insensitive" and r.column == "GDPGrowth"

    def test_edit_distance_one(self):
        cat = ColumnCatalog(names=["lcri_euc1_r", "other"])
        r = resolve_column("lcri_euac1_r", cat)
        assert r.tier == "edit_distance" and r.distance == 1
        assert r.column == "lcri_euc1_r"

    def test_missing_suffix(self):
        cat = ColumnCatalog(names=["serfperc1"])
        r = resolve_column("serfperc", cat)
        assert r.column == "serfperc1" and r.tier == "edit_distance"

    def test_prefix_bidirectional(self):
        cat = ColumnCatalog(names=["incumbvotesmajorpercent"])
        r = resolve_column("incumbvotes", cat)
        assert r.tier == "prefix" and r.column == "incumbvotesmajorpercent"
        cat2 = ColumnCatalog(names=["inc"])
        r2 = resolve_column("incumbent", cat2)
        assert r2.tier == "prefix" and r2.column == "inc"

    def test_exact_beats_fuzzy(self):
        cat = ColumnCatalog(names=["serfperc", "serfperc1"])
        r = resolve_column("serfperc", cat)
        assert r.tier == "exact" and r.column == "serfperc"

    def test_ambiguous_edit_distance_unresolved(self):
        cat = ColumnCatalog(names=["varx1", "varx2"])
        r = resolve_column("varx3", cat)
        assert r.tier == "unresolved" and r.column is None

    def test_ambiguous_prefix_unresolved(self):
        cat = ColumnCatalog(names=["income_a_long", "income_b_long"])
        r = resolve_column("income_ab_long_suffix_here", cat)
        assert r.tier == "unresolved"

    def test_distance_one_beats_distance_two(self):
        cat = ColumnCatalog(names=["abcd", "abXY"])
        r = resolve_column("abcX", cat)
        assert r.column == "abcd" and r.distance == 1

    def test_truncation_tilde(self):
        name = "incumbvotesmajorpercent_extra_long"
        cat = ColumnCatalog(names=[name, "other"])
        r = resolve_column(name[:31] + "~", cat)
        assert r.column == name and r.tier == "prefix"

    def test_truncation_ambiguous(self):
        cat = ColumnCatalog(names=["longvariable_one", "longvariable_two"])
        r = resolve_column("longvariable_~", cat)
        assert r.tier == "unresolved"

    def test_backtick_and_underscore_normalization(self):
        cat = ColumnCatalog(names=["_log_providers"])
        assert resolve_column("`_log_providers`", cat).column == "_log_providers"
        assert resolve_column("log_providers", cat).column == "_log_providers"

    def test_purity(self):
        cat = ColumnCatalog(names=["alpha", "beta"])
        assert resolve_column("alpa", cat) == resolve_column("alpa", cat)

    @settings(max_examples=100, deadline=None)
    @given(st.text(alphabet="abcdef_", min_size=1, max_size=12),
           st.lists(st.text(alphabet="abcdef_", min_size=1, max_size=12),
                    min_size=1, max_size=6, unique=True))
    def test_exact_match_never_fuzzy(self, query, names):
        if query not in names:
            names = names + [query]
        cat = ColumnCatalog(names=names)
        r = resolve_column(query, cat)
        assert r.tier == "exact" and r.column == query


class TestLevenshtein:
    @pytest.mark.parametrize("a,b,d", [
        ("abc", "abc", 0), ("abc", "abd", 1), ("abc", "ab", 1),
        ("abc", "bac", 2), ("lcri_euac1_r", "lcri_euc1_r", 1),
    ])
    def test_known_distances(self, a, b, d):
        assert levenshtein(a, b) == d

    def test_cutoff(self):
        assert levenshtein("aaaa", "bbbb", cutoff=2) == 3


@pytest.fixture
def panel6():
    return pd.DataFrame({
        "unit": [1, 1, 1, 2, 2, 2],
        "t": [1, 2, 3, 1, 2, 4],          # gap at unit 2 between t=2 and t=4
        "nbi_i": [10.0, 11.0, 12.0, 20.0, 21.0, 23.0],
    })


class TestTsTerms:
    def test_dot_stripped_encoding(self):
        df = pd.DataFrame({"l4margin_index2": [1.0, 2.0]})
        cat = ColumnCatalog.from_dataframe(df)
        r = resolve_ts_term("l4.margin_index2", cat)
        assert r.column == "l4margin_index2" and r.note == "dot-stripped"

    def test_underscore_encoding(self):
        df = pd.DataFrame({"l4_margin_index2": [1.0, 2.0]})
        cat = ColumnCatalog.from_dataframe(df)
        r = resolve_ts_term("l4.margin_index2", cat)
        assert r.column == "l4_margin_index2" and r.note == "underscore-separated"

    def test_lag_recipe_matches_hand_oracle(self, panel6):
        cat = ColumnCatalog.from_dataframe(panel6)
        r = resolve_ts_term("l.nbi_i", cat, panel=PanelSpec("unit", "t"))
        assert r.tier == "derived"
        got = apply_lag_recipe(panel6, r.recipe, PanelSpec("unit", "t"))
        # by hand: unit 1 -> [NaN, 10, 11]; unit 2 -> [NaN, 20, NaN] (time gap)
        expect = [np.nan, 10.0, 11.0, np.nan, 20.0, np.nan]
        assert np.array_equal(got.to_numpy(), np.array(expect), equal_nan=True)

    def test_lead_and_difference(self, panel6):
        cat = ColumnCatalog.from_dataframe(panel6)
        lead = resolve_ts_term("f.nbi_i", cat, panel=PanelSpec("unit", "t"))
        got = apply_lag_recipe(panel6, lead.recipe, PanelSpec("unit", "t"))
        expect = [11.0, 12.0, np.nan, 21.0, np.nan, np.nan]
        assert np.array_equal(got.to_numpy(), np.array(expect), equal_nan=True)
        diff = resolve_ts_term("d.nbi_i", cat, panel=PanelSpec("unit", "t"))
        got_d = apply_lag_recipe(panel6, diff.recipe, PanelSpec("unit", "t"))
        expect_d = [np.nan, 1.0, 1.0, np.nan, 1.0, np.nan]
        assert np.array_equal(got_d.to_numpy(), np.array(expect_d), equal_nan=True)

    def test_compound_l2d(self, panel6):
        cat = ColumnCatalog.from_dataframe(panel6)
        r = resolve_ts_term("L2D.nbi_i", cat, panel=PanelSpec("unit", "t"))
        got = apply_lag_recipe(panel6, r.recipe, PanelSpec("unit", "t"))
        # D at (unit2, t=2) = 1.0, so L2D at (unit2, t=4) = 1.0; all else NaN
        expect = [np.nan, np.nan, np.nan, np.nan, np.nan, 1.0]
        assert np.array_equal(got.to_numpy(), np.array(expect), equal_nan=True)

    def test_recipe_needs_panel(self, panel6):
        cat = ColumnCatalog.from_dataframe(panel6)
        with pytest.raises(PanelRequired):
            resolve_ts_term("l.nbi_i", cat, panel=None)

    def test_plain_term_passthrough(self, panel6):
        cat = ColumnCatalog.from_dataframe(panel6)
        r = resolve_ts_term("nbi_i", cat)
        assert r.tier == "exact" and r.column == "nbi_i"

    def test_na_count_comparison_prefers_recompute(self, panel6):
        # realized lag column restricted to the estimation sample (extra NAs)
        df = panel6.copy()
        df["lnbi_i"] = [np.nan, 10.0, np.nan, np.nan, np.nan, np.nan]
        cat = ColumnCatalog.from_dataframe(df)
        r = resolve_ts_term("l.nbi_i", cat, panel=PanelSpec("unit", "t"), table=df)
        assert r.tier == "derived" and "recomputed" in r.note

    def test_na_count_comparison_keeps_complete_column(self, panel6):
        df = panel6.copy()
        df["lnbi_i"] = [np.nan, 10.0, 11.0, np.nan, 20.0, np.nan]
        cat = ColumnCatalog.from_dataframe(df)
        r = resolve_ts_term("l.nbi_i", cat, panel=PanelSpec("unit", "t"), table=df)
        assert r.column == "lnbi_i"

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 5))
    def test_recipe_equals_bruteforce_shift(self, k, n_units):
        rng = np.random.default_rng(k * 10 + n_units)
        rows = []
        for u in range(n_units):
            for t in range(1, 7):
                rows.append((u, t, rng.normal()))
        df = pd.DataFrame(rows, columns=["unit", "t", "v"])
        cat = ColumnCatalog.from_dataframe(df)
        r = resolve_ts_term(f"l{k}.v", cat, panel=PanelSpec("unit", "t"))
        got = apply_lag_recipe(df, r.recipe, PanelSpec("unit", "t")).to_numpy()
        brute = df.groupby("unit")["v"].shift(k).to_numpy()  # contiguous panel
        assert np.array_equal(got, brute, equal_nan=True)


class TestFactors:
    def test_existing_xi_dummies_reused(self):
        cols = {f"_Iyear_{y}": [0] for y in range(2000, 2005)}
        df = pd.DataFrame({**cols, "year": [2000]})
        cat = ColumnCatalog.from_dataframe(df)
        got = expand_factor("i.year", cat, df)
        assert sorted(got) == sorted(cols)

    def test_generated_dummies_drop_base(self):
        df = pd.DataFrame({"region": [1, 2, 3, 1, 2, 3]})
        cat = ColumnCatalog.from_dataframe(df)
        got = expand_factor("i.region", cat, df)
        assert got == ["_Iregion_2", "_Iregion_3"]
        assert df["_Iregion_2"].sum() == 2 and df["_Iregion_3"].sum() == 2

    def test_single_level_degenerate(self):
        df = pd.DataFrame({"constant": [5, 5, 5]})
        with pytest.raises(DegenerateFactor):
            expand_factor("i.constant", ColumnCatalog.from_dataframe(df), df)


class TestExpressions:
    def test_zero1_minmax(self):
        df = pd.DataFrame({"infeels": [1.0, 5.0, 3.0], "outfeels": [0.0, 1.0, 2.0]})
        name = materialize_expression("zero1(infeels-outfeels)", df)
        assert df[name].min() == 0.0 and df[name].max() == 1.0

    def test_log_closed_form(self):
        df = pd.DataFrame({"x": [1.0, np.e, np.e ** 2]})
        name = materialize_expression("log(x)", df)
        assert np.allclose(df[name], [0, 1, 2])

    def test_bare_name_rejected(self):
        df = pd.DataFrame({"x": [1.0]})
        with pytest.raises(NotAnExpression):
            materialize_expression("x", df)

    def test_arithmetic_composition(self):
        df = pd.DataFrame({"a": [2.0, 4.0], "b": [1.0, 2.0]})
        name = materialize_expression("(a + b) / b", df)
        assert np.allclose(df[name], [3.0, 3.0])


class TestClusterSplit:
    def test_space_separated(self):
        assert split_cluster_spec("ccode year") == ["ccode", "year"]

    def test_dotted_pair_with_catalog(self):
        cat = ColumnCatalog(names=["ccode", "year"])
        assert split_cluster_spec("ccode.year", cat) == ["ccode", "year"]

    def test_single_token(self):
        assert split_cluster_spec("muni_code") == ["muni_code"]

    def test_dotted_token_not_in_catalog_kept(self):
        cat = ColumnCatalog(names=["ccode.year"])
        assert split_cluster_spec("ccode.year", cat) == ["ccode.year"]

"""Formula DSL: parsing, desugaring, multi-formula blocks."""

import pytest

from irtkit import formula as fo


def test_one_pl_formula():
    ast = fo.parse_formula("r2 ~ 1 + (1 | item) + (1 | id)")
    assert ast.response.name == "r2"
    tl = fo.expand_terms(ast)
    assert tl.intercept
    assert tl.population_terms == []
    assert [(g.factor, g.corr_id) for g in tl.group_terms] == [
        ("item", None), ("id", None)]


def test_corr_id_between_bars():
    tl = fo.expand_terms(fo.parse_formula("eta ~ 1 + (1 |i| item) + (1 | id)"))
    assert [(g.factor, g.corr_id) for g in tl.group_terms] == [
        ("item", "i"), ("id", None)]


def test_empty_rhs_is_located_error():
    with pytest.raises(fo.ParseError) as err:
        fo.parse_formula("y ~")
    assert err.value.offset == 3


def test_two_tildes_rejected():
    with pytest.raises(fo.ParseError):
        fo.parse_formula("y ~ x ~ z")


def test_unbalanced_parens_rejected():
    with pytest.raises(fo.ParseError):
        fo.parse_formula("y ~ (1 | item")


def test_unknown_call_rejected():
    with pytest.raises(fo.ParseError):
        fo.parse_formula("y ~ s(x)")


def test_zero_plus_drops_intercept():
    tl = fo.expand_terms(fo.parse_formula("y ~ 0 + item"))
    assert not tl.intercept
    assert tl.population_terms == [("item",)]


def test_population_cs_group_separation():
    tl = fo.expand_terms(fo.parse_formula(
        "r2 ~ btype + situ + mode + (1 | item) + (0 + mode | id)"))
    assert tl.population_terms == [("btype",), ("situ",), ("mode",)]
    assert tl.cs_terms == []
    item, id_ = tl.group_terms
    assert (item.factor, item.intercept, item.terms) == ("item", True, ())
    assert (id_.factor, id_.intercept, id_.terms) == ("id", False, (("mode",),))


def test_cs_terms_split_out():
    tl = fo.expand_terms(fo.parse_formula("resp ~ cs(Anger) + Gender + (1 | item)"))
    assert tl.cs_terms == [("Anger",)]
    assert tl.population_terms == [("Gender",)]


def test_minimal_intercept_formula():
    tl = fo.expand_terms(fo.parse_formula("y ~ 1"))
    assert tl.intercept
    assert tl.population_terms == []
    assert tl.cs_terms == []
    assert tl.group_terms == []


def test_star_desugars_to_sum_plus_interaction():
    a = fo.expand_terms(fo.parse_formula("y ~ a*b"))
    b = fo.expand_terms(fo.parse_formula("y ~ a + b + a:b"))
    assert a.population_terms == b.population_terms == [("a",), ("b",), ("a", "b")]


def test_print_parse_round_trip():
    texts = [
        "r2 ~ btype + situ + mode + (1 | item) + (0 + mode | id)",
        "y ~ 0 + item + (1 | person)",
        "resp ~ cs(Anger) + Gender + (1 |i| item) + (1 | id)",
    ]
    for text in texts:
        ast = fo.parse_formula(text)
        again = fo.parse_formula(fo.format_formula(ast))
        assert fo.expand_terms(again) == fo.expand_terms(ast)


def test_duplicate_group_factor_rejected():
    with pytest.raises(fo.ParseError):
        fo.expand_terms(fo.parse_formula("y ~ (1 | id) + (1 | id)"))


# model blocks --------------------------------------------------------------

def test_two_pl_block_registers_nlpars():
    mf = fo.parse_model(
        ["r2 ~ exp(logalpha) * eta",
         "eta ~ 1 + (1 |i| item) + (1 | id)",
         "logalpha ~ 1 + (1 |i| item)"],
        nl=True, data_columns=["r2"])
    assert mf.nonlinear
    assert sorted(mf.dpar_formulas) == ["eta", "logalpha"]


def test_wiener_block_fixes_bias():
    mf = fo.parse_model(
        ["y | dec(resp) ~ rotate + (1 | person)",
         "bs ~ 1", "ndt ~ 1", "bias = 0.5"],
        data_columns=["y", "resp", "rotate", "person"])
    assert mf.fixed_dpars == {"bias": 0.5}
    assert sorted(mf.dpar_formulas) == ["bs", "ndt"]
    (call,) = mf.response.addition
    assert call.func == "dec"
    assert call.args[0].name == "resp"


def test_undefined_nlpar_named_in_error():
    with pytest.raises(fo.ParseError, match="'x'"):
        fo.parse_model(["y ~ x"], nl=True, data_columns=["y"])


def test_nl_main_expression_kept_verbatim():
    mf = fo.parse_model(
        ["y ~ guess + (1 - guess) * inv_logit(exp(logalpha) * eta)",
         "eta ~ 1 + (1 | id)",
         "logalpha ~ 1 + (1 | item)"],
        nl=True, data_columns=["y", "guess"])
    free = fo._free_symbols(mf.rhs)
    assert {"guess", "logalpha", "eta"} <= set(free)


def test_thres_gr_addition_term():
    mf = fo.parse_model(["resp | thres(gr = item) ~ 1 + (1 | id)"],
                        data_columns=["resp", "item"])
    (call,) = mf.response.addition
    assert call.func == "thres"
    assert dict(call.kwargs)["gr"].name == "item"


def test_corr_id_scoped_to_one_factor():
    with pytest.raises(fo.ParseError, match="grouping factor"):
        fo.parse_model(
            ["y ~ exp(logalpha) * eta",
             "eta ~ 1 + (1 |i| item) + (1 |i| id)",
             "logalpha ~ 1 + (1 | item)"],
            nl=True, data_columns=["y"])


def test_covariate_as_both_population_and_cs_rejected():
    with pytest.raises(fo.ParseError):
        fo.expand_terms(fo.parse_formula("resp ~ Anger + cs(Anger)"))


def test_parse_model_accepts_single_string():
    mf = fo.parse_model("y ~ 1 + (1 | g)", data_columns=["y", "g"])
    assert not mf.nonlinear
    assert mf.response.name == "y"

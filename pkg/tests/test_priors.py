"""Prior parsing, most-specific-wins resolution, and log densities
(including the truncation constants and the LKJ factor density)."""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from irtkit import priors as pr


def target(par_class, **kw):
    return pr.PriorTarget(par_class=par_class, **kw)


# parsing -------------------------------------------------------------------

def test_parse_half_normal_sd():
    spec = pr.parse_prior("normal(0, 3)", "sd", group="id")
    assert (spec.density, spec.args) == ("normal", (0.0, 3.0))
    assert (spec.par_class, spec.group) == ("sd", "id")


def test_parse_lkj():
    spec = pr.parse_prior("lkj(2)", "cor", group="person")
    assert (spec.density, spec.args) == ("lkj", (2.0,))


def test_parse_constant_with_nlpar():
    spec = pr.parse_prior("constant(1)", "sd", group="id", nlpar="eta")
    assert spec.density == "constant"
    assert spec.args == (1.0,)
    assert spec.nlpar == "eta"


@pytest.mark.parametrize("text,klass", [
    ("normal(0, -1)", "b"),
    ("student_t(3, 0, 0)", "Intercept"),
    ("lkj(0)", "cor"),
    ("normal(0)", "b"),
    ("normal(a, 1)", "b"),
    ("exponential(1)", "sd"),
    ("lkj(2)", "sd"),
    ("normal 0 1", "b"),
])
def test_parse_rejects_bad_priors(text, klass):
    with pytest.raises(ValueError):
        pr.parse_prior(text, klass)


def test_parse_rejects_unknown_class():
    with pytest.raises(ValueError, match="class"):
        pr.parse_prior("normal(0, 1)", "beta")


# resolution ----------------------------------------------------------------

def one_pl_targets():
    return [
        target("Intercept"),
        target("b", coef="item1"),
        target("b", coef="item2"),
        target("sd", group="id"),
        target("sd", group="item"),
    ]


def test_coef_prior_beats_class_prior():
    specs = [
        pr.parse_prior("normal(0, 5)", "b"),
        pr.parse_prior("normal(2, 3)", "b", coef="item1"),
    ]
    resolved = pr.resolve_priors(specs, one_pl_targets())
    assert resolved.assignment[target("b", coef="item1")].args == (2.0, 3.0)
    assert resolved.assignment[target("b", coef="item2")].args == (0.0, 5.0)


def test_defaults_fill_everything():
    resolved = pr.resolve_priors([], one_pl_targets())
    assert resolved.assignment[target("b", coef="item1")].density == "flat"
    assert resolved.assignment[target("Intercept")].density == "student_t"
    assert resolved.assignment[target("Intercept")].args == (3.0, 0.0, 2.5)
    assert resolved.assignment[target("sd", group="id")].args == (3.0, 0.0, 2.5)


def test_cor_default_is_uniform_lkj():
    resolved = pr.resolve_priors([], [target("cor", group="id", size=2)])
    assert resolved.assignment[target("cor", group="id", size=2)].density == "lkj"
    assert resolved.assignment[target("cor", group="id", size=2)].args == (1.0,)


def test_typo_group_lists_valid_groups():
    with pytest.raises(ValueError, match=r"valid groups: \['id', 'item'\]"):
        pr.resolve_priors([pr.parse_prior("cauchy(0, 5)", "sd", group="persn")],
                          one_pl_targets())


def test_spec_matching_nothing_is_an_error():
    with pytest.raises(ValueError, match="matches no parameter"):
        pr.resolve_priors([pr.parse_prior("normal(0, 1)", "b", coef="item9")],
                          one_pl_targets())


def test_resolution_is_permutation_invariant():
    specs = [
        pr.parse_prior("normal(0, 5)", "b"),
        pr.parse_prior("normal(2, 3)", "b", coef="item1"),
        pr.parse_prior("cauchy(0, 5)", "sd", group="id"),
    ]
    base = pr.resolve_priors(specs, one_pl_targets()).assignment
    flipped = pr.resolve_priors(specs[::-1], one_pl_targets()).assignment
    assert base == flipped


def test_equal_specificity_conflict_is_an_error():
    specs = [
        pr.parse_prior("normal(0, 5)", "b"),
        pr.parse_prior("normal(0, 2)", "b"),
    ]
    with pytest.raises(ValueError, match="conflicting"):
        pr.resolve_priors(specs, one_pl_targets())


def test_constant_recorded_separately():
    resolved = pr.resolve_priors(
        [pr.parse_prior("constant(1)", "sd", group="id")], one_pl_targets())
    assert resolved.constants[target("sd", group="id")] == 1.0


def test_constant_rejected_on_wide_cor_block():
    with pytest.raises(ValueError, match="constant"):
        pr.resolve_priors([pr.parse_prior("constant(0)", "cor", group="id")],
                          [target("cor", group="id", size=3)])


# densities -----------------------------------------------------------------

def test_half_normal_at_zero():
    spec = pr.parse_prior("normal(0, 3)", "sd")
    got = pr.log_density(spec, 0.0, lower_bounded=True)
    want = math.log(2.0) - math.log(3.0 * math.sqrt(2.0 * math.pi))
    assert got == pytest.approx(want, abs=1e-10)
    assert got == pytest.approx(-1.324, abs=5e-4)


def test_flat_contributes_zero():
    resolved = pr.resolve_priors([], [target("b", coef="x")])
    assert pr.log_prior(resolved, {target("b", coef="x"): 3.7}) == 0.0


def test_normal_matches_scipy():
    spec = pr.parse_prior("normal(1, 2)", "b")
    for x in (-2.0, 0.5, 4.0):
        assert pr.log_density(spec, x) == pytest.approx(
            stats.norm.logpdf(x, 1, 2), abs=1e-12)


def test_student_t_and_cauchy_and_gamma_match_scipy():
    t_spec = pr.parse_prior("student_t(3, 0, 2.5)", "Intercept")
    c_spec = pr.parse_prior("cauchy(0, 5)", "b")
    g_spec = pr.parse_prior("gamma(2, 3)", "sd")
    for x in (0.2, 1.7, 6.0):
        assert pr.log_density(t_spec, x) == pytest.approx(
            stats.t.logpdf(x, 3, 0, 2.5), abs=1e-10)
        assert pr.log_density(c_spec, x) == pytest.approx(
            stats.cauchy.logpdf(x, 0, 5), abs=1e-10)
        assert pr.log_density(g_spec, x) == pytest.approx(
            stats.gamma.logpdf(x, 2, scale=1 / 3), abs=1e-10)


@pytest.mark.parametrize("text", ["normal(0, 3)", "student_t(3, 0, 2.5)",
                                  "cauchy(0, 2)", "gamma(2, 0.5)"])
def test_truncated_sd_priors_integrate_to_one(text):
    spec = pr.parse_prior(text, "sd")
    val, _ = quad(lambda s: math.exp(pr.log_density(spec, s, lower_bounded=True)),
                  1e-12, np.inf, limit=300)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_lkj_one_is_uniform_over_correlation():
    # d=2: density in rho must be constant for eta=1
    vals = [pr.lkj_chol_logpdf([0.0, 0.5 * math.log(1 - r * r)], 1.0)
            for r in (-0.9, -0.3, 0.0, 0.6)]
    assert max(vals) - min(vals) < 1e-12
    assert math.exp(vals[0]) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("eta", [1.0, 2.0, 4.0])
def test_lkj_dual_route_beta_marginal(eta):
    """Factor density vs the independent route: for d=2, rho = 2X - 1 with
    X ~ Beta(eta, eta)."""

    def log_f(rho):
        return pr.lkj_chol_logpdf([0.0, 0.5 * math.log(1 - rho * rho)], eta)

    for rho in (-0.8, -0.25, 0.0, 0.5, 0.9):
        ref = stats.beta.logpdf((rho + 1) / 2, eta, eta) - math.log(2.0)
        assert log_f(rho) == pytest.approx(ref, abs=1e-10)

    total, _ = quad(lambda r: math.exp(log_f(r)), -1 + 1e-12, 1 - 1e-12)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_log_prior_sums_targets():
    targets = [target("Intercept"), target("sd", group="id")]
    resolved = pr.resolve_priors([], targets)
    values = {targets[0]: 0.4, targets[1]: 1.1}
    got = pr.log_prior(resolved, values)
    want = (stats.t.logpdf(0.4, 3, 0, 2.5)
            + stats.t.logpdf(1.1, 3, 0, 2.5) - math.log(0.5))
    assert got == pytest.approx(want, abs=1e-10)


def test_log_prior_missing_value_raises():
    targets = [target("Intercept")]
    resolved = pr.resolve_priors([], targets)
    with pytest.raises(KeyError):
        pr.log_prior(resolved, {})

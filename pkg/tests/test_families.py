"""Response families: kernel values, normalization, reductions, and
response validation."""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad
from scipy.special import expit

from conftest import continuous_normalization_errors, discrete_normalization_errors
from irtkit import data as dt
from irtkit import families as fm


def test_bernoulli_at_eta_zero():
    fam = fm.family_lookup("bernoulli")
    assert fm.log_likelihood(fam, {"mu": 0.5}, 1) == pytest.approx(-0.693147, abs=1e-6)
    assert fm.log_likelihood(fam, {"mu": 0.5}, 0) == pytest.approx(-0.693147, abs=1e-6)


def test_poisson_closed_form():
    fam = fm.family_lookup("poisson")
    assert fm.log_likelihood(fam, {"mu": 1.0}, 2) == pytest.approx(
        -1.0 - math.log(2.0), abs=1e-6)


def test_cumulative_three_category_probs():
    fam = fm.family_lookup("cumulative").with_categories(3)
    expected = (0.268941, 0.462117, 0.268941)
    for y, p in enumerate(expected, start=1):
        got = fm.log_likelihood(fam, {"mu": 0.0, "disc": 1.0}, y,
                                extras={"tau": [-1.0, 1.0]})
        assert got == pytest.approx(math.log(p), abs=1e-5)


def test_wiener_symmetric_at_zero_drift():
    fam = fm.family_lookup("wiener")
    with np.errstate(divide="ignore"):
        dv = {"mu": 0.0, "bs": 1.0, "ndt": 0.0, "bias": 0.5}
        upper = fm.log_likelihood(fam, dv, 0.5, extras={"dec": [1]})
        lower = fm.log_likelihood(fam, dv, 0.5, extras={"dec": [0]})
    assert upper == pytest.approx(lower, abs=1e-12)
    assert np.isfinite(upper)


def test_exgaussian_matches_convolution_quadrature():
    fam = fm.family_lookup("exgaussian")
    got = fm.log_likelihood(fam, {"mu": 0.0, "sigma": 1.0, "beta": 1.0}, 0.0)

    # overall mean mu means the Gaussian part sits at mu - beta
    def integrand(t):
        return stats.norm.pdf(0.0 - t, loc=-1.0, scale=1.0) * stats.expon.pdf(t)

    ref, _ = quad(integrand, 0, np.inf, limit=400)
    assert got == pytest.approx(math.log(ref), abs=1e-8)


def test_exgaussian_far_right_tail_stays_finite():
    # erfcx-based form must not overflow where the exponential tail dominates
    fam = fm.family_lookup("exgaussian")
    mu, sigma, beta = 0.4, 0.5, 0.7
    y = 30.0
    got = fm.log_likelihood(fam, {"mu": mu, "sigma": sigma, "beta": beta}, y)
    dev = y - (mu - beta)
    ref = (-math.log(beta) - dev / beta + sigma ** 2 / (2 * beta ** 2)
           + stats.norm.logcdf(dev / sigma - sigma / beta))
    assert got == pytest.approx(ref, rel=1e-10)


def test_wiener_below_ndt_is_minus_inf():
    fam = fm.family_lookup("wiener")
    dv = {"mu": 0.5, "bs": 1.2, "ndt": 0.4, "bias": 0.5}
    assert fm.log_likelihood(fam, dv, 0.3, extras={"dec": [1]}) == -np.inf


# normalization -------------------------------------------------------------

def test_discrete_families_sum_to_one():
    for name, err in discrete_normalization_errors():
        assert err < 1e-10, name


def test_continuous_families_integrate_to_one():
    for name, err in continuous_normalization_errors():
        assert err < 1e-4, name


# reductions ----------------------------------------------------------------

def test_categorical_two_categories_equals_bernoulli():
    bern = fm.family_lookup("bernoulli")
    cat = fm.family_lookup("categorical").with_categories(2)
    for eta in (-1.3, 0.0, 0.8):
        assert fm.log_likelihood(cat, {"mu2": eta}, 2) == pytest.approx(
            fm.log_likelihood(bern, {"mu": expit(eta)}, 1), abs=1e-12)
        assert fm.log_likelihood(cat, {"mu2": eta}, 1) == pytest.approx(
            fm.log_likelihood(bern, {"mu": expit(eta)}, 0), abs=1e-12)


@pytest.mark.parametrize("name", ["cumulative", "acat"])
def test_two_category_ordinal_equals_bernoulli(name):
    bern = fm.family_lookup("bernoulli")
    fam = fm.family_lookup(name).with_categories(2)
    for eta, tau in ((-0.4, 0.3), (1.1, -0.6), (0.0, 0.0)):
        got = fm.log_likelihood(fam, {"mu": eta, "disc": 1.0}, 2,
                                extras={"tau": [tau]})
        want = fm.log_likelihood(bern, {"mu": expit(eta - tau)}, 1)
        assert got == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("name", ["cumulative", "acat"])
def test_disc_one_is_neutral(name):
    fam = fm.family_lookup(name).with_categories(4)
    tau = [-0.8, 0.1, 0.9]
    for y in range(1, 5):
        with_disc = fm.log_likelihood(fam, {"mu": 0.35, "disc": 1.0}, y,
                                      extras={"tau": tau})
        without = fm.log_likelihood(fam, {"mu": 0.35}, y, extras={"tau": tau})
        assert with_disc == without


def test_cumulative_top_category_monotone_in_eta():
    fam = fm.family_lookup("cumulative").with_categories(3)
    etas = np.linspace(-3, 3, 25)
    top = [fm.log_likelihood(fam, {"mu": e}, 3, extras={"tau": [-1.0, 1.0]})
           for e in etas]
    assert all(b > a for a, b in zip(top, top[1:]))


# registry ------------------------------------------------------------------

def test_family_lookup_default_links():
    assert [d.name for d in fm.family_lookup("bernoulli").dpars] == ["mu"]
    assert fm.family_lookup("bernoulli").dpar("mu").link == "logit"
    g = fm.family_lookup("gaussian", {"sigma": "log"})
    assert g.dpar("mu").link == "identity"
    assert g.dpar("sigma").link == "log"
    w = fm.family_lookup("wiener")
    assert [d.name for d in w.dpars] == ["mu", "bs", "ndt", "bias"]
    assert w.dpar("bs").link == "log"
    assert w.dpar("bias").link == "logit"
    assert fm.family_lookup("exgaussian").dpar("beta").link == "log"


def test_family_lookup_rejects_bad_link():
    with pytest.raises(ValueError):
        fm.family_lookup("bernoulli", {"mu": "log"})


def test_family_lookup_rejects_unknown_family():
    with pytest.raises(ValueError):
        fm.family_lookup("weibull")


def test_links_are_bijective():
    pts = {"identity": [-2.0, 0.0, 3.0], "log": [0.2, 1.0, 7.0],
           "logit": [0.05, 0.5, 0.93], "probit": [0.05, 0.5, 0.93],
           "cloglog": [0.05, 0.5, 0.93]}
    for name, xs in pts.items():
        link = fm.LINKS[name]
        for x in xs:
            assert link.inverse(link.forward(x)) == pytest.approx(x, abs=1e-12)


# response validation -------------------------------------------------------

def factor(cells):
    return dt.ResponseTable.from_dict({"c": cells}).column("c")


def test_binary_two_level_factor_maps_second_level_to_one():
    fam = fm.family_lookup("bernoulli")
    coded = fm.validate_response(fam, factor(["N", "Y", "Y"]))
    assert coded.values.tolist() == [0, 1, 1]
    assert coded.labels == ("N", "Y")


def test_binary_rejects_three_levels():
    fam = fm.family_lookup("bernoulli")
    with pytest.raises(ValueError, match="2 levels"):
        fm.validate_response(fam, factor(["a", "b", "c"]))


def test_poisson_rejects_negative():
    fam = fm.family_lookup("poisson")
    col = dt.ResponseTable.from_dict({"y": [0, 2, -1]}).column("y")
    with pytest.raises(ValueError):
        fm.validate_response(fam, col)


def test_ordinal_factor_uses_level_indices():
    fam = fm.family_lookup("cumulative")
    coded = fm.validate_response(fam, factor(["no", "perhaps", "yes", "no"]))
    assert coded.n_cats == 3
    assert coded.values.tolist() == [1, 2, 3, 1]


def test_beta_requires_open_unit_interval():
    fam = fm.family_lookup("beta")
    col = dt.ResponseTable.from_dict({"y": [0.2, 1.0, 0.4]},
                                     column_types={"y": "real"}).column("y")
    with pytest.raises(ValueError, match="open"):
        fm.validate_response(fam, col)


def test_wiener_requires_positive_times():
    fam = fm.family_lookup("wiener")
    col = dt.ResponseTable.from_dict({"y": [0.8, -0.1]},
                                     column_types={"y": "real"}).column("y")
    with pytest.raises(ValueError, match="positive"):
        fm.validate_response(fam, col)


def test_decision_column_coding():
    codes = fm.validate_decision(factor(["lower", "upper", "lower"]))
    assert codes.tolist() == [0, 1, 0]
    col = dt.ResponseTable.from_dict({"d": [0, 1, 2]}).column("d")
    with pytest.raises(ValueError):
        fm.validate_decision(col)


# sampling kernels ----------------------------------------------------------

def test_sample_response_bernoulli_rate():
    fam = fm.family_lookup("bernoulli")
    rng = np.random.default_rng(0)
    eta = np.full(20000, 1.0)
    draws = fm.sample_response(fam, rng, {"mu": eta})
    assert draws.mean() == pytest.approx(expit(1.0), abs=0.01)


def test_sample_response_poisson_mean():
    fam = fm.family_lookup("poisson")
    rng = np.random.default_rng(1)
    draws = fm.sample_response(fam, rng, {"mu": np.full(20000, np.log(4.0))})
    assert draws.mean() == pytest.approx(4.0, abs=0.1)


def test_simulate_wiener_respects_ndt_and_decisions():
    rng = np.random.default_rng(2)
    n = 200
    times, dec = fm.simulate_wiener(rng, np.full(n, 1.0), np.full(n, 1.5),
                                    np.full(n, 0.3), np.full(n, 0.5))
    assert (times > 0.3).all()
    assert set(np.unique(dec)) <= {0, 1}
    assert dec.mean() > 0.5  # positive drift favors the upper boundary

"""Smoke checks for postprocess: PSIS fixture agreement, pointwise
log-likelihood correctness, loo/compare/hypothesis/coef/predict/effects."""

import os
import sys

import numpy as np
from scipy import stats as sps

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from irtkit import build as bd
from irtkit import data as dt
from irtkit import families as fm
from irtkit import formula as fo
from irtkit import postprocess as pp
from irtkit import priors as pr
from irtkit import sampler as sm

HERE = os.path.dirname(os.path.abspath(__file__))
FIX = os.path.join(HERE, "..", "tests", "fixtures")


def check_psis_fixtures():
    draws = np.load(os.path.join(FIX, "psis_draws.npz"))
    expected = np.load(os.path.join(FIX, "psis_expected.npz"))
    for name in draws.files:
        lw, ks = pp.psislw(draws[name])
        elw = expected[name + "__lw"]
        eks = expected[name + "__k"]
        assert np.allclose(lw, elw, atol=1e-12, rtol=0), name
        finite = np.isfinite(eks)
        assert np.array_equal(finite, np.isfinite(ks)), name
        assert np.allclose(ks[finite], eks[finite], atol=1e-12, rtol=0), name
        print(f"psis fixture {name}: ok (k in [{ks.min():+.3f}, {ks.max():+.3f}])")


def make_gaussian_model():
    rng = np.random.default_rng(7)
    n = 40
    x = rng.normal(size=n)
    y = 0.5 - 0.3 * x + rng.normal(scale=0.8, size=n)
    table = dt.ResponseTable.from_dict({"y": y, "x": x})
    mf = fo.parse_model("y ~ 1 + x")
    fam = fm.family_lookup("gaussian")
    model = bd.build_model(mf, fam, [], table)
    return model, x, y


def fabricate_draws(model, named_rows):
    C, D = 1, len(named_rows)
    P = len(model.names)
    params = np.zeros((C, D, P))
    for d, named in enumerate(named_rows):
        for j, nm in enumerate(model.names):
            params[0, d, j] = named[nm]
    return sm.PosteriorDraws(
        names=list(model.names),
        lp=np.zeros((C, D)),
        params=params,
        stats=np.zeros((C, D, len(sm.STAT_COLUMNS))),
        unconstrained=np.zeros((C, D, 1)),
        unconstrained_names=["u"],
    )


def check_pointwise():
    model, x, y = make_gaussian_model()
    named = {"b_Intercept": 0.5, "b_x": -0.3,
             "b_sigma_Intercept": np.log(0.8)}
    draws = fabricate_draws(model, [named])
    ll = pp.pointwise_log_lik(model, draws)
    ref = sps.norm.logpdf(y, 0.5 - 0.3 * x, 0.8)
    assert ll.shape == (1, 40)
    assert np.allclose(ll[0], ref, atol=1e-10), np.abs(ll[0] - ref).max()
    print("pointwise_log_lik matches closed form: ok")

    # loo: elpd_loo must not exceed the in-sample lppd
    rng = np.random.default_rng(3)
    rows = []
    for _ in range(200):
        rows.append({"b_Intercept": 0.5 + 0.1 * rng.normal(),
                     "b_x": -0.3 + 0.1 * rng.normal(),
                     "b_sigma_Intercept": np.log(0.8) + 0.05 * rng.normal()})
    draws = fabricate_draws(model, rows)
    ll = pp.pointwise_log_lik(model, draws)
    loo = pp.psis_loo(ll)
    from scipy.special import logsumexp
    lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(ll.shape[0])))
    assert loo.elpd_loo <= lppd + 1e-6, (loo.elpd_loo, lppd)
    assert abs(loo.looic + 2 * loo.elpd_loo) < 1e-12
    plain = pp.psis_loo(ll, smooth=False)
    if (loo.pareto_k < 0.5).all():
        assert abs(plain.elpd_loo - loo.elpd_loo) < 0.1
    print(f"psis_loo: elpd {loo.elpd_loo:.2f} <= lppd {lppd:.2f}, "
          f"max k {loo.pareto_k.max():.3f}: ok")

    cmp = pp.loo_compare(loo, loo)
    assert cmp["elpd_diff"] == 0.0 and cmp["se_diff"] == 0.0
    print("loo_compare self-difference zero: ok")


def check_hypothesis():
    model, x, y = make_gaussian_model()
    rng = np.random.default_rng(11)
    rows = [{"b_Intercept": 0.5 + 0.1 * rng.normal(),
             "b_x": -0.3 + 0.05 * rng.normal(),
             "b_sigma_Intercept": np.log(0.8)} for _ in range(500)]
    draws = fabricate_draws(model, rows)
    h = pp.hypothesis(draws, "x < 0")
    assert h.post_prob > 0.99, h.post_prob
    h2 = pp.hypothesis(draws, "Intercept - Intercept > 0")
    assert h2.post_prob == 0.0 and abs(h2.estimate) < 1e-14
    h3 = pp.hypothesis(draws, "Intercept + 2*x > 0")
    arr = np.array([r["b_Intercept"] + 2 * r["b_x"] for r in rows])
    assert abs(h3.estimate - arr.mean()) < 1e-12
    assert abs(h3.post_prob - np.mean(arr > 0)) < 1e-12
    # complement
    h4 = pp.hypothesis(draws, "Intercept + 2*x < 0")
    assert abs(h3.post_prob + h4.post_prob - 1.0) < 1e-12
    heq = pp.hypothesis(draws, "x = 0")
    assert np.isnan(heq.post_prob)
    try:
        pp.hypothesis(draws, "nope > 0")
    except ValueError as e:
        assert "unknown parameter" in str(e)
    print(str(h))
    print("hypothesis contrasts: ok")


def check_irt_products():
    rng = np.random.default_rng(21)
    n_p, n_i = 30, 8
    theta = rng.normal(scale=1.0, size=n_p)
    xi = rng.normal(scale=0.7, size=n_i)
    pid, item, y = [], [], []
    for p in range(n_p):
        for i in range(n_i):
            eta = theta[p] + xi[i] - 0.2
            y.append(int(rng.random() < 1 / (1 + np.exp(-eta))))
            pid.append(f"p{p:02d}")
            item.append(f"i{i}")
    table = dt.ResponseTable.from_dict({"y": y, "id": pid, "item": item})
    mf = fo.parse_model("y ~ 1 + (1 | id) + (1 | item)")
    fam = fm.family_lookup("bernoulli")
    priors = [pr.parse_prior("normal(0, 5)", "Intercept"),
              pr.parse_prior("student_t(3, 0, 2.5)", "sd")]
    model = bd.build_model(mf, fam, priors, table)

    ctrl = sm.SamplerControl(chains=2, iter=600, warmup=300, seed=4)
    draws = sm.sample(model, ctrl)
    print(f"sampled 1PL toy: {draws.n_divergent()} divergences")

    coefs = pp.extract_coef(model, draws, "item")
    assert coefs.draws.shape == (2 * 300, n_i, 1)
    assert coefs.levels == [f"i{i}" for i in range(n_i)]
    # shift by b_Intercept per draw
    raw = pp.extract_coef(model, draws, "item", include_overall=False)
    icpt = draws.array("b_Intercept").reshape(-1)
    assert np.allclose(coefs.draws[:, 0, 0] - raw.draws[:, 0, 0], icpt)
    # item effects correlate with truth
    est = coefs.mean[:, 0]
    r = np.corrcoef(est, xi - 0.2)[0, 1]
    assert r > 0.6, r
    print(f"extract_coef: corr(est, truth) = {r:.3f}: ok")

    pred = pp.posterior_predict(model, draws, seed=9)
    assert pred.shape == (600, n_p * n_i)
    assert set(np.unique(pred)) <= {0.0, 1.0}
    obs_rate = np.mean(y)
    rep_rate = pred.mean()
    assert abs(rep_rate - obs_rate) < 0.1, (rep_rate, obs_rate)
    print(f"posterior_predict: rep rate {rep_rate:.3f} vs obs {obs_rate:.3f}: ok")

    eff = pp.conditional_effects(model, draws)
    assert len(eff.rows) == 1
    est, lo, hi = eff.rows[0]
    assert 0 < lo < est < hi < 1
    icpt_mean = expit_mean = float(np.mean(1 / (1 + np.exp(-icpt))))
    assert abs(est - icpt_mean) < 1e-12
    print(f"conditional_effects intercept-only: {est:.3f} ({lo:.3f}, {hi:.3f}): ok")

    ll = pp.pointwise_log_lik(model, draws)
    loo = pp.psis_loo(ll)
    assert loo.n_obs == n_p * n_i
    print(f"irt loo: elpd {loo.elpd_loo:.1f}, max k {loo.pareto_k.max():.2f}: ok")


def check_effects_grid():
    rng = np.random.default_rng(5)
    n = 120
    x = rng.normal(size=n)
    g = rng.choice(["a", "b"], size=n)
    eta = 0.3 + 0.8 * x + np.where(g == "b", -0.5, 0.0)
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
    table = dt.ResponseTable.from_dict({"y": y, "x": x, "g": g})
    mf = fo.parse_model("y ~ 1 + x + g")
    model = bd.build_model(mf, fm.family_lookup("bernoulli"), [], table)
    named = {"b_Intercept": 0.3, "b_x": 0.8, "b_gb": -0.5}
    rows = [named] * 3
    draws_obj = fabricate_draws(model, rows)
    eff = pp.conditional_effects(model, draws_obj, "x", n_points=5)
    assert len(eff.rows) == 5
    xs = [r[0] for r in eff.rows]
    assert xs[0] == x.min() and xs[-1] == x.max()
    # reference level for g is "a": expectation is expit(.3 + .8 x)
    for xv, est, lo, hi in eff.rows:
        assert abs(est - 1 / (1 + np.exp(-(0.3 + 0.8 * xv)))) < 1e-12
    eff2 = pp.conditional_effects(model, draws_obj, "g")
    assert [r[0] for r in eff2.rows] == ["a", "b"]
    # g grid holds x at its mean
    xbar = x.mean()
    want_a = 1 / (1 + np.exp(-(0.3 + 0.8 * xbar)))
    want_b = 1 / (1 + np.exp(-(0.3 + 0.8 * xbar - 0.5)))
    assert abs(eff2.rows[0][1] - want_a) < 1e-12
    assert abs(eff2.rows[1][1] - want_b) < 1e-12
    eff3 = pp.conditional_effects(model, draws_obj, "x:g", n_points=4)
    assert len(eff3.rows) == 8
    try:
        pp.conditional_effects(model, draws_obj, "zzz")
    except ValueError as e:
        assert "not a model covariate" in str(e)
    print("conditional_effects grids: ok")


if __name__ == "__main__":
    check_psis_fixtures()
    check_pointwise()
    check_hypothesis()
    check_effects_grid()
    check_irt_products()
    print("all postprocess smoke checks passed")

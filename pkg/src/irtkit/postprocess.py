"""Posterior products: pointwise likelihoods, PSIS-LOO cross-validation,
hypothesis contrasts, per-level coefficients, predictions, and
conditional-effect tables.

Importance weights for LOO use the empirical-Bayes generalized-Pareto tail
fit with quantile smoothing and truncation at the maximum; the shape
estimate k flags unreliable observations above 0.7.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import build as bd
from . import data as dt
from . import families as fm
from . import formula as fo


# pointwise log likelihood --------------------------------------------------

def _iter_named(draws):
    for c in range(draws.n_chains):
        for d in range(draws.n_draws):
            yield dict(zip(draws.names, draws.params[c, d]))


def pointwise_log_lik(model, draws, table=None):
    """(S, N) log likelihood, draws flattened chain-major.

    Computed against the supplied table (default: the training data), even
    for prior-only fits.
    """
    use_table = table if table is not None else model.table
    if table is None:
        y = model.response.values
    else:
        y = fm.validate_response(model.family, use_table.column(model.mf.response.name)).values
    S = draws.n_chains * draws.n_draws
    out = np.empty((S, use_table.n_rows))
    for s, named in enumerate(_iter_named(draws)):
        eta_fam, extras = bd.predictor_values(model, named, table)
        if table is not None and model.family.name == "wiener":
            extras["dec"] = fm.validate_decision(
                use_table.column(_dec_column(model)))
        out[s] = fm.log_likelihood_vec(model.family, eta_fam, y, extras)
    return out


def _dec_column(model):
    for call in model.mf.response.addition:
        if call.func == "dec":
            return call.args[0].name
    raise ValueError("model has no dec() term")


# pareto-smoothed importance sampling ---------------------------------------

def _gpdfit(sorted_tail):
    """Empirical-Bayes generalized-Pareto shape/scale on sorted exceedances."""
    prior_bs = 3
    prior_k = 10
    n = len(sorted_tail)
    m_est = 30 + int(n ** 0.5)

    b = 1 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=float) - 0.5))
    b /= prior_bs * sorted_tail[int(n / 4 + 0.5) - 1]
    b += 1 / sorted_tail[-1]

    k = np.log1p(-b[:, None] * sorted_tail).mean(axis=1)
    profile = n * (np.log(-(b / k)) - k - 1)
    w = 1 / np.exp(profile - profile[:, None]).sum(axis=1)

    keep = w >= 10 * np.finfo(float).eps
    if not np.all(keep):
        w = w[keep]
        b = b[keep]
    w /= w.sum()

    b_post = np.sum(b * w)
    k_post = np.log1p(-b_post * sorted_tail).mean()
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def _gp_quantiles(probs, kappa, sigma):
    x = np.full_like(probs, np.nan)
    if sigma <= 0:
        return x
    inside = (probs > 0) & (probs < 1)
    if np.all(inside):
        if abs(kappa) < np.finfo(float).eps:
            x = -np.log1p(-probs)
        else:
            x = np.expm1(-kappa * np.log1p(-probs)) / kappa
        x *= sigma
    else:
        if abs(kappa) < np.finfo(float).eps:
            x[inside] = -np.log1p(-probs[inside])
        else:
            x[inside] = np.expm1(-kappa * np.log1p(-probs[inside])) / kappa
        x *= sigma
        x[probs == 0] = 0
        x[probs == 1] = np.inf if kappa >= 0 else -sigma / kappa
    return x


def _smooth_row(log_weights, cutoff_ind, cutoff_min):
    x = np.array(log_weights, dtype=float)
    x -= np.max(x)
    order = np.argsort(x)
    xcutoff = max(x[order[cutoff_ind]], cutoff_min)
    exp_cutoff = np.exp(xcutoff)
    (tail_ids,) = np.where(x > xcutoff)
    tail_len = len(tail_ids)
    if tail_len <= 4:
        k = np.inf
    else:
        tail_order = np.argsort(x[tail_ids])
        exceedances = np.exp(x[tail_ids]) - exp_cutoff
        k, sigma = _gpdfit(exceedances[tail_order])
        if np.isfinite(k):
            sti = np.arange(0.5, tail_len) / tail_len
            smoothed = np.log(_gp_quantiles(sti, k, sigma) + exp_cutoff)
            x[tail_ids[tail_order]] = smoothed
            x[x > 0] = 0
    x -= logsumexp(x)
    return x, k


def psislw(log_weights):
    """Smooth rows of (n_obs, n_samples) log importance ratios.

    Returns normalized log weights and the Pareto shape per row.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    S = log_weights.shape[-1]
    cutoff_ind = -int(np.ceil(min(S / 5.0, 3 * S ** 0.5))) - 1
    cutoff_min = np.log(np.finfo(float).tiny)
    out = np.empty_like(log_weights)
    ks = np.empty(log_weights.shape[0])
    for i in range(log_weights.shape[0]):
        out[i], ks[i] = _smooth_row(log_weights[i], cutoff_ind, cutoff_min)
    return out, ks


@dataclass
class LooResult:
    elpd_loo: float
    se_elpd: float
    looic: float
    se_looic: float
    pointwise: np.ndarray
    pareto_k: np.ndarray
    n_samples: int

    @property
    def n_obs(self):
        return len(self.pointwise)

    def flagged(self, threshold=0.7):
        return np.flatnonzero(self.pareto_k > threshold)

    def __str__(self):
        n_bad = len(self.flagged())
        lines = [
            f"elpd_loo  {self.elpd_loo:10.2f}  (SE {self.se_elpd:.2f})",
            f"looic     {self.looic:10.2f}  (SE {self.se_looic:.2f})",
            f"n_obs {self.n_obs}, draws {self.n_samples}",
        ]
        if n_bad:
            lines.append(f"pareto_k > 0.7 for {n_bad} observation(s)")
        return "\n".join(lines)


def psis_loo(loglik, smooth=True):
    """Leave-one-out expected log predictive density from an (S, N)
    log-likelihood matrix. `smooth=False` uses the raw normalized
    importance weights."""
    loglik = np.asarray(loglik, dtype=float)
    S, N = loglik.shape
    raw_lw = -loglik.T  # (N, S) log importance ratios
    if smooth:
        lw, ks = psislw(raw_lw)
    else:
        lw = raw_lw - logsumexp(raw_lw, axis=1, keepdims=True)
        ks = np.zeros(N)
    pointwise = logsumexp(lw + loglik.T, axis=1)
    elpd = float(pointwise.sum())
    se = float(np.sqrt(N * pointwise.var(ddof=1))) if N > 1 else 0.0
    return LooResult(elpd, se, -2.0 * elpd, 2.0 * se, pointwise, ks, S)


def loo_compare(a, b):
    """Pointwise elpd difference a - b with its standard error."""
    if a.n_obs != b.n_obs:
        raise ValueError(
            f"models were fit to different data: {a.n_obs} vs {b.n_obs} observations")
    diff = a.pointwise - b.pointwise
    elpd_diff = float(diff.sum())
    se_diff = float(np.sqrt(len(diff) * diff.var(ddof=1))) if len(diff) > 1 else 0.0
    return {
        "elpd_diff": elpd_diff,
        "se_diff": se_diff,
        "looic_diff": -2.0 * elpd_diff,
        "se_looic_diff": 2.0 * se_diff,
    }


# hypothesis contrasts ------------------------------------------------------

_HYP_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<name>[A-Za-z_.][A-Za-z0-9_.\[\],]*)"
    r"|(?P<op>[-+*/()><=]))")


def _tokenize_hyp(text):
    text = text.strip()
    pos = 0
    out = []
    while pos < len(text):
        m = _HYP_TOKEN.match(text, pos)
        if m is None:
            raise ValueError(f"cannot read hypothesis at '{text[pos:]}'")
        if m.group("num"):
            out.append(("NUM", m.group("num")))
        elif m.group("name"):
            out.append(("NAME", m.group("name")))
        else:
            out.append(("OP", m.group("op")))
        pos = m.end()
    return out


class _HypParser:
    def __init__(self, tokens, resolve):
        self.toks = tokens
        self.i = 0
        self.resolve = resolve

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("END", "")

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse_sum(self):
        value = self.parse_term()
        while self.peek() == ("OP", "+") or self.peek() == ("OP", "-"):
            op = self.next()[1]
            rhs = self.parse_term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def parse_term(self):
        value = self.parse_atom()
        while self.peek() == ("OP", "*") or self.peek() == ("OP", "/"):
            op = self.next()[1]
            rhs = self.parse_atom()
            value = value * rhs if op == "*" else value / rhs
        return value

    def parse_atom(self):
        kind, text = self.next()
        if kind == "NUM":
            return float(text)
        if kind == "NAME":
            return self.resolve(text)
        if kind == "OP" and text == "(":
            inner = self.parse_sum()
            if self.next() != ("OP", ")"):
                raise ValueError("unbalanced parenthesis in hypothesis")
            return inner
        if kind == "OP" and text == "-":
            return -self.parse_atom()
        raise ValueError(f"unexpected '{text}' in hypothesis")


@dataclass
class HypothesisResult:
    hypothesis: str
    estimate: float
    ci_lower: float
    ci_upper: float
    post_prob: float

    def __str__(self):
        head = f"{'Hypothesis':<30} {'Estimate':>9} {'CI.Lower':>9} {'CI.Upper':>9} {'Post.Prob':>9}"
        pp = "NA" if np.isnan(self.post_prob) else f"{self.post_prob:.2f}"
        row = (f"{self.hypothesis:<30} {self.estimate:>9.2f} "
               f"{self.ci_lower:>9.2f} {self.ci_upper:>9.2f} {pp:>9}")
        return head + "\n" + row


def _scope_resolver(draws, par_class, group):
    names = draws.names

    def resolve(token):
        candidates = []
        if par_class in ("", "b"):
            candidates = [f"b_{token}", token]
        elif par_class == "sd":
            candidates = [f"sd_{group}__{token}"] if group else []
            if not candidates:
                raise ValueError("class 'sd' needs a group")
        elif par_class == "cor":
            candidates = [f"cor_{group}__{token}"] if group else []
            if not candidates:
                raise ValueError("class 'cor' needs a group")
        else:
            candidates = [token]
        for cand in candidates:
            if cand in names:
                return draws.array(cand).reshape(-1)
        prefix = {"b": "b_", "sd": f"sd_{group}__", "cor": f"cor_{group}__"}.get(par_class, "")
        near = [n for n in names if n.startswith(prefix)][:8]
        raise ValueError(
            f"unknown parameter '{token}' for class '{par_class or 'b'}'"
            + (f", group '{group}'" if group else "")
            + f"; candidates include {near}")

    return resolve


def hypothesis(draws, expr, par_class="b", group=""):
    """Evaluate a linear contrast like "modedo - modewant > 0" per draw.

    CI bounds are the central 90% interval; Post.Prob is the fraction of
    draws satisfying the (strict) inequality. Equality hypotheses get the
    same interval with Post.Prob reported as NaN.
    """
    m = re.split(r"(>|<|=)", expr)
    if len(m) != 3:
        raise ValueError("hypothesis must contain exactly one of '>', '<', '='")
    lhs_text, comp, rhs_text = m[0], m[1], m[2]
    resolve = _scope_resolver(draws, par_class, group)
    lhs = _HypParser(_tokenize_hyp(lhs_text), resolve).parse_sum()
    rhs = _HypParser(_tokenize_hyp(rhs_text), resolve).parse_sum()
    value = np.asarray(lhs - rhs, dtype=float)
    if value.ndim == 0:
        value = np.full(draws.n_chains * draws.n_draws, float(value))
    est = float(value.mean())
    lo, hi = np.quantile(value, [0.05, 0.95])
    if comp == ">":
        prob = float(np.mean(value > 0))
    elif comp == "<":
        prob = float(np.mean(value < 0))
    else:
        prob = float("nan")
    return HypothesisResult(expr.strip(), est, float(lo), float(hi), prob)


# per-level coefficients ----------------------------------------------------

@dataclass
class CoefResult:
    factor: str
    levels: list
    coefs: list
    draws: np.ndarray  # (S, n_levels, n_coefs)
    include_overall: bool

    @property
    def mean(self):
        return self.draws.mean(axis=0)

    def interval(self, lower=0.025, upper=0.975):
        return (np.quantile(self.draws, lower, axis=0),
                np.quantile(self.draws, upper, axis=0))

    def table(self):
        lo, hi = self.interval()
        mean = self.mean
        rows = []
        for i, level in enumerate(self.levels):
            for j, coef in enumerate(self.coefs):
                rows.append((level, coef, mean[i, j], lo[i, j], hi[i, j]))
        return rows

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("level,coef,Estimate,l-95% CI,u-95% CI\n")
            for level, coef, m, lo, hi in self.table():
                fh.write(f"{level},{coef},{m:.10g},{lo:.10g},{hi:.10g}\n")


def extract_coef(model, draws, factor, include_overall=True):
    """Per-level effect posteriors for one grouping factor.

    With `include_overall`, each level's residual is shifted by the matching
    population effect (intercepts and same-named coefficients); without, the
    raw group residuals are returned.
    """
    blocks = [b for b in model.group_blocks if b.factor == factor]
    if not blocks:
        known = sorted({b.factor for b in model.group_blocks})
        raise ValueError(f"no group terms on factor '{factor}'; factors: {known}")
    levels = list(blocks[0].levels)
    coefs = []
    for block in blocks:
        for eid in block.entry_ids:
            coefs.append(model.group_entries[eid].out_coef)
    S = draws.n_chains * draws.n_draws
    out = np.empty((S, len(levels), len(coefs)))
    for j, coef in enumerate(coefs):
        shift = 0.0
        if include_overall and f"b_{coef}" in draws.names:
            shift = draws.array(f"b_{coef}").reshape(-1)
        for i, level in enumerate(levels):
            r = draws.array(f"r_{factor}[{level},{coef}]").reshape(-1)
            out[:, i, j] = r + shift
    return CoefResult(factor, levels, coefs, out, include_overall)


# posterior prediction ------------------------------------------------------

def posterior_predict(model, draws, newdata=None, seed=None):
    """(S, N) sampled responses; one response draw per posterior draw.

    Wiener responses are signed decision times: positive for the upper
    boundary, negative for the lower.
    """
    rng = np.random.default_rng(seed)
    use_table = newdata if newdata is not None else model.table
    S = draws.n_chains * draws.n_draws
    out = np.empty((S, use_table.n_rows))
    for s, named in enumerate(_iter_named(draws)):
        eta_fam, extras = bd.predictor_values(model, named, newdata)
        resp = fm.sample_response(model.family, rng, eta_fam, extras)
        if model.family.name == "wiener":
            times, dec = resp
            out[s] = np.where(dec == 1, times, -times)
        else:
            out[s] = resp
    return out


# conditional effects -------------------------------------------------------

def _model_columns(model):
    """Data columns feeding any population or cs design, with their kinds."""
    cols = {}
    for plan in model.plans:
        for term in list(plan.terms) + list(plan.cs_terms):
            for var in term:
                cols[var] = model.table.column(var)
    if model.mf.nonlinear:
        syms = set(fo._free_symbols(model.mf.rhs))
        for expr in model.mf.nlf_defs.values():
            syms |= set(fo._free_symbols(expr))
        for sym in syms:
            if sym in model.plan_index or sym in model.mf.nlf_defs:
                continue
            cols[sym] = model.table.column(sym)
    return cols


def _grid_values(col, name, n_points):
    if col.kind == "factor":
        return list(col.levels)
    vals = np.asarray(col.values, dtype=float)
    return list(np.linspace(vals.min(), vals.max(), n_points))


def _reference_value(col):
    if col.kind == "factor":
        return col.levels[0]
    return float(np.mean(np.asarray(col.values, dtype=float)))


@dataclass
class EffectsTable:
    effect: str
    columns: list  # grid column names
    rows: list  # (grid values..., [category], estimate, l95, u95)
    categorical: bool

    def to_csv(self, path):
        with open(path, "w") as fh:
            head = list(self.columns)
            if self.categorical:
                head.append("category")
            head += ["Estimate", "l-95% CI", "u-95% CI"]
            fh.write(",".join(head) + "\n")
            for row in self.rows:
                fh.write(",".join(str(v) for v in row) + "\n")

    def __str__(self):
        head = list(self.columns) + (["category"] if self.categorical else [])
        lines = ["  ".join(head + ["Estimate", "l-95%", "u-95%"])]
        for row in self.rows:
            cells = [f"{v:.3f}" if isinstance(v, float) else str(v) for v in row]
            lines.append("  ".join(cells))
        return "\n".join(lines)


def _expected_response(model, eta_fam, extras, categorical):
    fam = model.family
    if fam.response_kind == "categorical" and not categorical:
        raise ValueError("the categorical family needs categorical=True")
    if fam.response_kind in ("ordinal", "categorical"):
        logp = fm.category_log_probs(fam, eta_fam, extras)
        p = np.exp(logp)
        p /= p.sum(axis=1, keepdims=True)
        if categorical:
            return p  # (n, C)
        cats = np.arange(1, p.shape[1] + 1)
        return p @ cats
    name = fam.name
    if name == "bernoulli":
        return expit(eta_fam["mu"])
    if name == "poisson":
        return np.exp(eta_fam["mu"]) if fam.dpar("mu").link == "log" else eta_fam["mu"]
    if name == "beta":
        return expit(eta_fam["mu"])
    if name == "gaussian":
        return np.asarray(eta_fam["mu"], dtype=float)
    if name == "exgaussian":
        return np.asarray(eta_fam["mu"], dtype=float)
    if name == "shifted_lognormal":
        sigma = np.exp(eta_fam["sigma"])
        return np.exp(eta_fam["mu"] + 0.5 * sigma ** 2) + np.exp(eta_fam["ndt"])
    raise ValueError(f"no response-scale expectation for family '{name}'")


def conditional_effects(model, draws, effect=None, categorical=False, n_points=100):
    """Posterior expectation of the response over a covariate grid.

    Other covariates sit at their reference level (factors) or mean
    (numeric); group-level effects are zero, so this is the population
    expectation. `effect` may be a column name, "a:b" for a two-way grid,
    or None for the intercept-only row.
    """
    cols = _model_columns(model)
    parts = [] if effect is None else effect.split(":")
    for part in parts:
        if part not in cols:
            raise ValueError(
                f"'{part}' is not a model covariate; choices: {sorted(cols)}")

    grids = []
    for k, part in enumerate(parts):
        vals = _grid_values(cols[part], part, n_points)
        if k > 0 and cols[part].kind != "factor":
            arr = np.asarray(cols[part].values, dtype=float)
            vals = [float(arr.mean() - arr.std()), float(arr.mean()),
                    float(arr.mean() + arr.std())]
        grids.append(vals)
    if grids:
        mesh = [[]]
        for vals in grids:
            mesh = [m + [v] for m in mesh for v in vals]
    else:
        mesh = [[]]

    n = len(mesh)
    table_cols = {}
    kinds = {}
    for name, col in cols.items():
        if name in parts:
            k = parts.index(name)
            table_cols[name] = [row[k] for row in mesh]
        else:
            table_cols[name] = [_reference_value(col)] * n
        # pin kinds so factor levels that look numeric stay factors
        kinds[name] = "factor" if col.kind == "factor" else "real"
    if table_cols:
        grid_table = dt.ResponseTable.from_dict(table_cols, column_types=kinds)
    else:
        grid_table = _unit_table(n)

    S = draws.n_chains * draws.n_draws
    per_draw = []
    for named in _iter_named(draws):
        eta_fam, extras = bd.predictor_values(model, named, grid_table, zero_groups=True)
        per_draw.append(_expected_response(model, eta_fam, extras, categorical))
    stack = np.stack(per_draw)  # (S, n) or (S, n, C)

    est = stack.mean(axis=0)
    lo = np.quantile(stack, 0.025, axis=0)
    hi = np.quantile(stack, 0.975, axis=0)
    rows = []
    if categorical and est.ndim == 2:
        for i, gv in enumerate(mesh):
            for c in range(est.shape[1]):
                rows.append(tuple(gv) + (c + 1, float(est[i, c]),
                                         float(lo[i, c]), float(hi[i, c])))
    else:
        for i, gv in enumerate(mesh):
            rows.append(tuple(gv) + (float(est[i]), float(lo[i]), float(hi[i])))
    return EffectsTable(effect or "(intercept)", parts, rows, categorical and est.ndim == 2)


def _unit_table(n):
    return dt.ResponseTable.from_dict({"_const": [1.0] * n})

"""Convergence diagnostics and the posterior summary table.

R-hat and effective sample sizes follow the rank-normalized split-chain
recipe: chains are halved, pooled average ranks map through the normal
quantile function, and autocorrelation sums use Geyer's initial monotone
pairwise truncation. Tail ESS takes the worse of the 0.05/0.95 quantile
indicator sequences. Autocovariances run through an FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.special import ndtri
from scipy.stats import rankdata


def split_chains(draws):
    """(chains, n) -> (2*chains, n//2); an odd middle draw is dropped."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    _, n = draws.shape
    half = n // 2
    return np.vstack([draws[:, :half], draws[:, n - half:]])


def rank_normalize(draws):
    """Map pooled average ranks through the normal quantile function."""
    flat = draws.reshape(-1)
    ranks = rankdata(flat, method="average")
    z = ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(draws.shape)


def _split_rhat(split):
    m, n = split.shape
    chain_means = split.mean(axis=1)
    chain_vars = split.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    if w <= 0.0:
        # within-chain variance collapsed; disagreeing constants diverge
        return math.inf if b > 0.0 else math.nan
    return float(np.sqrt(var_plus / w))


def compute_rhat(draws):
    """Rank-normalized split R-hat; NaN for a constant parameter."""
    split = split_chains(draws)
    if split.shape[1] < 4:
        return math.nan
    if np.allclose(split, split.flat[0]):
        return math.nan
    return _split_rhat(rank_normalize(split))


def _autocov(x):
    """Biased autocovariances at all lags via FFT."""
    n = len(x)
    xc = x - x.mean()
    size = next_fast_len(2 * n)
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def _ess_of_split(split):
    m, n = split.shape
    if n < 4 or np.allclose(split, split.flat[0]):
        return math.nan
    acov = np.vstack([_autocov(split[c]) for c in range(m)])
    chain_means = split.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_means.var(ddof=1)
    if var_plus <= 0.0:
        return math.nan
    mean_acov = acov.mean(axis=0)

    rho = np.zeros(n)
    rho[0] = 1.0
    rho[1] = 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho_even = 1.0
    rho_odd = rho[1]
    s = 1
    while s < n - 4 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - mean_acov[s + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - mean_acov[s + 2]) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[s + 1] = rho_even
            rho[s + 2] = rho_odd
        s += 2
    max_s = s
    if rho_even > 0.0:
        rho[max_s + 1] = rho_even
    for t in range(1, max_s - 2, 2):
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
    tau = -1.0 + 2.0 * rho[:max_s].sum() + rho[max_s + 1]
    # anti-correlated chains would push tau negative; the floor doubles as
    # the conventional 10x cap on reported ESS
    tau = max(tau, 0.1)
    return float(m * n / tau)


def ess_bulk(draws):
    return _ess_of_split(rank_normalize(split_chains(draws)))


def ess_tail(draws):
    draws = np.asarray(draws, dtype=float)
    out = []
    for q in (0.05, 0.95):
        cut = np.quantile(draws.reshape(-1), q)
        indicator = (draws <= cut).astype(float)
        out.append(_ess_of_split(split_chains(indicator)))
    # python min: NaN propagates only from the first slot, so a degenerate
    # upper-tail indicator falls back to the finite lower-tail estimate
    return float(min(out))


def compute_ess(draws):
    return {"bulk": ess_bulk(draws), "tail": ess_tail(draws)}


# summary table -------------------------------------------------------------

@dataclass
class SummaryRow:
    name: str
    estimate: float
    est_error: float
    l95: float
    u95: float
    rhat: float
    bulk_ess: float
    tail_ess: float

    def values(self):
        return (self.estimate, self.est_error, self.l95, self.u95,
                self.rhat, self.bulk_ess, self.tail_ess)


HEADERS = ("Estimate", "Est.Error", "l-95% CI", "u-95% CI",
           "Rhat", "Bulk_ESS", "Tail_ESS")


@dataclass
class SummaryTable:
    sections: list  # (title, [SummaryRow])

    def row(self, name):
        for _, rows in self.sections:
            for r in rows:
                if r.name == name:
                    return r
        raise KeyError(f"no summary row named '{name}'")

    def all_rows(self):
        return [r for _, rows in self.sections for r in rows]

    def __str__(self):
        lines = []
        for title, rows in self.sections:
            if not rows:
                continue
            lines.append(title)
            width = max(len(r.name) for r in rows)
            width = max(width, 1)
            head = " ".join(f"{h:>9}" for h in HEADERS)
            lines.append(" " * width + " " + head)
            for r in rows:
                cells = []
                for h, v in zip(HEADERS, r.values()):
                    if h in ("Bulk_ESS", "Tail_ESS"):
                        cells.append(f"{_fmt_ess(v):>9}")
                    else:
                        cells.append(f"{_fmt_est(v):>9}")
                lines.append(f"{r.name:<{width}} " + " ".join(cells))
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("section,parameter," + ",".join(HEADERS) + "\n")
            for title, rows in self.sections:
                for r in rows:
                    vals = ",".join(format(float(v), ".10g") for v in r.values())
                    fh.write(f"{_csv_quote(title)},{_csv_quote(r.name)},{vals}\n")


def _csv_quote(text):
    if "," in text or '"' in text:
        return '"' + text.replace('"', '""') + '"'
    return text


def _fmt_est(v):
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        return "NA" if math.isnan(v) else "Inf"
    return f"{v:.2f}"


def _fmt_ess(v):
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        return "NA" if math.isnan(v) else "Inf"
    return f"{v:.0f}"


def _display_name(param):
    if param.startswith("sd_"):
        coef = param.split("__", 1)[1]
        return f"sd({coef})"
    if param.startswith("cor_"):
        _, rest = param.split("_", 1)
        parts = rest.split("__")
        return f"cor({parts[1]},{parts[2]})"
    if param.startswith("b_"):
        return param[2:]
    return param


def _param_stats(arr):
    flat = arr.reshape(-1)
    return SummaryRow(
        name="",
        estimate=float(flat.mean()),
        est_error=float(flat.std(ddof=1)) if flat.size > 1 else 0.0,
        l95=float(np.quantile(flat, 0.025)),
        u95=float(np.quantile(flat, 0.975)),
        rhat=compute_rhat(arr),
        bulk_ess=ess_bulk(arr),
        tail_ess=ess_tail(arr),
    )


def summarize(draws, model=None):
    """Posterior summary in the usual layout: group-level sections per
    grouping factor, then population-level effects. Level-wise group
    residuals (r_...) are excluded."""
    factors = []
    if model is not None:
        for block in model.group_blocks:
            if block.factor not in factors:
                factors.append(block.factor)
    else:
        for name in draws.names:
            if name.startswith(("sd_", "cor_")):
                factor = name.split("__")[0].split("_", 1)[1]
                if factor not in factors:
                    factors.append(factor)

    used = set()
    sections = []
    for factor in factors:
        rows = []
        for name in draws.names:
            if name.startswith(f"sd_{factor}__") or name.startswith(f"cor_{factor}__"):
                row = _param_stats(draws.array(name))
                row.name = _display_name(name)
                rows.append(row)
                used.add(name)
        title = f"Group-Level Effects: ~{factor}"
        if model is not None:
            n_levels = next(b.n_levels for b in model.group_blocks
                            if b.factor == factor)
            title += f" (levels: {n_levels})"
        sections.append((title, rows))

    pop_rows = []
    other_rows = []
    for name in draws.names:
        if name in used or name.startswith("r_"):
            continue
        row = _param_stats(draws.array(name))
        row.name = _display_name(name)
        if name.startswith("b_"):
            pop_rows.append(row)
        else:
            other_rows.append(row)
    if pop_rows:
        sections.append(("Population-Level Effects:", pop_rows))
    if other_rows:
        sections.append(("Parameters:", other_rows))
    return SummaryTable(sections)

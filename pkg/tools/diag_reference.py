"""Independent reference implementation of rank-normalized split-Rhat and
bulk/tail effective sample size, used only to freeze test fixtures.

Written from the published definitions (rank-normalization via fractional
offsets, Geyer initial-monotone-positive-sequence truncation) with naive
direct-loop autocovariances, before the package's diagnostics module. Do not
import from the package here; independence is the point.

Run:  python tools/diag_reference.py
Writes tests/fixtures/diagnostics_draws.npz and diagnostics_expected.json.
"""

import json
import os

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


def split_chains(draws):
    """(chains, iters) -> (2*chains, iters//2); odd lengths drop the middle draw."""
    draws = np.asarray(draws, dtype=float)
    _, n = draws.shape
    half = n // 2
    return np.vstack([draws[:, :half], draws[:, n - half:]])


def rank_normalize(draws):
    """Pooled average ranks mapped through the normal quantile function."""
    flat = draws.reshape(-1)
    ranks = rankdata(flat, method="average")
    total = flat.size
    z = ndtri((ranks - 0.375) / (total + 0.25))
    return z.reshape(draws.shape)


def basic_split_rhat(split):
    """Between/within variance ratio on already-split (and transformed) chains."""
    m, n = split.shape
    chain_means = split.mean(axis=1)
    chain_vars = split.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    if w <= 0.0:
        return float("nan")
    return float(np.sqrt(var_plus / w))


def rhat(draws):
    split = split_chains(draws)
    if np.allclose(split, split.flat[0]):
        return float("nan")
    return basic_split_rhat(rank_normalize(split))


def _autocov_naive(x):
    """Biased (divide by n) autocovariances for all lags, by direct loops."""
    n = len(x)
    xc = x - x.mean()
    out = np.empty(n)
    for t in range(n):
        acc = 0.0
        for i in range(n - t):
            acc += xc[i] * xc[i + t]
        out[t] = acc / n
    return out


def _ess_of_split(split):
    """Effective sample size of split (and possibly transformed) chains."""
    m, n = split.shape
    if n < 4 or np.allclose(split, split.flat[0]):
        return float("nan")
    acov = np.array([_autocov_naive(split[c]) for c in range(m)])
    chain_means = split.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_means.var(ddof=1)
    if var_plus <= 0.0:
        return float("nan")
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
    # improved estimate in the antithetic case
    if rho_even > 0.0:
        rho[max_s + 1] = rho_even
    # enforce the initial monotone sequence
    for t in range(1, max_s - 2, 2):
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
    total = float(m * n)
    tau = -1.0 + 2.0 * rho[:max_s].sum() + rho[max_s + 1]
    # floor tau so the antithetic case lands on the 10x cap instead of a
    # negative estimate
    tau = max(tau, 0.1)
    return float(total / tau)


def ess_bulk(draws):
    return _ess_of_split(rank_normalize(split_chains(draws)))


def ess_tail(draws):
    draws = np.asarray(draws, dtype=float)
    out = []
    for q in (0.05, 0.95):
        cut = np.quantile(draws.reshape(-1), q)
        indicator = (draws <= cut).astype(float)
        out.append(_ess_of_split(split_chains(indicator)))
    return float(min(out))


def make_arrays():
    cases = {}
    rng = np.random.default_rng(101)
    cases["iid_normal"] = rng.standard_normal((4, 1000))

    rng = np.random.default_rng(202)
    ar = np.empty((4, 1000))
    for c in range(4):
        x = rng.standard_normal() / np.sqrt(1 - 0.9**2)
        for i in range(1000):
            x = 0.9 * x + rng.standard_normal()
            ar[c, i] = x
    cases["ar1_phi09"] = ar

    rng = np.random.default_rng(303)
    trend = rng.standard_normal((4, 500))
    trend[0] = np.linspace(0.0, 3.0, 500) + 0.1 * rng.standard_normal(500)
    cases["trending_chain"] = trend

    rng = np.random.default_rng(404)
    base = np.abs(rng.standard_normal((2, 250))) + 0.1
    anti = np.empty((2, 500))
    anti[:, 0::2] = base
    anti[:, 1::2] = -base
    cases["antithetic_pairs"] = anti

    alt = np.empty((2, 500))
    alt[:, 0::2] = 1.0
    alt[:, 1::2] = -1.0
    cases["alternating_exact"] = alt

    rng = np.random.default_rng(505)
    cases["odd_length"] = rng.standard_normal((3, 501))

    rng = np.random.default_rng(606)
    cases["lognormal_skew"] = np.exp(rng.standard_normal((4, 1000)))

    rng = np.random.default_rng(707)
    cases["heavy_tail_t3"] = rng.standard_t(3, size=(4, 800))

    cases["constant"] = np.ones((4, 100))
    return cases


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    fixdir = os.path.join(here, "..", "tests", "fixtures")
    os.makedirs(fixdir, exist_ok=True)
    cases = make_arrays()
    expected = {}
    for name, arr in cases.items():
        expected[name] = {
            "rhat": rhat(arr),
            "ess_bulk": ess_bulk(arr),
            "ess_tail": ess_tail(arr),
        }
        print(f"{name:18s} rhat={expected[name]['rhat']!r:22} "
              f"bulk={expected[name]['ess_bulk']!r:22} tail={expected[name]['ess_tail']!r}")
    np.savez(os.path.join(fixdir, "diagnostics_draws.npz"), **cases)
    with open(os.path.join(fixdir, "diagnostics_expected.json"), "w") as fh:
        json.dump(expected, fh, indent=2)
    print("fixtures written")


if __name__ == "__main__":
    main()

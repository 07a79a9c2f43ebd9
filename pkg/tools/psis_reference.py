"""Reference Pareto-smoothed importance weights, used only to freeze fixtures.

Follows the widely used empirical-Bayes generalized-Pareto fit and quantile
smoothing exactly as found in the example corpus; frozen before the package's
own loo code was written. Do not import from the package here.

Run:  python tools/psis_reference.py
Writes tests/fixtures/psis_draws.npz and psis_expected.npz.
"""

import os

import numpy as np
from scipy.special import logsumexp


def gpdfit(ary):
    """Empirical-Bayes GPD fit on a sorted 1-D array of tail exceedances."""
    prior_bs = 3
    prior_k = 10
    n = len(ary)
    m_est = 30 + int(n**0.5)

    b_ary = 1 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=float) - 0.5))
    b_ary /= prior_bs * ary[int(n / 4 + 0.5) - 1]
    b_ary += 1 / ary[-1]

    k_ary = np.log1p(-b_ary[:, None] * ary).mean(axis=1)
    len_scale = n * (np.log(-(b_ary / k_ary)) - k_ary - 1)
    weights = 1 / np.exp(len_scale - len_scale[:, None]).sum(axis=1)

    real_idxs = weights >= 10 * np.finfo(float).eps
    if not np.all(real_idxs):
        weights = weights[real_idxs]
        b_ary = b_ary[real_idxs]
    weights /= weights.sum()

    b_post = np.sum(b_ary * weights)
    k_post = np.log1p(-b_post * ary).mean()
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def gpinv(probs, kappa, sigma):
    x = np.full_like(probs, np.nan)
    if sigma <= 0:
        return x
    ok = (probs > 0) & (probs < 1)
    if np.all(ok):
        if np.abs(kappa) < np.finfo(float).eps:
            x = -np.log1p(-probs)
        else:
            x = np.expm1(-kappa * np.log1p(-probs)) / kappa
        x *= sigma
    else:
        if np.abs(kappa) < np.finfo(float).eps:
            x[ok] = -np.log1p(-probs[ok])
        else:
            x[ok] = np.expm1(-kappa * np.log1p(-probs[ok])) / kappa
        x *= sigma
        x[probs == 0] = 0
        x[probs == 1] = np.inf if kappa >= 0 else -sigma / kappa
    return x


def psislw_row(log_weights, cutoff_ind, cutoffmin):
    x = np.array(log_weights, dtype=float)
    x -= np.max(x)
    x_sort_ind = np.argsort(x)
    xcutoff = max(x[x_sort_ind[cutoff_ind]], cutoffmin)
    expxcutoff = np.exp(xcutoff)
    (tailinds,) = np.where(x > xcutoff)
    x_tail = x[tailinds]
    tail_len = len(x_tail)
    if tail_len <= 4:
        k = np.inf
    else:
        x_tail_si = np.argsort(x_tail)
        x_tail = np.exp(x_tail) - expxcutoff
        k, sigma = gpdfit(x_tail[x_tail_si])
        if np.isfinite(k):
            sti = np.arange(0.5, tail_len) / tail_len
            smoothed_tail = gpinv(sti, k, sigma)
            smoothed_tail = np.log(smoothed_tail + expxcutoff)
            x[tailinds[x_tail_si]] = smoothed_tail
            x[x > 0] = 0
    x -= logsumexp(x)
    return x, k


def psislw(log_weights):
    """log_weights: (n_obs, n_samples) -> smoothed log weights, pareto k."""
    n_samples = log_weights.shape[-1]
    cutoff_ind = -int(np.ceil(min(n_samples / 5.0, 3 * n_samples**0.5))) - 1
    cutoffmin = np.log(np.finfo(float).tiny)
    out = np.empty_like(log_weights, dtype=float)
    ks = np.empty(log_weights.shape[0])
    for i in range(log_weights.shape[0]):
        out[i], ks[i] = psislw_row(log_weights[i], cutoff_ind, cutoffmin)
    return out, ks


def make_cases():
    cases = {}
    rng = np.random.default_rng(1234)
    cases["normal_ratios"] = rng.standard_normal((20, 800))
    rng = np.random.default_rng(5678)
    # heavy-tailed ratios: some rows will have large pareto k
    cases["t2_ratios"] = rng.standard_t(2, size=(15, 600)) * 2.0
    rng = np.random.default_rng(42)
    cases["small_sample"] = rng.standard_normal((5, 120)) * 0.5
    cases["tied_weights"] = np.zeros((3, 400))
    return cases


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    fixdir = os.path.join(here, "..", "tests", "fixtures")
    os.makedirs(fixdir, exist_ok=True)
    cases = make_cases()
    draws = {}
    expected = {}
    for name, arr in cases.items():
        lw, ks = psislw(arr)
        draws[name] = arr
        expected[name + "__lw"] = lw
        expected[name + "__k"] = ks
        print(f"{name:15s} k range [{np.min(ks):+.4f}, {np.max(ks):+.4f}]")
    np.savez(os.path.join(fixdir, "psis_draws.npz"), **draws)
    np.savez(os.path.join(fixdir, "psis_expected.npz"), **expected)
    print("fixtures written")


if __name__ == "__main__":
    main()

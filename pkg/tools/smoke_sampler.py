import sys
import time

import numpy as np

sys.path.insert(0, "src")

from irtkit import sampler as sp


def std_normal(u):
    return -0.5 * float(u @ u), -u


# 1. single transition on N(0,1), tiny step
rng = np.random.default_rng(0)
state = (np.array([0.3]), *std_normal(np.array([0.3])))
st_acc = []
for _ in range(50):
    state, st = sp.nuts_transition(std_normal, state, 0.001, np.ones(1), rng)
    st_acc.append(st["accept_stat__"])
print("tiny-step accept:", np.mean(st_acc))
assert np.mean(st_acc) > 0.999

# determinism
c = sp.SamplerControl(chains=2, iter=300, warmup=150, seed=42)
d1 = sp.sample_target(std_normal, 3, c)
d2 = sp.sample_target(std_normal, 3, sp.SamplerControl(chains=2, iter=300, warmup=150, seed=42))
assert np.array_equal(d1.params, d2.params)
print("determinism ok")

# 2. 50-dim standard normal, full schedule
t0 = time.time()
c = sp.SamplerControl(chains=4, iter=2000, warmup=1000, seed=7)
d = sp.sample_target(std_normal, 50, c)
el = time.time() - t0
flat = d.params.reshape(-1, 50)
print(f"50-dim: {el:.1f}s  max|mean|={np.max(np.abs(flat.mean(0))):.4f}  "
      f"var range=({flat.var(0, ddof=1).min():.3f},{flat.var(0, ddof=1).max():.3f})  "
      f"divergences={d.n_divergent()}")
assert np.max(np.abs(flat.mean(0))) < 0.05
assert flat.var(0, ddof=1).min() > 0.9 and flat.var(0, ddof=1).max() < 1.1
assert d.n_divergent() == 0

# 3. correlated 2-dim normal rho=0.9
rho = 0.9
prec = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))


def corr_normal(u):
    g = -prec @ u
    return 0.5 * float(u @ g), g


d3 = sp.sample_target(corr_normal, 2, sp.SamplerControl(chains=4, iter=2000, warmup=1000, seed=11))
f3 = d3.params.reshape(-1, 2)
r_emp = np.corrcoef(f3.T)[0, 1]
print("corr:", r_emp)
assert abs(r_emp - 0.9) < 0.05

# 4. scale separation N(0, diag(100, 0.01))
scales = np.array([100.0, 0.01])


def scaled_normal(u):
    return -0.5 * float(np.sum(u * u / scales)), -u / scales


d4 = sp.sample_target(scaled_normal, 2, sp.SamplerControl(chains=2, iter=1500, warmup=750, seed=3))
f4 = d4.params.reshape(-1, 2)
print("scaled vars:", f4.var(0, ddof=1), "expect ~", scales)
assert abs(f4.var(0, ddof=1)[0] / 100 - 1) < 0.35
assert abs(f4.var(0, ddof=1)[1] / 0.01 - 1) < 0.35

# 5. KS sanity at one seed
from scipy import stats as sps

dk = sp.sample_target(std_normal, 1, sp.SamplerControl(chains=1, iter=1500, warmup=500, seed=5))
ks = sps.kstest(dk.params.reshape(-1), "norm")
print("KS p:", ks.pvalue)
assert ks.pvalue > 0.01

# csv write
import tempfile, os, csv

with tempfile.TemporaryDirectory() as tmp:
    paths = d1.write_csv(tmp)
    with open(paths[0]) as fh:
        rd = csv.reader(fh)
        head = next(rd)
        row = next(rd)
    assert head[0] == "lp__" and head[-6:] == list(sp.STAT_COLUMNS)
    assert len(row) == len(head)
print("ALL SAMPLER SMOKE OK")

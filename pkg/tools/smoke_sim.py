"""Smoke checks for the simulation harness: determinism, reductions,
support constraints, truth naming against real fits, recovery coverage."""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from irtkit import build as bd
from irtkit import data as dt
from irtkit import families as fm
from irtkit import formula as fo
from irtkit import priors as pr
from irtkit import sampler as sm
from irtkit import simulate as si


def tables_equal(a, b):
    if set(a.columns) != set(b.columns) or a.n_rows != b.n_rows:
        return False
    for name in a.columns:
        ca, cb = a.column(name), b.column(name)
        if ca.kind != cb.kind:
            return False
        if not np.array_equal(ca.values, cb.values):
            return False
    return True


def check_basics():
    design = si.SimDesign(n_persons=100, n_items=20, sigma_theta=1.2,
                          sigma_xi=0.8, seed=42)
    t1, truth1 = si.simulate_data(design)
    t2, truth2 = si.simulate_data(design)
    assert tables_equal(t1, t2) and truth1 == truth2
    assert t1.n_rows == 2000
    theta = [truth1[f"r_id[{lab},Intercept]"]
             for lab in sorted({v for v in t1.column("id").values})]
    sd = np.std(theta, ddof=1)
    assert abs(sd - 1.2) < 0.2, sd
    print(f"1PL design: 2000 rows, deterministic, sd(theta)={sd:.3f}: ok")

    d2 = si.SimDesign(n_persons=100, n_items=20, sigma_theta=1.2,
                      sigma_xi=0.8, seed=42, alpha_sd=0.0)
    t3, _ = si.simulate_data(d2)
    assert tables_equal(t1, t3)
    d2b = si.SimDesign(n_persons=100, n_items=20, sigma_theta=1.2,
                       sigma_xi=0.8, seed=42, alpha_sd=0.5)
    t4, truth4 = si.simulate_data(d2b)
    assert not tables_equal(t1, t4)
    assert "sd_item__logalpha_Intercept" in truth4
    print("2PL with alpha_sd=0 reduces to 1PL under the same seed: ok")

    dw = si.SimDesign(n_persons=10, n_items=4, family="wiener", seed=3,
                      intercept=1.0, sigma_theta=0.3, sigma_xi=0.2,
                      dpars={"ndt": 0.3})
    tw, truthw = si.simulate_data(dw)
    times = np.asarray(tw.column("y").values, dtype=float)
    assert (times > 0.3).all()
    assert set(np.unique(tw.column("dec").values)) <= {0, 1}
    assert abs(truthw["b_ndt_Intercept"] - np.log(0.3)) < 1e-12
    print("wiener design: all times above ndt: ok")

    dg = si.SimDesign(n_persons=20, n_items=5, family="cumulative", seed=9,
                      n_cats=4, thresholds=(-1.0, 0.2, 1.4))
    tg, truthg = si.simulate_data(dg)
    ys = np.asarray(tg.column("y").values)
    assert ys.min() >= 1 and ys.max() <= 4
    assert truthg["b_Intercept[2]"] == 0.2
    print("ordinal design: responses in 1..4, threshold truth named: ok")

    try:
        si.SimDesign(n_persons=0, n_items=5).validate()
    except ValueError:
        pass
    try:
        si.SimDesign(n_persons=5, n_items=5, family="cumulative",
                     n_cats=4, thresholds=(0.5, -0.5, 1.0)).validate()
    except ValueError as e:
        assert "ascending" in str(e)
    print("design validation: ok")


def check_perfect_recovery():
    design = si.SimDesign(n_persons=6, n_items=3, seed=5)
    _, truth = si.simulate_data(design)

    class FakeDraws:
        names = list(truth)

        def array(self, name):
            return np.full((2, 5), truth[name])

    rep = si.recovery_report(truth, FakeDraws())
    assert rep.coverage == 1.0
    assert abs(rep.bias()) < 1e-12
    bad = dict(truth)
    bad["nonexistent_param"] = 1.0
    try:
        si.recovery_report(bad, FakeDraws())
        raise AssertionError("should have raised")
    except ValueError as e:
        assert "missing parameters" in str(e)
    print("perfect-fit recovery and name-mismatch error: ok")


def check_fit_roundtrip():
    design = si.SimDesign(n_persons=40, n_items=10, sigma_theta=1.0,
                          sigma_xi=0.7, intercept=-0.2, seed=17)
    table, truth = si.simulate_data(design)
    spec = si.canonical_formula(design)
    mf = fo.parse_model(spec["lines"], nl=spec["nl"])
    fam = fm.family_lookup(spec["family"], spec["links"])
    priors = [pr.parse_prior("student_t(3, 0, 2.5)", "sd")]
    model = bd.build_model(mf, fam, priors, table)
    missing = [n for n in truth if n not in model.names]
    assert not missing, missing[:5]
    ctrl = sm.SamplerControl(chains=2, iter=800, warmup=400, seed=2)
    draws = sm.sample(model, ctrl)
    rep = si.recovery_report(truth, draws)
    items = rep.subset("r_item")
    sds = rep.subset("sd_")
    print(f"roundtrip: item coverage {items.coverage:.0%}, "
          f"sd bias {sds.bias():+.3f}, total {rep.coverage:.0%}")
    assert items.coverage >= 0.8
    assert abs(sds.bias()) < 0.35
    hyp_sd = rep.row("sd_id__Intercept")
    assert abs(hyp_sd[2] - 1.0) < 0.45
    print(str(rep.subset("sd_")))
    print("fit roundtrip on simulated 1PL: ok")


def check_covariate_design():
    design = si.SimDesign(
        n_persons=60, n_items=9, family="exgaussian", seed=23,
        intercept=0.6, sigma_theta=0.15, sigma_xi=0.1,
        dpars={"sigma": 0.25, "beta": 0.2},
        item_covariate={"name": "cond", "levels": ("a", "b", "c"),
                        "effects": {"mu": (0.0, 0.25, 0.5),
                                    "sigma": (0.0, 0.3, 0.6)}})
    table, truth = si.simulate_data(design)
    assert "b_condb" in truth and "b_sigma_condc" in truth
    spec = si.canonical_formula(design)
    assert spec["lines"][0].startswith("y ~ 1 + cond + (1 | id)")
    assert "sigma ~ 1 + cond" in spec["lines"]
    mf = fo.parse_model(spec["lines"])
    model = bd.build_model(mf, fm.family_lookup("exgaussian"), [], table)
    missing = [n for n in truth if n not in model.names]
    assert not missing, missing[:5]
    # balanced cyclic assignment
    cond = table.column("cond")
    counts = {lev: int(np.sum(cond.values == lev)) for lev in cond.levels}
    assert counts["a"] == 60 * 3 and counts["b"] == 60 * 3 and counts["c"] == 60 * 3
    print("exgaussian covariate design builds and names line up: ok")


if __name__ == "__main__":
    check_basics()
    check_perfect_recovery()
    check_covariate_design()
    check_fit_roundtrip()
    print("all simulate smoke checks passed")

"""Compiled model checks: layouts, transforms, the assembled log posterior
and its gradient, and prediction-side bindings."""

import math

import numpy as np
import pytest
from scipy import special as sps
from scipy import stats

import irtkit.autodiff as ad
import irtkit.build as bd
import irtkit.data as dt
import irtkit.priors as pr
import irtkit.simulate as si

from conftest import build_from_lines, compile_design


def table_of(mapping, column_types=None):
    return dt.ResponseTable.from_dict(mapping, column_types)


def crossed_1pl_lines():
    return ["y ~ 1 + (1|id) + (1|item)"]


# layout --------------------------------------------------------------------

def test_crossed_1pl_dimension():
    _, _, model = compile_design(si.SimDesign(n_persons=316, n_items=24, seed=3))
    # intercept + two log sds + 316 person z + 24 item z
    assert model.layout.unconstrained_dim == 343
    assert len(model.unconstrained_names) == 343
    assert len(model.names) == 1 + 2 + 316 + 24


def test_unconstrained_names_for_1pl():
    _, _, model = compile_design(si.SimDesign(n_persons=3, n_items=2, seed=1))
    names = model.unconstrained_names
    assert names[0] == "temp_Intercept"
    assert "log_sd_id__Intercept" in names
    assert "z_id[p1,Intercept]" in names
    assert "z_item[i2,Intercept]" in names


# transforms ----------------------------------------------------------------

def test_sd_transform_at_zero():
    _, _, model = compile_design(si.SimDesign(n_persons=4, n_items=3, seed=2))
    con, logj = bd.transform_params(model.layout, np.zeros(model.layout.unconstrained_dim))
    for block in model.group_blocks:
        assert np.allclose(np.asarray(con[block.sd_name]), 1.0)
    assert float(np.sum(np.asarray(logj))) == 0.0


def test_threshold_transform_is_ordered_shift():
    table = table_of({"y": [1, 2, 3, 1, 2, 3]})
    model = build_from_lines(["y ~ 1"], table, "cumulative")
    blk = next(b for b in model.layout.blocks if b.kind == "thresholds")
    assert model.layout.unconstrained_dim == 2
    u = np.zeros(2)
    con, logj = bd.transform_params(model.layout, u)
    cols = [float(np.sum(c)) for c in con[blk.name]]
    assert cols == [0.0, 1.0]  # second cut = first + exp(0)
    assert float(np.sum(np.asarray(logj))) == 0.0
    u2 = np.array([-0.5, 0.7])
    con2, logj2 = bd.transform_params(model.layout, u2)
    cols2 = [float(np.sum(c)) for c in con2[blk.name]]
    assert cols2[0] == -0.5
    assert cols2[1] == pytest.approx(-0.5 + math.exp(0.7), abs=1e-12)
    assert float(np.sum(np.asarray(logj2))) == pytest.approx(0.7, abs=1e-12)


def correlated_pair_model(n_levels=6):
    labels = [f"g{i:02d}" for i in range(1, n_levels + 1)]
    rng = np.random.default_rng(9)
    table = table_of({"y": rng.normal(size=n_levels).round(3).tolist(),
                      "g": labels})
    return build_from_lines(["y ~ 1 + (1|i|g)", "sigma ~ 1 + (1|i|g)"],
                            table, "gaussian")


def test_cholesky_transform_identity_at_zero():
    model = correlated_pair_model()
    blk = next(b for b in model.layout.blocks if b.kind == "cholcorr")
    con, logj = bd.transform_params(model.layout, np.zeros(model.layout.unconstrained_dim))
    cc = con[blk.name]
    assert float(np.sum(np.asarray(cc["L"][(1, 0)]))) == 0.0
    assert float(np.sum(np.asarray(cc["log_diag"][1]))) == 0.0
    assert float(np.sum(np.asarray(logj))) == 0.0


def test_shared_id_merges_into_correlated_block():
    merged = correlated_pair_model()
    blocks = merged.group_blocks
    assert len(blocks) == 1 and blocks[0].correlated
    assert "cor_g__Intercept__sigma_Intercept" in merged.names

    labels = [f"g{i:02d}" for i in range(1, 7)]
    rng = np.random.default_rng(9)
    table = table_of({"y": rng.normal(size=6).round(3).tolist(), "g": labels})
    split = build_from_lines(["y ~ 1 + (1|g)", "sigma ~ 1 + (1|g)"],
                             table, "gaussian")
    assert len(split.group_blocks) == 2
    assert not any(b.correlated for b in split.group_blocks)
    assert not any(n.startswith("cor_") for n in split.names)
    # the merged layout carries exactly the one extra correlation parameter
    assert merged.layout.unconstrained_dim == split.layout.unconstrained_dim + 1


def test_non_centered_effects_match_target_moments():
    model = correlated_pair_model(n_levels=40)
    layout = model.layout
    block = model.group_blocks[0]
    a_sd, _ = layout.offsets[block.sd_name]
    a_ch, _ = layout.offsets[block.chol_name]
    a_z, b_z = layout.offsets[block.z_name]
    idx1 = [model.names.index(f"r_g[{lev},Intercept]") for lev in block.levels]
    idx2 = [model.names.index(f"r_g[{lev},sigma_Intercept]") for lev in block.levels]
    rng = np.random.default_rng(31)
    r1, r2 = [], []
    for _ in range(1500):
        u = np.zeros(layout.unconstrained_dim)
        u[a_sd] = math.log(0.8)
        u[a_sd + 1] = math.log(1.25)
        u[a_ch] = math.atanh(0.6)
        u[a_z:b_z] = rng.standard_normal(b_z - a_z)
        row = bd.constrained_row(model, u)
        r1.append(row[idx1])
        r2.append(row[idx2])
    r1 = np.concatenate(r1)
    r2 = np.concatenate(r2)
    assert np.std(r1) == pytest.approx(0.8, abs=0.02)
    assert np.std(r2) == pytest.approx(1.25, abs=0.02)
    assert np.corrcoef(r1, r2)[0, 1] == pytest.approx(0.6, abs=0.02)


# posterior values ----------------------------------------------------------

def test_prior_only_single_coefficient():
    table = table_of({"y": [0, 1, 0, 1], "x": [0.5, -1.0, 2.0, 0.0]})
    model = build_from_lines(["y ~ 0 + x"], table, "bernoulli",
                             priors=[pr.parse_prior("normal(0, 1)", "b")],
                             prior_only=True)
    assert model.layout.unconstrained_dim == 1
    value, grad = bd.log_posterior(model, np.zeros(1))
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert grad == pytest.approx([0.0], abs=1e-12)


def test_hand_computed_crossed_logposterior_at_zero():
    table = table_of({"y": [1, 0], "id": ["p1", "p1"], "item": ["a", "b"]})
    model = build_from_lines(crossed_1pl_lines(), table, "bernoulli")
    assert model.layout.unconstrained_dim == 6
    got = bd.log_posterior_value(model, np.zeros(6))
    t = lambda x: stats.t.logpdf(x, 3, 0, 2.5)
    want = (-2 * math.log(2.0)                      # two bernoulli rows at eta 0
            + t(0.0)                                # intercept
            + 2 * (t(1.0) + math.log(2.0))          # half-t at sigma = 1, twice
            + 3 * (-0.5 * math.log(2 * math.pi)))   # three standard normal z
    assert got == pytest.approx(want, abs=1e-10)


def test_prior_only_difference_is_the_likelihood():
    table = table_of({"y": [0, 1, 0, 1, 1], "x": [0.5, -1.0, 2.0, 0.3, -0.7]})
    priors = [pr.parse_prior("normal(0, 1)", "b")]
    full = build_from_lines(["y ~ 0 + x"], table, "bernoulli", priors=priors)
    prior = build_from_lines(["y ~ 0 + x"], table, "bernoulli", priors=priors,
                             prior_only=True)
    for b in (-0.8, 0.0, 1.3):
        u = np.array([b])
        diff = bd.log_posterior_value(full, u) - bd.log_posterior_value(prior, u)
        x = np.array(table.column("x").values, dtype=float)
        y = np.array(table.column("y").values, dtype=float)
        want = float(np.sum(sps.log_expit(np.where(y == 1, 1.0, -1.0) * b * x)))
        assert diff == pytest.approx(want, abs=1e-10)


def test_row_permutation_leaves_value_unchanged():
    rng = np.random.default_rng(12)
    ids = [f"p{i}" for i in range(1, 5) for _ in range(3)]
    items = ["a", "b", "c"] * 4
    y = rng.integers(0, 2, size=12).tolist()
    base = table_of({"y": y, "id": ids, "item": items})
    # shuffle within person blocks so both factors keep their first-appearance
    # level order and the layouts coincide
    order = [0, 1, 2]
    for start in (3, 6, 9):
        order.extend(start + rng.permutation(3))
    perm = table_of({"y": [y[i] for i in order],
                     "id": [ids[i] for i in order],
                     "item": [items[i] for i in order]})
    m1 = build_from_lines(crossed_1pl_lines(), base, "bernoulli")
    m2 = build_from_lines(crossed_1pl_lines(), perm, "bernoulli")
    assert m1.names == m2.names
    u = 0.3 * rng.standard_normal(m1.layout.unconstrained_dim)
    assert bd.log_posterior_value(m1, u) == pytest.approx(
        bd.log_posterior_value(m2, u), abs=1e-12)


# gradient checks on small models of every family ---------------------------

def fd_worst(model, u, step=1e-5):
    value, grad = bd.log_posterior(model, u)
    assert grad is not None, f"non-finite at {u}"
    worst = 0.0
    for i in range(u.size):
        shifted = u.copy()
        shifted[i] += step
        up = bd.log_posterior_value(model, shifted)
        shifted[i] -= 2 * step
        down = bd.log_posterior_value(model, shifted)
        fd = (up - down) / (2 * step)
        denom = max(abs(fd), abs(grad[i]))
        err = abs(fd - grad[i]) if denom < 1e-8 else abs(fd - grad[i]) / denom
        worst = max(worst, err)
    return worst


def small_family_model(name):
    rng = np.random.default_rng(hash(name) % (2**32))
    n = 24
    x = rng.normal(size=n).round(3).tolist()
    g = [f"g{1 + i % 4}" for i in range(n)]
    if name == "bernoulli":
        table = table_of({"y": rng.integers(0, 2, size=n).tolist(), "x": x, "g": g})
        return build_from_lines(["y ~ 1 + x + (1|g)"], table, name)
    if name == "poisson":
        table = table_of({"y": rng.poisson(3.0, size=n).tolist(), "x": x, "g": g})
        return build_from_lines(["y ~ 1 + x + (1|g)"], table, name)
    if name == "categorical":
        table = table_of({"y": rng.integers(1, 4, size=n).tolist(), "x": x})
        return build_from_lines(["y ~ 1 + x"], table, name)
    if name in ("cumulative", "acat"):
        table = table_of({"y": rng.integers(1, 5, size=n).tolist(), "x": x})
        return build_from_lines(["y ~ 1 + x"], table, name)
    if name == "beta":
        table = table_of({"y": rng.uniform(0.1, 0.9, size=n).round(4).tolist(), "x": x})
        return build_from_lines(["y ~ 1 + x"], table, name)
    if name == "gaussian":
        table = table_of({"y": rng.normal(size=n).round(3).tolist(), "x": x})
        return build_from_lines(["y ~ 1 + x"], table, name)
    if name == "exgaussian":
        table = table_of({"y": (0.5 + rng.exponential(0.8, size=n)).round(4).tolist(),
                          "x": x})
        return build_from_lines(["y ~ 1 + x"], table, name)
    if name == "shifted_lognormal":
        table = table_of({"y": (2.0 + rng.lognormal(0, 0.4, size=n)).round(4).tolist(),
                          "x": x})
        return build_from_lines(["y ~ 1 + x"], table, name)
    if name == "wiener":
        table = table_of({"y": (2.0 + rng.exponential(0.5, size=n)).round(4).tolist(),
                          "d": rng.integers(0, 2, size=n).tolist(), "x": x})
        return build_from_lines(["y | dec(d) ~ 1 + x"], table, name)
    raise AssertionError(name)


ALL_FAMILIES = ["bernoulli", "categorical", "cumulative", "acat", "poisson",
                "beta", "gaussian", "exgaussian", "shifted_lognormal", "wiener"]


@pytest.mark.parametrize("name", ALL_FAMILIES)
def test_model_gradient_matches_finite_differences(name):
    model = small_family_model(name)
    dim = model.layout.unconstrained_dim
    ndt_base = np.zeros(dim)
    if "temp_ndt_Intercept" in model.unconstrained_names:
        # keep ndt well below the smallest response time
        ndt_base[model.unconstrained_names.index("temp_ndt_Intercept")] = -1.5
    rng = np.random.default_rng(77)
    for _ in range(10):
        u = ndt_base + 0.1 * rng.standard_normal(dim)
        assert fd_worst(model, u) < 1e-6


# constants and structural errors -------------------------------------------

def test_constant_sd_removes_a_dimension():
    table = table_of({"y": [1, 0, 1, 0, 1, 1],
                      "id": ["p1", "p1", "p2", "p2", "p3", "p3"],
                      "item": ["a", "b"] * 3})
    free = build_from_lines(crossed_1pl_lines(), table, "bernoulli")
    fixed = build_from_lines(
        crossed_1pl_lines(), table, "bernoulli",
        priors=[pr.parse_prior("constant(1)", "sd", group="id")])
    assert fixed.layout.unconstrained_dim == free.layout.unconstrained_dim - 1
    assert "log_sd_id__Intercept" not in fixed.unconstrained_names
    assert "sd_id__Intercept" in fixed.names  # still reported, at its constant
    row = bd.constrained_row(fixed, np.zeros(fixed.layout.unconstrained_dim))
    assert row[fixed.names.index("sd_id__Intercept")] == 1.0


def test_cs_requires_acat():
    table = table_of({"y": [1, 2, 3, 1, 2, 3], "x": [0.1, 0.2, 0.3] * 2})
    with pytest.raises(ValueError, match="adjacent-category"):
        build_from_lines(["y ~ 1 + cs(x)"], table, "cumulative")
    build_from_lines(["y ~ 1 + cs(x)"], table, "acat")  # accepted


def test_wiener_requires_dec():
    table = table_of({"y": [0.8, 0.9, 1.1], "d": [0, 1, 1]})
    with pytest.raises(ValueError, match=r"requires a dec\(\) term"):
        build_from_lines(["y ~ 1"], table, "wiener")
    binary = table_of({"y": [0, 1, 1], "d": [0, 1, 1]})
    with pytest.raises(ValueError, match=r"dec\(\) applies only to the wiener"):
        build_from_lines(["y | dec(d) ~ 1"], binary, "bernoulli")


def test_inspect_listing_is_deterministic():
    _, _, model = compile_design(si.SimDesign(n_persons=5, n_items=4, seed=8))
    _, _, again = compile_design(si.SimDesign(n_persons=5, n_items=4, seed=8))
    text = bd.inspect_listing(model)
    assert text == bd.inspect_listing(model)
    assert text == bd.inspect_listing(again)
    assert "unconstrained dimension: 12" in text
    assert "family: bernoulli" in text


def test_predictor_values_rejects_unseen_level():
    table = table_of({"y": [1, 0, 1, 0], "g": ["a", "a", "b", "b"]})
    model = build_from_lines(["y ~ 1 + (1|g)"], table, "bernoulli")
    draw = {name: 0.0 for name in model.names}
    new = table_of({"y": [1], "g": ["c"]})
    with pytest.raises(ValueError, match="unseen level 'c'"):
        bd.predictor_values(model, draw, table=new)


def test_predictor_values_population_expectation():
    table = table_of({"y": [1, 0, 1, 0], "x": [1.0, 2.0, 3.0, 4.0],
                      "g": ["a", "a", "b", "b"]})
    model = build_from_lines(["y ~ 1 + x + (1|g)"], table, "bernoulli")
    draw = {name: 0.0 for name in model.names}
    draw["b_Intercept"] = 0.5
    draw["b_x"] = 0.25
    draw["r_g[a,Intercept]"] = 10.0  # must vanish under zero_groups
    eta, _ = bd.predictor_values(model, draw, zero_groups=True)
    assert eta["mu"] == pytest.approx(0.5 + 0.25 * np.array([1, 2, 3, 4]), abs=1e-12)

import sys
import numpy as np

sys.path.insert(0, "src")

from irtkit import autodiff as ad
from irtkit import build as bd
from irtkit import data as dt
from irtkit import families as fm
from irtkit import formula as fo
from irtkit import priors as pr


def table_from(cols):
    return dt.ResponseTable.from_dict(cols)


# 1. transform examples
layout = bd.ParameterSpace([bd.ParamBlock("sd.x", "sd", 2)], [])
con, lj = bd.transform_params(layout, np.zeros(2))
assert np.allclose(con["sd.x"], 1.0) and lj == 0.0, (con, lj)

layout = bd.ParameterSpace(
    [bd.ParamBlock("thresholds", "thresholds", 2, {"n_groups": 1, "n_cuts": 2})], [])
con, lj = bd.transform_params(layout, np.zeros(2))
taus = [float(c[0]) for c in con["thresholds"]]
assert taus == [0.0, 1.0] and lj == 0.0, (taus, lj)

layout = bd.ParameterSpace([bd.ParamBlock("chol.g", "cholcorr", 1, {"dim": 2})], [])
con, lj = bd.transform_params(layout, np.zeros(1))
cc = con["chol.g"]
assert float(np.asarray(cc["L"][(1, 0)]).reshape(-1)[0]) == 0.0
assert float(np.asarray(cc["L"][(1, 1)]).reshape(-1)[0]) == 1.0
assert abs(float(np.asarray(lj))) < 1e-15
print("transforms ok")

# 2. toy 1PL bernoulli, small
rng = np.random.default_rng(7)
n_id, n_item = 20, 5
ids = np.repeat([f"p{i:02d}" for i in range(n_id)], n_item)
items = np.tile([f"it{j}" for j in range(n_item)], n_id)
theta = rng.normal(0, 1.2, n_id)
xi = rng.normal(0, 0.8, n_item)
eta = theta[np.repeat(np.arange(n_id), n_item)] + xi[np.tile(np.arange(n_item), n_id)]
y = (rng.random(n_id * n_item) < 1 / (1 + np.exp(-eta))).astype(float)

tbl = table_from({"y": y, "id": ids, "item": items})
mf = fo.parse_model("y ~ 1 + (1 | id) + (1 | item)")
fam = fm.family_lookup("bernoulli")
specs = [pr.parse_prior("normal(0, 3)", "Intercept"),
         pr.parse_prior("student_t(3, 0, 2.5)", "sd")]
model = bd.build_model(mf, fam, specs, tbl)
print("dim:", model.layout.unconstrained_dim)
assert model.layout.unconstrained_dim == 1 + 2 + n_id + n_item

u0 = rng.normal(0, 0.5, model.layout.unconstrained_dim)
val, grad = bd.log_posterior(model, u0)
assert np.isfinite(val) and grad is not None
# finite differences
fd = np.zeros_like(u0)
h = 1e-6
for i in range(len(u0)):
    up = u0.copy(); up[i] += h
    dn = u0.copy(); dn[i] -= h
    fd[i] = (bd.log_posterior_value(model, up) - bd.log_posterior_value(model, dn)) / (2 * h)
rel = np.max(np.abs(fd - grad) / (np.abs(fd) + 1e-8))
print("toy 1PL grad rel err:", rel)
assert rel < 1e-5, rel

# names
print("n constrained names:", len(model.names), "first:", model.names[:3])
assert model.names[0] == "b_Intercept"
assert f"sd_id__Intercept" in model.names and f"sd_item__Intercept" in model.names
assert len(model.unconstrained_names) == model.layout.unconstrained_dim

# constrained_row / predictor_values agreement on training data
row = bd.constrained_row(model, u0)
named = dict(zip(model.names, row))
eta_fam, extras = bd.predictor_values(model, named)
# rebuild eta from the program path
con, _ = bd.transform_params(model.layout, u0)
pv = {}
eta_prog, extras_prog, _ = bd._assemble(model, con, pv)
mu_prog = np.asarray(eta_prog["mu"].value if isinstance(eta_prog["mu"], ad.Var) else eta_prog["mu"])
assert np.allclose(eta_fam["mu"], mu_prog, atol=1e-10), np.max(np.abs(eta_fam["mu"] - mu_prog))
print("reporting equivalence ok")

# 3. sized 1PL: 316 x 24 -> 343
n_id2, n_item2 = 316, 24
ids2 = np.repeat([f"p{i:03d}" for i in range(n_id2)], n_item2)
items2 = np.tile([f"i{j:02d}" for j in range(n_item2)], n_id2)
y2 = rng.integers(0, 2, n_id2 * n_item2).astype(float)
tbl2 = table_from({"r2": y2, "id": ids2, "item": items2})
mf2 = fo.parse_model("r2 ~ 1 + (1 | id) + (1 | item)")
model2 = bd.build_model(mf2, fam, specs, tbl2)
print("1PL sized dim:", model2.layout.unconstrained_dim)
assert model2.layout.unconstrained_dim == 343

# 4. corr_id merging in a 2PL
mf3 = fo.parse_model(
    "y ~ exp(logalpha) * eta\n"
    "eta ~ 0 + (1 |i| item) + (1 | id)\n"
    "logalpha ~ 0 + (1 |i| item)", nl=True)
specs3 = [pr.parse_prior("normal(0, 1)", "sd"),
          pr.parse_prior("lkj(2)", "cor")]
model3 = bd.build_model(mf3, fam, specs3, tbl)
merged = [b for b in model3.group_blocks if b.factor == "item"]
assert len(merged) == 1 and len(merged[0].entry_ids) == 2 and merged[0].correlated
# dim: sd(3) + chol(1) + z_item(2*5) + z_id(20)
print("2PL dim:", model3.layout.unconstrained_dim)
assert model3.layout.unconstrained_dim == 3 + 1 + 10 + 20
u3 = rng.normal(0, 0.3, model3.layout.unconstrained_dim)
val3, grad3 = bd.log_posterior(model3, u3)
fd3 = np.zeros_like(u3)
for i in range(len(u3)):
    up = u3.copy(); up[i] += h
    dn = u3.copy(); dn[i] -= h
    fd3[i] = (bd.log_posterior_value(model3, up) - bd.log_posterior_value(model3, dn)) / (2 * h)
rel3 = np.max(np.abs(fd3 - grad3) / (np.abs(fd3) + 1e-8))
print("2PL grad rel err:", rel3)
assert rel3 < 1e-5, rel3
names3 = model3.names
assert any(n.startswith("cor_item__") for n in names3), names3[:8]

# without |i|: two independent item blocks
mf4 = fo.parse_model(
    "y ~ exp(logalpha) * eta\n"
    "eta ~ 0 + (1 | item) + (1 | id)\n"
    "logalpha ~ 0 + (1 | item)", nl=True)
model4 = bd.build_model(mf4, fam, [pr.parse_prior("normal(0, 1)", "sd")], tbl)
item_blocks = [b for b in model4.group_blocks if b.factor == "item"]
assert len(item_blocks) == 2 and not any(b.correlated for b in item_blocks)
print("merging ok")

# 5. ordinal cumulative with thres(gr=) and acat with cs()
K = 4
yo = rng.integers(1, K + 1, n_id * n_item).astype(float)
tblo = table_from({"y": yo.astype(int), "id": ids, "item": items,
                   "x": rng.normal(0, 1, n_id * n_item)})
# declared integer response for ordinal coding
mfo = fo.parse_model("y | thres(gr = item) ~ 1 + x + (1 | id)")
famo = fm.family_lookup("cumulative")
specso = [pr.parse_prior("normal(0, 3)", "Intercept"),
          pr.parse_prior("normal(0, 1)", "b"),
          pr.parse_prior("student_t(3, 0, 2.5)", "sd")]
modelo = bd.build_model(mfo, famo, specso, tblo)
# dim: thresholds 5*3 + b 1 + sd 1 + z 20
print("ordinal dim:", modelo.layout.unconstrained_dim)
assert modelo.layout.unconstrained_dim == n_item * (K - 1) + 1 + 1 + n_id
uo = rng.normal(0, 0.3, modelo.layout.unconstrained_dim)
valo, grado = bd.log_posterior(modelo, uo)
fdo = np.zeros_like(uo)
for i in range(len(uo)):
    up = uo.copy(); up[i] += h
    dn = uo.copy(); dn[i] -= h
    fdo[i] = (bd.log_posterior_value(modelo, up) - bd.log_posterior_value(modelo, dn)) / (2 * h)
relo = np.max(np.abs(fdo - grado) / (np.abs(fdo) + 1e-8))
print("ordinal grad rel err:", relo)
assert relo < 1e-5, relo
assert modelo.names[0] == f"b_Intercept[{modelo.thr_group.levels[0]},1]"

# acat + cs
mfa = fo.parse_model("y ~ 1 + cs(x) + (1 | id)")
fama = fm.family_lookup("acat")
modela = bd.build_model(mfa, fama, specso, tblo)
ua = rng.normal(0, 0.3, modela.layout.unconstrained_dim)
vala, grada = bd.log_posterior(modela, ua)
fda = np.zeros_like(ua)
for i in range(len(ua)):
    up = ua.copy(); up[i] += h
    dn = ua.copy(); dn[i] -= h
    fda[i] = (bd.log_posterior_value(modela, up) - bd.log_posterior_value(modela, dn)) / (2 * h)
rela = np.max(np.abs(fda - grada) / (np.abs(fda) + 1e-8))
print("acat+cs grad rel err:", rela)
assert rela < 1e-5, rela
assert any("[1]" in n and "b_x" not in n for n in modela.names), modela.names[:8]

# 6. wiener with fixed bias + dec
nw = 60
rt = rng.uniform(0.35, 1.5, nw)
dec = rng.integers(0, 2, nw)
idw = rng.choice([f"s{i}" for i in range(6)], nw)
tblw = table_from({"rt": rt, "resp": dec, "id": idw})
mfw = fo.parse_model("rt | dec(resp) ~ 1 + (1 | id)\nbias = 0.5")
famw = fm.family_lookup("wiener")
specsw = [pr.parse_prior("normal(0, 2)", "Intercept"),
          pr.parse_prior("normal(0, 2)", "Intercept", dpar="bs"),
          pr.parse_prior("normal(-2, 1)", "Intercept", dpar="ndt"),
          pr.parse_prior("student_t(3, 0, 2.5)", "sd")]
modelw = bd.build_model(mfw, famw, specsw, tblw)
print("wiener plans:", [p.key for p in modelw.plans])
uw = rng.normal(0, 0.2, modelw.layout.unconstrained_dim)
uw[modelw.unconstrained_names.index("temp_ndt_Intercept")] = -3.0
valw, gradw = bd.log_posterior(modelw, uw)
assert np.isfinite(valw) and gradw is not None
fdw = np.zeros_like(uw)
for i in range(len(uw)):
    up = uw.copy(); up[i] += h
    dn = uw.copy(); dn[i] -= h
    fdw[i] = (bd.log_posterior_value(modelw, up) - bd.log_posterior_value(modelw, dn)) / (2 * h)
relw = np.max(np.abs(fdw - gradw) / (np.abs(fdw) + 1e-8))
print("wiener grad rel err:", relw)
assert relw < 1e-4, relw

# 7. inspect listing runs
txt = bd.inspect_listing(model)
assert "unconstrained dimension: 28" in txt
print(bd.inspect_listing(modelw))
print("ALL BUILD SMOKE OK")

"""Model assembly: parameter layout, constraint transforms, and the
differentiable log-posterior.

A ModelFormula, a FamilySpec, prior statements, and a long-format table
combine into a CompiledModel holding design matrices, merged group blocks,
and an ordered unconstrained parameter layout. Group effects use the
non-centered form r = D(sigma) L z with z standard normal; terms sharing a
correlation id are merged into one correlated block per grouping factor.

Intercepts are sampled against column-mean-centered design matrices and
uncentered for reporting; ordinal models report thresholds shifted by the
same constant. Evaluation is a pure function of the unconstrained vector,
so concurrent chains can share one CompiledModel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as dt
from . import families as fm
from . import formula as fo
from . import priors as pr

_LOG_2PI = math.log(2.0 * math.pi)


# layout --------------------------------------------------------------------

@dataclass
class ParamBlock:
    name: str
    kind: str  # intercept | coefficients | cs | thresholds | sd | cholcorr | z
    size: int
    meta: dict = field(default_factory=dict)


class ParameterSpace:
    def __init__(self, blocks, targets):
        self.blocks = blocks
        self._targets = list(targets)
        self.offsets = {}
        pos = 0
        for blk in blocks:
            self.offsets[blk.name] = (pos, pos + blk.size)
            pos += blk.size
        self.unconstrained_dim = pos
        self._by_name = {blk.name: blk for blk in blocks}

    def block(self, name):
        return self._by_name[name]

    def has_block(self, name):
        return name in self._by_name

    def prior_targets(self):
        return list(self._targets)


@dataclass
class FormulaPlan:
    key: str  # "" for mu; dpar/nlpar name; "mu2".. for categorical
    role: str  # "mu" | "dpar" | "nlpar"
    link: str
    intercept: bool  # formula requested an intercept
    ordinal_mu: bool  # thresholds replace the intercept
    terms: list
    col_names: tuple
    X: np.ndarray
    means: np.ndarray  # centering offsets (zeros when centering is off)
    cs_terms: list = field(default_factory=list)
    cs_names: tuple = ()
    Xcs: np.ndarray | None = None
    entry_ids: list = field(default_factory=list)
    icpt_constant: float | None = None
    coef_constants: dict = field(default_factory=dict)  # col index -> value
    free_cols: list = field(default_factory=list)
    icpt_target: object = None
    b_targets: list = field(default_factory=list)  # aligned with col_names
    cs_targets: list = field(default_factory=list)

    @property
    def prefix(self):
        return "" if self.key == "" else f"{self.key}_"

    @property
    def has_icpt_param(self):
        return self.intercept and not self.ordinal_mu and self.icpt_constant is None


@dataclass
class GroupEntry:
    factor: str
    formula_key: str
    base_coef: str  # name without dpar/nlpar prefix, for prior matching
    out_coef: str  # prefixed name used in sd_/cor_/r_ output
    zcol: np.ndarray
    target: object = None
    sd_constant: float | None = None


@dataclass
class GroupBlock:
    factor: str
    tag: str  # unique label among blocks
    n_levels: int
    levels: tuple
    codes: np.ndarray
    entry_ids: list
    corr_id: str | None
    correlated: bool = False
    cor_target: object = None

    @property
    def sd_name(self):
        return f"sd.{self.tag}"

    @property
    def chol_name(self):
        return f"chol.{self.tag}"

    @property
    def z_name(self):
        return f"z.{self.tag}"


@dataclass
class CompiledModel:
    family: object
    mf: object
    table: object
    response: object  # CodedResponse
    dec: np.ndarray | None
    plans: list
    plan_index: dict
    group_entries: list
    group_blocks: list
    layout: ParameterSpace
    resolved: object
    prior_only: bool
    thr_group: object | None  # GroupIndex when thres(gr=) is used
    thr_codes: np.ndarray | None
    n_thr_groups: int
    factor_levels: dict
    fixed_dpars: dict
    names: list  # constrained output columns, reporting order
    unconstrained_names: list
    thr_target: object = None

    @property
    def n_obs(self):
        return self.table.n_rows


def _prefixed(key, coef):
    return coef if key == "" else f"{key}_{coef}"


# build ---------------------------------------------------------------------

def build_model(mf, fam, prior_specs, table, prior_only=False):
    resp_col = table.column(mf.response.name)
    coded = fm.validate_response(fam, resp_col)
    if coded.n_cats is not None:
        fam = fam.with_categories(coded.n_cats)

    dec = None
    thr_factor = None
    for call in mf.response.addition:
        if call.func == "dec":
            dec = fm.validate_decision(table.column(call.args[0].name))
        elif call.func == "thres":
            thr_factor = dict(call.kwargs)["gr"].name
    if fam.name == "wiener" and dec is None:
        raise ValueError("the wiener family requires a dec() term on the response")
    if dec is not None and fam.name != "wiener":
        raise ValueError("dec() applies only to the wiener family")
    if thr_factor is not None and fam.response_kind != "ordinal":
        raise ValueError("thres(gr=) applies only to ordinal families")

    family_dpars = fam.dpar_names()
    fixed = dict(mf.fixed_dpars)
    for name, value in fixed.items():
        if name not in family_dpars or name == "mu":
            raise ValueError(
                f"cannot fix '{name}'; family {fam.name} has parameters {family_dpars[1:]}")
        _check_fixed_value(fam.dpar(name), value)
    if fam.name in ("cumulative", "acat") and "disc" not in fixed and "disc" not in mf.dpar_formulas:
        fixed["disc"] = 1.0  # discrimination pinned unless modeled

    nl_symbols = set()
    if mf.nonlinear:
        nl_symbols = set(fo._free_symbols(mf.rhs))
        for expr in mf.nlf_defs.values():
            nl_symbols |= set(fo._free_symbols(expr))
    for name in mf.dpar_formulas:
        if name == "mu":
            raise ValueError("the main formula already defines mu")
        known = name in family_dpars or (mf.nonlinear and name in nl_symbols)
        if fam.name == "categorical" and name in [f"mu{c}" for c in range(2, (fam.n_cats or 1) + 1)]:
            known = True
        if not known:
            raise ValueError(
                f"'{name}' is neither a parameter of family {fam.name} nor used "
                "in the non-linear formula")

    if fam.name == "bernoulli" and fam.dpar("mu").link == "identity" and not mf.nonlinear:
        raise ValueError(
            "identity link for bernoulli needs a non-linear formula that maps "
            "to probabilities itself")

    builder = _Builder(mf, fam, table, coded, fixed)
    builder.plan_formulas()
    builder.build_thresholds(thr_factor)
    targets = builder.collect_targets()
    resolved = pr.resolve_priors(prior_specs, targets)
    builder.apply_constants(resolved)
    layout = builder.build_layout(targets)

    model = CompiledModel(
        family=fam, mf=mf, table=table, response=coded, dec=dec,
        plans=builder.plans, plan_index={p.key: p for p in builder.plans},
        group_entries=builder.entries, group_blocks=builder.blocks,
        layout=layout, resolved=resolved, prior_only=prior_only,
        thr_group=builder.thr_group, thr_codes=builder.thr_codes,
        n_thr_groups=builder.n_thr_groups,
        factor_levels=builder.factor_levels, fixed_dpars=fixed,
        names=[], unconstrained_names=[], thr_target=builder.thr_target)
    model.names = _constrained_names(model)
    model.unconstrained_names = _unconstrained_names(model)
    return model


def _check_fixed_value(dpar, value):
    if dpar.bound == "positive" and value <= 0:
        raise ValueError(f"fixed value for '{dpar.name}' must be positive")
    if dpar.bound == "unit" and not 0 < value < 1:
        raise ValueError(f"fixed value for '{dpar.name}' must lie in (0, 1)")


class _Builder:
    def __init__(self, mf, fam, table, coded, fixed):
        self.mf = mf
        self.fam = fam
        self.table = table
        self.coded = coded
        self.fixed = fixed
        self.plans = []
        self.entries = []
        self.blocks = []
        self._merge_index = {}  # (factor, corr_id) -> block position
        self._gi_cache = {}
        self.factor_levels = {}
        self.thr_group = None
        self.thr_codes = None
        self.n_thr_groups = 0
        self.thr_target = None

    def group_index(self, factor):
        if factor not in self._gi_cache:
            gi = dt.build_group_index(self.table, factor)
            self._gi_cache[factor] = gi
            self.factor_levels[factor] = gi.levels
        return self._gi_cache[factor]

    def _record_factors(self, terms):
        for term in terms:
            for var in term:
                col = self.table.column(var)
                if col.kind == "factor":
                    self.factor_levels[var] = col.levels

    def plan_formulas(self):
        mf, fam = self.mf, self.fam
        if mf.nonlinear:
            nlpar_names = [n for n in mf.dpar_formulas if n not in fam.dpar_names()]
            for name in nlpar_names:
                tl = fo.expand_terms(mf.dpar_formulas[name])
                self._add_plan(name, "nlpar", "identity", tl)
        elif fam.name == "categorical":
            main_tl = fo.expand_terms(fo.FormulaAST(None, mf.rhs))
            # after category expansion the family carries mu2..muC, all with
            # the shared logit link of the original mu slot
            link = fam.dpars[0].link
            for c in range(2, (fam.n_cats or 2) + 1):
                key = f"mu{c}"
                tl = (fo.expand_terms(mf.dpar_formulas[key])
                      if key in mf.dpar_formulas else main_tl)
                self._add_plan(key, "mu", link, tl)
        else:
            tl = fo.expand_terms(fo.FormulaAST(None, mf.rhs))
            self._add_plan("", "mu", fam.dpar("mu").link, tl)
        for dpar in fam.dpars[1:]:
            if fam.name == "categorical":
                break
            if dpar.name in self.fixed:
                continue
            if dpar.name in mf.dpar_formulas:
                tl = fo.expand_terms(mf.dpar_formulas[dpar.name])
            else:
                tl = fo.TermList()  # free parameter: intercept-only on the link scale
            self._add_plan(dpar.name, "dpar", dpar.link, tl)

    def _add_plan(self, key, role, link, tl):
        fam, table = self.fam, self.table
        ordinal_mu = role == "mu" and fam.response_kind == "ordinal"
        self._record_factors(tl.population_terms)
        X = dt.build_design_matrix(tl.population_terms, table, tl.intercept)
        center = tl.intercept and X.values.shape[1] > 0
        means = X.values.mean(axis=0) if center else np.zeros(X.values.shape[1])
        plan = FormulaPlan(
            key=key, role=role, link=link, intercept=tl.intercept,
            ordinal_mu=ordinal_mu, terms=list(tl.population_terms),
            col_names=X.col_names, X=X.values, means=means)
        if tl.cs_terms:
            if fam.name == "cumulative":
                raise ValueError(
                    "cs() terms are not identified under the cumulative family; "
                    "use the adjacent-category family instead")
            if fam.name != "acat" or role != "mu":
                raise ValueError("cs() terms require the adjacent-category family")
            self._record_factors(tl.cs_terms)
            Xcs = dt.build_design_matrix(tl.cs_terms, table, True)
            plan.cs_terms = list(tl.cs_terms)
            plan.cs_names = Xcs.col_names
            plan.Xcs = Xcs.values
        for gt in tl.group_terms:
            self._add_group_term(plan, gt)
        self.plans.append(plan)

    def _add_group_term(self, plan, gt):
        gi = self.group_index(gt.factor)
        self._record_factors(gt.terms)
        cols = []
        if gt.intercept:
            cols.append(("Intercept", np.ones(self.table.n_rows)))
        if gt.terms:
            Z = dt.build_design_matrix(gt.terms, self.table, gt.intercept)
            cols.extend(zip(Z.col_names, Z.values.T))
        if not cols:
            raise ValueError(f"empty group term on factor '{gt.factor}'")
        if gt.corr_id is not None:
            merge_key = (gt.factor, gt.corr_id)
            if merge_key in self._merge_index:
                block = self.blocks[self._merge_index[merge_key]]
            else:
                block = self._new_block(gt.factor, gi, gt.corr_id)
                self._merge_index[merge_key] = len(self.blocks) - 1
        else:
            block = self._new_block(gt.factor, gi, None)
        for base, zvals in cols:
            entry = GroupEntry(
                factor=gt.factor, formula_key=plan.key, base_coef=base,
                out_coef=_prefixed(plan.key, base), zcol=np.asarray(zvals, dtype=float))
            eid = len(self.entries)
            self.entries.append(entry)
            block.entry_ids.append(eid)
            plan.entry_ids.append(eid)

    def _new_block(self, factor, gi, corr_id):
        n_for_factor = sum(1 for b in self.blocks if b.factor == factor)
        tag = factor if n_for_factor == 0 else f"{factor}.{n_for_factor + 1}"
        block = GroupBlock(
            factor=factor, tag=tag, n_levels=gi.n_levels, levels=gi.levels,
            codes=gi.codes.copy(), entry_ids=[], corr_id=corr_id)
        self.blocks.append(block)
        return block

    def build_thresholds(self, thr_factor):
        if self.fam.response_kind != "ordinal":
            return
        if thr_factor is not None:
            self.thr_group = self.group_index(thr_factor)
            self.thr_codes = self.thr_group.codes.copy()
            self.n_thr_groups = self.thr_group.n_levels
        else:
            self.thr_codes = np.zeros(self.table.n_rows, dtype=int)
            self.n_thr_groups = 1

    def collect_targets(self):
        targets = []
        for plan in self.plans:
            dq = plan.key if plan.role in ("mu", "dpar") and plan.key else ""
            nq = plan.key if plan.role == "nlpar" else ""
            if plan.ordinal_mu:
                self.thr_target = pr.PriorTarget(
                    "Intercept", size=self.n_thr_groups * (self.coded.n_cats - 1))
                targets.append(self.thr_target)
            elif plan.intercept:
                plan.icpt_target = pr.PriorTarget("Intercept", dpar=dq, nlpar=nq)
                targets.append(plan.icpt_target)
            for coef in plan.col_names:
                t = pr.PriorTarget("b", dpar=dq, nlpar=nq, coef=coef)
                plan.b_targets.append(t)
                targets.append(t)
            for csname in plan.cs_names:
                t = pr.PriorTarget("b", dpar=dq, nlpar=nq, coef=csname,
                                   size=self.coded.n_cats - 1)
                plan.cs_targets.append(t)
                targets.append(t)
        for block in self.blocks:
            block.correlated = len(block.entry_ids) >= 2
            single_key = {self.entries[e].formula_key for e in block.entry_ids}
            key = single_key.pop() if len(single_key) == 1 else None
            for eid in block.entry_ids:
                e = self.entries[eid]
                plan = next(p for p in self.plans if p.key == e.formula_key)
                dq = e.formula_key if plan.role in ("mu", "dpar") and e.formula_key else ""
                nq = e.formula_key if plan.role == "nlpar" else ""
                e.target = pr.PriorTarget("sd", group=block.factor, dpar=dq,
                                          nlpar=nq, coef=e.base_coef)
                targets.append(e.target)
            if block.correlated:
                plan = next((p for p in self.plans if p.key == key), None) if key is not None else None
                dq = key if plan is not None and plan.role in ("mu", "dpar") and key else ""
                nq = key if plan is not None and plan.role == "nlpar" else ""
                block.cor_target = pr.PriorTarget(
                    "cor", group=block.factor, dpar=dq, nlpar=nq,
                    coef=block.corr_id or "", size=len(block.entry_ids))
                targets.append(block.cor_target)
        return targets

    def apply_constants(self, resolved):
        for plan in self.plans:
            if plan.icpt_target in resolved.constants:
                plan.icpt_constant = resolved.constants[plan.icpt_target]
                plan.means = np.zeros_like(plan.means)  # keep the fixed value literal
            for i, t in enumerate(plan.b_targets):
                if t in resolved.constants:
                    plan.coef_constants[i] = resolved.constants[t]
            plan.free_cols = [i for i in range(len(plan.col_names))
                              if i not in plan.coef_constants]
            for t in plan.cs_targets:
                if t in resolved.constants:
                    raise ValueError("constant() is not supported on cs() coefficients")
        if self.thr_target is not None and self.thr_target in resolved.constants:
            raise ValueError("constant() cannot fix ordered thresholds")
        for e in self.entries:
            if e.target in resolved.constants:
                value = resolved.constants[e.target]
                if value < 0:
                    raise ValueError(f"constant sd for {e.out_coef} must be nonnegative")
                e.sd_constant = value

    def build_layout(self, targets):
        blocks = []
        C = self.coded.n_cats or 0
        for plan in self.plans:
            key = plan.key or "mu"
            if plan.ordinal_mu:
                blocks.append(ParamBlock(
                    "thresholds", "thresholds", self.n_thr_groups * (C - 1),
                    {"n_groups": self.n_thr_groups, "n_cuts": C - 1}))
            elif plan.has_icpt_param:
                blocks.append(ParamBlock(f"icpt.{key}", "intercept", 1))
            if plan.free_cols:
                blocks.append(ParamBlock(f"b.{key}", "coefficients", len(plan.free_cols)))
            if plan.cs_names:
                blocks.append(ParamBlock(
                    f"cs.{key}", "cs", len(plan.cs_names) * (C - 1),
                    {"n_cols": len(plan.cs_names), "n_cuts": C - 1}))
        for block in self.blocks:
            d = len(block.entry_ids)
            free_sds = sum(1 for e in block.entry_ids
                           if self.entries[e].sd_constant is None)
            if free_sds:
                blocks.append(ParamBlock(block.sd_name, "sd", free_sds))
            if block.correlated:
                blocks.append(ParamBlock(
                    block.chol_name, "cholcorr", d * (d - 1) // 2, {"dim": d}))
            blocks.append(ParamBlock(
                block.z_name, "z", d * block.n_levels,
                {"dim": d, "n_levels": block.n_levels}))
        return ParameterSpace(blocks, targets)


# transforms ----------------------------------------------------------------

def transform_params(layout, u):
    """Map the unconstrained vector to per-block constrained values plus the
    log absolute Jacobian determinant. Works on plain arrays and tape
    variables alike."""
    n = len(u.value) if isinstance(u, ad.Var) else len(u)
    if n != layout.unconstrained_dim:
        raise ValueError(f"expected vector of length {layout.unconstrained_dim}, got {n}")
    out = {}
    logj = 0.0
    for blk in layout.blocks:
        a, b = layout.offsets[blk.name]
        seg = ad.vslice(u, a, b)
        if blk.kind in ("intercept", "coefficients", "cs"):
            out[blk.name] = seg
        elif blk.kind == "sd":
            out[blk.name] = ad.exp(seg)
            logj = logj + ad.vsum(seg)
        elif blk.kind == "thresholds":
            G = blk.meta["n_groups"]
            ncuts = blk.meta["n_cuts"]
            cols = [ad.vslice(seg, 0, G)]
            for c in range(1, ncuts):
                step = ad.exp(ad.vslice(seg, c * G, (c + 1) * G))
                cols.append(cols[-1] + step)
            if ncuts > 1:
                logj = logj + ad.vsum(ad.vslice(seg, G, ncuts * G))
            out[blk.name] = cols
        elif blk.kind == "cholcorr":
            d = blk.meta["dim"]
            L = {(0, 0): 1.0}
            log_diag = [0.0]
            idx = 0
            for j in range(1, d):
                rem = 1.0
                for k in range(j):
                    ujk = ad.vslice(seg, idx, idx + 1)
                    idx += 1
                    zjk = ad.tanh(ujk)
                    Ljk = zjk * ad.sqrt(rem) if not isinstance(rem, float) else zjk * math.sqrt(rem)
                    L[(j, k)] = Ljk
                    half_log_rem = 0.5 * (ad.log(rem) if not isinstance(rem, float)
                                          else math.log(rem))
                    logj = logj + ad.vsum(ad.log1p(-(zjk * zjk))) + _scalar(half_log_rem)
                    rem = rem - Ljk * Ljk
                L[(j, j)] = ad.sqrt(rem)
                log_diag.append(0.5 * ad.log(rem))
            out[blk.name] = {"L": L, "log_diag": log_diag, "dim": d}
        elif blk.kind == "z":
            d = blk.meta["dim"]
            G = blk.meta["n_levels"]
            out[blk.name] = [ad.vslice(seg, k * G, (k + 1) * G) for k in range(d)]
        else:
            raise ValueError(f"unknown block kind '{blk.kind}'")
    return out, logj


def _scalar(x):
    if isinstance(x, ad.Var):
        return ad.vsum(x)
    return float(np.sum(x))


# evaluation ----------------------------------------------------------------

def _full_b(plan, con):
    """Per-column coefficient handles including constants. Returns a list
    aligned with plan.col_names."""
    out = [None] * len(plan.col_names)
    for i, v in plan.coef_constants.items():
        out[i] = v
    if plan.free_cols:
        bfree = con[f"b.{plan.key or 'mu'}"]
        for pos, i in enumerate(plan.free_cols):
            out[i] = ad.vslice(bfree, pos, pos + 1)
    return out


def _linear_predictor(model, plan, con, r_of, prior_values):
    n = model.n_obs
    eta = None

    def add(x):
        nonlocal eta
        eta = x if eta is None else eta + x

    if plan.has_icpt_param:
        icpt = con[f"icpt.{plan.key or 'mu'}"]
        if plan.icpt_target is not None:
            prior_values[plan.icpt_target] = icpt
        add(icpt)
    elif plan.icpt_constant is not None:
        add(plan.icpt_constant)

    if plan.col_names:
        bcols = _full_b(plan, con)
        for i, t in enumerate(plan.b_targets):
            if i in plan.free_cols:
                prior_values[t] = bcols[i]
        Xc = plan.X - plan.means  # centered against training means
        if not plan.coef_constants and plan.free_cols:
            add(ad.matvec(Xc, con[f"b.{plan.key or 'mu'}"]))
        else:
            for i, b in enumerate(bcols):
                add(Xc[:, i] * b)

    for eid in plan.entry_ids:
        entry = model.group_entries[eid]
        block = next(b for b in model.group_blocks if eid in b.entry_ids)
        contrib = ad.gather(r_of[eid], block.codes)
        if not np.all(entry.zcol == 1.0):
            contrib = contrib * entry.zcol
        add(contrib)

    if eta is None:
        return np.zeros(n)
    return eta


def _group_effect_rows(model, con, prior_values):
    """Per-entry effect vectors over levels, plus the z density."""
    r_of = {}
    z_logp = 0.0
    for block in model.group_blocks:
        zrows = con[block.z_name]
        G = block.n_levels
        d = len(block.entry_ids)
        for zr in zrows:
            z_logp = z_logp + (-0.5) * ad.vsum(zr * zr)
        z_logp = z_logp - 0.5 * d * G * _LOG_2PI
        sds = []
        pos = 0
        for eid in block.entry_ids:
            entry = model.group_entries[eid]
            if entry.sd_constant is not None:
                sds.append(entry.sd_constant)
            else:
                s = ad.vslice(con[block.sd_name], pos, pos + 1)
                pos += 1
                prior_values[entry.target] = s
                sds.append(s)
        if block.correlated:
            cc = con[block.chol_name]
            prior_values[block.cor_target] = cc["log_diag"]
            for j, eid in enumerate(block.entry_ids):
                acc = None
                for k in range(j + 1):
                    Ljk = cc["L"][(j, k)]
                    term = zrows[k] if isinstance(Ljk, float) and Ljk == 1.0 else zrows[k] * Ljk
                    acc = term if acc is None else acc + term
                r_of[eid] = sds[j] * acc
        else:
            for j, eid in enumerate(block.entry_ids):
                r_of[eid] = sds[j] * zrows[j]
    return r_of, z_logp


def _eval_expr(node, env):
    if isinstance(node, fo.Num):
        return node.value
    if isinstance(node, fo.Sym):
        return env[node.name]
    if isinstance(node, fo.Call):
        arg = _eval_expr(node.args[0], env)
        if node.func == "exp":
            return ad.exp(arg)
        if node.func == "log":
            return ad.log(arg)
        if node.func == "inv_logit":
            return ad.sigmoid(arg)
        raise ValueError(f"unknown call '{node.func}' in non-linear expression")
    if isinstance(node, fo.BinOp):
        left = _eval_expr(node.left, env)
        right = _eval_expr(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return left / right
        if node.op == "^":
            return left ** right
    raise ValueError(f"cannot evaluate expression node {node!r}")


def _nl_env(model, etas):
    env = {}
    for sym in fo._free_symbols(model.mf.rhs):
        if sym in model.plan_index:
            continue
        if sym in model.mf.nlf_defs:
            continue
        col = model.table.column(sym)
        if col.kind == "factor":
            raise ValueError(f"factor column '{sym}' cannot enter a non-linear expression")
        env[sym] = np.asarray(col.values, dtype=float)
    for expr in model.mf.nlf_defs.values():
        for sym in fo._free_symbols(expr):
            if sym in model.plan_index or sym in model.mf.nlf_defs or sym in env:
                continue
            col = model.table.column(sym)
            if col.kind == "factor":
                raise ValueError(f"factor column '{sym}' cannot enter a non-linear expression")
            env[sym] = np.asarray(col.values, dtype=float)
    for key, val in etas.items():
        env[key] = val
    for name, expr in model.mf.nlf_defs.items():
        env[name] = _eval_expr(expr, env)
    return env


def _cs_columns(model, plan, con):
    """Per-category additions from cs() terms: C-1 observation vectors."""
    ncuts = model.response.n_cats - 1
    seg = con[f"cs.{plan.key or 'mu'}"]
    cols = []
    for c in range(ncuts):
        acc = None
        for j in range(len(plan.cs_names)):
            b = ad.vslice(seg, j * ncuts + c, j * ncuts + c + 1)
            term = plan.Xcs[:, j] * b
            acc = term if acc is None else acc + term
        cols.append(acc)
    return cols


def _assemble(model, con, prior_values):
    """Family-ready link-scale predictors and extras from block values."""
    r_of, z_logp = _group_effect_rows(model, con, prior_values)
    etas = {}
    for plan in model.plans:
        etas[plan.key] = _linear_predictor(model, plan, con, r_of, prior_values)

    fam = model.family
    eta_fam = {}
    extras = {}
    if model.mf.nonlinear:
        env = _nl_env(model, etas)
        eta_fam["mu"] = _eval_expr(model.mf.rhs, env)
    elif fam.name == "categorical":
        for c in range(2, fam.n_cats + 1):
            eta_fam[f"mu{c}"] = etas[f"mu{c}"]
        extras["n_cats"] = fam.n_cats
    else:
        eta_fam["mu"] = etas[""]
    for dpar in fam.dpars[1:]:
        if fam.name == "categorical":
            break
        name = dpar.name
        if name in model.fixed_dpars:
            value = model.fixed_dpars[name]
            if name == "disc":
                if value != 1.0:
                    extras["disc"] = value
            elif name == "bias":
                extras["bias_fixed"] = value
            else:
                eta_fam[name] = float(fm.LINKS[dpar.link].forward(value))
        else:
            eta_fam[name] = etas[name]
    if fam.response_kind == "ordinal":
        thr_cols = con["thresholds"]
        if prior_values is not None and model.thr_target is not None:
            prior_values[model.thr_target] = thr_cols
        extras["tau_cols"] = [ad.gather(col, model.thr_codes) for col in thr_cols]
    mu_plan = model.plan_index.get("")
    if mu_plan is not None and mu_plan.cs_names:
        extras["cs_cols"] = _cs_columns(model, mu_plan, con)
        for t, j in zip(mu_plan.cs_targets, range(len(mu_plan.cs_names))):
            ncuts = model.response.n_cats - 1
            seg = con[f"cs.{mu_plan.key or 'mu'}"]
            prior_values[t] = [ad.vslice(seg, j * ncuts + c, j * ncuts + c + 1)
                               for c in range(ncuts)]
    if model.dec is not None:
        extras["dec"] = model.dec
    return eta_fam, extras, z_logp


def _program(model, u):
    con, logj = transform_params(model.layout, u)
    prior_values = {}
    eta_fam, extras, z_logp = _assemble(model, con, prior_values)
    total = logj + z_logp + pr.log_prior(model.resolved, prior_values)
    if not model.prior_only:
        ll = fm.log_likelihood_vec(model.family, eta_fam, model.response.values, extras)
        total = total + ad.vsum(ll)
    if isinstance(total, ad.Var):
        return total if total.shape == () else ad.vsum(total)
    return float(np.sum(total))


def log_posterior(model, u):
    """Log posterior density and its gradient at an unconstrained point.

    Returns (value, gradient); the gradient is None when the value or any
    gradient entry is non-finite. Overflow at extreme points surfaces as a
    flagged non-finite value, so the numpy warnings are suppressed here."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return ad.evaluate_with_gradient(
            lambda v: _program(model, v), np.asarray(u, dtype=float))


def log_posterior_value(model, u):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return ad.evaluate(lambda v: _program(model, v), np.asarray(u, dtype=float))


# reporting -----------------------------------------------------------------

def _np_value(x):
    if isinstance(x, ad.Var):
        return np.asarray(x.value)
    return np.asarray(x)


def _constrained_names(model):
    names = []
    C = model.response.n_cats or 0
    for plan in model.plans:
        if plan.ordinal_mu:
            if model.thr_group is not None:
                for level in model.thr_group.levels:
                    for c in range(1, C):
                        names.append(f"b_Intercept[{level},{c}]")
            else:
                for c in range(1, C):
                    names.append(f"b_Intercept[{c}]")
        elif plan.intercept:
            names.append(f"b_{plan.prefix}Intercept")
        for coef in plan.col_names:
            names.append(f"b_{plan.prefix}{coef}")
        for csname in plan.cs_names:
            for c in range(1, C):
                names.append(f"b_{plan.prefix}{csname}[{c}]")
    for block in model.group_blocks:
        for eid in block.entry_ids:
            names.append(f"sd_{block.factor}__{model.group_entries[eid].out_coef}")
    for block in model.group_blocks:
        if block.correlated:
            coefs = [model.group_entries[e].out_coef for e in block.entry_ids]
            for k in range(1, len(coefs)):
                for j in range(k):
                    names.append(f"cor_{block.factor}__{coefs[j]}__{coefs[k]}")
    for block in model.group_blocks:
        coefs = [model.group_entries[e].out_coef for e in block.entry_ids]
        for level in block.levels:
            for coef in coefs:
                names.append(f"r_{block.factor}[{level},{coef}]")
    return names


def constrained_row(model, u):
    """One draw's reported values, ordered as in model.names."""
    con, _ = transform_params(model.layout, np.asarray(u, dtype=float))
    out = []
    C = model.response.n_cats or 0
    for plan in model.plans:
        bcols = _full_b(plan, con)
        bvals = np.array([float(_np_value(b)) for b in bcols]) if bcols else np.zeros(0)
        shift = float(plan.means @ bvals) if len(bvals) else 0.0
        if plan.ordinal_mu:
            cols = [_np_value(c) for c in con["thresholds"]]
            G = model.n_thr_groups
            for g in range(G):
                for c in range(C - 1):
                    out.append(cols[c][g] + shift)
        elif plan.has_icpt_param:
            out.append(float(_np_value(con[f"icpt.{plan.key or 'mu'}"])[0]) - shift)
        elif plan.intercept:
            out.append(plan.icpt_constant)
        out.extend(bvals)
        if plan.cs_names:
            seg = _np_value(con[f"cs.{plan.key or 'mu'}"])
            out.extend(seg)  # layout order matches the naming loop
    for block in model.group_blocks:
        pos = 0
        for eid in block.entry_ids:
            e = model.group_entries[eid]
            if e.sd_constant is not None:
                out.append(e.sd_constant)
            else:
                out.append(float(_np_value(con[block.sd_name])[pos]))
                pos += 1
    for block in model.group_blocks:
        if block.correlated:
            d = len(block.entry_ids)
            L = _chol_matrix(con[block.chol_name])
            omega = L @ L.T
            for k in range(1, d):
                for j in range(k):
                    out.append(omega[j, k])
    for block in model.group_blocks:
        rows = _r_rows_np(model, block, con)
        for g in range(block.n_levels):
            for row in rows:
                out.append(row[g])
    return np.asarray(out, dtype=float)


def _chol_matrix(cc):
    d = cc["dim"]
    L = np.zeros((d, d))
    for (j, k), v in cc["L"].items():
        L[j, k] = float(np.sum(_np_value(v)))
    return L


def _r_rows_np(model, block, con):
    zrows = [_np_value(z) for z in con[block.z_name]]
    sds = []
    pos = 0
    for eid in block.entry_ids:
        e = model.group_entries[eid]
        if e.sd_constant is not None:
            sds.append(e.sd_constant)
        else:
            sds.append(float(_np_value(con[block.sd_name])[pos]))
            pos += 1
    rows = []
    if block.correlated:
        L = _chol_matrix(con[block.chol_name])
        for j in range(len(block.entry_ids)):
            acc = np.zeros_like(zrows[0])
            for k in range(j + 1):
                acc = acc + L[j, k] * zrows[k]
            rows.append(sds[j] * acc)
    else:
        for j in range(len(block.entry_ids)):
            rows.append(sds[j] * zrows[j])
    return rows


def _unconstrained_names(model):
    names = []
    for blk in model.layout.blocks:
        kind = blk.kind
        if kind == "intercept":
            key = blk.name.split(".", 1)[1]
            names.append("temp_Intercept" if key == "mu" else f"temp_{key}_Intercept")
        elif kind == "coefficients":
            key = blk.name.split(".", 1)[1]
            plan = model.plan_index.get("" if key == "mu" else key)
            for i in plan.free_cols:
                names.append(f"b_{plan.prefix}{plan.col_names[i]}")
        elif kind == "cs":
            key = blk.name.split(".", 1)[1]
            plan = model.plan_index.get("" if key == "mu" else key)
            ncuts = blk.meta["n_cuts"]
            for csname in plan.cs_names:
                for c in range(1, ncuts + 1):
                    names.append(f"b_{plan.prefix}{csname}[{c}]")
        elif kind == "thresholds":
            G = blk.meta["n_groups"]
            for c in range(1, blk.meta["n_cuts"] + 1):
                for g in range(G):
                    label = model.thr_group.levels[g] if model.thr_group is not None else g + 1
                    names.append(f"temp_Intercept[{label},{c}]")
        elif kind == "sd":
            block = next(b for b in model.group_blocks if b.sd_name == blk.name)
            for eid in block.entry_ids:
                e = model.group_entries[eid]
                if e.sd_constant is None:
                    names.append(f"log_sd_{block.tag}__{e.out_coef}")
        elif kind == "cholcorr":
            block = next(b for b in model.group_blocks if b.chol_name == blk.name)
            d = blk.meta["dim"]
            for j in range(1, d):
                for k in range(j):
                    names.append(f"chol_{block.tag}[{j + 1},{k + 1}]")
        elif kind == "z":
            block = next(b for b in model.group_blocks if b.z_name == blk.name)
            for eid in block.entry_ids:
                e = model.group_entries[eid]
                for level in block.levels:
                    names.append(f"z_{block.tag}[{level},{e.out_coef}]")
    return names


# prediction-side evaluation ------------------------------------------------

def _bindings(model, table, zero_groups=False):
    """Design matrices and index vectors for a table, reusing training
    factor levels. `table=None` means the training data."""
    if table is None:
        X = {p.key: p.X for p in model.plans}
        Xcs = {p.key: p.Xcs for p in model.plans if p.Xcs is not None}
        codes = {b.tag: b.codes for b in model.group_blocks}
        thr_codes = model.thr_codes
        return X, Xcs, codes, thr_codes, model.table
    levels = model.factor_levels
    X = {}
    Xcs = {}
    for p in model.plans:
        dm = dt.build_design_matrix(p.terms, table, p.intercept, levels=levels)
        if dm.col_names != p.col_names:
            raise ValueError(
                f"design columns changed on new data: {dm.col_names} vs {p.col_names}")
        X[p.key] = dm.values
        if p.Xcs is not None:
            dmcs = dt.build_design_matrix(p.cs_terms, table, True, levels=levels)
            Xcs[p.key] = dmcs.values
    codes = {}
    if not zero_groups:
        for b in model.group_blocks:
            gi = dt.build_group_index(table, b.factor, levels=b.levels)
            codes[b.tag] = gi.codes
    thr_codes = None
    if model.family.response_kind == "ordinal":
        if model.thr_group is not None and not zero_groups:
            gi = dt.build_group_index(table, model.thr_group.factor_name,
                                      levels=model.thr_group.levels)
            thr_codes = gi.codes
        else:
            # per-group thresholds on a group-free grid: first group's cuts
            thr_codes = np.zeros(table.n_rows, dtype=int)
    return X, Xcs, codes, thr_codes, table


def predictor_values(model, named, table=None, zero_groups=False):
    """Link-scale dpar vectors and extras for one draw given as a
    name -> value map; optionally on new data. `zero_groups` drops all
    group-level contributions (population expectation)."""
    X, Xcs, codes, thr_codes, use_table = _bindings(model, table, zero_groups)
    n = use_table.n_rows
    C = model.response.n_cats or 0
    etas = {}
    for plan in model.plans:
        eta = np.zeros(n)
        if plan.ordinal_mu:
            pass
        elif plan.intercept:
            eta = eta + named[f"b_{plan.prefix}Intercept"]
        for i, coef in enumerate(plan.col_names):
            eta = eta + X[plan.key][:, i] * named[f"b_{plan.prefix}{coef}"]
        if not zero_groups:
            for eid in plan.entry_ids:
                entry = model.group_entries[eid]
                block = next(b for b in model.group_blocks if eid in b.entry_ids)
                rvec = np.array([named[f"r_{block.factor}[{level},{entry.out_coef}]"]
                                 for level in block.levels])
                zc = entry.zcol if table is None else _entry_zcol(model, entry, use_table)
                eta = eta + rvec[codes[block.tag]] * zc
        etas[plan.key] = eta

    fam = model.family
    eta_fam = {}
    extras = {}
    if model.mf.nonlinear:
        env = {}
        for sym in set(fo._free_symbols(model.mf.rhs)) | {
                s for e in model.mf.nlf_defs.values() for s in fo._free_symbols(e)}:
            if sym in model.plan_index or sym in model.mf.nlf_defs:
                continue
            env[sym] = np.asarray(use_table.column(sym).values, dtype=float)
        env.update(etas)
        for nm, expr in model.mf.nlf_defs.items():
            env[nm] = _eval_expr(expr, env)
        eta_fam["mu"] = np.broadcast_to(np.asarray(_eval_expr(model.mf.rhs, env),
                                                   dtype=float), (n,))
    elif fam.name == "categorical":
        for c in range(2, fam.n_cats + 1):
            eta_fam[f"mu{c}"] = etas[f"mu{c}"]
        extras["n_cats"] = fam.n_cats
    else:
        eta_fam["mu"] = etas[""]
    for dpar in fam.dpars[1:]:
        if fam.name == "categorical":
            break
        name = dpar.name
        if name in model.fixed_dpars:
            value = model.fixed_dpars[name]
            if name == "disc":
                if value != 1.0:
                    extras["disc"] = value
            elif name == "bias":
                extras["bias_fixed"] = value
            else:
                eta_fam[name] = np.full(n, float(fm.LINKS[dpar.link].forward(value)))
        else:
            eta_fam[name] = etas[name]
    if fam.response_kind == "ordinal":
        taus = []
        for c in range(1, C):
            if model.thr_group is not None:
                col = np.array([named[f"b_Intercept[{level},{c}]"]
                                for level in model.thr_group.levels])
            else:
                col = np.array([named[f"b_Intercept[{c}]"]])
            taus.append(col[thr_codes])
        extras["tau_cols"] = taus
    mu_plan = model.plan_index.get("")
    if mu_plan is not None and mu_plan.cs_names:
        ncuts = C - 1
        cols = []
        for c in range(1, C):
            acc = np.zeros(n)
            for csname in mu_plan.cs_names:
                j = mu_plan.cs_names.index(csname)
                acc = acc + Xcs[mu_plan.key][:, j] * named[f"b_{mu_plan.prefix}{csname}[{c}]"]
            cols.append(acc)
        extras["cs_cols"] = cols
    if model.dec is not None and table is None:
        extras["dec"] = model.dec
    return eta_fam, extras


def _entry_zcol(model, entry, table):
    plan = model.plan_index[entry.formula_key]
    if entry.base_coef == "Intercept":
        return np.ones(table.n_rows)
    # rebuild the group term design for this factor on the new table
    gts = fo.expand_terms(_plan_ast(model, plan)).group_terms
    for gt in gts:
        if gt.factor != entry.factor:
            continue
        cols = []
        if gt.intercept:
            cols.append(("Intercept", np.ones(table.n_rows)))
        if gt.terms:
            Z = dt.build_design_matrix(gt.terms, table, gt.intercept,
                                       levels=model.factor_levels)
            cols.extend(zip(Z.col_names, Z.values.T))
        for base, vals in cols:
            if base == entry.base_coef:
                return np.asarray(vals, dtype=float)
    raise KeyError(f"group design column '{entry.base_coef}' not found on new data")


def _plan_ast(model, plan):
    mf = model.mf
    if plan.key in mf.dpar_formulas:
        return mf.dpar_formulas[plan.key]
    if plan.role == "mu" and not mf.nonlinear:
        return fo.FormulaAST(None, mf.rhs)
    return fo.FormulaAST(None, fo.Num(1.0))


# program listing -----------------------------------------------------------

def inspect_listing(model):
    fam = model.family
    lines = []
    link_bits = ", ".join(f"{d.name}:{d.link}" for d in fam.dpars)
    lines.append(f"family: {fam.name} ({link_bits})")
    resp = f"response: {model.mf.response.name} [{fam.response_kind}]"
    if model.response.n_cats:
        resp += f" categories={model.response.n_cats}"
    lines.append(resp)
    lines.append(f"observations: {model.n_obs}")
    if model.mf.nonlinear:
        lines.append(f"model: {fo.format_formula(fo.FormulaAST(None, model.mf.rhs))}")
        for name, expr in model.mf.nlf_defs.items():
            lines.append(f"  nlf {name} = {fo.format_formula(fo.FormulaAST(None, expr))}")
    for plan in model.plans:
        label = plan.key or "mu"
        pieces = []
        if plan.ordinal_mu:
            pieces.append(f"thresholds({model.n_thr_groups}x{(model.response.n_cats or 0) - 1})")
        elif plan.intercept:
            pieces.append("Intercept")
        pieces.extend(plan.col_names)
        pieces.extend(f"cs:{nm}" for nm in plan.cs_names)
        lines.append(f"predictor {label}: {' + '.join(pieces) if pieces else '(empty)'}")
        for eid in plan.entry_ids:
            e = model.group_entries[eid]
            block = next(b for b in model.group_blocks if eid in b.entry_ids)
            lines.append(f"  varying {e.base_coef} | {e.factor} ({block.n_levels} levels)")
    for name, value in sorted(model.fixed_dpars.items()):
        lines.append(f"fixed: {name} = {_fmt_num(value)}")
    lines.append(f"unconstrained dimension: {model.layout.unconstrained_dim}")
    for blk in model.layout.blocks:
        lines.append(f"  block {blk.name:<18} {blk.kind:<12} size {blk.size}")
    lines.append("priors:")
    for target, spec in model.resolved.assignment.items():
        where = pr._describe(target)
        body = "flat" if spec.density == "flat" else (
            f"{spec.density}({', '.join(_fmt_num(a) for a in spec.args)})")
        suffix = " [lower=0]" if target.par_class == "sd" else ""
        lines.append(f"  {where} ~ {body}{suffix}")
    if model.resolved.constants:
        lines.append("constants:")
        for target, value in model.resolved.constants.items():
            lines.append(f"  {pr._describe(target)} = {_fmt_num(value)}")
    return "\n".join(lines) + "\n"


def _fmt_num(x):
    return str(int(x)) if float(x) == int(x) else repr(float(x))

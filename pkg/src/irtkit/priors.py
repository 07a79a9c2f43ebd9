"""Prior statements: parsing, most-specific-wins resolution, and log densities.

A prior applies to a target identified by (class, group, dpar, nlpar, coef).
User statements may leave qualifiers empty; the most specific matching
statement wins, with specificity coef > (class, group, dpar/nlpar) >
(class, group) > class > built-in default. Ties between distinct statements
are an error rather than silently resolved.

Scale-class parameters (class sd) are bounded below at zero, so location
families placed on them are truncated: the log upper-tail mass at zero is
subtracted once, keeping the density normalized on the half line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import special as sps
from scipy import stats as spstats

from . import autodiff as ad

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    density: str
    args: tuple
    par_class: str = ""
    group: str = ""
    dpar: str = ""
    nlpar: str = ""
    coef: str = ""


@dataclass(frozen=True)
class PriorTarget:
    """One assignable slot in the parameter layout."""
    par_class: str  # b | Intercept | sd | cor
    group: str = ""
    dpar: str = ""
    nlpar: str = ""
    coef: str = ""
    size: int = 1  # block width, used to reject constant() on wide cor blocks


@dataclass
class ResolvedPriors:
    assignment: dict  # PriorTarget -> PriorSpec
    constants: dict  # PriorTarget -> float


_CLASSES = {"b", "Intercept", "sd", "cor"}

# (density name, arity, validator)
_ARG_RULES = {
    "normal": (2, lambda a: a[1] > 0 or "scale must be positive"),
    "student_t": (3, lambda a: (a[0] > 0 or "degrees of freedom must be positive")
                  if a[2] > 0 else "scale must be positive"),
    "cauchy": (2, lambda a: a[1] > 0 or "scale must be positive"),
    "gamma": (2, lambda a: (a[0] > 0 and a[1] > 0) or "shape and rate must be positive"),
    "lkj": (1, lambda a: a[0] > 0 or "lkj shape must be positive"),
    "constant": (1, lambda a: True),
}

_CALL_RE = re.compile(r"^\s*([A-Za-z_]+)\s*\((.*)\)\s*$")


def parse_prior(text, par_class, group="", dpar="", nlpar="", coef=""):
    if par_class not in _CLASSES:
        raise ValueError(f"unknown prior class '{par_class}'; valid: {sorted(_CLASSES)}")
    stripped = text.strip()
    if stripped == "flat":
        return PriorSpec("flat", (), par_class, group, dpar, nlpar, coef)
    m = _CALL_RE.match(stripped)
    if m is None:
        raise ValueError(f"malformed prior '{text}': expected name(args) or flat")
    name, argtext = m.group(1), m.group(2)
    if name not in _ARG_RULES:
        raise ValueError(f"unknown prior density '{name}'; valid: {sorted(_ARG_RULES)} or flat")
    arity, check = _ARG_RULES[name]
    parts = [p.strip() for p in argtext.split(",")] if argtext.strip() else []
    if len(parts) != arity:
        raise ValueError(f"{name}() takes {arity} argument(s), got {len(parts)}")
    try:
        args = tuple(float(p) for p in parts)
    except ValueError:
        raise ValueError(f"non-numeric argument in prior '{text}'") from None
    verdict = check(args)
    if verdict is not True:
        raise ValueError(f"invalid prior '{text}': {verdict}")
    if name == "lkj" and par_class != "cor":
        raise ValueError("lkj() applies only to class 'cor'")
    if par_class == "cor" and name not in ("lkj", "constant"):
        raise ValueError(f"class 'cor' accepts only lkj() priors, got '{name}'")
    return PriorSpec(name, args, par_class, group, dpar, nlpar, coef)


def _default_for(target):
    if target.par_class == "b":
        return PriorSpec("flat", (), "b")
    if target.par_class == "Intercept":
        return PriorSpec("student_t", (3.0, 0.0, 2.5), "Intercept")
    if target.par_class == "sd":
        return PriorSpec("student_t", (3.0, 0.0, 2.5), "sd")
    if target.par_class == "cor":
        return PriorSpec("lkj", (1.0,), "cor")
    raise ValueError(f"no default prior for class '{target.par_class}'")


def _specificity(spec):
    # coef beats group beats dpar/nlpar qualification
    return (bool(spec.coef), bool(spec.group), bool(spec.dpar or spec.nlpar))


def _matches(spec, target):
    if spec.par_class != target.par_class:
        return False
    for attr in ("group", "dpar", "nlpar", "coef"):
        want = getattr(spec, attr)
        if want and want != getattr(target, attr):
            return False
    return True


def resolve_priors(specs, layout):
    """Assign one PriorSpec to every target in the layout.

    `layout` is a ParameterSpace (anything with .prior_targets()) or a plain
    list of PriorTarget.
    """
    targets = layout.prior_targets() if hasattr(layout, "prior_targets") else list(layout)
    valid_groups = sorted({t.group for t in targets if t.group})
    used = [False] * len(specs)
    assignment = {}
    constants = {}
    for target in targets:
        best = None
        best_rank = None
        best_index = None
        for i, spec in enumerate(specs):
            if not _matches(spec, target):
                continue
            used[i] = True
            rank = _specificity(spec)
            if best is None or rank > best_rank:
                best, best_rank, best_index = spec, rank, i
            elif rank == best_rank and spec != best:
                raise ValueError(
                    f"conflicting equally specific priors for {_describe(target)}: "
                    f"'{_render(best)}' vs '{_render(spec)}'")
        if best is None:
            best = _default_for(target)
        if best.density == "constant":
            if target.par_class == "cor" and target.size > 1:
                raise ValueError("constant() cannot fix a correlation block wider than 1")
            constants[target] = best.args[0]
        assignment[target] = best
    for i, spec in enumerate(specs):
        if used[i]:
            continue
        if spec.group and spec.group not in valid_groups:
            raise ValueError(
                f"prior references unknown group '{spec.group}'; valid groups: {valid_groups}")
        raise ValueError(f"prior '{_render(spec)}' matches no parameter in the model")
    return ResolvedPriors(assignment, constants)


def _describe(target):
    bits = [f"class={target.par_class}"]
    for attr in ("group", "dpar", "nlpar", "coef"):
        if getattr(target, attr):
            bits.append(f"{attr}={getattr(target, attr)}")
    return "(" + ", ".join(bits) + ")"


def _render(spec):
    body = "flat" if spec.density == "flat" else \
        f"{spec.density}({', '.join(_fmt(a) for a in spec.args)})"
    return body + " " + _describe(spec)


def _fmt(x):
    return str(int(x)) if x == int(x) else repr(x)


# log densities -------------------------------------------------------------


def _sum_all(x):
    if isinstance(x, ad.Var):
        return ad.vsum(x)
    return float(np.sum(x))


def _size_of(x):
    v = x.value if isinstance(x, ad.Var) else np.asarray(x)
    return int(np.asarray(v).size)


def _lpdf_normal(x, mu, sigma):
    z = (x - mu) / sigma
    return _sum_all(-0.5 * z * z) - _size_of(x) * (math.log(sigma) + _HALF_LOG_2PI)


def _lpdf_student_t(x, nu, mu, sigma):
    z = (x - mu) / sigma
    const = (sps.gammaln((nu + 1.0) / 2.0) - sps.gammaln(nu / 2.0)
             - 0.5 * math.log(nu * math.pi) - math.log(sigma))
    return _sum_all(-(nu + 1.0) / 2.0 * ad.log1p(z * z / nu)) + _size_of(x) * const


def _lpdf_cauchy(x, mu, sigma):
    z = (x - mu) / sigma
    return _sum_all(-ad.log1p(z * z)) - _size_of(x) * (math.log(math.pi) + math.log(sigma))


def _lpdf_gamma(x, alpha, beta):
    const = alpha * math.log(beta) - sps.gammaln(alpha)
    return _sum_all((alpha - 1.0) * ad.log(x) - beta * x) + _size_of(x) * const


def truncation_log_mass(spec):
    """Log of the prior mass above zero; subtracted for lower-bounded targets."""
    if spec.density == "normal":
        return float(spstats.norm.logsf(0.0, loc=spec.args[0], scale=spec.args[1]))
    if spec.density == "student_t":
        nu, mu, sigma = spec.args
        return float(spstats.t.logsf(0.0, nu, loc=mu, scale=sigma))
    if spec.density == "cauchy":
        return float(spstats.cauchy.logsf(0.0, loc=spec.args[0], scale=spec.args[1]))
    return 0.0  # gamma lives on the half line already; flat contributes nothing


def lkj_log_normalizer(dim, eta):
    """Normalizing constant of the Cholesky-factor shape-eta density."""
    total = 0.0
    for k in range(1, dim):
        b = eta + (dim - 1 - k) / 2.0
        total += (dim - k) * (sps.betaln(b, b) + (2.0 * b - 1.0) * math.log(2.0))
    return total


def lkj_chol_logpdf(log_diag, eta):
    """Density of a unit-row lower-triangular correlation factor.

    `log_diag` holds log L_kk for k = 1..K (first entry is 0), either as one
    vector or as a sequence of scalars.
    """
    if isinstance(log_diag, (list, tuple)):
        dim = len(log_diag)
        if dim == 1:
            return 0.0
        total = 0.0
        for i in range(1, dim):
            weight = dim - (i + 1) + 2.0 * eta - 2.0
            total = total + weight * log_diag[i]
        return _sum_all(total) - lkj_log_normalizer(dim, eta)
    dim = _size_of(log_diag)
    if dim == 1:
        return 0.0
    k = np.arange(1, dim + 1, dtype=float)
    weights = dim - k + 2.0 * eta - 2.0
    weights[0] = 0.0  # L_11 = 1 carries no density
    return _sum_all(log_diag * weights) - lkj_log_normalizer(dim, eta)


def log_density(spec, x, lower_bounded=False):
    """Log prior contribution of one target; `x` is a Var or plain value on
    the constrained scale. Correlation blocks go through lkj_chol_logpdf
    instead."""
    if spec.density == "flat" or spec.density == "constant":
        return 0.0
    if spec.density == "normal":
        out = _lpdf_normal(x, *spec.args)
    elif spec.density == "student_t":
        out = _lpdf_student_t(x, *spec.args)
    elif spec.density == "cauchy":
        out = _lpdf_cauchy(x, *spec.args)
    elif spec.density == "gamma":
        out = _lpdf_gamma(x, *spec.args)
    else:
        raise ValueError(f"cannot evaluate density '{spec.density}' elementwise")
    if lower_bounded:
        out = out - _size_of(x) * truncation_log_mass(spec)
    return out


def log_prior(resolved, values):
    """Sum log densities over targets.

    `values` maps PriorTarget -> constrained value; cor targets supply the
    log-diagonal of the Cholesky factor. Constant targets are skipped.
    """
    total = 0.0
    for target, spec in resolved.assignment.items():
        if target in resolved.constants:
            continue
        if target not in values:
            raise KeyError(f"no value supplied for {_describe(target)}")
        x = values[target]
        if target.par_class == "cor":
            total = total + lkj_chol_logpdf(x, spec.args[0])
        else:
            parts = x if isinstance(x, (list, tuple)) else [x]
            for part in parts:
                total = total + log_density(spec, part, lower_bounded=target.par_class == "sd")
    return total

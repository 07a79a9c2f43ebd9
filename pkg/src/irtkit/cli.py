"""Command-line front end: plain-text run configs in, file artifacts out.

Config files are line-oriented `key = value` under bracketed section
headers; formulas sit in triple-quoted blocks. A fit writes one draw file
per chain plus a manifest that embeds the resolved config, so every
post-processing command can rebuild the model without re-sampling.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import build as bd
from . import data as dt
from . import diagnostics as dg
from . import families as fm
from . import formula as fo
from . import postprocess as pp
from . import priors as pr
from . import sampler as sm
from . import simulate as si


class ConfigError(ValueError):
    pass


# config parsing ------------------------------------------------------------

_SECTIONS = ("data", "model", "priors", "sampler", "output", "simulate")

_MODEL_KEYS = ("formula", "family", "nl", "links")
_DATA_KEYS = ("file", "types")
_OUTPUT_KEYS = ("directory",)
_SAMPLER_CASTS = {
    "chains": int, "iter": int, "warmup": int, "adapt_delta": float,
    "max_treedepth": int, "seed": int, "init_r": float, "stepsize": float,
    "max_delta_h": float, "init_buffer": int, "term_buffer": int,
    "base_window": int, "gamma": float, "t0": float, "kappa": float,
    "cores": int,
}
_SIM_CASTS = {
    "n_persons": int, "n_items": int, "family": str, "seed": int,
    "intercept": float, "sigma_theta": float, "sigma_xi": float,
    "alpha_sd": float, "alpha_xi_cor": float, "guess": float, "n_cats": int,
    "thresholds": "floats", "dpars": "pairs",
    "item_covariate": "covariate", "person_covariate": "covariate",
}


def parse_config(text):
    """Section name -> list of (key, value, line_number)."""
    sections = {}
    current = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, [])
            continue
        if current is None:
            raise ConfigError(f"line {lineno}: content before any [section]")
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value.startswith('"""'):
            rest = value[3:]
            if rest.endswith('"""') and len(rest) >= 3:
                value = rest[:-3].strip()
            else:
                block = [rest] if rest else []
                closed = False
                while i < len(lines):
                    raw = lines[i]
                    i += 1
                    if raw.strip().endswith('"""'):
                        tail = raw.strip()[:-3]
                        if tail:
                            block.append(tail)
                        closed = True
                        break
                    block.append(raw)
                if not closed:
                    raise ConfigError(f"line {lineno}: unterminated triple quote")
                value = "\n".join(block).strip()
        current.append((key, value, lineno))
    return sections


def _single_valued(pairs, allowed, section):
    out = {}
    for key, value, lineno in pairs:
        if key not in allowed:
            raise ConfigError(
                f"line {lineno}: unknown key '{key}' in [{section}]; "
                f"allowed: {sorted(allowed)}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}' in [{section}]")
        out[key] = value
    return out


def _parse_bool(value, lineno):
    low = value.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"line {lineno}: expected true/false, got '{value}'")


def _parse_prior_line(key, value, lineno):
    parts = key.split()
    par_class = parts[0]
    quals = {"group": "", "dpar": "", "nlpar": "", "coef": ""}
    for part in parts[1:]:
        if "=" not in part:
            raise ConfigError(
                f"line {lineno}: prior qualifier '{part}' must look like group=id")
        qk, _, qv = part.partition("=")
        if qk not in quals:
            raise ConfigError(
                f"line {lineno}: unknown prior qualifier '{qk}'; "
                f"allowed: {sorted(quals)}")
        quals[qk] = qv
    try:
        return pr.parse_prior(value, par_class, **quals)
    except ValueError as e:
        raise ConfigError(f"line {lineno}: {e}") from None


def _parse_covariate(value, lineno):
    # e.g.  cond a,b,c mu=0,0.25,0.5 sigma=0,0.3,0.6
    parts = value.split()
    if len(parts) < 3:
        raise ConfigError(
            f"line {lineno}: covariate needs 'name levels dpar=effects...'")
    name, levels = parts[0], tuple(parts[1].split(","))
    effects = {}
    for part in parts[2:]:
        dpar, _, effs = part.partition("=")
        if not effs:
            raise ConfigError(f"line {lineno}: covariate effect '{part}' "
                              "must look like mu=0,0.3,0.6")
        effects[dpar] = tuple(float(x) for x in effs.split(","))
    return {"name": name, "levels": levels, "effects": effects}


class RunConfig:
    """Parsed and validated config; file loading stays lazy."""

    def __init__(self, text, base_dir="."):
        self.text = text
        self.base_dir = base_dir
        sections = parse_config(text)

        data = _single_valued(sections.get("data", []), _DATA_KEYS, "data")
        self.data_file = data.get("file")
        self.data_types = {}
        if "types" in data:
            for part in data["types"].split(","):
                cname, _, kind = part.strip().partition(":")
                if kind not in ("integer", "real", "factor"):
                    raise ConfigError(
                        f"data types entry '{part.strip()}' must be column:kind")
                self.data_types[cname] = kind

        model = _single_valued(sections.get("model", []), _MODEL_KEYS, "model")
        self.formula_text = model.get("formula")
        self.family_name = model.get("family")
        self.nl = _parse_bool(model["nl"], 0) if "nl" in model else False
        self.links = {}
        if "links" in model:
            for part in model["links"].split(","):
                dpar, _, link = part.strip().partition("=")
                if not link:
                    raise ConfigError(f"links entry '{part.strip()}' must be dpar=link")
                self.links[dpar] = link

        self.priors = [_parse_prior_line(k, v, ln)
                       for k, v, ln in sections.get("priors", [])]

        self.sampler = {}
        for key, value, lineno in sections.get("sampler", []):
            if key not in _SAMPLER_CASTS:
                raise ConfigError(
                    f"line {lineno}: unknown key '{key}' in [sampler]; "
                    f"allowed: {sorted(_SAMPLER_CASTS)}")
            if key in self.sampler:
                raise ConfigError(f"line {lineno}: duplicate key '{key}' in [sampler]")
            try:
                self.sampler[key] = _SAMPLER_CASTS[key](value)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value '{value}' for '{key}'")

        output = _single_valued(sections.get("output", []), _OUTPUT_KEYS, "output")
        self.output_dir = output.get("directory")

        self.sim = {}
        for key, value, lineno in sections.get("simulate", []):
            if key not in _SIM_CASTS:
                raise ConfigError(
                    f"line {lineno}: unknown key '{key}' in [simulate]; "
                    f"allowed: {sorted(_SIM_CASTS)}")
            cast = _SIM_CASTS[key]
            if cast == "floats":
                self.sim[key] = tuple(float(x) for x in value.split(","))
            elif cast == "pairs":
                pairs = {}
                for part in value.split(","):
                    dk, _, dv = part.strip().partition("=")
                    if not dv:
                        raise ConfigError(
                            f"line {lineno}: dpars entry '{part.strip()}' must be name=value")
                    pairs[dk] = float(dv)
                self.sim[key] = pairs
            elif cast == "covariate":
                self.sim[key] = _parse_covariate(value, lineno)
            else:
                try:
                    self.sim[key] = cast(value)
                except ValueError:
                    raise ConfigError(f"line {lineno}: bad value '{value}' for '{key}'")

    def resolve_path(self, path):
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def require(self, what):
        missing = {
            "data": self.data_file is None,
            "model": self.formula_text is None or self.family_name is None,
            "output": self.output_dir is None,
            "simulate": not self.sim,
        }[what]
        if missing:
            detail = {"data": "[data] file", "model": "[model] formula and family",
                      "output": "[output] directory", "simulate": "a [simulate] section"}
            raise ConfigError(f"config needs {detail[what]}")


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return RunConfig(text, base_dir=os.path.dirname(os.path.abspath(path)))


def build_from_config(cfg, prior_only=False):
    cfg.require("data")
    cfg.require("model")
    table = dt.load_table(cfg.resolve_path(cfg.data_file), cfg.data_types or None)
    mf = fo.parse_model(cfg.formula_text, nl=cfg.nl,
                        data_columns=tuple(table.columns))
    fam = fm.family_lookup(cfg.family_name, cfg.links or None)
    return bd.build_model(mf, fam, cfg.priors, table, prior_only=prior_only)


def control_from_config(cfg, cores=None):
    ctrl = sm.SamplerControl(**cfg.sampler)
    if cores is not None:
        ctrl.cores = cores
    elif "cores" not in cfg.sampler:
        ctrl.cores = ctrl.chains
    ctrl.validate()
    return ctrl


# manifests -----------------------------------------------------------------

MANIFEST_NAME = "manifest.json"

# files created by the running command, removed again if it fails
_created_files = []


def _track(path):
    _created_files.append(path)
    return path


def write_manifest(directory, cfg, chain_files, control, names):
    payload = {
        "kind": "irtkit-fit",
        "config_text": cfg.text,
        "base_dir": os.path.abspath(cfg.base_dir),
        "chains": [os.path.basename(p) for p in chain_files],
        "control": {k: getattr(control, k) for k in _SAMPLER_CASTS},
        "parameters": list(names),
    }
    path = _track(os.path.join(directory, MANIFEST_NAME))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path


def load_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != "irtkit-fit":
        raise ConfigError(f"'{path}' is not a fit manifest")
    base = os.path.dirname(os.path.abspath(path))
    cfg = RunConfig(payload["config_text"],
                    base_dir=payload.get("base_dir", base))
    chain_files = [os.path.join(base, p) for p in payload["chains"]]
    return cfg, chain_files, payload


def _artifact_dir(manifest_path):
    if os.path.isdir(manifest_path):
        return manifest_path
    return os.path.dirname(os.path.abspath(manifest_path))


def _load_fit(path):
    cfg, chain_files, payload = load_manifest(path)
    draws = sm.load_draws(chain_files)
    return cfg, draws, payload


# commands ------------------------------------------------------------------

def _cmd_fit(args):
    cfg = load_config(args.config)
    cfg.require("output")
    model = build_from_config(cfg)
    ctrl = control_from_config(cfg, cores=args.cores)
    out_dir = cfg.resolve_path(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    draws = sm.sample(model, ctrl)
    for c in range(draws.n_chains):
        _track(os.path.join(out_dir, f"chain_{c + 1}.csv"))
    chain_files = draws.write_csv(out_dir)
    manifest = write_manifest(out_dir, cfg, chain_files, ctrl, draws.names)
    _note_failures(draws)
    print(f"fit complete: {draws.n_chains} chains x {draws.n_draws} draws")
    for p in chain_files + [manifest]:
        print(f"  wrote {p}")


def _note_failures(draws):
    nd = draws.n_divergent()
    if nd:
        print(f"warning: {nd} divergent transitions; consider a higher adapt_delta")
    depth = draws.stat("treedepth__")
    if (depth >= 10).any():
        print("warning: max treedepth hit; sampling may be inefficient")


def _cmd_summary(args):
    cfg, draws, _ = _load_fit(args.manifest)
    model = build_from_config(cfg)
    print(bd.inspect_listing(model).splitlines()[0])
    print()
    print(dg.summarize(draws, model))


def _cmd_inspect(args):
    try:
        cfg, _, _ = load_manifest(args.config)
    except (json.JSONDecodeError, UnicodeDecodeError, ConfigError, FileNotFoundError):
        cfg = load_config(args.config)
    model = build_from_config(cfg)
    print(bd.inspect_listing(model))


def _cmd_loo(args):
    cfg, draws, _ = _load_fit(args.manifest)
    model = build_from_config(cfg)
    ll = pp.pointwise_log_lik(model, draws)
    loo = pp.psis_loo(ll, smooth=not args.no_smooth)
    print(loo)
    path = _track(os.path.join(_artifact_dir(args.manifest), "loo.csv"))
    with open(path, "w") as fh:
        fh.write("obs,elpd,pareto_k\n")
        for i, (e, k) in enumerate(zip(loo.pointwise, loo.pareto_k)):
            fh.write(f"{i + 1},{e:.10g},{k:.10g}\n")
    print(f"wrote {path}")


def _cmd_compare(args):
    results = []
    for path in (args.manifest_a, args.manifest_b):
        cfg, draws, _ = _load_fit(path)
        model = build_from_config(cfg)
        results.append(pp.psis_loo(pp.pointwise_log_lik(model, draws)))
    a, b = results
    diff = pp.loo_compare(a, b)
    print(f"model A: elpd_loo {a.elpd_loo:.2f} (looic {a.looic:.2f})")
    print(f"model B: elpd_loo {b.elpd_loo:.2f} (looic {b.looic:.2f})")
    print(f"elpd difference (A - B): {diff['elpd_diff']:.2f} "
          f"(SE {diff['se_diff']:.2f})")
    print(f"looic difference (A - B): {diff['looic_diff']:.2f} "
          f"(SE {diff['se_looic_diff']:.2f})")


def _cmd_hypothesis(args):
    _, draws, _ = _load_fit(args.manifest)
    result = pp.hypothesis(draws, args.expr, par_class=args.par_class,
                           group=args.group)
    print(result)


def _cmd_predict(args):
    cfg, draws, _ = _load_fit(args.manifest)
    model = build_from_config(cfg)
    newdata = dt.load_table(args.newdata) if args.newdata else None
    pred = pp.posterior_predict(model, draws, newdata=newdata, seed=args.seed)
    est = pred.mean(axis=0)
    lo = np.quantile(pred, 0.025, axis=0)
    hi = np.quantile(pred, 0.975, axis=0)
    out = _track(args.out or os.path.join(_artifact_dir(args.manifest),
                                          "predictions.csv"))
    with open(out, "w") as fh:
        fh.write("obs,Estimate,l-95% CI,u-95% CI\n")
        for i in range(pred.shape[1]):
            fh.write(f"{i + 1},{est[i]:.10g},{lo[i]:.10g},{hi[i]:.10g}\n")
    print(f"wrote {out} ({pred.shape[1]} observations, {pred.shape[0]} draws)")


def _cmd_effects(args):
    cfg, draws, _ = _load_fit(args.manifest)
    model = build_from_config(cfg)
    eff = pp.conditional_effects(model, draws, effect=args.effect,
                                 categorical=args.categorical)
    print(eff)


def _cmd_simulate(args):
    cfg = load_config(args.config)
    cfg.require("simulate")
    cfg.require("output")
    design = si.SimDesign(**cfg.sim)
    table, truth = si.simulate_data(design)
    out_dir = cfg.resolve_path(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    data_path = _track(os.path.join(out_dir, "sim_data.csv"))
    truth_path = _track(os.path.join(out_dir, "sim_truth.csv"))
    dt.save_table(table, data_path)
    with open(truth_path, "w") as fh:
        fh.write("parameter,value\n")
        for name, value in truth.items():
            fh.write(f"{name},{value:.10g}\n")
    spec = si.canonical_formula(design)
    print(f"wrote {data_path} ({table.n_rows} rows)")
    print(f"wrote {truth_path} ({len(truth)} parameters)")
    print("canonical model:")
    for line in spec["lines"]:
        print(f"  {line}")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="irtkit",
        description="Bayesian item response modeling from plain-text configs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="sample the posterior and write draw files")
    p.add_argument("config")
    p.add_argument("--cores", type=int, default=None,
                   help="parallel chains (default: one per chain)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("summary", help="print the posterior summary table")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_summary)

    p = sub.add_parser("inspect", help="print the compiled model listing")
    p.add_argument("config", help="config file or fit manifest")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("loo", help="leave-one-out cross-validation")
    p.add_argument("manifest")
    p.add_argument("--no-smooth", action="store_true",
                   help="plain importance sampling without Pareto smoothing")
    p.set_defaults(func=_cmd_loo)

    p = sub.add_parser("compare", help="difference in elpd between two fits")
    p.add_argument("manifest_a")
    p.add_argument("manifest_b")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("hypothesis", help="evaluate a posterior contrast")
    p.add_argument("manifest")
    p.add_argument("--expr", required=True)
    p.add_argument("--class", dest="par_class", default="b")
    p.add_argument("--group", default="")
    p.set_defaults(func=_cmd_hypothesis)

    p = sub.add_parser("predict", help="posterior predictive summaries")
    p.add_argument("manifest")
    p.add_argument("--newdata", default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("effects", help="conditional effects over a covariate grid")
    p.add_argument("manifest")
    p.add_argument("--effect", default=None)
    p.add_argument("--categorical", action="store_true")
    p.set_defaults(func=_cmd_effects)

    p = sub.add_parser("simulate", help="generate synthetic data with a truth file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    _created_files.clear()
    try:
        args.func(args)
        return 0
    except Exception as e:  # noqa: BLE001 - single exit path with cleanup
        for path in _created_files:
            if os.path.exists(path):
                os.remove(path)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

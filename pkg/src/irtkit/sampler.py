"""Adaptive Hamiltonian Monte Carlo with dynamic trajectory lengths.

Each iteration doubles a leapfrog trajectory in a random direction until the
generalized U-turn criterion fires or the tree depth cap is hit, selecting
the returned state multinomially by density. Warmup adapts the step size by
dual averaging and a diagonal inverse metric from slow-window variances;
both freeze at the end of warmup.

Chains are independent given (seed, chain id) and may run as forked
processes; the compiled model is shared read-only.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from . import build as bd

STAT_COLUMNS = ("accept_stat__", "stepsize__", "treedepth__",
                "n_leapfrog__", "divergent__", "energy__")


@dataclass
class SamplerControl:
    chains: int = 4
    iter: int = 2000
    warmup: int = 1000
    adapt_delta: float = 0.8
    max_treedepth: int = 10
    seed: int = 1
    init_r: float = 2.0
    inits: dict = field(default_factory=dict)  # unconstrained-scale overrides
    stepsize: float = 1.0
    max_delta_h: float = 1000.0
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    cores: int = 1

    def validate(self):
        if not 0 < self.warmup < self.iter:
            raise ValueError("need 0 < warmup < iter")
        if not 0 < self.adapt_delta < 1:
            raise ValueError("adapt_delta must lie in (0, 1)")
        if self.init_r <= 0:
            raise ValueError("init radius must be positive")
        if self.chains < 1 or self.max_treedepth < 1:
            raise ValueError("chains and max_treedepth must be at least 1")


@dataclass
class PosteriorDraws:
    names: list  # constrained parameter names
    lp: np.ndarray  # (chains, draws)
    params: np.ndarray  # (chains, draws, n_params)
    stats: np.ndarray  # (chains, draws, len(STAT_COLUMNS))
    unconstrained: np.ndarray  # (chains, draws, dim)
    unconstrained_names: list

    @property
    def n_chains(self):
        return self.params.shape[0]

    @property
    def n_draws(self):
        return self.params.shape[1]

    def array(self, name):
        """Draws of one parameter as a (chains, draws) matrix."""
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter '{name}'") from None
        return self.params[:, :, j]

    def flat(self, name):
        return self.array(name).reshape(-1)

    def stat(self, name):
        return self.stats[:, :, STAT_COLUMNS.index(name)]

    def n_divergent(self):
        return int(self.stat("divergent__").sum())

    def named_draw(self, chain, draw):
        return dict(zip(self.names, self.params[chain, draw]))

    def write_csv(self, directory, stem="chain"):
        """One file per chain: lp__, parameters, then sampler statistics.
        Names containing commas (indexed coefficients) are quoted."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        header = ",".join(_quote(n) for n in
                          ["lp__"] + list(self.names) + list(STAT_COLUMNS))
        for c in range(self.n_chains):
            path = os.path.join(directory, f"{stem}_{c + 1}.csv")
            block = np.column_stack(
                [self.lp[c][:, None], self.params[c], self.stats[c]])
            with open(path, "w") as fh:
                fh.write(header + "\n")
                for row in block:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
            paths.append(path)
        return paths


def _fmt(v):
    return format(float(v), ".17g")


def _quote(name):
    return f'"{name}"' if "," in name else name


def load_draws(paths):
    """Rebuild PosteriorDraws from write_csv output. Unconstrained draws are
    not stored, so that block comes back empty."""
    import csv

    lp, params, stats = [], [], []
    names = None
    n_stats = len(STAT_COLUMNS)
    for path in paths:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        if header[0] != "lp__" or tuple(header[-n_stats:]) != STAT_COLUMNS:
            raise ValueError(f"'{path}' is not a draw file")
        file_names = header[1:-n_stats]
        if names is None:
            names = file_names
        elif file_names != names:
            raise ValueError(f"'{path}' has different parameters than the first chain")
        block = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        lp.append(block[:, 0])
        params.append(block[:, 1:1 + len(names)])
        stats.append(block[:, 1 + len(names):])
    sizes = {a.shape[0] for a in lp}
    if len(sizes) != 1:
        raise ValueError(f"chains have different lengths: {sorted(sizes)}")
    return PosteriorDraws(names, np.stack(lp), np.stack(params),
                          np.stack(stats), np.zeros((len(lp), lp[0].shape[0], 0)),
                          [])


# hamiltonian pieces --------------------------------------------------------

class _State:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q = q
        self.p = p
        self.logp = logp
        self.grad = grad

    def copy(self):
        return _State(self.q.copy(), self.p.copy(), self.logp,
                      None if self.grad is None else self.grad.copy())


def _kinetic(p, inv_metric):
    return 0.5 * float(np.dot(inv_metric * p, p))


def _hamiltonian(state, inv_metric):
    return -state.logp + _kinetic(state.p, inv_metric)


def _leapfrog(logp_grad, state, eps, inv_metric):
    """One integrator step; returns a new state whose grad is None when the
    density or gradient failed."""
    p_half = state.p + 0.5 * eps * state.grad
    q_new = state.q + eps * (inv_metric * p_half)
    logp, grad = logp_grad(q_new)
    if grad is None or not np.isfinite(logp):
        return _State(q_new, p_half, -np.inf, None)
    p_new = p_half + 0.5 * eps * grad
    return _State(q_new, p_new, logp, grad)


def _criterion(p_sharp_a, p_sharp_b, rho):
    return np.dot(p_sharp_a, rho) > 0 and np.dot(p_sharp_b, rho) > 0


class _Tree:
    """One trajectory expansion bookkeeping record."""

    def __init__(self):
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False


def _build_tree(logp_grad, depth, state, eps, inv_metric, h0, max_delta_h,
                rng, tree):
    """Extend from `state` by 2^depth leapfrog steps in the sign of eps.

    Returns (valid, end_state, proposal, log_sum_weight, rho,
             p_beg, p_end, ps_beg, ps_end) where beg is the subtree state
    nearest the start and end the new extreme.
    """
    if depth == 0:
        nxt = _leapfrog(logp_grad, state, eps, inv_metric)
        tree.n_leapfrog += 1
        if nxt.grad is None:
            h = np.inf
        else:
            h = _hamiltonian(nxt, inv_metric)
            if not np.isfinite(h):
                h = np.inf
        if h - h0 > max_delta_h:
            tree.divergent = True
        lw = h0 - h
        tree.sum_metro += min(1.0, math.exp(min(0.0, lw)))
        if not np.isfinite(lw):
            lw = -np.inf
        ps = inv_metric * nxt.p
        valid = not tree.divergent and nxt.grad is not None
        return (valid, nxt, nxt, lw, nxt.p.copy(), nxt.p, nxt.p, ps, ps)

    ok1, end1, prop1, lw1, rho1, pb1, pe1, psb1, pse1 = _build_tree(
        logp_grad, depth - 1, state, eps, inv_metric, h0, max_delta_h, rng, tree)
    if not ok1:
        return (False, end1, prop1, lw1, rho1, pb1, pe1, psb1, pse1)
    ok2, end2, prop2, lw2, rho2, pb2, pe2, psb2, pse2 = _build_tree(
        logp_grad, depth - 1, end1, eps, inv_metric, h0, max_delta_h, rng, tree)
    if not ok2:
        return (False, end2, prop2, lw2, rho2, pb2, pe2, psb2, pse2)

    lw = np.logaddexp(lw1, lw2)
    prop = prop2 if math.log(rng.random() + 1e-300) < lw2 - lw else prop1
    rho = rho1 + rho2
    valid = _criterion(psb1, pse2, rho)
    valid = valid and _criterion(psb1, psb2, rho1 + pb2)
    valid = valid and _criterion(pse1, pse2, rho2 + pe1)
    return (valid, end2, prop, lw, rho, pb1, pe2, psb1, pse2)


def nuts_transition(logp_grad, state, eps, inv_metric, rng,
                    max_treedepth=10, max_delta_h=1000.0):
    """One trajectory-doubling transition from `state`.

    `state` is (q, logp, grad); momentum is refreshed internally. Returns the
    new (q, logp, grad) plus a stats dict with the usual per-iteration
    sampler statistics.
    """
    q, logp, grad = state
    p0 = rng.standard_normal(len(q)) / np.sqrt(inv_metric)
    z0 = _State(np.asarray(q, dtype=float), p0, logp, np.asarray(grad, dtype=float))
    h0 = _hamiltonian(z0, inv_metric)

    z_fwd = z0.copy()
    z_bck = z0.copy()
    ps0 = inv_metric * z0.p
    ps_fwd = ps0.copy()
    ps_bck = ps0.copy()
    rho = z0.p.copy()
    selected = z0
    log_sum_weight = 0.0
    depth = 0
    tree = _Tree()

    while depth < max_treedepth:
        forward = rng.random() > 0.5
        start = z_fwd if forward else z_bck
        step = eps if forward else -eps
        ok, end, prop, lw_sub, rho_sub, p_beg, p_end, ps_beg, ps_end = _build_tree(
            logp_grad, depth, start, step, inv_metric, h0, max_delta_h, rng, tree)
        if forward:
            old_edge_p, old_edge_ps = z_fwd.p, ps_fwd
            z_fwd, ps_fwd = end, ps_end
        else:
            old_edge_p, old_edge_ps = z_bck.p, ps_bck
            z_bck, ps_bck = end, ps_end
        if not ok:
            break
        depth += 1

        # biased progressive selection toward the fresh subtree
        if lw_sub > log_sum_weight or math.log(rng.random() + 1e-300) < lw_sub - log_sum_weight:
            selected = prop
        log_sum_weight = np.logaddexp(log_sum_weight, lw_sub)

        rho_old = rho
        rho = rho + rho_sub
        persist = _criterion(ps_bck, ps_fwd, rho)
        if forward:
            persist = persist and _criterion(ps_bck, ps_beg, rho_old + p_beg)
            persist = persist and _criterion(old_edge_ps, ps_fwd, rho_sub + old_edge_p)
        else:
            persist = persist and _criterion(ps_beg, ps_fwd, rho_old + p_beg)
            persist = persist and _criterion(ps_bck, old_edge_ps, rho_sub + old_edge_p)
        if not persist:
            break

    accept_stat = tree.sum_metro / max(tree.n_leapfrog, 1)
    energy = _hamiltonian(selected, inv_metric)
    stats = {
        "accept_stat__": accept_stat,
        "stepsize__": eps,
        "treedepth__": depth,
        "n_leapfrog__": tree.n_leapfrog,
        "divergent__": 1.0 if tree.divergent else 0.0,
        "energy__": energy,
    }
    return (selected.q, selected.logp, selected.grad), stats


# adaptation ----------------------------------------------------------------

class _DualAveraging:
    def __init__(self, delta, gamma, t0, kappa):
        self.delta = delta
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.mu = 0.0
        self.restart()

    def restart(self):
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def set_mu(self, eps):
        self.mu = math.log(10.0 * eps)

    def learn(self, adapt_stat):
        self.counter += 1
        adapt_stat = min(adapt_stat, 1.0)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - adapt_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def completed(self):
        return math.exp(self.x_bar)


class _Welford:
    def __init__(self, dim):
        self.dim = dim
        self.restart()

    def restart(self):
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        return self.m2 / max(self.n - 1, 1)


class _WindowSchedule:
    """Three-phase warmup: fast stepsize buffer, doubling variance windows,
    terminal fast buffer."""

    def __init__(self, num_warmup, init_buffer, term_buffer, base_window):
        if init_buffer + term_buffer + base_window > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.10 * num_warmup)
            base_window = num_warmup - init_buffer - term_buffer
        self.num_warmup = num_warmup
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.counter = 0
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1

    def in_window(self):
        return (self.counter >= self.init_buffer
                and self.counter < self.num_warmup - self.term_buffer
                and self.counter != self.num_warmup - 1)

    def window_end(self):
        return (self.counter == self.next_window
                and self.counter != self.num_warmup - 1)

    def advance_window(self):
        if self.next_window == self.num_warmup - self.term_buffer - 1:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window == self.num_warmup - self.term_buffer - 1:
            return
        boundary = self.next_window + 2 * self.window_size
        if boundary >= self.num_warmup - self.term_buffer:
            self.next_window = self.num_warmup - self.term_buffer - 1

    def tick(self):
        self.counter += 1


def _init_stepsize(logp_grad, state, eps, inv_metric, rng):
    """Coarse bracketing of the step size around 80% one-step acceptance."""
    q, logp, grad = state
    z = _State(q, np.zeros_like(q), logp, grad)
    threshold = math.log(0.8)
    direction = 0
    for _ in range(200):
        z.p = rng.standard_normal(len(q)) / np.sqrt(inv_metric)
        h0 = _hamiltonian(z, inv_metric)
        nxt = _leapfrog(logp_grad, z, eps, inv_metric)
        h = _hamiltonian(nxt, inv_metric) if nxt.grad is not None else np.inf
        if not np.isfinite(h):
            h = np.inf
        delta_h = h0 - h
        if direction == 0:
            direction = 1 if delta_h > threshold else -1
        if direction == 1 and not delta_h > threshold:
            break
        if direction == -1 and not delta_h < threshold:
            break
        eps = 2.0 * eps if direction == 1 else 0.5 * eps
        if eps > 1e7:
            raise RuntimeError(
                "step size grew without bound; the posterior may be improper")
        if eps < 1e-18:
            raise RuntimeError("no acceptably small step size could be found")
    return eps


# chain driver --------------------------------------------------------------

def _initial_point(logp_grad, dim, control, rng, override_index):
    last_err = None
    for _ in range(100):
        q = rng.uniform(-control.init_r, control.init_r, dim)
        for idx, value in override_index:
            q[idx] = value
        logp, grad = logp_grad(q)
        if np.isfinite(logp) and grad is not None:
            return q, logp, grad
        last_err = logp
    raise RuntimeError(
        "failed to find an initialization with finite log posterior and "
        f"gradient after 100 attempts (last value {last_err}); supply inits "
        "or shrink init_r")


def _sample_chain(logp_grad, dim, control, chain_id, constrain, override_index):
    rng = np.random.default_rng(np.random.SeedSequence((control.seed, chain_id)))
    q, logp, grad = _initial_point(logp_grad, dim, control, rng, override_index)

    inv_metric = np.ones(dim)
    eps = _init_stepsize(logp_grad, (q, logp, grad), control.stepsize, inv_metric, rng)
    da = _DualAveraging(control.adapt_delta, control.gamma, control.t0, control.kappa)
    da.set_mu(eps)
    schedule = _WindowSchedule(control.warmup, control.init_buffer,
                               control.term_buffer, control.base_window)
    welford = _Welford(dim)

    n_keep = control.iter - control.warmup
    first = constrain(q)
    params = np.empty((n_keep, len(first)))
    lp = np.empty(n_keep)
    stats = np.empty((n_keep, len(STAT_COLUMNS)))
    unconstrained = np.empty((n_keep, dim))

    state = (q, logp, grad)
    for m in range(control.iter):
        state, st = nuts_transition(
            logp_grad, state, eps, inv_metric, rng,
            control.max_treedepth, control.max_delta_h)
        if m < control.warmup:
            eps = da.learn(st["accept_stat__"])
            if schedule.in_window():
                welford.add(state[0])
            if schedule.window_end():
                n = welford.n
                var = welford.variance()
                inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                welford.restart()
                schedule.advance_window()
                eps = _init_stepsize(logp_grad, state, eps, inv_metric, rng)
                da.set_mu(eps)
                da.restart()
            schedule.tick()
            if m == control.warmup - 1:
                eps = da.completed()
        else:
            k = m - control.warmup
            lp[k] = state[1]
            params[k] = constrain(state[0])
            unconstrained[k] = state[0]
            st["stepsize__"] = eps
            stats[k] = [st[c] for c in STAT_COLUMNS]
    return lp, params, stats, unconstrained


def _model_chain(payload):
    model, control, chain_id, override_index = payload

    def fn(u):
        return bd.log_posterior(model, u)

    def constrain(u):
        return bd.constrained_row(model, u)

    return _sample_chain(fn, model.layout.unconstrained_dim, control,
                         chain_id, constrain, override_index)


def _resolve_overrides(names, inits):
    pairs = []
    for key, value in (inits or {}).items():
        if key not in names:
            raise ValueError(
                f"init override '{key}' is not an unconstrained coordinate; "
                f"known coordinates include {names[:5]}...")
        pairs.append((names.index(key), float(value)))
    return pairs


def _assemble(results, names, unames):
    lp = np.stack([r[0] for r in results])
    params = np.stack([r[1] for r in results])
    stats = np.stack([r[2] for r in results])
    unconstrained = np.stack([r[3] for r in results])
    return PosteriorDraws(list(names), lp, params, stats, unconstrained, list(unames))


def sample(model, control):
    """Run all chains on a compiled model and gather post-warmup draws."""
    control.validate()
    override_index = _resolve_overrides(model.unconstrained_names, control.inits)
    payloads = [(model, control, cid, override_index)
                for cid in range(control.chains)]
    n_procs = min(control.cores, control.chains)
    if n_procs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(n_procs) as pool:
            results = pool.map(_model_chain, payloads)
    else:
        results = [_model_chain(p) for p in payloads]
    return _assemble(results, model.names, model.unconstrained_names)


def sample_target(logp_grad, dim, control, names=None):
    """Sample a raw differentiable target given as u -> (logp, grad).

    Mainly for calibration studies; the identity map reports unconstrained
    coordinates directly.
    """
    control.validate()
    if names is None:
        names = [f"x[{i + 1}]" for i in range(dim)]
    override_index = _resolve_overrides(list(names), control.inits)
    results = [
        _sample_chain(logp_grad, dim, control, cid, lambda u: u.copy(), override_index)
        for cid in range(control.chains)
    ]
    return _assemble(results, names, names)

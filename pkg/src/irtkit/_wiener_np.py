"""Pure-numpy first-passage-time log-density for the drift-diffusion model.

Evaluates the lower-boundary density via the standard small-time/large-time
series pair with per-batch adaptive truncation, together with analytic
partial derivatives with respect to drift, boundary separation, non-decision
time, and starting bias. The compiled module `_wiener_c` implements the same
interface; this file is the fallback and the reference for its tests.

Parameterization: diffusion coefficient 1, boundary separation ``a``,
starting point ``w * a`` (``w`` in (0,1) measured from the lower boundary),
drift ``v`` positive toward the upper boundary. ``dec`` selects the boundary
the response terminated at (0 lower, 1 upper); the upper-boundary density is
the lower-boundary one after the reflection v -> -v, w -> 1 - w.
"""

import numpy as np

TOL = 1e-10
_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _series_small(u, w, kmax):
    """Standardized density and d/du, d/dw on the small-time branch."""
    # f*(u|w) = (2 pi u^3)^(-1/2) sum_k (w+2k) exp(-(w+2k)^2 / (2u))
    pref = 1.0 / (_SQRT_2PI * u**1.5)
    f = np.zeros_like(u)
    df_du_raw = np.zeros_like(u)  # sum c_k b_k^2/(2u^2) term
    df_dw = np.zeros_like(u)
    for k in range(-kmax, kmax + 1):
        b = w + 2.0 * k
        e = np.exp(-b * b / (2.0 * u))
        c = b * e
        f += c
        df_du_raw += c * b * b / (2.0 * u * u)
        df_dw += e * (1.0 - b * b / u)
    dens = pref * f
    d_du = dens * (-1.5 / u) + pref * df_du_raw
    d_dw = pref * df_dw
    return dens, d_du, d_dw


def _series_large(u, w, kmax):
    """Standardized density and d/du, d/dw on the large-time branch."""
    f = np.zeros_like(u)
    d_du = np.zeros_like(u)
    d_dw = np.zeros_like(u)
    for k in range(1, kmax + 1):
        e = np.exp(-k * k * np.pi * np.pi * u / 2.0)
        s = np.sin(k * np.pi * w)
        f += k * e * s
        d_du += k * e * s * (-k * k * np.pi * np.pi / 2.0)
        d_dw += k * k * e * np.cos(k * np.pi * w)
    return np.pi * f, np.pi * d_du, np.pi * np.pi * d_dw


def _nterms(u):
    """Series lengths needed for tolerance TOL, per element."""
    with np.errstate(invalid="ignore", divide="ignore"):
        arg_s = 2.0 * np.sqrt(2.0 * np.pi * u) * TOL
        ks = np.where(
            arg_s < 1.0,
            2.0 + np.sqrt(np.maximum(-2.0 * u * np.log(np.maximum(arg_s, 1e-300)), 0.0)),
            2.0,
        )
        ks = np.maximum(ks, np.sqrt(u) + 1.0)
        arg_l = np.pi * u * TOL
        kl = np.where(
            arg_l < 1.0,
            np.sqrt(np.maximum(-2.0 * np.log(np.maximum(arg_l, 1e-300)), 0.0) / (np.pi * np.pi * u)),
            1.0 / (np.pi * np.sqrt(u)),
        )
        kl = np.maximum(kl, 1.0 / (np.pi * np.sqrt(u)))
    return ks, kl


def logpdf_and_partials(t, dec, v, a, ndt, w):
    """Log first-passage density and partials d/dv, d/da, d/dndt, d/dw.

    All inputs broadcast to the shape of ``t``. Observations with
    t <= ndt get log-density -inf and zero partials.
    """
    t = np.asarray(t, dtype=float)
    n = t.shape[0]
    dec = np.broadcast_to(np.asarray(dec), t.shape)
    v = np.broadcast_to(np.asarray(v, dtype=float), t.shape).copy()
    a = np.broadcast_to(np.asarray(a, dtype=float), t.shape)
    ndt = np.broadcast_to(np.asarray(ndt, dtype=float), t.shape)
    w = np.broadcast_to(np.asarray(w, dtype=float), t.shape).copy()

    upper = dec != 0
    v = np.where(upper, -v, v)
    w = np.where(upper, 1.0 - w, w)

    tp = t - ndt
    bad = tp <= 0.0
    tp_safe = np.where(bad, 1.0, tp)
    u = tp_safe / (a * a)

    ks, kl = _nterms(u)
    use_small = ks < kl
    u_s = np.where(use_small, u, 1.0)
    u_l = np.where(use_small, 1.0, u)

    dens = np.zeros(n)
    d_du = np.zeros(n)
    d_dw_std = np.zeros(n)
    if np.any(use_small):
        kmax = int(np.ceil(np.max(np.where(use_small, ks, 0.0))))
        f_s, du_s, dw_s = _series_small(u_s, w, kmax)
        dens = np.where(use_small, f_s, dens)
        d_du = np.where(use_small, du_s, d_du)
        d_dw_std = np.where(use_small, dw_s, d_dw_std)
    if np.any(~use_small):
        kmax = int(np.ceil(np.max(np.where(use_small, 0.0, kl))))
        f_l, du_l, dw_l = _series_large(u_l, w, kmax)
        dens = np.where(use_small, dens, f_l)
        d_du = np.where(use_small, d_du, du_l)
        d_dw_std = np.where(use_small, d_dw_std, dw_l)

    # tail truncation can round to zero or slightly negative
    tiny = dens <= 1e-290
    dens_safe = np.where(tiny, 1.0, dens)
    dlog_du = np.where(tiny, 0.0, d_du / dens_safe)
    dlog_dw_std = np.where(tiny, 0.0, d_dw_std / dens_safe)

    logf = (
        -2.0 * np.log(a)
        - v * a * w
        - v * v * tp_safe / 2.0
        + np.where(tiny, -np.inf, np.log(np.abs(dens_safe)))
    )
    dv = -a * w - v * tp_safe
    da = -2.0 / a - v * w + dlog_du * (-2.0 * tp_safe / (a**3))
    dtp = -v * v / 2.0 + dlog_du / (a * a)
    dw = -v * a + dlog_dw_std

    # undo the reflection for upper-boundary responses
    dv = np.where(upper, -dv, dv)
    dw = np.where(upper, -dw, dw)
    dndt = -dtp

    logf = np.where(bad, -np.inf, logf)
    zero = lambda x: np.where(bad | tiny, 0.0, x)
    return logf, zero(dv), zero(da), zero(dndt), zero(dw)

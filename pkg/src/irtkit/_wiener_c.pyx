# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled first-passage-time log-density for the drift-diffusion model.

Same interface and same series/truncation choices as the `_wiener_np`
fallback, including the shared per-batch series length, so the two
implementations agree to floating-point noise.
"""

import numpy as np

from libc.math cimport INFINITY, ceil, cos, exp, fabs, log, pow, sin, sqrt

cdef double TOL = 1e-10
cdef double SQRT_2PI = 2.5066282746310002
cdef double PI = 3.141592653589793


cdef inline double _fmax(double x, double y) noexcept:
    return x if x > y else y


def logpdf_and_partials(t, dec, v, a, ndt, w):
    """Log first-passage density and partials d/dv, d/da, d/dndt, d/dw.

    All inputs broadcast to the shape of ``t``. Observations with
    t <= ndt get log-density -inf and zero partials.
    """
    t_arr = np.ascontiguousarray(np.asarray(t, dtype=np.float64))
    shape = t_arr.shape
    up_arr = np.ascontiguousarray(
        (np.broadcast_to(np.asarray(dec), shape) != 0).astype(np.uint8))
    v_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(v, dtype=np.float64), shape))
    a_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=np.float64), shape))
    ndt_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(ndt, dtype=np.float64), shape))
    w_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(w, dtype=np.float64), shape))

    cdef Py_ssize_t n = t_arr.shape[0]
    logf_arr = np.empty(n, dtype=np.float64)
    dv_arr = np.empty(n, dtype=np.float64)
    da_arr = np.empty(n, dtype=np.float64)
    dndt_arr = np.empty(n, dtype=np.float64)
    dw_arr = np.empty(n, dtype=np.float64)
    u_arr = np.empty(n, dtype=np.float64)
    tp_arr = np.empty(n, dtype=np.float64)
    small_arr = np.empty(n, dtype=np.uint8)
    bad_arr = np.empty(n, dtype=np.uint8)
    vr_arr = np.empty(n, dtype=np.float64)
    wr_arr = np.empty(n, dtype=np.float64)

    cdef const double[::1] tv = t_arr
    cdef const unsigned char[::1] upv = up_arr
    cdef const double[::1] vv = v_arr
    cdef const double[::1] av = a_arr
    cdef const double[::1] ndtv = ndt_arr
    cdef const double[::1] wv = w_arr
    cdef double[::1] logf = logf_arr
    cdef double[::1] dv_o = dv_arr
    cdef double[::1] da_o = da_arr
    cdef double[::1] dndt_o = dndt_arr
    cdef double[::1] dw_o = dw_arr
    cdef double[::1] uu = u_arr
    cdef double[::1] tps = tp_arr
    cdef unsigned char[::1] small = small_arr
    cdef unsigned char[::1] bad = bad_arr
    cdef double[::1] vr = vr_arr
    cdef double[::1] wr = wr_arr

    cdef Py_ssize_t i
    cdef int k, kmax_s = 0, kmax_l = 0
    cdef double vi, wi, tp, u, arg_s, arg_l, ks, kl
    cdef double pref, f, df_du_raw, df_dw, b, e, c, s
    cdef double dens, d_du, d_dw_std, dlog_du, dlog_dw_std
    cdef double lf, dv_i, da_i, dtp, dndt_i, dw_i
    cdef bint tiny

    # pass 1: reflection, scaled time, branch choice, shared series lengths
    for i in range(n):
        vi = vv[i]
        wi = wv[i]
        if upv[i]:
            vi = -vi
            wi = 1.0 - wi
        vr[i] = vi
        wr[i] = wi
        tp = tv[i] - ndtv[i]
        if tp <= 0.0:
            bad[i] = 1
            tp = 1.0
        else:
            bad[i] = 0
        tps[i] = tp
        u = tp / (av[i] * av[i])
        uu[i] = u

        arg_s = 2.0 * sqrt(2.0 * PI * u) * TOL
        if arg_s < 1.0:
            ks = 2.0 + sqrt(_fmax(-2.0 * u * log(_fmax(arg_s, 1e-300)), 0.0))
        else:
            ks = 2.0
        ks = _fmax(ks, sqrt(u) + 1.0)
        arg_l = PI * u * TOL
        if arg_l < 1.0:
            kl = sqrt(_fmax(-2.0 * log(_fmax(arg_l, 1e-300)), 0.0) / (PI * PI * u))
        else:
            kl = 1.0 / (PI * sqrt(u))
        kl = _fmax(kl, 1.0 / (PI * sqrt(u)))

        if ks < kl:
            small[i] = 1
            if <int>ceil(ks) > kmax_s:
                kmax_s = <int>ceil(ks)
        else:
            small[i] = 0
            if <int>ceil(kl) > kmax_l:
                kmax_l = <int>ceil(kl)

    # pass 2: series evaluation and assembly
    for i in range(n):
        u = uu[i]
        wi = wr[i]
        vi = vr[i]
        tp = tps[i]
        if small[i]:
            pref = 1.0 / (SQRT_2PI * pow(u, 1.5))
            f = 0.0
            df_du_raw = 0.0
            df_dw = 0.0
            for k in range(-kmax_s, kmax_s + 1):
                b = wi + 2.0 * k
                e = exp(-b * b / (2.0 * u))
                c = b * e
                f += c
                df_du_raw += c * b * b / (2.0 * u * u)
                df_dw += e * (1.0 - b * b / u)
            dens = pref * f
            d_du = dens * (-1.5 / u) + pref * df_du_raw
            d_dw_std = pref * df_dw
        else:
            f = 0.0
            d_du = 0.0
            d_dw_std = 0.0
            for k in range(1, kmax_l + 1):
                e = exp(-k * k * PI * PI * u / 2.0)
                s = sin(k * PI * wi)
                f += k * e * s
                d_du += k * e * s * (-k * k * PI * PI / 2.0)
                d_dw_std += k * k * e * cos(k * PI * wi)
            dens = PI * f
            d_du = PI * d_du
            d_dw_std = PI * PI * d_dw_std

        tiny = dens <= 1e-290
        if tiny:
            dens = 1.0
            dlog_du = 0.0
            dlog_dw_std = 0.0
            lf = -INFINITY
        else:
            dlog_du = d_du / dens
            dlog_dw_std = d_dw_std / dens
            lf = log(fabs(dens))

        lf = -2.0 * log(av[i]) - vi * av[i] * wi - vi * vi * tp / 2.0 + lf
        dv_i = -av[i] * wi - vi * tp
        da_i = (-2.0 / av[i] - vi * wi
                + dlog_du * (-2.0 * tp / (av[i] * av[i] * av[i])))
        dtp = -vi * vi / 2.0 + dlog_du / (av[i] * av[i])
        dw_i = -vi * av[i] + dlog_dw_std

        if upv[i]:
            dv_i = -dv_i
            dw_i = -dw_i
        dndt_i = -dtp

        if bad[i]:
            lf = -INFINITY
        if bad[i] or tiny:
            dv_i = 0.0
            da_i = 0.0
            dndt_i = 0.0
            dw_i = 0.0

        logf[i] = lf
        dv_o[i] = dv_i
        da_o[i] = da_i
        dndt_o[i] = dndt_i
        dw_o[i] = dw_i

    return logf_arr, dv_arr, da_arr, dndt_arr, dw_arr

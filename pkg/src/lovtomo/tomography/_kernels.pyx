# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel likelihood minimizer.

Mirrors ``_fallback.minimize_one`` step for step; see that module for the
iteration. Pixels are independent, so the ``prange`` sweep gives results
that do not depend on thread count or schedule.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport log, sqrt, isfinite, fabs

from .model import PROJECTOR_KETS, NLL_EPS

cdef enum:
    NP = 16
    NK = 16

cdef double ARMIJO_C1 = 1e-4
cdef int MAX_BACKTRACK = 60
cdef double FIRST_STEP = 0.1
cdef double EPS = NLL_EPS

cdef double PK_RE[NK * 4]
cdef double PK_IM[NK * 4]
# (row, col, re-index, im-index) of the strictly-lower entries of T
cdef int OFF_ROW[6]
cdef int OFF_COL[6]
cdef int OFF_RE[6]
cdef int OFF_IM[6]


def _init_tables():
    cdef int k, j
    kets = np.asarray(PROJECTOR_KETS)
    for k in range(NK):
        for j in range(4):
            PK_RE[k * 4 + j] = kets[k, j].real
            PK_IM[k * 4 + j] = kets[k, j].imag
    from .model import OFFDIAG_LAYOUT
    for k, (r, c, re, im) in enumerate(OFFDIAG_LAYOUT):
        OFF_ROW[k] = r
        OFF_COL[k] = c
        OFF_RE[k] = re
        OFF_IM[k] = im


_init_tables()


cdef double _fg(const double* x, const double* n, double flux, double* g) noexcept nogil:
    cdef double tr[16]
    cdef double ti[16]
    cdef double mr[16]
    cdef double mi[16]
    cdef double tau = 0.0, f = 0.0, c = 0.0
    cdef double vr, vi, q, nbar, w, ar, ai, br, bi
    cdef int i, j, k, l, e

    for i in range(16):
        tr[i] = 0.0
        ti[i] = 0.0
        mr[i] = 0.0
        mi[i] = 0.0
    for i in range(4):
        tr[i * 4 + i] = x[i]
    for e in range(6):
        tr[OFF_ROW[e] * 4 + OFF_COL[e]] = x[OFF_RE[e]]
        ti[OFF_ROW[e] * 4 + OFF_COL[e]] = x[OFF_IM[e]]
    for i in range(16):
        tau += tr[i] * tr[i] + ti[i] * ti[i]

    for k in range(NK):
        q = 0.0
        for i in range(4):
            vr = 0.0
            vi = 0.0
            for j in range(i + 1):
                vr += tr[i * 4 + j] * PK_RE[k * 4 + j] - ti[i * 4 + j] * PK_IM[k * 4 + j]
                vi += tr[i * 4 + j] * PK_IM[k * 4 + j] + ti[i * 4 + j] * PK_RE[k * 4 + j]
            q += vr * vr + vi * vi
        nbar = flux * q / tau + EPS
        f += nbar - n[k] * log(nbar)
        w = flux * (1.0 - n[k] / nbar)
        c += w * q
        # M += w psi psi^dag
        for i in range(4):
            for j in range(4):
                mr[i * 4 + j] += w * (PK_RE[k * 4 + i] * PK_RE[k * 4 + j]
                                      + PK_IM[k * 4 + i] * PK_IM[k * 4 + j])
                mi[i * 4 + j] += w * (PK_IM[k * 4 + i] * PK_RE[k * 4 + j]
                                      - PK_RE[k * 4 + i] * PK_IM[k * 4 + j])

    # G = 2 T M / tau - 2 c T / tau^2, lower triangle only
    for e in range(10):
        if e < 4:
            i = e
            j = e
        else:
            i = OFF_ROW[e - 4]
            j = OFF_COL[e - 4]
        ar = 0.0
        ai = 0.0
        for l in range(i + 1):
            br = mr[l * 4 + j]
            bi = mi[l * 4 + j]
            ar += tr[i * 4 + l] * br - ti[i * 4 + l] * bi
            ai += tr[i * 4 + l] * bi + ti[i * 4 + l] * br
        ar = 2.0 * ar / tau - 2.0 * c * tr[i * 4 + j] / (tau * tau)
        ai = 2.0 * ai / tau - 2.0 * c * ti[i * 4 + j] / (tau * tau)
        if e < 4:
            g[e] = ar
        else:
            g[OFF_RE[e - 4]] = ar
            g[OFF_IM[e - 4]] = ai
    return f


cdef inline double _dot(const double* a, const double* b) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(NP):
        s += a[i] * b[i]
    return s


cdef inline void _set_identity(double* h, double scale) noexcept nogil:
    cdef int i
    for i in range(NP * NP):
        h[i] = 0.0
    for i in range(NP):
        h[i * NP + i] = scale


cdef int _minimize(double* x, const double* n, double flux, int max_iter, double rel_tol,
                   double* f_out, int* it_out, double* history, int* n_hist_out) noexcept nogil:
    """Returns status (0 converged, 1 max_iter); ``history`` may be NULL."""
    cdef double h[NP * NP]
    cdef double g[NP]
    cdef double gn[NP]
    cdef double d[NP]
    cdef double xn[NP]
    cdef double s[NP]
    cdef double y[NP]
    cdef double hy[NP]
    cdef double f, fn, gd, dnorm, alpha, sy, yy, ss, rho, yhy, coef, improvement, threshold
    cdef int i, j, it = 0, bt, small = 0, status = 1, n_hist = 0
    cdef bint fresh = True, accepted

    f = _fg(x, n, flux, g)
    if history != NULL:
        history[0] = f
        n_hist = 1
    _set_identity(h, 1.0)

    while it < max_iter:
        it += 1
        for i in range(NP):
            d[i] = 0.0
            for j in range(NP):
                d[i] -= h[i * NP + j] * g[j]
        gd = _dot(g, d)
        if not gd < 0:
            _set_identity(h, 1.0)
            fresh = True
            for i in range(NP):
                d[i] = -g[i]
            gd = -_dot(g, g)
            if gd == 0:
                status = 0
                break
        dnorm = sqrt(_dot(d, d))
        if fresh and dnorm > FIRST_STEP:
            alpha = FIRST_STEP / dnorm
        else:
            alpha = 1.0
        accepted = False
        for bt in range(MAX_BACKTRACK):
            for i in range(NP):
                xn[i] = x[i] + alpha * d[i]
            fn = _fg(xn, n, flux, gn)
            if isfinite(fn) and fn <= f + ARMIJO_C1 * alpha * gd and fn <= f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if fresh:
                status = 0
                break
            _set_identity(h, 1.0)
            fresh = True
            continue

        for i in range(NP):
            s[i] = xn[i] - x[i]
            y[i] = gn[i] - g[i]
        sy = _dot(s, y)
        yy = _dot(y, y)
        ss = _dot(s, s)
        if sy > 1e-12 * sqrt(ss * yy):
            if fresh:
                _set_identity(h, sy / yy)
            rho = 1.0 / sy
            for i in range(NP):
                hy[i] = 0.0
                for j in range(NP):
                    hy[i] += h[i * NP + j] * y[j]
            yhy = _dot(y, hy)
            coef = rho * rho * yhy + rho
            for i in range(NP):
                for j in range(NP):
                    h[i * NP + j] = (h[i * NP + j] - rho * (s[i] * hy[j] + hy[i] * s[j])
                                     + coef * s[i] * s[j])
            fresh = False

        improvement = f - fn
        threshold = rel_tol * (fabs(f) if fabs(f) > 1.0 else 1.0)
        for i in range(NP):
            x[i] = xn[i]
            g[i] = gn[i]
        f = fn
        if history != NULL:
            history[n_hist] = f
            n_hist += 1
        if improvement < threshold:
            small += 1
        else:
            small = 0
        if small >= 2:
            status = 0
            break

    f_out[0] = f
    it_out[0] = it
    if n_hist_out != NULL:
        n_hist_out[0] = n_hist
    return status


def nll_and_gradient(double[::1] theta, double[::1] counts, double flux):
    """Compiled twin of ``model.nll_and_gradient`` (for cross-checking)."""
    g = np.empty(NP)
    cdef double[::1] gv = g
    cdef double f = _fg(&theta[0], &counts[0], flux, &gv[0])
    return f, g


def minimize_one(theta0, counts, double flux, int max_iter=10000, double rel_tol=1e-10,
                 bint record=False):
    cdef double[::1] x = np.array(theta0, dtype=np.float64)
    cdef double[::1] n = np.ascontiguousarray(counts, dtype=np.float64)
    cdef double f = 0.0
    cdef int it = 0, status, n_hist = 0
    cdef double[::1] hist
    cdef double* hp = NULL
    hist_arr = np.empty(max_iter + 1 if record else 1)
    if record:
        hist = hist_arr
        hp = &hist[0]
    status = _minimize(&x[0], &n[0], flux, max_iter, rel_tol, &f, &it, hp, &n_hist)
    history = [float(v) for v in hist_arr[:n_hist]] if record else None
    return np.asarray(x), f, it, status, history


def minimize_batch(theta0, counts, flux, int max_iter=10000, double rel_tol=1e-10,
                   int num_threads=0):
    """Minimize every row independently; ``num_threads=0`` lets OpenMP decide."""
    cdef double[:, ::1] x = np.array(theta0, dtype=np.float64, order="C")
    cdef double[:, ::1] n = np.ascontiguousarray(counts, dtype=np.float64)
    cdef double[::1] fl = np.ascontiguousarray(flux, dtype=np.float64)
    cdef Py_ssize_t npix = x.shape[0], p
    nll_arr = np.empty(npix)
    it_arr = np.empty(npix, dtype=np.int32)
    st_arr = np.empty(npix, dtype=np.int8)
    cdef double[::1] nll = nll_arr
    cdef int[::1] iters = it_arr
    cdef signed char[::1] status = st_arr
    if npix == 0:
        return np.asarray(x), nll_arr, it_arr, st_arr
    if num_threads <= 0:
        for p in prange(npix, nogil=True, schedule="dynamic", chunksize=16):
            status[p] = <signed char>_minimize(&x[p, 0], &n[p, 0], fl[p], max_iter, rel_tol,
                                               &nll[p], &iters[p], NULL, NULL)
    else:
        for p in prange(npix, nogil=True, schedule="dynamic", chunksize=16,
                        num_threads=num_threads):
            status[p] = <signed char>_minimize(&x[p, 0], &n[p, 0], fl[p], max_iter, rel_tol,
                                               &nll[p], &iters[p], NULL, NULL)
    return np.asarray(x), nll_arr, it_arr, st_arr

"""Pure-Python likelihood minimizer, used when the compiled kernel is unavailable.

Implements the same quasi-Newton iteration as ``_kernels.pyx``:

* BFGS on the 16 Cholesky parameters with an inverse-Hessian estimate,
  reset to a (scaled) gradient step whenever the direction is not a descent.
* Armijo backtracking (c1 = 1e-4, halving, at most 60 trials); only
  decreasing steps are accepted, so the NLL sequence is non-increasing.
* Stop once two consecutive accepted steps each improve the NLL by less than
  ``rel_tol * max(|NLL|, 1)``, when no decreasing step exists, or after
  ``max_iter`` iterations.
"""

from __future__ import annotations

import numpy as np

from .model import nll_and_gradient

ARMIJO_C1 = 1e-4
MAX_BACKTRACK = 60
FIRST_STEP = 0.1

CONVERGED = 0
MAX_ITER = 1


def minimize_one(theta0, counts, flux, max_iter=10000, rel_tol=1e-10, record=False):
    """Minimize the NLL for one pixel.

    Returns ``(theta, nll, iterations, status, history)``; ``history`` lists
    the accepted NLL values (seed first) when ``record`` is set, else None.
    """
    x = np.array(theta0, dtype=float)
    counts = np.asarray(counts, dtype=float)
    f, g = nll_and_gradient(x, counts, flux)
    history = [f] if record else None
    eye = np.eye(x.size)
    h = eye.copy()
    fresh = True
    small = 0
    status = MAX_ITER
    it = 0
    while it < max_iter:
        it += 1
        d = -h @ g
        gd = float(g @ d)
        if not gd < 0:
            h = eye.copy()
            fresh = True
            d = -g
            gd = -float(g @ g)
            if gd == 0:
                status = CONVERGED
                break
        dnorm = float(np.sqrt(d @ d))
        alpha = FIRST_STEP / dnorm if fresh and dnorm > FIRST_STEP else 1.0
        accepted = False
        for _ in range(MAX_BACKTRACK):
            xn = x + alpha * d
            fn, gn = nll_and_gradient(xn, counts, flux)
            if np.isfinite(fn) and fn <= f + ARMIJO_C1 * alpha * gd and fn <= f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if fresh:
                status = CONVERGED
                break
            h = eye.copy()
            fresh = True
            continue
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12 * np.sqrt(float(s @ s) * float(y @ y)):
            if fresh:
                h = eye * (sy / float(y @ y))
            rho = 1.0 / sy
            hy = h @ y
            h = (h - rho * (np.outer(s, hy) + np.outer(hy, s))
                 + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
            fresh = False
        improvement = f - fn
        threshold = rel_tol * max(abs(f), 1.0)
        x, f, g = xn, fn, gn
        if record:
            history.append(f)
        small = small + 1 if improvement < threshold else 0
        if small >= 2:
            status = CONVERGED
            break
    return x, f, it, status, history


def minimize_batch(theta0, counts, flux, max_iter=10000, rel_tol=1e-10, num_threads=1):
    """Run ``minimize_one`` over rows; ``num_threads`` is accepted for API parity."""
    theta0 = np.asarray(theta0, dtype=float)
    n = theta0.shape[0]
    theta = np.empty_like(theta0)
    nll = np.empty(n)
    iters = np.empty(n, dtype=np.int32)
    status = np.empty(n, dtype=np.int8)
    for p in range(n):
        theta[p], nll[p], iters[p], status[p], _ = minimize_one(
            theta0[p], counts[p], flux[p], max_iter, rel_tol)
    return theta, nll, iters, status

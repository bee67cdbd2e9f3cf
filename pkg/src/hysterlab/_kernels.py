"""Compiled sequence kernels.

These mirror the scalar recurrences in :mod:`hysterlab.operators` operation
for operation so that results agree to rounding. Inner parameter layout for
the network kernels (``n`` NDS neurons, ``m`` tanh neurons)::

    [w_x, w_xdot, bias, log_beta] * n | lin_w_x, lin_w_xdot | W (m, n+1) row-major | b (m)
"""

from __future__ import annotations

import math
import os

import numpy as np
from numba import njit, prange, set_num_threads, config

RIDGE = 1e-8


def configure_threads() -> int:
    """Honour ``HYSTERLAB_THREADS`` as a cap on parallel objective evaluation."""
    cap = os.environ.get("HYSTERLAB_THREADS")
    n = config.NUMBA_NUM_THREADS
    if cap:
        n = max(1, min(n, int(cap)))
    set_num_threads(n)
    return n


@njit(cache=True)
def _bl(s, limit):
    if s < limit:
        return 1.0 - s / limit
    return 0.0


@njit(cache=True)
def fast_tanh(z):
    # exp-based form away from zero (no cancellation there), libm tanh near it
    a = abs(z)
    if a < 0.5:
        return math.tanh(z)
    t = math.exp(-2.0 * a)
    v = (1.0 - t) / (1.0 + t)
    return v if z > 0 else -v


@njit(cache=True)
def stop_sequence(x, r, out):
    """Stop operators with thresholds ``r`` (m,) driven by ``x`` (N,); out (N, m)."""
    n = x.shape[0]
    for j in range(r.shape[0]):
        rj = r[j]
        xp = x[0]
        y = min(rj, max(-rj, xp))
        out[0, j] = y
        for i in range(1, n):
            v = x[i]
            y = min(rj, max(-rj, v - xp + y))
            xp = v
            out[i, j] = y


@njit(cache=True)
def ds_sequence(u, r, beta, out):
    """Deteriorating stops, column ``j`` of ``u`` (N, m) drives operator ``j``."""
    n, m = u.shape
    for j in range(m):
        rj = r[j]
        limit = rj * beta[j]
        xp = u[0, j]
        y = min(rj, max(-rj, xp))
        pp = xp - y
        s = 0.0
        out[0, j] = y * _bl(s, limit)
        for i in range(1, n):
            v = u[i, j]
            y = min(rj, max(-rj, v - xp + y))
            xp = v
            p = xp - y
            s = s + abs(p - pp)
            pp = p
            out[i, j] = y * _bl(s, limit)


@njit(cache=True)
def relay_sequence(x, alpha, beta_thr, sign0, out):
    """Relays with given thresholds and pre-seeded signs; the first sample is applied too."""
    n = x.shape[0]
    for j in range(alpha.shape[0]):
        sg = sign0[j]
        a = alpha[j]
        b = beta_thr[j]
        for i in range(n):
            v = x[i]
            if v >= b:
                sg = 1.0
            elif v <= a:
                sg = -1.0
            out[i, j] = sg


@njit(cache=True)
def rate_stop_sequence(x, xdot, r, c, out):
    """Stops whose threshold at sample ``i`` is ``r_j * (1 + c*|xdot_i|)``."""
    n = x.shape[0]
    for j in range(r.shape[0]):
        rj = r[j] * (1.0 + c * abs(xdot[0]))
        xp = x[0]
        y = min(rj, max(-rj, xp))
        out[0, j] = y
        for i in range(1, n):
            rj = r[j] * (1.0 + c * abs(xdot[i]))
            v = x[i]
            y = min(rj, max(-rj, v - xp + y))
            xp = v
            out[i, j] = y


@njit(cache=True)
def hidden_layer(theta, n_stop, n_tanh, x, xdot, use_rate, H):
    """Fill ``H`` (N, n_tanh + 1) with tanh activations and a trailing ones column."""
    n = x.shape[0]
    nlin = 4 * n_stop
    woff = nlin + 2
    boff = woff + n_tanh * (n_stop + 1)
    wx_lin = theta[nlin]
    wd_lin = theta[nlin + 1] if use_rate else 0.0

    wx = np.empty(n_stop)
    wd = np.empty(n_stop)
    b = np.empty(n_stop)
    limit = np.empty(n_stop)
    y = np.empty(n_stop)
    xp = np.empty(n_stop)
    pp = np.empty(n_stop)
    s = np.zeros(n_stop)
    act = np.empty(n_stop + 1)
    W = theta[woff:boff].reshape((n_tanh, n_stop + 1))
    bt = theta[boff:boff + n_tanh]

    xd = xdot[0] if use_rate else 0.0
    for j in range(n_stop):
        wx[j] = theta[4 * j]
        wd[j] = theta[4 * j + 1] if use_rate else 0.0
        b[j] = theta[4 * j + 2]
        limit[j] = math.exp(theta[4 * j + 3])
        u = wx[j] * x[0] + wd[j] * xd + b[j]
        y[j] = min(1.0, max(-1.0, u))
        xp[j] = u
        pp[j] = u - y[j]

    for i in range(n):
        xi = x[i]
        xd = xdot[i] if use_rate else 0.0
        if i > 0:
            for j in range(n_stop):
                u = wx[j] * xi + wd[j] * xd + b[j]
                yj = min(1.0, max(-1.0, u - xp[j] + y[j]))
                p = u - yj
                s[j] = s[j] + abs(p - pp[j])
                y[j] = yj
                xp[j] = u
                pp[j] = p
        for j in range(n_stop):
            act[j] = y[j] * _bl(s[j], limit[j])
        act[n_stop] = wx_lin * xi + wd_lin * xd
        for k in range(n_tanh):
            z = bt[k]
            for j in range(n_stop + 1):
                z += W[k, j] * act[j]
            H[i, k] = fast_tanh(z)
        H[i, n_tanh] = 1.0


@njit(cache=True)
def ridge_solve(H, y, lam):
    """Minimise ``||H c - y||^2 + lam ||c||^2`` via the normal equations with one
    step of iterative refinement."""
    p = H.shape[1]
    G = H.T @ H
    for k in range(p):
        G[k, k] += lam
    rhs = H.T @ y
    c = np.linalg.solve(G, rhs)
    res = rhs - G @ c
    c = c + np.linalg.solve(G, res)
    return c


@njit(cache=True)
def nested_mse(theta, n_stop, n_tanh, x, xdot, use_rate, target, lam):
    n = x.shape[0]
    H = np.empty((n, n_tanh + 1))
    hidden_layer(theta, n_stop, n_tanh, x, xdot, use_rate, H)
    if not np.all(np.isfinite(H)):
        return np.inf
    c = ridge_solve(H, target, lam)
    pred = H @ c
    acc = 0.0
    for i in range(n):
        d = pred[i] - target[i]
        acc += d * d
    return acc / n


@njit(cache=True, parallel=True)
def batch_nested_mse(thetas, n_stop, n_tanh, x, xdot, use_rate, target, lam, out):
    for p in prange(thetas.shape[0]):
        v = nested_mse(thetas[p], n_stop, n_tanh, x, xdot, use_rate, target, lam)
        if not math.isfinite(v):
            v = np.inf
        out[p] = v

"""Hot inner loops, each in a numba flavour and a pure-numpy flavour.

The public names at the bottom of the module point at one flavour, chosen by
``qfilter._accel.USE_NUMBA``. Both flavours are importable directly
(``numba_impl`` / ``numpy_impl``) so tests and benchmarks can compare them.
"""

from types import SimpleNamespace

import numpy as np

from ._accel import USE_NUMBA, njit

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# --------------------------------------------------------------------------
# Loop bodies. Written in the numba-compatible subset; the numba flavour is
# these functions compiled, the numpy flavour runs them (or a vectorised
# rewrite) in the interpreter.
# --------------------------------------------------------------------------


def _kalman_scalar(obs, a, q, A, r, m0, P0):
    n = obs.shape[0]
    means = np.empty(n)
    variances = np.empty(n)
    pred_means = np.empty(n)
    pred_vars = np.empty(n)
    m = m0
    P = P0
    for k in range(n):
        mp = a * m
        Pp = a * a * P + q
        S = A * A * Pp + r
        K = Pp * A / S
        m = mp + K * (obs[k] - A * mp)
        P = (1.0 - K * A) * Pp
        if P < 0.0:
            P = 0.0
        means[k] = m
        variances[k] = P
        pred_means[k] = mp
        pred_vars[k] = Pp
    return means, variances, pred_means, pred_vars


def _mobius_chain(s0, c, n_per_block, uniforms):
    n_blocks = uniforms.shape[0] // n_per_block
    hidden = np.empty(n_blocks)
    observed = np.empty(n_blocks)
    s = s0
    idx = 0
    for k in range(n_blocks):
        hidden[k] = s
        net = 0
        for _ in range(n_per_block):
            if uniforms[idx] < 0.5 * (1.0 + c * s):
                s = (s + c) / (1.0 + c * s)
                net += 1
            else:
                s = (s - c) / (1.0 - c * s)
                net -= 1
            idx += 1
        observed[k] = net
    return hidden, observed


def _euler_qubit_chain(s0, c, N, eps, omega_trans, omega_obs, coupled):
    T = omega_obs.shape[0]
    hidden = np.empty(T)
    observed = np.empty(T)
    lo = -1.0 + eps
    hi = 1.0 - eps
    clamps = 0
    s = s0
    prev_noise = omega_trans[0]
    for k in range(T):
        w = prev_noise if coupled else omega_trans[k]
        g = 1.0 - s * s
        s = s + N * c * c * s * g + w * c * g
        if s < lo:
            s = lo
            clamps += 1
        elif s > hi:
            s = hi
            clamps += 1
        hidden[k] = s
        observed[k] = N * c * s + omega_obs[k]
        prev_noise = omega_obs[k]
    return hidden, observed, clamps


def _nw_sums_loop(targets, conds, x, window, h, g):
    n = targets.shape[0]
    m = window.shape[0]
    kh = _INV_SQRT_2PI / h
    kg = _INV_SQRT_2PI / g
    num = 0.0
    dnum = 0.0
    den = 0.0
    for i in range(n):
        wgt = 1.0
        for j in range(m):
            v = (window[j] - conds[i, j]) / g
            wgt *= kg * np.exp(-0.5 * v * v)
        u = (x - targets[i]) / h
        kv = kh * np.exp(-0.5 * u * u) * wgt
        num += kv
        dnum -= u / h * kv
        den += wgt
    return num, dnum, den


def _nw_sums_vec(targets, conds, x, window, h, g):
    if window.shape[0]:
        v = (window[None, :] - conds) / g
        wgt = np.prod(np.exp(-0.5 * v * v) * (_INV_SQRT_2PI / g), axis=1)
    else:
        wgt = np.ones(targets.shape[0])
    u = (x - targets) / h
    kv = np.exp(-0.5 * u * u) * (_INV_SQRT_2PI / h) * wgt
    return kv.sum(), -(u / h * kv).sum(), wgt.sum()


def _silverman(values):
    n = values.shape[0]
    if n < 2:
        return 0.0
    return 1.06 * np.std(values) * np.sqrt(n / (n - 1.0)) * n ** (-0.2)


def _nw_sequential_loop(x, m, start, fixed_h):
    """Lag-``m`` kernel predictive of x[k] from x[:k], for every k >= start."""
    n = x.shape[0]
    num = np.full(n, np.nan)
    dnum = np.full(n, np.nan)
    den = np.full(n, np.nan)
    bw = np.full(n, np.nan)
    s1 = 0.0
    s2 = 0.0
    cnt = 0
    for k in range(n):
        if k >= start:
            if fixed_h > 0.0:
                h = fixed_h
            elif cnt < 2:
                h = 0.0
            else:
                mean = s1 / cnt
                var = (s2 - cnt * mean * mean) / (cnt - 1.0)
                if var < 0.0:
                    var = 0.0
                h = 1.06 * np.sqrt(var) * cnt ** (-0.2)
            bw[k] = h
            if h > 0.0:
                kh = _INV_SQRT_2PI / h
                a = 0.0
                b = 0.0
                d = 0.0
                for i in range(m, k):
                    wgt = 1.0
                    for j in range(1, m + 1):
                        v = (x[k - j] - x[i - j]) / h
                        wgt *= kh * np.exp(-0.5 * v * v)
                    u = (x[k] - x[i]) / h
                    kv = kh * np.exp(-0.5 * u * u) * wgt
                    a += kv
                    b -= u / h * kv
                    d += wgt
                num[k] = a
                dnum[k] = b
                den[k] = d
        # x[k] joins the target pool for later steps
        if k >= m:
            s1 += x[k]
            s2 += x[k] * x[k]
            cnt += 1
    return num, dnum, den, bw


def _nw_sequential_vec(x, m, start, fixed_h):
    n = x.shape[0]
    num = np.full(n, np.nan)
    dnum = np.full(n, np.nan)
    den = np.full(n, np.nan)
    bw = np.full(n, np.nan)
    for k in range(start, n):
        targets = x[m:k]
        h = fixed_h if fixed_h > 0.0 else _silverman(targets)
        bw[k] = h
        if h <= 0.0:
            continue
        conds = np.stack([x[m - j : k - j] for j in range(1, m + 1)], axis=1) if m else np.empty((k - m, 0))
        window = x[k - m : k][::-1] if m else np.empty(0)
        num[k], dnum[k], den[k] = _nw_sums_vec(targets, conds, x[k], window, h, h)
    return num, dnum, den, bw


numpy_impl = SimpleNamespace(
    kalman_scalar=_kalman_scalar,
    mobius_chain=_mobius_chain,
    euler_qubit_chain=_euler_qubit_chain,
    nw_sums=_nw_sums_vec,
    nw_sequential=_nw_sequential_vec,
)

numba_impl = SimpleNamespace(
    kalman_scalar=njit(_kalman_scalar),
    mobius_chain=njit(_mobius_chain),
    euler_qubit_chain=njit(_euler_qubit_chain),
    nw_sums=njit(_nw_sums_loop),
    nw_sequential=njit(_nw_sequential_loop),
)

_active = numba_impl if USE_NUMBA else numpy_impl

kalman_scalar = _active.kalman_scalar
mobius_chain = _active.mobius_chain
euler_qubit_chain = _active.euler_qubit_chain
nw_sums = _active.nw_sums
nw_sequential = _active.nw_sequential

"""Compiled inner loop of the two-timescale PDMP simulator.

Channels of all populations are flattened.  Between accepted jumps the
Galerkin system is advanced by exponential Euler steps of length at most
``h_max`` (forcing frozen at step start).  Jump times come from thinning a
homogeneous Poisson clock whose rate is the sum over (channel, target)
pairs of ``alpha_max`` (divided by eps for fast pairs); the voltage at a
candidate time is read from the step's exponential-Euler dense output.
"""

import math

import numba
import numpy as np

from .kinetics import eval_rate

OK = 0
MAJORANT_VIOLATED = 2
BLOW_UP = 4

SNAP = 1e-9


@numba.njit(cache=True)
def _channel_majorant(m, s, codes, fast, amax, eps):
    tot = 0.0
    for z in range(codes.shape[2]):
        if codes[m, s, z] >= 0:
            if fast[m, s, z]:
                tot += amax[m] / eps
            else:
                tot += amax[m]
    return tot


@numba.njit(cache=True)
def _forcing(c, st, chan_model, weight, cond, rev, W, stim, g):
    K = c.size
    for k in range(K):
        g[k] = stim[k]
    for i in range(st.size):
        y = 0.0
        for k in range(K):
            y += W[k, i] * c[k]
        m = chan_model[i]
        amp = weight[i] * cond[m, st[i]] * (rev[m, st[i]] - y)
        if amp != 0.0:
            for k in range(K):
                g[k] += W[k, i] * amp


@numba.njit(cache=True)
def pdmp_kernel(
    rng,
    lam,
    hw,
    c0,
    stim,
    W,
    weight,
    chan_model,
    cond,
    rev,
    codes,
    params,
    fast,
    amax,
    states0,
    eps,
    h_max,
    out_times,
    frozen,
    blow_limit,
):
    K = lam.size
    N = states0.size
    M = cond.shape[0]
    S = cond.shape[1]
    n_out = out_times.size

    out_c = np.zeros((n_out, K))
    out_counts = np.zeros((n_out, M, S), dtype=np.int64)
    out_jumps = np.zeros(n_out, dtype=np.int64)

    cap = 1024
    log_t = np.empty(cap)
    log_i = np.empty(cap, dtype=np.int64)
    log_from = np.empty(cap, dtype=np.int64)
    log_to = np.empty(cap, dtype=np.int64)

    c = c0.copy()
    st = states0.copy()
    g = np.zeros(K)
    ctmp = np.zeros(K)
    lam_i = np.zeros(N)
    total = 0.0
    for i in range(N):
        lam_i[i] = _channel_majorant(chan_model[i], st[i], codes, fast, amax, eps)
        total += lam_i[i]

    t = 0.0
    njump = 0
    hmax_norm = 0.0
    status = OK

    # record t = 0
    for k in range(K):
        out_c[0, k] = c[k]
    for i in range(N):
        out_counts[0, chan_model[i], st[i]] += 1
    nrm = 0.0
    for k in range(K):
        nrm += hw[k] * c[k] * c[k]
    hmax_norm = math.sqrt(nrm)

    tc = t + rng.standard_exponential() / total if total > 0 else np.inf
    io = 1
    while io < n_out:
        target = out_times[io]
        # snap onto the output time instead of leaving a rounding-sized step
        hits = t + h_max >= target - SNAP * h_max
        t_end = target if hits else t + h_max
        if not frozen:
            _forcing(c, st, chan_model, weight, cond, rev, W, stim, g)
        jumped = False
        while tc <= t_end:
            # pick a (channel, target) slot proportionally to its majorant
            u = rng.random() * total
            i = 0
            acc = lam_i[0]
            while acc < u and i < N - 1:
                i += 1
                acc += lam_i[i]
            m = chan_model[i]
            s = st[i]
            u = rng.random() * lam_i[i]
            z = -1
            acc = 0.0
            for zz in range(S):
                if codes[m, s, zz] >= 0:
                    b = amax[m] / eps if fast[m, s, zz] else amax[m]
                    acc += b
                    z = zz
                    if acc >= u:
                        break
            tau = tc - t
            y = 0.0
            if frozen:
                for k in range(K):
                    y += W[k, i] * c[k]
            else:
                for k in range(K):
                    e = math.exp(-lam[k] * tau)
                    ctmp[k] = e * c[k] - math.expm1(-lam[k] * tau) / lam[k] * g[k]
                    y += W[k, i] * ctmp[k]
            r = eval_rate(codes[m, s, z], params[m, s, z], y)
            if r > amax[m]:
                status = MAJORANT_VIOLATED
                return out_c, out_counts, out_jumps, log_t[:njump], log_i[:njump], log_from[:njump], log_to[:njump], hmax_norm, status, t
            if rng.random() * amax[m] < r:
                if not frozen:
                    for k in range(K):
                        c[k] = ctmp[k]
                t = tc
                if njump == cap:
                    cap *= 2
                    nt = np.empty(cap)
                    ni = np.empty(cap, dtype=np.int64)
                    nf = np.empty(cap, dtype=np.int64)
                    no = np.empty(cap, dtype=np.int64)
                    nt[:njump] = log_t
                    ni[:njump] = log_i
                    nf[:njump] = log_from
                    no[:njump] = log_to
                    log_t, log_i, log_from, log_to = nt, ni, nf, no
                log_t[njump] = t
                log_i[njump] = i
                log_from[njump] = s
                log_to[njump] = z
                njump += 1
                st[i] = z
                total -= lam_i[i]
                lam_i[i] = _channel_majorant(m, z, codes, fast, amax, eps)
                total += lam_i[i]
                tc = t + rng.standard_exponential() / total if total > 0 else np.inf
                jumped = True
                break
            tc += rng.standard_exponential() / total
        if jumped:
            continue
        if not frozen:
            h = t_end - t
            for k in range(K):
                e = math.exp(-lam[k] * h)
                c[k] = e * c[k] - math.expm1(-lam[k] * h) / lam[k] * g[k]
        t = t_end
        if hits:
            for k in range(K):
                out_c[io, k] = c[k]
            for i in range(N):
                out_counts[io, chan_model[i], st[i]] += 1
            out_jumps[io] = njump
            nrm = 0.0
            for k in range(K):
                nrm += hw[k] * c[k] * c[k]
            nrm = math.sqrt(nrm)
            if nrm > hmax_norm:
                hmax_norm = nrm
            if nrm > blow_limit:
                status = BLOW_UP
                return out_c, out_counts, out_jumps, log_t[:njump], log_i[:njump], log_from[:njump], log_to[:njump], hmax_norm, status, t
            io += 1
    return out_c, out_counts, out_jumps, log_t[:njump], log_i[:njump], log_from[:njump], log_to[:njump], hmax_norm, status, t

"""Compiled inner loops for density evolution and the frame decoder.

Status codes are returned instead of raised so callers can attach context.
"""
import math

import numpy as np
from numba import njit

OK = 0
SERIES_TRUNCATED = 1
NOT_MONOTONE = 2

SUCCESS = 0
STALLED = 1
MAX_ITERS = 2

_EXP_LIMIT = 700.0
# slack for the nonincreasing check on p_i; series truncation noise is ~1e-16
_MONO_SLACK = 1e-13


@njit(cache=True)
def fs_series(x, inv_snr, lb, tol, max_terms):
    """Return (sum_t term_t, status) with x = offered*q and lb = log1p(b)."""
    s = 0.0
    comp = 0.0
    prev = math.inf
    for t in range(1, max_terms + 1):
        tl = t * lb
        if tl > _EXP_LIMIT:
            return s, OK
        if t > 1 and x <= 0.0:
            return s, OK
        z = math.exp(tl)
        lt = -(t - 1) * 0.5 * tl - (z - 1.0) * (inv_snr + x / z)
        if t > 1:
            lt += (t - 1) * math.log(x)
        term = math.exp(lt) if lt > -_EXP_LIMIT else 0.0
        y = term - comp
        acc = s + y
        comp = (acc - s) - y
        s = acc
        if t > 1 and term < tol and lt <= prev:
            return s, OK
        prev = lt
    return s, SERIES_TRUNCATED


@njit(cache=True)
def fs_value(x, inv_snr, lb, tol, max_terms):
    s, status = fs_series(x, inv_snr, lb, tol, max_terms)
    p = 1.0 - s
    if p < 0.0:
        p = 0.0
    elif p > 1.0:
        p = 1.0
    return p, status


@njit(cache=True)
def fb_value(p, degs, lam):
    acc = 0.0
    for k in range(degs.shape[0]):
        acc += lam[k] * p ** (degs[k] - 1)
    return acc


@njit(cache=True)
def plr_value(p, degs, node):
    acc = 0.0
    for k in range(degs.shape[0]):
        acc += node[k] * p ** degs[k]
    return acc


@njit(cache=True)
def fixed_point(degs, lam, node, offered, inv_snr, lb, tol, max_terms,
                max_iter, eps, plr_stop):
    """Iterate p <- f_s(f_b(p)) from p_0 = f_s(1).

    With ``plr_stop > 0`` the loop exits as soon as the PLR implied by the
    current p drops below it; the sequence is nonincreasing, so the limit's
    PLR is below it too.

    Returns (p, iterations, converged, status, stopped_early).
    """
    p, status = fs_value(offered, inv_snr, lb, tol, max_terms)
    if status != OK:
        return p, 0, False, status, False
    iters = 0
    for i in range(max_iter):
        if plr_stop > 0.0 and plr_value(p, degs, node) < plr_stop:
            return p, iters, False, OK, True
        q = fb_value(p, degs, lam)
        pn, status = fs_value(offered * q, inv_snr, lb, tol, max_terms)
        iters = i + 1
        if status != OK:
            return pn, iters, False, status, False
        if pn > p + _MONO_SLACK:
            return pn, iters, False, NOT_MONOTONE, False
        if abs(pn - p) < eps:
            return pn, iters, True, OK, False
        p = pn
    return p, iters, False, OK, False


@njit(cache=True)
def floyd_slots(degrees, uniforms, n_slots):
    """Distinct slot indices per user via Floyd's sampling.

    Consumes exactly ``degrees[u]`` uniforms per user, in user order.
    """
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    pos = 0
    for u in range(degrees.shape[0]):
        d = degrees[u]
        start = pos
        for i in range(n_slots - d, n_slots):
            t = int(uniforms[pos] * (i + 1))
            if t > i:
                t = i
            dup = False
            for k in range(start, pos):
                if out[k] == t:
                    dup = True
                    break
            out[pos] = i if dup else t
            pos += 1
    return out


@njit(cache=True)
def sic_decode(n_slots, user_ptr, slots, snr, b, max_iters):
    """SIC receiver with intra-slot and inter-slot cancellation.

    One iteration is an ascending pass over all slots. In each slot the
    qualifying replica is captured and cancelled until none qualifies; then
    every other replica of the users captured there is removed before the
    next slot is processed.

    Returns (decoded, iterations, cause, first_degree, first_decoded) where
    the last two give, per slot, the residual degree when the slot was first
    visited and how many replicas were captured during that visit.
    """
    m = user_ptr.shape[0] - 1
    n_rep = slots.shape[0]
    rep_user = np.empty(n_rep, dtype=np.int64)
    for u in range(m):
        for k in range(user_ptr[u], user_ptr[u + 1]):
            rep_user[k] = u
    slot_ptr = np.zeros(n_slots + 1, dtype=np.int64)
    for k in range(n_rep):
        slot_ptr[slots[k] + 1] += 1
    for j in range(n_slots):
        slot_ptr[j + 1] += slot_ptr[j]
    fill = slot_ptr[:-1].copy()
    slot_rep = np.empty(n_rep, dtype=np.int64)
    for k in range(n_rep):
        j = slots[k]
        slot_rep[fill[j]] = k
        fill[j] += 1

    alive = np.ones(n_rep, dtype=np.bool_)
    decoded = np.zeros(m, dtype=np.bool_)
    first_degree = np.zeros(n_slots, dtype=np.int64)
    first_decoded = np.zeros(n_slots, dtype=np.int64)
    captured = np.empty(max(n_rep, 1), dtype=np.int64)
    # a slot untouched since its last visit cannot yield a new capture
    dirty = np.ones(n_slots, dtype=np.bool_)
    n_decoded = 0
    if m == 0:
        return decoded, 0, SUCCESS, first_degree, first_decoded

    iterations = 0
    cause = MAX_ITERS
    for it in range(max_iters):
        iterations += 1
        new = 0
        for j in range(n_slots):
            if not dirty[j]:
                continue
            dirty[j] = False
            lo = slot_ptr[j]
            hi = slot_ptr[j + 1]
            if it == 0:
                deg = 0
                for a in range(lo, hi):
                    if alive[slot_rep[a]]:
                        deg += 1
                first_degree[j] = deg
            n_cap = 0
            while True:
                total = 0.0
                for a in range(lo, hi):
                    k = slot_rep[a]
                    if alive[k]:
                        total += snr[k]
                best = -1
                n_ok = 0
                for a in range(lo, hi):
                    k = slot_rep[a]
                    if alive[k] and snr[k] >= b * (1.0 + total - snr[k]):
                        n_ok += 1
                        if best < 0 or snr[k] > snr[best]:
                            best = k
                if n_ok == 0:
                    break
                if n_ok > 1:
                    raise AssertionError("more than one replica met the capture threshold at once")
                alive[best] = False
                decoded[rep_user[best]] = True
                captured[n_cap] = rep_user[best]
                n_cap += 1
            if it == 0:
                first_decoded[j] = n_cap
            # inter-slot IC for the users captured in this slot
            for c in range(n_cap):
                u = captured[c]
                for k in range(user_ptr[u], user_ptr[u + 1]):
                    if alive[k]:
                        alive[k] = False
                        dirty[slots[k]] = True
            new += n_cap
        n_decoded += new
        if n_decoded == m:
            cause = SUCCESS
            break
        if new == 0:
            cause = STALLED
            break
    return decoded, iterations, cause, first_degree, first_decoded

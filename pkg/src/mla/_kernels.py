"""Compiled inner loops.

Graphs arrive as CSR arrays (``indptr``, ``targets``, ``probs``) plus a
per-state ``kinds`` code.  Partitions arrive as ``order`` (states sorted by
code), ``pos`` (its inverse), ``starts`` (region slices of ``order``) and
``edge_region`` (region of every edge target).  A target ``t`` of an edge
leaving a state of region ``x`` is local iff ``edge_region[e] == x``; its
slot in the region buffer is then ``pos[t] - starts[x]``.

Expectations use Neumaier-compensated summation in successor-list order.
"""
import numpy as np
from numba import njit, prange

P1 = 0
P2 = 1
PROB = 2


@njit(cache=True, inline="always")
def _comp_add(acc, comp, term):
    t = acc + term
    if abs(acc) >= abs(term):
        comp += (acc - t) + term
    else:
        comp += (term - t) + acc
    return t, comp


@njit(cache=True)
def reduce_edges(indptr, kinds, probs, edge_vals, out):
    """Pre-style reduction of per-edge values: max / min / expectation."""
    n = kinds.shape[0]
    for s in range(n):
        a = indptr[s]
        b = indptr[s + 1]
        k = kinds[s]
        if k == PROB:
            acc = 0.0
            comp = 0.0
            for e in range(a, b):
                acc, comp = _comp_add(acc, comp, probs[e] * edge_vals[e])
            out[s] = acc + comp
        elif k == P1:
            best = -np.inf
            for e in range(a, b):
                if edge_vals[e] > best:
                    best = edge_vals[e]
            out[s] = best
        else:
            best = np.inf
            for e in range(a, b):
                if edge_vals[e] < best:
                    best = edge_vals[e]
            out[s] = best
    return out


@njit(cache=True, inline="always")
def _pre_state(s, indptr, targets, probs, kinds, v):
    a = indptr[s]
    b = indptr[s + 1]
    k = kinds[s]
    if k == PROB:
        acc = 0.0
        comp = 0.0
        for e in range(a, b):
            acc, comp = _comp_add(acc, comp, probs[e] * v[targets[e]])
        return acc + comp
    if k == P1:
        best = -np.inf
        for e in range(a, b):
            val = v[targets[e]]
            if val > best:
                best = val
        return best
    best = np.inf
    for e in range(a, b):
        val = v[targets[e]]
        if val < best:
            best = val
    return best


@njit(cache=True)
def vi_discounted(indptr, targets, probs, kinds, rewards, beta, tol, max_sweeps, v, w):
    """Jacobi value iteration v <- (1-beta) r + beta Pre(v) until the sup-norm step <= tol.

    ``v`` holds the start and receives the result; ``w`` is scratch.
    Returns (sweeps, last residual).
    """
    n = kinds.shape[0]
    sweeps = 0
    res = np.inf
    while sweeps < max_sweeps:
        res = 0.0
        for s in range(n):
            nv = (1.0 - beta) * rewards[s] + beta * _pre_state(s, indptr, targets, probs, kinds, v)
            d = abs(nv - v[s])
            if d > res:
                res = d
            w[s] = nv
        for s in range(n):
            v[s] = w[s]
        sweeps += 1
        if res <= tol:
            break
    return sweeps, res


@njit(cache=True)
def rvi_run(indptr, targets, probs, kinds, rewards, c, steps, v, w):
    """``steps`` updates of v <- r - c + Pre(v) from v = c.

    On return ``v`` holds the last iterate and ``w`` the one before it.
    """
    n = kinds.shape[0]
    for s in range(n):
        v[s] = c
    for _ in range(steps):
        for s in range(n):
            w[s] = rewards[s] - c + _pre_state(s, indptr, targets, probs, kinds, v)
        for s in range(n):
            tmp = v[s]
            v[s] = w[s]
            w[s] = tmp


@njit(cache=True, inline="always")
def _local_update(s, x, lo, indptr, targets, probs, kinds, edge_region, pos, buf, u):
    """Pre of state ``s`` reading in-region targets from ``buf`` and others from ``u``."""
    a = indptr[s]
    b = indptr[s + 1]
    k = kinds[s]
    if k == PROB:
        acc = 0.0
        comp = 0.0
        for e in range(a, b):
            y = edge_region[e]
            if y == x:
                val = buf[pos[targets[e]] - lo]
            else:
                val = u[y]
            acc, comp = _comp_add(acc, comp, probs[e] * val)
        return acc + comp
    if k == P1:
        best = -np.inf
        for e in range(a, b):
            y = edge_region[e]
            if y == x:
                val = buf[pos[targets[e]] - lo]
            else:
                val = u[y]
            if val > best:
                best = val
        return best
    best = np.inf
    for e in range(a, b):
        y = edge_region[e]
        if y == x:
            val = buf[pos[targets[e]] - lo]
        else:
            val = u[y]
        if val < best:
            best = val
    return best


@njit(cache=True)
def mag_iter_region(x, starts, order, pos, indptr, targets, probs, kinds, rewards,
                    edge_region, u, beta, is_max, tol, max_sweeps, buf):
    """Discounted magnified iteration on region ``x`` against frozen ``u``.

    Gauss-Seidel in place on ``buf[:|x|]``, so one region-sized buffer is the
    only concrete storage.  Returns (h-summary, sweeps, last residual).
    """
    lo = starts[x]
    hi = starts[x + 1]
    n = hi - lo
    init = u[x]
    for i in range(n):
        buf[i] = init
    sweeps = 0
    res = np.inf
    while sweeps < max_sweeps:
        res = 0.0
        for i in range(n):
            s = order[lo + i]
            nv = (1.0 - beta) * rewards[s] + beta * _local_update(
                s, x, lo, indptr, targets, probs, kinds, edge_region, pos, buf, u)
            d = abs(nv - buf[i])
            if d > res:
                res = d
            buf[i] = nv
        sweeps += 1
        if res <= tol:
            break
    if is_max:
        out = -np.inf
        for i in range(n):
            if buf[i] > out:
                out = buf[i]
    else:
        out = np.inf
        for i in range(n):
            if buf[i] < out:
                out = buf[i]
    return out, sweeps, res


@njit(cache=True)
def sweep_regions(r0, r1, starts, order, pos, indptr, targets, probs, kinds, rewards,
                  edge_region, u_hat, u, beta, is_max, tol, max_mag, buf,
                  skip, stale, skip_tol, tol_used, counters):
    """One Jacobi pass over regions [r0, r1): u[x] <- MagIter(x, u_hat).

    counters: [mag calls, mag sweeps, failed region (-1 if none), failed residual].
    """
    for x in range(r0, r1):
        if skip and stale[x] <= skip_tol and tol_used[x] <= tol:
            u[x] = u_hat[x]
            continue
        val, sw, res = mag_iter_region(x, starts, order, pos, indptr, targets, probs, kinds,
                                       rewards, edge_region, u_hat, beta, is_max, tol,
                                       max_mag, buf)
        counters[0] += 1
        counters[1] += sw
        if res > tol:
            counters[2] = x
            counters[3] = res
            return
        u[x] = val
        stale[x] = 0.0
        tol_used[x] = tol


@njit(cache=True)
def propagate_changes(u, u_hat, pred_ptr, pred_idx, stale):
    """Sup-norm change of this sweep; charges each change to dependent regions."""
    res = 0.0
    for y in range(u.shape[0]):
        d = abs(u[y] - u_hat[y])
        if d > res:
            res = d
        if d > 0.0:
            for j in range(pred_ptr[y], pred_ptr[y + 1]):
                stale[pred_idx[j]] += d
    return res


@njit(cache=True)
def global_val_iter_kernel(starts, order, pos, indptr, targets, probs, kinds, rewards,
                           edge_region, pred_ptr, pred_idx, u, beta, is_max, eps,
                           tol_floor, tol_first, max_global, max_mag, skip, skip_tol,
                           buf, counters):
    """Sequential GlobalValIter; ``u`` is updated in place.

    counters: [mag calls, mag sweeps, failed region, failed residual,
               global sweeps, final residual, status (0 ok, 1 mag fail, 2 global fail)].
    """
    R = starts.shape[0] - 1
    u_hat = np.empty(R)
    stale = np.zeros(R)
    tol_used = np.full(R, np.inf)
    prev = np.inf
    sweeps = 0
    while True:
        for x in range(R):
            u_hat[x] = u[x]
        if prev == np.inf:
            tol = max(tol_floor, tol_first)
        else:
            tol = max(tol_floor, 1e-4 * prev)
        # skipping before the floor would hide moves a re-solve still makes
        sweep_regions(0, R, starts, order, pos, indptr, targets, probs, kinds, rewards,
                      edge_region, u_hat, u, beta, is_max, tol, max_mag, buf,
                      skip and tol <= tol_floor, stale, skip_tol, tol_used, counters)
        sweeps += 1
        if counters[2] >= 0:
            counters[4] = sweeps
            counters[6] = 1
            return
        res = propagate_changes(u, u_hat, pred_ptr, pred_idx, stale)
        counters[5] = res
        if res <= eps:
            break
        if sweeps >= max_global:
            counters[4] = sweeps
            counters[6] = 2
            return
        prev = res
    counters[4] = sweeps
    counters[6] = 0


@njit(cache=True, parallel=True)
def sweep_regions_parallel(bounds, starts, order, pos, indptr, targets, probs, kinds, rewards,
                           edge_region, u_hat, u, beta, is_max, tol, max_mag, bufs,
                           skip, stale, skip_tol, tol_used, counters):
    """Chunked variant of ``sweep_regions``; chunk c owns ``bufs[c]`` and ``counters[c]``."""
    for c in prange(bounds.shape[0] - 1):
        sweep_regions(bounds[c], bounds[c + 1], starts, order, pos, indptr, targets, probs,
                      kinds, rewards, edge_region, u_hat, u, beta, is_max, tol, max_mag,
                      bufs[c], skip, stale, skip_tol, tol_used, counters[c])


@njit(cache=True)
def mag_iter2_region(x, starts, order, pos, indptr, targets, probs, kinds, rewards,
                     edge_region, u, c, is_max, k, buf, buf2):
    """k+1 Jacobi steps of v <- r - c + MPrex(v, R, u) on region ``x`` from v = u(x)."""
    lo = starts[x]
    hi = starts[x + 1]
    n = hi - lo
    init = u[x]
    for i in range(n):
        buf[i] = init
    cur = buf
    nxt = buf2
    for _ in range(k + 1):
        for i in range(n):
            s = order[lo + i]
            nxt[i] = rewards[s] - c + _local_update(
                s, x, lo, indptr, targets, probs, kinds, edge_region, pos, cur, u)
        tmp = cur
        cur = nxt
        nxt = tmp
    if is_max:
        out = -np.inf
        for i in range(n):
            if cur[i] > out:
                out = cur[i]
    else:
        out = np.inf
        for i in range(n):
            if cur[i] < out:
                out = cur[i]
    return out


@njit(cache=True)
def check_divergence_kernel(starts, order, pos, indptr, targets, probs, kinds, rewards,
                            edge_region, c, is_max, k, buf, buf2, v):
    """k+1 region sweeps of MagIter2 from v = c; ``v`` receives v_{k+1}."""
    R = starts.shape[0] - 1
    prev = np.empty(R)
    for x in range(R):
        v[x] = c
    for _ in range(k + 1):
        for x in range(R):
            prev[x] = v[x]
        for x in range(R):
            v[x] = mag_iter2_region(x, starts, order, pos, indptr, targets, probs, kinds,
                                    rewards, edge_region, prev, c, is_max, k, buf, buf2)

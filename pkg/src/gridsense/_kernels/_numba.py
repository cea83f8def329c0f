"""Numba versions of the assembly kernels (same contracts as ``_numpy``)."""

import numpy as np
from numba import njit


@njit(cache=True)
def injected_currents(indptr, indices, data, e):
    m = len(indptr) - 1
    out = np.zeros(m, dtype=np.complex128)
    for i in range(m):
        acc = 0j
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * e[indices[k]]
        out[i] = acc
    return out


@njit(cache=True)
def _count(indptr, indices, pq, pq_pos):
    nnz = 0
    for p in range(len(pq)):
        i = pq[p]
        for k in range(indptr[i], indptr[i + 1]):
            if pq_pos[indices[k]] >= 0:
                nnz += 1
    return nnz


@njit(cache=True)
def sens_triplets(indptr, indices, data, e, pq, pq_pos):
    cur = injected_currents(indptr, indices, data, e)
    n = len(pq)
    size = 4 * (_count(indptr, indices, pq, pq_pos) + n)
    rows = np.empty(size, dtype=np.int64)
    cols = np.empty(size, dtype=np.int64)
    vals = np.empty(size, dtype=np.float64)
    t = 0
    for p in range(n):
        i = pq[p]
        ec = np.conj(e[i])
        for k in range(indptr[i], indptr[i + 1]):
            q = pq_pos[indices[k]]
            if q < 0:
                continue
            c = ec * data[k]
            rows[t] = 2 * p
            cols[t] = 2 * q
            vals[t] = c.real
            rows[t + 1] = 2 * p
            cols[t + 1] = 2 * q + 1
            vals[t + 1] = -c.imag
            rows[t + 2] = 2 * p + 1
            cols[t + 2] = 2 * q
            vals[t + 2] = c.imag
            rows[t + 3] = 2 * p + 1
            cols[t + 3] = 2 * q + 1
            vals[t + 3] = c.real
            t += 4
        ii = cur[i]
        rows[t] = 2 * p
        cols[t] = 2 * p
        vals[t] = ii.real
        rows[t + 1] = 2 * p
        cols[t + 1] = 2 * p + 1
        vals[t + 1] = ii.imag
        rows[t + 2] = 2 * p + 1
        cols[t + 2] = 2 * p
        vals[t + 2] = ii.imag
        rows[t + 3] = 2 * p + 1
        cols[t + 3] = 2 * p + 1
        vals[t + 3] = -ii.real
        t += 4
    return rows, cols, vals


@njit(cache=True)
def jac_triplets(indptr, indices, data, e, pq, pq_pos):
    cur = injected_currents(indptr, indices, data, e)
    n = len(pq)
    size = 4 * (_count(indptr, indices, pq, pq_pos) + n)
    rows = np.empty(size, dtype=np.int64)
    cols = np.empty(size, dtype=np.int64)
    vals = np.empty(size, dtype=np.float64)
    t = 0
    for p in range(n):
        i = pq[p]
        ei = e[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            q = pq_pos[j]
            if q < 0:
                continue
            ej = e[j]
            yej = data[k] * ej
            d_theta = -1j * ei * np.conj(yej)
            d_mag = ei * np.conj(yej / abs(ej))
            rows[t] = p
            cols[t] = q
            vals[t] = d_theta.real
            rows[t + 1] = p
            cols[t + 1] = n + q
            vals[t + 1] = d_mag.real
            rows[t + 2] = n + p
            cols[t + 2] = q
            vals[t + 2] = d_theta.imag
            rows[t + 3] = n + p
            cols[t + 3] = n + q
            vals[t + 3] = d_mag.imag
            t += 4
        ic = np.conj(cur[i])
        dt = 1j * ei * ic
        dm = ic * ei / abs(ei)
        rows[t] = p
        cols[t] = p
        vals[t] = dt.real
        rows[t + 1] = p
        cols[t + 1] = n + p
        vals[t + 1] = dm.real
        rows[t + 2] = n + p
        cols[t + 2] = p
        vals[t + 2] = dt.imag
        rows[t + 3] = n + p
        cols[t + 3] = n + p
        vals[t + 3] = dm.imag
        t += 4
    return rows, cols, vals


@njit(cache=True)
def jac_dense(indptr, indices, data, e, pq, pq_pos):
    cur = injected_currents(indptr, indices, data, e)
    n = len(pq)
    out = np.zeros((2 * n, 2 * n))
    for p in range(n):
        i = pq[p]
        ei = e[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            q = pq_pos[j]
            if q < 0:
                continue
            ej = e[j]
            yej = data[k] * ej
            d_theta = -1j * ei * np.conj(yej)
            d_mag = ei * np.conj(yej / abs(ej))
            out[p, q] += d_theta.real
            out[p, n + q] += d_mag.real
            out[n + p, q] += d_theta.imag
            out[n + p, n + q] += d_mag.imag
        ic = np.conj(cur[i])
        dt = 1j * ei * ic
        dm = ic * ei / abs(ei)
        out[p, p] += dt.real
        out[p, n + p] += dm.real
        out[n + p, p] += dt.imag
        out[n + p, n + p] += dm.imag
    return out


@njit(cache=True)
def tree_assemble(indptr, indices, data, e, pq, pq_pos, blk, off, parent):
    nb = len(parent)
    d = np.zeros((nb, 6, 6))
    up = np.zeros((nb, 6, 6))
    lo = np.zeros((nb, 6, 6))
    cur = injected_currents(indptr, indices, data, e)
    for p in range(len(pq)):
        i = pq[p]
        b = blk[2 * p]
        r = off[2 * p]
        ec = np.conj(e[i])
        for k in range(indptr[i], indptr[i + 1]):
            q = pq_pos[indices[k]]
            if q < 0:
                continue
            c = ec * data[k]
            bc = blk[2 * q]
            s = off[2 * q]
            if bc == b:
                t = d[b]
            elif bc == parent[b]:
                t = up[b]
            else:
                t = lo[bc]
            t[r, s] += c.real
            t[r, s + 1] -= c.imag
            t[r + 1, s] += c.imag
            t[r + 1, s + 1] += c.real
        ii = cur[i]
        t = d[b]
        t[r, r] += ii.real
        t[r, r + 1] += ii.imag
        t[r + 1, r] += ii.imag
        t[r + 1, r + 1] -= ii.real
    return d, up, lo


@njit(cache=True)
def _inv_small(a, k, out):
    # Gauss-Jordan with partial pivoting; returns min |pivot| / max |a|
    w = np.zeros((k, 2 * k))
    scale = 0.0
    for i in range(k):
        for j in range(k):
            w[i, j] = a[i, j]
            scale = max(scale, abs(a[i, j]))
        w[i, k + i] = 1.0
    if scale == 0.0:
        return 0.0
    worst = np.inf
    for c in range(k):
        piv = c
        for r in range(c + 1, k):
            if abs(w[r, c]) > abs(w[piv, c]):
                piv = r
        if piv != c:
            for j in range(2 * k):
                tmp = w[c, j]
                w[c, j] = w[piv, j]
                w[piv, j] = tmp
        pv = w[c, c]
        worst = min(worst, abs(pv) / scale)
        if pv == 0.0:
            return 0.0
        for j in range(2 * k):
            w[c, j] /= pv
        for r in range(k):
            if r != c:
                f = w[r, c]
                if f != 0.0:
                    for j in range(2 * k):
                        w[r, j] -= f * w[c, j]
    for i in range(k):
        for j in range(k):
            out[i, j] = w[i, k + j]
    return worst


@njit(cache=True)
def tree_factor(d, up, lo, size, parent, order):
    nb = len(parent)
    dinv = np.zeros((nb, 6, 6))
    f = np.zeros((nb, 6, 6))
    worst = np.inf
    for b in order:
        kb = size[b]
        worst = min(worst, _inv_small(d[b], kb, dinv[b]))
        p = parent[b]
        if p < 0:
            continue
        kp = size[p]
        for i in range(kb):
            for j in range(kp):
                acc = 0.0
                for m in range(kb):
                    acc += dinv[b, i, m] * up[b, m, j]
                f[b, i, j] = acc
        for i in range(kp):
            for j in range(kp):
                acc = 0.0
                for m in range(kb):
                    acc += lo[b, i, m] * f[b, m, j]
                d[p, i, j] -= acc
    return dinv, f, worst


@njit(cache=True)
def tree_solve(dinv, f, lo, start, size, parent, order, rhs):
    y = rhs.copy()
    x = np.zeros_like(rhs)
    nr = rhs.shape[1]
    for b in order:
        s, kb = start[b], size[b]
        for i in range(kb):
            for m in range(kb):
                c = dinv[b, i, m]
                if c != 0.0:
                    for t in range(nr):
                        x[s + i, t] += c * y[s + m, t]
        p = parent[b]
        if p < 0:
            continue
        sp_, kp = start[p], size[p]
        for i in range(kp):
            for m in range(kb):
                c = lo[b, i, m]
                if c != 0.0:
                    for t in range(nr):
                        y[sp_ + i, t] -= c * x[s + m, t]
    for n in range(len(order) - 1, -1, -1):
        b = order[n]
        p = parent[b]
        if p < 0:
            continue
        s, kb = start[b], size[b]
        sp_, kp = start[p], size[p]
        for i in range(kb):
            for m in range(kp):
                c = f[b, i, m]
                if c != 0.0:
                    for t in range(nr):
                        x[s + i, t] -= c * x[sp_ + m, t]
    return x


@njit(cache=True)
def tree_unit_magnitudes(dinv, f, lo, start, size, parent, order, e_pq):
    # solve for all unit P and Q right-hand sides, return d|E|/dP, d|E|/dQ
    n = len(e_pq)
    rhs = np.zeros((2 * n, 2 * n))
    for p in range(n):
        rhs[2 * p, p] = 1.0
        rhs[2 * p + 1, n + p] = -1.0
    x = tree_solve(dinv, f, lo, start, size, parent, order, rhs)
    out = np.empty((n, 2 * n))
    for p in range(n):
        er = e_pq[p].real / abs(e_pq[p])
        ei = e_pq[p].imag / abs(e_pq[p])
        for c in range(2 * n):
            out[p, c] = er * x[2 * p, c] + ei * x[2 * p + 1, c]
    return out[:, :n], out[:, n:]

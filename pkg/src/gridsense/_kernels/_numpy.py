"""Vectorised numpy implementations of the assembly kernels.

Both kernels take the CSR arrays of the compound admittance, the voltage
vector, the pq index list and the ``pq_position`` lookup (``-1`` on slack
rows) and return COO triplets ``(rows, cols, vals)``.  Duplicate entries
are expected and summed by the caller's sparse conversion.
"""

import numpy as np


def _pq_block(indptr, indices, data, pq, pq_pos):
    counts = indptr[pq + 1] - indptr[pq]
    row_full = np.repeat(pq, counts)
    starts = np.repeat(indptr[pq] - np.cumsum(counts) + counts, counts)
    k = starts + np.arange(counts.sum())
    col_full = indices[k]
    keep = pq_pos[col_full] >= 0
    return row_full[keep], col_full[keep], data[k][keep]


def injected_currents(indptr, indices, data, e):
    m = len(indptr) - 1
    rows = np.repeat(np.arange(m), np.diff(indptr))
    out = np.zeros(m, dtype=np.complex128)
    np.add.at(out, rows, data * e[indices])
    return out


def sens_triplets(indptr, indices, data, e, pq, pq_pos):
    """Real 2N x 2N sensitivity system in interleaved (Re, Im) layout.

    Row pair ``(2p, 2p+1)`` is equation ``i = pq[p]``:
    ``conj(dE_i) * I_i + conj(E_i) * sum_j Y_ij dE_j``.
    """
    cur = injected_currents(indptr, indices, data, e)
    ri, cj, y = _pq_block(indptr, indices, data, pq, pq_pos)
    p = pq_pos[ri]
    q = pq_pos[cj]
    c = np.conj(e[ri]) * y
    cr, ci = c.real, c.imag
    ip = cur[pq]
    n = len(pq)
    dp = np.arange(n)
    rows = np.concatenate([2 * p, 2 * p, 2 * p + 1, 2 * p + 1,
                           2 * dp, 2 * dp, 2 * dp + 1, 2 * dp + 1])
    cols = np.concatenate([2 * q, 2 * q + 1, 2 * q, 2 * q + 1,
                           2 * dp, 2 * dp + 1, 2 * dp, 2 * dp + 1])
    vals = np.concatenate([cr, -ci, ci, cr, ip.real, ip.imag, ip.imag, -ip.real])
    return rows.astype(np.int64), cols.astype(np.int64), vals


def jac_triplets(indptr, indices, data, e, pq, pq_pos):
    """Polar Newton-Raphson Jacobian, rows ``[P; Q]``, cols ``[theta; |E|]``."""
    cur = injected_currents(indptr, indices, data, e)
    ri, cj, y = _pq_block(indptr, indices, data, pq, pq_pos)
    p = pq_pos[ri]
    q = pq_pos[cj]
    n = len(pq)
    ei = e[ri]
    ej = e[cj]
    d_theta = -1j * ei * np.conj(y * ej)
    d_mag = ei * np.conj(y * ej / np.abs(ej))
    ep = e[pq]
    ip = cur[pq]
    diag_theta = 1j * ep * np.conj(ip)
    diag_mag = np.conj(ip) * ep / np.abs(ep)
    dp = np.arange(n)
    rows = np.concatenate([p, p, n + p, n + p, dp, dp, n + dp, n + dp])
    cols = np.concatenate([q, n + q, q, n + q, dp, n + dp, dp, n + dp])
    vals = np.concatenate([d_theta.real, d_mag.real, d_theta.imag, d_mag.imag,
                           diag_theta.real, diag_mag.real, diag_theta.imag, diag_mag.imag])
    return rows.astype(np.int64), cols.astype(np.int64), vals


def jac_dense(indptr, indices, data, e, pq, pq_pos):
    r, c, v = jac_triplets(indptr, indices, data, e, pq, pq_pos)
    n2 = 2 * len(pq)
    out = np.zeros((n2, n2))
    np.add.at(out, (r, c), v)
    return out


# Block-tree kernels.  Bus blocks are padded to 6 x 6 (three phases, Re/Im);
# ``blk``/``off`` map a real row to its block and local offset, ``order``
# lists blocks children-first.

def tree_assemble(indptr, indices, data, e, pq, pq_pos, blk, off, parent):
    nb = len(parent)
    d = np.zeros((nb, 6, 6))
    up = np.zeros((nb, 6, 6))
    lo = np.zeros((nb, 6, 6))
    r, c, v = sens_triplets(indptr, indices, data, e, pq, pq_pos)
    br, bc = blk[r], blk[c]
    same = br == bc
    to_parent = ~same & (bc == parent[br])
    to_child = ~same & ~to_parent
    np.add.at(d, (br[same], off[r[same]], off[c[same]]), v[same])
    np.add.at(up, (br[to_parent], off[r[to_parent]], off[c[to_parent]]), v[to_parent])
    np.add.at(lo, (bc[to_child], off[r[to_child]], off[c[to_child]]), v[to_child])
    return d, up, lo


def tree_factor(d, up, lo, size, parent, order):
    nb = len(parent)
    dinv = np.zeros((nb, 6, 6))
    f = np.zeros((nb, 6, 6))
    worst = np.inf
    for b in order:
        kb = size[b]
        blk = d[b, :kb, :kb]
        scale = np.abs(blk).max()
        if scale == 0:
            return dinv, f, 0.0
        try:
            inv = np.linalg.inv(blk)
        except np.linalg.LinAlgError:
            return dinv, f, 0.0
        worst = min(worst, 1.0 / (scale * np.abs(inv).max() * kb))
        dinv[b, :kb, :kb] = inv
        p = parent[b]
        if p < 0:
            continue
        kp = size[p]
        f[b, :kb, :kp] = inv @ up[b, :kb, :kp]
        d[p, :kp, :kp] -= lo[b, :kp, :kb] @ f[b, :kb, :kp]
    return dinv, f, worst


def tree_solve(dinv, f, lo, start, size, parent, order, rhs):
    y = rhs.copy()
    x = np.zeros_like(rhs)
    for b in order:
        s, kb = start[b], size[b]
        x[s:s + kb] = dinv[b, :kb, :kb] @ y[s:s + kb]
        p = parent[b]
        if p >= 0:
            sp_, kp = start[p], size[p]
            y[sp_:sp_ + kp] -= lo[b, :kp, :kb] @ x[s:s + kb]
    for b in order[::-1]:
        p = parent[b]
        if p >= 0:
            s, kb = start[b], size[b]
            sp_, kp = start[p], size[p]
            x[s:s + kb] -= f[b, :kb, :kp] @ x[sp_:sp_ + kp]
    return x


def tree_unit_magnitudes(dinv, f, lo, start, size, parent, order, e_pq):
    n = len(e_pq)
    rhs = np.zeros((2 * n, 2 * n))
    pos = np.arange(n)
    rhs[2 * pos, pos] = 1.0
    rhs[2 * pos + 1, n + pos] = -1.0
    x = tree_solve(dinv, f, lo, start, size, parent, order, rhs)
    u = e_pq / np.abs(e_pq)
    out = u.real[:, None] * x[0::2] + u.imag[:, None] * x[1::2]
    return out[:, :n], out[:, n:]

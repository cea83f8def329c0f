"""Assembly of the real linear systems from kernel output.

Two storage schemes are used for the sensitivity matrix.  The general one
is a sparse CSC matrix factorized by SuperLU.  For a radial feeder with a
single slack bus the matrix is also stored as dense per-bus blocks along the
feeder tree: eliminating buses children-first produces no fill, so the
factorization is a sequence of small dense inversions.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import _kernels


def _csr_parts(y):
    return y.csr_parts


def _v(voltages):
    return np.asarray(voltages, dtype=np.complex128)


def system_matrix(y, voltages, kernels=None) -> sp.csc_matrix:
    """Real 2N x 2N matrix of the linearised injection equations.

    Unknowns are interleaved ``(Re dE_j, Im dE_j)`` over the pq indices; the
    same matrix is the Newton Jacobian of the rectangular power-flow
    mismatch, which is why the load flow reuses it.
    """
    k = kernels or _kernels
    idx = y.index
    r, c, v = k.sens_triplets(*_csr_parts(y), _v(voltages), idx.pq, idx.pq_position)
    n2 = 2 * idx.n_pq
    return sp.csc_matrix((v, (r, c)), shape=(n2, n2))


def polar_jacobian(y, voltages, kernels=None) -> sp.csc_matrix:
    """Polar power-flow Jacobian ``[[dP/dtheta, dP/d|E|], [dQ/dtheta, dQ/d|E|]]``."""
    k = kernels or _kernels
    idx = y.index
    r, c, v = k.jac_triplets(*_csr_parts(y), _v(voltages), idx.pq, idx.pq_position)
    n2 = 2 * idx.n_pq
    return sp.csc_matrix((v, (r, c)), shape=(n2, n2))


def polar_jacobian_dense(y, voltages, kernels=None) -> np.ndarray:
    k = kernels or _kernels
    idx = y.index
    return k.jac_dense(*_csr_parts(y), _v(voltages), idx.pq, idx.pq_position)


@dataclass(frozen=True, eq=False)
class BlockTree:
    """Feeder-tree layout of the pq rows of the real system.

    Block ``b`` is one pq bus; its real rows are ``start[b]:start[b]+size[b]``.
    ``parent`` is -1 for buses hanging off the slack bus, and ``order`` lists
    blocks children-first.
    """

    start: np.ndarray
    size: np.ndarray
    parent: np.ndarray
    order: np.ndarray
    blk: np.ndarray   # real row -> block
    off: np.ndarray   # real row -> offset inside its block


@lru_cache(maxsize=64)
def _tree_cached(y):
    idx = y.index
    slack_buses = {idx.pair(int(i)).bus for i in idx.slack}
    if len(slack_buses) != 1:
        return None
    buses = sorted({bp.bus for bp in idx.pairs})
    if len(y.branches) != len(buses) - 1:
        return None
    adj = {b: [] for b in buses}
    for br in y.branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    root = slack_buses.pop()
    up = {root: None}
    bfs = [root]
    for b in bfs:
        for nb in adj[b]:
            if nb not in up:
                up[nb] = b
                bfs.append(nb)
    if len(bfs) != len(buses):
        return None
    pq_buses = [b for b in buses if b != root]
    block_of = {b: n for n, b in enumerate(pq_buses)}
    start = np.zeros(len(pq_buses), dtype=np.int64)
    size = np.zeros(len(pq_buses), dtype=np.int64)
    n2 = 2 * idx.n_pq
    blk = np.empty(n2, dtype=np.int64)
    off = np.empty(n2, dtype=np.int64)
    pos_of = {b: [] for b in pq_buses}
    for p, i in enumerate(idx.pq):
        pos_of[idx.pair(int(i)).bus].append(p)
    for b in pq_buses:
        rows = 2 * np.array(pos_of[b])
        n = block_of[b]
        start[n] = rows.min()
        size[n] = 2 * len(rows)
        blk[start[n]:start[n] + size[n]] = n
        off[start[n]:start[n] + size[n]] = np.arange(size[n])
    parent = np.array([-1 if up[b] == root else block_of[up[b]] for b in pq_buses], dtype=np.int64)
    order = np.array([block_of[b] for b in reversed(bfs) if b != root], dtype=np.int64)
    return BlockTree(start, size, parent, order, blk, off)


def block_tree(y):
    """Tree layout of ``y`` or ``None`` when the network is not a single-slack tree."""
    return _tree_cached(y)


class TreeFactor:
    """Zero-fill block factorization along the feeder tree."""

    def __init__(self, tree, dinv, f, lo, kernels=None):
        self.tree = tree
        self._dinv, self._f, self._lo = dinv, f, lo
        self._k = kernels or _kernels

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=np.float64)
        flat = rhs.ndim == 1
        b = np.ascontiguousarray(rhs[:, None] if flat else rhs)
        t = self.tree
        x = self._k.tree_solve(self._dinv, self._f, self._lo, t.start, t.size, t.parent, t.order, b)
        return x[:, 0] if flat else x

    def unit_magnitudes(self, e_pq: np.ndarray):
        """``(d|E|/dP, d|E|/dQ)`` over pq rows and columns in one fused pass."""
        t = self.tree
        return self._k.tree_unit_magnitudes(self._dinv, self._f, self._lo, t.start, t.size,
                                            t.parent, t.order, _v(e_pq))


def tree_factorize(y, voltages, tree, kernels=None):
    """Assemble the bus blocks and factorize them; returns ``(factor, pivot_ratio)``."""
    k = kernels or _kernels
    idx = y.index
    d, up, lo = k.tree_assemble(*_csr_parts(y), _v(voltages), idx.pq, idx.pq_position,
                                tree.blk, tree.off, tree.parent)
    dinv, f, worst = k.tree_factor(d, up, lo, tree.size, tree.parent, tree.order)
    return TreeFactor(tree, dinv, f, lo, kernels), float(worst)


def interleave(z: np.ndarray) -> np.ndarray:
    """Complex ``(N, ...)`` array to real ``(2N, ...)`` with Re/Im rows alternating."""
    z = np.asarray(z)
    out = np.empty((2 * z.shape[0],) + z.shape[1:], dtype=float)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def deinterleave(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]

"""Sparse compound admittance matrix over existing bus-phase pairs."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .exceptions import AssemblyError
from .network import IndexMap, NetworkModel


@dataclass(frozen=True, eq=False)
class BranchData:
    """Per-branch bookkeeping kept alongside the matrix."""

    position: int
    from_bus: int
    to_bus: int
    phases: tuple
    from_rows: np.ndarray
    to_rows: np.ndarray
    y_series: np.ndarray
    y_half_shunt: np.ndarray


@dataclass(frozen=True, eq=False)
class CompoundAdmittance:
    matrix: sp.csr_matrix
    index: IndexMap
    branches: tuple

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def csr_parts(self):
        """``(indptr, indices, data)`` as int64/complex128 arrays for the kernels."""
        mat = self.matrix
        return (mat.indptr.astype(np.int64), mat.indices.astype(np.int64),
                mat.data.astype(np.complex128))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def triplets(self):
        """``(row, col, value)`` arrays sorted by (row, col)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]


def _series_admittance(br) -> np.ndarray:
    z = br.z
    try:
        cond = np.linalg.cond(z)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        return np.linalg.inv(z)
    except np.linalg.LinAlgError:
        raise AssemblyError(
            f"branch {br.from_bus}-{br.to_bus}: series impedance block is singular") from None


def build_compound_admittance(net: NetworkModel) -> CompoundAdmittance:
    """Assemble ``Y`` from branch pi-models.

    Every branch adds its series block ``Y_L = Z^-1`` to both diagonal blocks,
    ``-Y_L`` to both off-diagonal blocks and half its shunt to each end.
    Contributions are accumulated in a canonical order so that permuting the
    branch list gives a bit-identical matrix.
    """
    idx = net.index
    rows, cols, vals, keys = [], [], [], []
    data = []
    for k, br in enumerate(net.branches):
        yl = _series_admittance(br)
        ysh = br.y_shunt / 2.0
        fr = idx.rows(br.from_bus, br.phases)
        to = idx.rows(br.to_bus, br.phases)
        yl.setflags(write=False)
        ysh.setflags(write=False)
        data.append(BranchData(k, br.from_bus, br.to_bus, br.phases, fr, to, yl, ysh))
        canon = (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
        for r, c, block in ((fr, fr, yl + ysh), (to, to, yl + ysh), (fr, to, -yl), (to, fr, -yl)):
            rr, cc = np.meshgrid(r, c, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(block.ravel())
            keys.append(np.full(rr.size, canon[0] * (1 << 31) + canon[1], dtype=np.int64))
    m = idx.m
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        key = np.concatenate(keys)
        # canonical accumulation order: (row, col, branch endpoints, value)
        order = np.lexsort((v.imag, v.real, key, c, r))
        r, c, v = r[order], c[order], v[order]
        start = np.flatnonzero(np.r_[True, (r[1:] != r[:-1]) | (c[1:] != c[:-1])])
        summed = np.add.reduceat(v, start)
        r, c = r[start], c[start]
    else:
        r = c = np.zeros(0, dtype=np.int64)
        summed = np.zeros(0, dtype=complex)
    mat = sp.csr_matrix((summed, (r, c)), shape=(m, m))
    mat.sort_indices()
    return CompoundAdmittance(mat, idx, tuple(data))


def branch_block(y: CompoundAdmittance, from_bus: int, to_bus: int) -> np.ndarray:
    """Series admittance block ``Y_L`` of the branch joining two buses.

    Positive sign convention: this is minus the off-diagonal compound block.
    The block does not depend on the direction in which the pair is given.
    """
    for b in y.branches:
        if {b.from_bus, b.to_bus} == {from_bus, to_bus}:
            return b.y_series
    raise KeyError(f"no branch between buses {from_bus} and {to_bus}")

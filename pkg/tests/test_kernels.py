import numpy as np
import pytest

import gridsense as gs
from gridsense import _kernels
from gridsense._assembly import block_tree, tree_factorize
from gridsense.generate import random_feeder

pytest.importorskip("numba")
NB = _kernels.get_backend("numba")
NP = _kernels.get_backend("numpy")


def _cases(feeders):
    out = [feeders["ieee13_like"], feeders["ieee34_like"]]
    for seed in (1, 2):
        net = random_feeder(25, seed)
        y = gs.build_compound_admittance(net)
        out.append((net, y, gs.solve_loadflow(net, y)))
    return out


@pytest.fixture(scope="module")
def cases(feeders):
    return _cases(feeders)


def _args(y, op):
    idx = y.index
    return (*y.csr_parts, op.voltages, idx.pq, idx.pq_position)


def _coo_dense(r, c, v, n):
    a = np.zeros((n, n))
    np.add.at(a, (r, c), v)
    return a


def test_backend_selection():
    assert _kernels.BACKEND in ("numba", "numpy")
    with pytest.raises(ValueError):
        _kernels.get_backend("cuda")


def test_injected_currents(cases):
    for _, y, op in cases:
        a = NB.injected_currents(*y.csr_parts, op.voltages)
        b = NP.injected_currents(*y.csr_parts, op.voltages)
        scale = np.abs(y.matrix).sum(axis=1).max()
        np.testing.assert_allclose(a, b, rtol=0, atol=64 * np.finfo(float).eps * scale)


@pytest.mark.parametrize("name", ["sens_triplets", "jac_triplets"])
def test_triplets(cases, name):
    for _, y, op in cases:
        n = 2 * y.index.n_pq
        a = _coo_dense(*getattr(NB, name)(*_args(y, op)), n)
        b = _coo_dense(*getattr(NP, name)(*_args(y, op)), n)
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_jac_dense_matches_triplets(cases):
    for _, y, op in cases:
        n = 2 * y.index.n_pq
        ref = _coo_dense(*NP.jac_triplets(*_args(y, op)), n)
        for k in (NB, NP):
            np.testing.assert_allclose(k.jac_dense(*_args(y, op)), ref, atol=1e-10)


def test_tree_kernels(cases):
    for _, y, op in cases:
        tree = block_tree(y)
        assert tree is not None
        fa, wa = tree_factorize(y, op.voltages, tree, NB)
        fb, wb = tree_factorize(y, op.voltages, tree, NP)
        assert wa > 1e-14 and wb > 1e-14
        rhs = np.random.default_rng(0).standard_normal((2 * y.index.n_pq, 3))
        xa, xb = fa.solve(rhs), fb.solve(rhs)
        np.testing.assert_allclose(xa, xb, atol=1e-9 * np.abs(xb).max())
        a = gs.assemble_system(op, y, method="splu").matrix
        assert np.abs(a @ xa - rhs).max() < 1e-9
        e_pq = op.voltages[y.index.pq]
        for ma, mb in zip(fa.unit_magnitudes(e_pq), fb.unit_magnitudes(e_pq)):
            np.testing.assert_allclose(ma, mb, atol=1e-10)


def test_tree_solve_vector_shape(cases):
    _, y, op = cases[0]
    f, _ = tree_factorize(y, op.voltages, block_tree(y))
    v = np.ones(2 * y.index.n_pq)
    assert f.solve(v).shape == v.shape
    np.testing.assert_allclose(f.solve(v), f.solve(v[:, None])[:, 0])


def test_tree_assemble_matches_matrix(cases):
    for _, y, op in cases:
        tree = block_tree(y)
        a = gs.assemble_system(op, y, method="splu").matrix.toarray()
        for k in (NB, NP):
            d, up, lo = k.tree_assemble(*_args(y, op), tree.blk, tree.off, tree.parent)
            for b in range(len(tree.size)):
                s, n = tree.start[b], tree.size[b]
                np.testing.assert_allclose(d[b, :n, :n], a[s:s + n, s:s + n], atol=1e-12)
                p = tree.parent[b]
                if p >= 0:
                    sp_, m = tree.start[p], tree.size[p]
                    np.testing.assert_allclose(up[b, :n, :m], a[s:s + n, sp_:sp_ + m], atol=1e-12)
                    np.testing.assert_allclose(lo[b, :m, :n], a[sp_:sp_ + m, s:s + n], atol=1e-12)

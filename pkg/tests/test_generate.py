import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import gridsense as gs
from gridsense.generate import random_feeder
from gridsense.sensitivity import power_rhs

SETTINGS = settings(max_examples=25, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow])


def _solve(n, seed):
    net = random_feeder(n, seed)
    y = gs.build_compound_admittance(net)
    return net, y, gs.solve_loadflow(net, y)


def test_generator_deterministic():
    a, b = random_feeder(12, 5), random_feeder(12, 5)
    ya = gs.build_compound_admittance(a).matrix
    yb = gs.build_compound_admittance(b).matrix
    assert (ya != yb).nnz == 0
    assert gs.validate_radial(a).radial


def test_generator_rejects_tiny():
    with pytest.raises(ValueError):
        random_feeder(1)


@SETTINGS
@given(n=st.integers(3, 60), seed=st.integers(0, 2**32 - 1))
def test_random_feeder_converges(n, seed):
    net, y, op = _solve(n, seed)
    assert op.converged
    assert np.abs(op.voltages).min() > 0.8
    assert len(net.buses) == n and gs.validate_radial(net).radial


@SETTINGS
@given(n=st.integers(3, 60), seed=st.integers(0, 2**32 - 1))
def test_sensitivity_system_residual(n, seed):
    _, y, op = _solve(n, seed)
    sys_ = gs.assemble_system(op, y)
    assert sys_.method == "tree"
    k = y.index.n_pq
    pos = np.arange(k)
    rhs = np.hstack([power_rhs(k, pos, "p"), power_rhs(k, pos, "q")])
    x = sys_.solve(rhs)
    assert sys_.residual(x, rhs) <= 1e-10


@SETTINGS
@given(n=st.integers(3, 40), seed=st.integers(0, 2**32 - 1))
def test_tree_matches_splu(n, seed):
    _, y, op = _solve(n, seed)
    a = gs.assemble_system(op, y, method="tree").power_magnitudes()
    b = gs.assemble_system(op, y, method="splu").power_magnitudes()
    for ta, tb in zip(a, b):
        np.testing.assert_allclose(ta, tb, atol=1e-10 * max(1.0, np.abs(tb).max()))


@SETTINGS
@given(n=st.integers(3, 30), seed=st.integers(0, 2**32 - 1))
def test_branch_order_invariance(n, seed):
    net, y, op = _solve(n, seed)
    perm = np.random.default_rng(seed).permutation(len(net.branches))
    shuffled = net.replace(branches=tuple(net.branches[i] for i in perm))
    y2 = gs.build_compound_admittance(shuffled)
    assert (y.matrix != y2.matrix).nnz == 0

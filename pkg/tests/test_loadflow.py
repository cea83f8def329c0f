import numpy as np
import pytest

import gridsense as gs
from gridsense.exceptions import LoadflowNotConverged
from gridsense.loadflow import (branch_currents, branch_losses, injected_power, mismatch,
                                operating_point_from_voltages, solve_loadflow)
from gridsense.network import Branch, BusPhase

from conftest import three_phase_chain, two_bus


def closed_form_two_bus(s, z):
    """Receiving-end voltage for E1 = 1 and absorbed power s.

    ``s conj(z) = E2 - |E2|^2`` fixes ``Im E2`` directly and leaves a
    quadratic in ``Re E2`` (high-voltage root).
    """
    w = s * np.conj(z)
    im = w.imag
    re = (1 + np.sqrt(1 - 4 * (im ** 2 + w.real))) / 2
    return re + 1j * im


def test_no_load_equals_slack():
    net = three_phase_chain(5)
    op = solve_loadflow(net)
    assert op.converged and op.iterations <= 2
    for i, bp in enumerate(net.index.pairs):
        assert op.voltages[i] == pytest.approx(gs.network.nominal_rotation(bp.phase), abs=1e-14)


def test_two_bus_closed_form():
    s, z = 0.1 + 0.05j, 0.01 + 0.1j
    op = solve_loadflow(two_bus(s, z))
    assert op.converged
    assert abs(op.voltages[1]) < 1
    assert op.voltages[1] == pytest.approx(closed_form_two_bus(s, z), abs=1e-12)


@pytest.mark.parametrize("s", [0.05 + 0.0j, 0.2 + 0.1j, -0.1 + 0.02j, 0.0 - 0.3j])
def test_two_bus_closed_form_various(s):
    z = 0.02 + 0.08j
    op = solve_loadflow(two_bus(s, z))
    assert op.voltages[1] == pytest.approx(closed_form_two_bus(s, z), abs=1e-11)


def test_two_bus_current_matches_power():
    s = 0.1 + 0.05j
    net = two_bus(s)
    y = gs.build_compound_admittance(net)
    op = solve_loadflow(net, y)
    cur = branch_currents(op, y)
    assert abs(cur.values[0]) == pytest.approx(abs(s / np.conj(op.voltages[1])), rel=1e-10)


def test_bundled_feeders_converge(feeders):
    for name, (net, y, op) in feeders.items():
        assert op.converged, name
        # residual recomputed independently from the injection equation
        s = injected_power(op, y)
        err = np.abs(s[y.index.pq] + op.s_load[y.index.pq]).max()
        assert err <= 1e-8, name


def test_slack_entries_exact(ieee34):
    net, y, op = ieee34
    np.testing.assert_array_equal(op.voltages[y.index.slack], net.slack_vector()[y.index.slack])


def test_tap_moves_slack(ieee34):
    net, y, _ = ieee34
    op = solve_loadflow(net, y, tap_positions={"a": 12, "b": 12, "c": 12})
    rated = net.rated_slack_vector()[y.index.slack]
    np.testing.assert_allclose(op.voltages[y.index.slack], rated * (1 + 12 * 0.06 / 36), rtol=1e-15)


def test_power_balance(feeders):
    for name, (net, y, op) in feeders.items():
        total = injected_power(op, y).sum()
        losses = branch_losses(op, y).sum()
        assert abs(total - losses) <= 1e-7, name


def test_no_load_injection_is_zero():
    net = three_phase_chain(4)
    y = gs.build_compound_admittance(net)
    op = solve_loadflow(net, y)
    assert np.abs(injected_power(op, y)[y.index.pq]).max() < 1e-14
    assert injected_power(op, y, BusPhase(2, "a")) == pytest.approx(0, abs=1e-14)


def test_reversed_branch_negates_current(ieee13):
    net, y, op = ieee13
    flipped = net.replace(branches=tuple(Branch(b.to_bus, b.from_bus, b.phases, b.z, b.y_shunt)
                                         for b in net.branches))
    y2 = gs.build_compound_admittance(flipped)
    a = branch_currents(op, y).values
    b = branch_currents(op, y2).values
    np.testing.assert_allclose(a, -b, rtol=0, atol=1e-13)


def test_no_load_currents_zero():
    net = three_phase_chain(4)
    y = gs.build_compound_admittance(net)
    op = solve_loadflow(net, y)
    assert np.abs(branch_currents(op, y).values).max() < 1e-13


def test_deterministic(ieee34):
    net, y, op = ieee34
    again = solve_loadflow(net, gs.build_compound_admittance(net))
    assert np.array_equal(op.voltages, again.voltages)


def test_non_convergence_flagged():
    net = two_bus(5.0 + 5.0j)   # beyond the nose of the PV curve
    op = solve_loadflow(net, max_iter=20)
    assert not op.converged
    assert len(op.trace) == op.iterations + 1
    with pytest.raises(LoadflowNotConverged) as info:
        solve_loadflow(net, max_iter=20, raise_on_fail=True)
    assert len(info.value.trace) == 21


def test_external_voltages(ieee13):
    net, y, op = ieee13
    ext = operating_point_from_voltages(net, y, op.voltages)
    assert ext.converged and ext.max_mismatch < 1e-12
    np.testing.assert_allclose(ext.s_load[y.index.pq], op.s_load[y.index.pq], atol=1e-9)
    wrong = operating_point_from_voltages(net, y, op.voltages, s_load=op.s_load * 1.1)
    assert not wrong.converged


def test_mismatch_shape(ieee13):
    net, y, op = ieee13
    assert mismatch(y, op.voltages, op.s_load).shape == (y.index.n_pq,)

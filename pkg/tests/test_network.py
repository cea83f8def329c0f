import numpy as np
import pytest

import gridsense as gs
from gridsense.exceptions import StructuralError
from gridsense.network import (Branch, Bus, BusPhase, DerSpec, NetworkModel, TapChanger,
                               from_per_unit, index_map, to_per_unit, validate_radial)

from conftest import three_phase_chain, two_bus


def _net(buses, branches, **kw):
    return NetworkModel(1e6, 2000.0, tuple(buses), tuple(branches), **kw)


def test_index_orders_by_bus_then_phase():
    buses = [Bus(7, "pq", ("c", "a")), Bus(1, "slack", ("a", "b", "c"),
                                           slack_voltage={"a": 1, "b": 1, "c": 1}),
             Bus(3, "pq", ("b",))]
    net = _net(buses, [Branch(1, 3, ("b",), [[1j]]), Branch(1, 7, ("a", "c"), np.eye(2) * 1j)])
    idx = index_map(net)
    assert idx.pairs == (BusPhase(1, "a"), BusPhase(1, "b"), BusPhase(1, "c"), BusPhase(3, "b"),
                         BusPhase(7, "a"), BusPhase(7, "c"))
    assert idx.m == 6 and idx.n_pq == 3
    assert list(idx.slack) == [0, 1, 2] and list(idx.pq) == [3, 4, 5]
    assert list(idx.pq_position[idx.pq]) == [0, 1, 2]
    assert np.all(idx.pq_position[idx.slack] == -1)


def test_missing_phases_not_padded(ieee13):
    net, y, _ = ieee13
    # 650 and 632/633/634/671/680/692/675 are three-phase; the laterals are not
    assert y.index.m == 32 < 3 * len(net.buses)


def test_duplicate_bus_rejected():
    with pytest.raises(StructuralError, match="duplicate"):
        _net([Bus(1, "slack", ("a",), slack_voltage={"a": 1}), Bus(1, "pq", ("a",))], [])


def test_branch_phase_must_exist_at_both_ends():
    buses = [Bus(1, "slack", ("a",), slack_voltage={"a": 1}), Bus(2, "pq", ("b",))]
    with pytest.raises(StructuralError, match="absent at bus 1"):
        _net(buses, [Branch(1, 2, ("b",), [[1j]])])


def test_missing_slack_rejected():
    with pytest.raises(StructuralError, match="no slack"):
        _net([Bus(1, "pq", ("a",))], [])


def test_unknown_phase_rejected():
    with pytest.raises((StructuralError, ValueError)):
        Bus(1, "pq", ("d",))


def test_validate_radial_flags_loop_and_disconnection():
    net = three_phase_chain(4)
    assert validate_radial(net).radial
    looped = net.replace(branches=net.branches + (Branch(1, 4, ("a",), [[0.1j]]),))
    rep = validate_radial(looped)
    assert rep.connected and not rep.radial
    cut = net.replace(branches=net.branches[:-1])
    with pytest.raises(StructuralError, match="unreachable"):
        validate_radial(cut)
    rep = validate_radial(cut, strict=False)
    assert rep.unreachable == (4,) and not rep.radial


def test_per_unit_scaling_example():
    # Z = 4 ohm at 2 kV / 1 MVA (Z_base = 4 ohm) -> 1 pu
    buses = [Bus(1, "slack", ("a",), slack_voltage={"a": 2000.0}),
             Bus(2, "pq", ("a",), injections={"a": 5e5 + 2e5j})]
    si = NetworkModel(1e6, 2000.0, buses, (Branch(1, 2, ("a",), [[4.0 + 0j]]),), units="si")
    pu = to_per_unit(si)
    assert pu.branches[0].z[0, 0] == pytest.approx(1.0)
    assert pu.bus(2).injections["a"] == pytest.approx(0.5 + 0.2j)
    assert pu.bus(1).slack_voltage["a"] == pytest.approx(1.0)
    assert to_per_unit(pu) is pu


def test_per_unit_round_trip(ieee34):
    net = ieee34[0]
    back = to_per_unit(from_per_unit(net))
    for a, b in zip(net.branches, back.branches):
        np.testing.assert_allclose(a.z, b.z, rtol=1e-12)
        np.testing.assert_allclose(a.y_shunt, b.y_shunt, rtol=1e-12, atol=1e-18)
    np.testing.assert_allclose(net.load_vector(), back.load_vector(), rtol=1e-12)


def test_bad_base_rejected():
    net = two_bus().replace(units="si", base_power=0.0)
    with pytest.raises(ValueError):
        to_per_unit(net)


def test_tap_and_slack_vector():
    base = two_bus()
    net = base.replace(tap=TapChanger(1, -36, 36, 0.06 / 36, {"a": 6}))
    v = net.slack_vector()
    assert v[0] == pytest.approx(1.01)
    assert net.slack_vector({"a": -36})[0] == pytest.approx(0.94)
    with pytest.raises(StructuralError):
        TapChanger(1, -36, 36, 0.01, {"a": 40})


def test_load_vector_nets_out_der():
    base = three_phase_chain(3, load=0.01)
    net = base.replace(ders=(DerSpec(3, p_init=0.03, p_max=0.06, q_min=-0.03, q_max=0.03),))
    diff = base.load_vector() - net.load_vector()
    idx = net.index
    for p in "abc":
        assert diff[idx[BusPhase(3, p)]] == pytest.approx(0.01)
    assert np.all(net.load_vector()[idx.slack] == 0)


def test_der_validation():
    with pytest.raises(StructuralError):
        DerSpec(2, p_init=0.5, p_max=0.3, q_min=0, q_max=0)
    with pytest.raises(StructuralError, match="slack"):
        two_bus().replace(ders=(DerSpec(1, 0, 1, 0, 0),))

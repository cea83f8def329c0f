import numpy as np
import pytest

import gridsense as gs
from gridsense.network import Branch, Bus, NetworkModel, nominal_rotation


def two_bus(s_load=0j, z=0.01 + 0.1j, ysh=None, slack=1.0 + 0j):
    """Single-phase slack -> pq network in per-unit."""
    buses = (Bus(1, "slack", ("a",), slack_voltage={"a": slack}),
             Bus(2, "pq", ("a",), injections={"a": s_load}))
    return NetworkModel(1e6, 1000.0, buses, (Branch(1, 2, ("a",), [[z]], ysh),), units="pu")


def three_phase_chain(n=4, load=0.0, shunt=False):
    """Three-phase chain 1-2-...-n with coupled impedances."""
    z = np.array([[0.02 + 0.06j, 0.005 + 0.02j, 0.004 + 0.018j],
                  [0.005 + 0.02j, 0.021 + 0.061j, 0.005 + 0.02j],
                  [0.004 + 0.018j, 0.005 + 0.02j, 0.019 + 0.059j]])
    ysh = 1j * np.array([[6e-4, -1e-4, -1e-4], [-1e-4, 6e-4, -1e-4], [-1e-4, -1e-4, 6e-4]])
    buses = [Bus(1, "slack", ("a", "b", "c"), slack_voltage={p: nominal_rotation(p) for p in "abc"})]
    buses += [Bus(k, "pq", ("a", "b", "c"),
                  injections={"a": load * (1 + 0.3j), "b": 0.7 * load * (1 + 0.2j), "c": 1.2 * load})
              for k in range(2, n + 1)]
    branches = [Branch(k - 1, k, ("a", "b", "c"), z, ysh if shunt else None) for k in range(2, n + 1)]
    return NetworkModel(1e6, 2401.77, tuple(buses), tuple(branches), units="pu")


@pytest.fixture(scope="session")
def feeders():
    out = {}
    for name in ("two_bus", "ieee13_like", "ieee34_like"):
        net = gs.load_network(name)
        y = gs.build_compound_admittance(net)
        op = gs.solve_loadflow(net, y)
        out[name] = (net, y, op)
    return out


@pytest.fixture(scope="session")
def ieee13(feeders):
    return feeders["ieee13_like"]


@pytest.fixture(scope="session")
def ieee34(feeders):
    return feeders["ieee34_like"]


@pytest.fixture(scope="session")
def ieee13_sens(ieee13):
    net, y, op = ieee13
    return gs.full_sensitivity(op, y, net)

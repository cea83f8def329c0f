"""Random radial multiphase feeders for property tests and scaling benchmarks."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .admittance import build_compound_admittance
from .loadflow import solve_loadflow
from .network import PHASES, Branch, Bus, NetworkModel, nominal_rotation


def _coupled_impedance(rng, p, length):
    # symmetric p x p block: dominant self terms, weaker mutual coupling
    r_self = rng.uniform(0.3, 0.7)
    x_self = rng.uniform(0.6, 1.4)
    z = np.full((p, p), complex(rng.uniform(0.05, 0.15), rng.uniform(0.2, 0.45)))
    np.fill_diagonal(z, complex(r_self, x_self))
    z += np.diag(rng.uniform(-0.02, 0.02, p))
    return z * length


def random_feeder(n_buses: int, seed: Optional[int] = None, *, load_pu: Optional[float] = None,
                  lateral_prob: float = 0.35, shunt: bool = True,
                  ensure_converged: bool = True, name: str = "") -> NetworkModel:
    """Random radial feeder in per-unit with ``n_buses`` buses (bus 1 is the slack).

    Buses attach to a recent bus so the tree has feeder-like depth.  Laterals
    drop to one or two of the parent's phases.  Loads are constant PQ with a
    power factor between 0.85 and 1, drawn up to ``load_pu`` per phase
    (default ``1.5 / n_buses``).  With ``ensure_converged`` all loads
    are halved until the load flow converges from a flat start.
    """
    if n_buses < 2:
        raise ValueError("a feeder needs at least two buses")
    rng = np.random.default_rng(seed)
    load_pu = 1.5 / n_buses if load_pu is None else load_pu
    phases = {1: PHASES}
    parent = {}
    for b in range(2, n_buses + 1):
        lo = max(1, b - 4)
        par = int(rng.integers(lo, b))
        pp = phases[par]
        if len(pp) > 1 and rng.random() < lateral_prob:
            k = int(rng.integers(1, len(pp)))
            pp = tuple(sorted(rng.choice(pp, size=k, replace=False).tolist()))
        phases[b] = pp
        parent[b] = par

    loads = {}
    for b in range(2, n_buses + 1):
        inj = {}
        for p in phases[b]:
            pw = rng.uniform(0.0, load_pu)
            pf = rng.uniform(0.85, 1.0)
            inj[p] = complex(pw, pw * np.tan(np.arccos(pf)))
        loads[b] = inj

    branches = []
    for b in range(2, n_buses + 1):
        p = len(phases[b])
        z = _coupled_impedance(rng, p, rng.uniform(0.005, 0.03))
        ysh = None
        if shunt:
            bsh = rng.uniform(1e-5, 5e-5)
            ysh = 1j * (np.full((p, p), -0.2 * bsh) + np.eye(p) * 1.2 * bsh)
        branches.append(Branch(parent[b], b, phases[b], z, ysh))

    slack = {p: nominal_rotation(p) for p in PHASES}
    scale = 1.0
    for _ in range(30):
        buses = [Bus(1, "slack", PHASES, slack_voltage=slack)]
        buses += [Bus(b, "pq", phases[b], {p: s * scale for p, s in loads[b].items()})
                  for b in range(2, n_buses + 1)]
        net = NetworkModel(1e6, 2401.77, tuple(buses), tuple(branches), units="pu",
                           name=name or f"random_{n_buses}_{seed}")
        if not ensure_converged:
            return net
        lf_log = logging.getLogger("gridsense.loadflow")
        level = lf_log.level
        lf_log.setLevel(logging.ERROR)  # failed probes are expected here
        try:
            op = solve_loadflow(net, build_compound_admittance(net))
        finally:
            lf_log.setLevel(level)
        if op.converged and np.abs(op.voltages).min() > 0.8:
            return net
        scale *= 0.5
    raise RuntimeError("could not find a converging load level")  # pragma: no cover

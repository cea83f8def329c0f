"""Feeder data model, bus-phase index space and per-unit handling.

A network is a set of buses, each carrying a subset of the phases a/b/c,
joined by multiphase pi-model branches.  Only existing bus-phase pairs are
indexed, so the compound admittance has dimension ``M = sum(len(bus.phases))``.

Per-unit bases are *per phase*: ``base_voltage`` is a phase-to-ground
voltage and ``base_power`` a single-phase power, so ``Z_base = V**2 / S``.
"""

from __future__ import annotations

import dataclasses
import enum
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import StructuralError


class PhaseId(str, enum.Enum):
    a = "a"
    b = "b"
    c = "c"


PHASES = ("a", "b", "c")
NOMINAL_ANGLE_DEG = {"a": 0.0, "b": -120.0, "c": 120.0}


def nominal_rotation(phase: str) -> complex:
    return complex(np.exp(1j * np.deg2rad(NOMINAL_ANGLE_DEG[phase])))


def _phase_tuple(phases, where) -> tuple:
    out = []
    for p in phases:
        try:
            out.append(PhaseId(p).value)
        except ValueError:
            raise StructuralError(f"{where}: unknown phase {p!r}") from None
    if len(set(out)) != len(out):
        raise StructuralError(f"{where}: repeated phase in {list(phases)}")
    return tuple(sorted(out))


@dataclass(frozen=True, order=True)
class BusPhase:
    bus: int
    phase: str

    def __str__(self):
        return f"{self.bus}{self.phase}"


@dataclass(frozen=True)
class Bus:
    """A bus and its per-phase data.

    ``injections`` holds the constant-PQ power per phase with absorption
    positive (a load of 1 MW is ``+1e6`` VA in SI units).  ``slack_voltage``
    holds the rated phase-to-ground phasor of slack buses.
    """

    id: int
    kind: str
    phases: tuple
    injections: Mapping[str, complex] = field(default_factory=dict)
    slack_voltage: Mapping[str, complex] = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self):
        where = f"bus {self.id}"
        if self.kind not in ("slack", "pq"):
            raise StructuralError(f"{where}: kind must be 'slack' or 'pq', got {self.kind!r}")
        phases = _phase_tuple(self.phases, where)
        if not phases:
            raise StructuralError(f"{where}: no phases declared")
        object.__setattr__(self, "phases", phases)
        inj = {PhaseId(k).value: complex(v) for k, v in dict(self.injections).items()}
        vs = {PhaseId(k).value: complex(v) for k, v in dict(self.slack_voltage).items()}
        for p in list(inj) + list(vs):
            if p not in phases:
                raise StructuralError(f"{where}: data given for missing phase {p!r}")
        if self.kind == "slack":
            missing = [p for p in phases if p not in vs]
            if missing:
                raise StructuralError(f"{where}: slack voltage missing for phases {missing}")
            if any(v != 0 for v in inj.values()):
                raise StructuralError(f"{where}: slack buses carry no injections")
            inj = {}
        else:
            if vs:
                raise StructuralError(f"{where}: slack_voltage given on a pq bus")
            inj = {p: inj.get(p, 0j) for p in phases}
        object.__setattr__(self, "injections", inj)
        object.__setattr__(self, "slack_voltage", vs)

    @property
    def is_slack(self) -> bool:
        return self.kind == "slack"


@dataclass(frozen=True, eq=False)
class Branch:
    """Multiphase pi-model line.

    ``z`` is the p-by-p series impedance and ``y_shunt`` the *total* shunt
    admittance (half is placed at each end).  Row/column order follows
    ``phases`` sorted a<b<c.
    """

    from_bus: int
    to_bus: int
    phases: tuple
    z: np.ndarray
    y_shunt: Optional[np.ndarray] = None
    name: Optional[str] = None

    def __post_init__(self):
        where = f"branch {self.from_bus}-{self.to_bus}"
        if self.from_bus == self.to_bus:
            raise StructuralError(f"{where}: from and to bus are identical")
        phases = _phase_tuple(self.phases, where)
        if not phases:
            raise StructuralError(f"{where}: carries no phase")
        p = len(phases)
        z = np.array(self.z, dtype=complex).reshape(p, p)
        ysh = (np.zeros((p, p), dtype=complex) if self.y_shunt is None
               else np.array(self.y_shunt, dtype=complex).reshape(p, p))
        z.setflags(write=False)
        ysh.setflags(write=False)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y_shunt", ysh)

    @property
    def key(self) -> tuple:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class TapChanger:
    """On-load tap changer sitting at a slack bus.

    Effective slack magnitude of phase ``p`` is
    ``rated * (1 + position[p] * step)``.
    """

    slack_bus: int
    n_min: int
    n_max: int
    step: float
    position: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.n_min <= 0 <= self.n_max):
            raise StructuralError("tap: need n_min <= 0 <= n_max")
        if not self.step > 0:
            raise StructuralError("tap: step must be positive")
        pos = {PhaseId(k).value: int(v) for k, v in dict(self.position).items()}
        for p, n in pos.items():
            if not self.n_min <= n <= self.n_max:
                raise StructuralError(f"tap: position {n} of phase {p} outside [{self.n_min}, {self.n_max}]")
        object.__setattr__(self, "position", pos)

    def factor(self, phase: str, position: Optional[float] = None) -> float:
        n = self.position.get(phase, 0) if position is None else position
        return 1.0 + n * self.step


@dataclass(frozen=True)
class DerSpec:
    """Controllable DER at a bus.

    Powers are three-phase totals (generation positive) in the network's
    units; in balanced operation each phase receives ``1/len(phases)`` of it.
    """

    bus: int
    p_init: float
    p_max: float
    q_min: float
    q_max: float
    q_init: float = 0.0

    def __post_init__(self):
        if self.q_min > self.q_max or self.p_max < 0:
            raise StructuralError(f"der at bus {self.bus}: inconsistent bounds")
        if not (0 <= self.p_init <= self.p_max) or not (self.q_min <= self.q_init <= self.q_max):
            raise StructuralError(f"der at bus {self.bus}: initial set point outside bounds")


@dataclass(frozen=True)
class IndexMap:
    """Bijection between existing bus-phase pairs and ``0..M-1``."""

    pairs: tuple
    slack: np.ndarray
    pq: np.ndarray

    def __post_init__(self):
        lookup = {bp: i for i, bp in enumerate(self.pairs)}
        object.__setattr__(self, "_lookup", lookup)
        pos = np.full(len(self.pairs), -1, dtype=np.int64)
        pos[self.pq] = np.arange(len(self.pq))
        spos = np.full(len(self.pairs), -1, dtype=np.int64)
        spos[self.slack] = np.arange(len(self.slack))
        for arr in (self.slack, self.pq, pos, spos):
            arr.setflags(write=False)
        object.__setattr__(self, "pq_position", pos)
        object.__setattr__(self, "slack_position", spos)

    def __len__(self):
        return len(self.pairs)

    @property
    def m(self) -> int:
        return len(self.pairs)

    @property
    def n_pq(self) -> int:
        return len(self.pq)

    def __getitem__(self, bp) -> int:
        if not isinstance(bp, BusPhase):
            bp = BusPhase(*bp)
        try:
            return self._lookup[bp]
        except KeyError:
            raise KeyError(f"bus-phase {bp} does not exist") from None

    def __contains__(self, bp) -> bool:
        if not isinstance(bp, BusPhase):
            bp = BusPhase(*bp)
        return bp in self._lookup

    def pair(self, i: int) -> BusPhase:
        return self.pairs[i]

    def rows(self, bus: int, phases: Sequence[str]) -> np.ndarray:
        return np.array([self[BusPhase(bus, p)] for p in phases], dtype=np.int64)


@dataclass(frozen=True)
class RadialReport:
    radial: bool
    connected: bool
    slack_count: int
    unreachable: tuple = ()


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable feeder description.

    ``units`` is ``"si"`` (ohm, siemens, VA, V) or ``"pu"``.
    """

    base_power: float
    base_voltage: float
    buses: tuple
    branches: tuple
    tap: Optional[TapChanger] = None
    ders: tuple = ()
    units: str = "pu"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "ders", tuple(self.ders))
        if self.units not in ("si", "pu"):
            raise StructuralError(f"units must be 'si' or 'pu', got {self.units!r}")
        _check_consistency(self)

    @cached_property
    def bus_map(self) -> dict:
        return {b.id: b for b in self.buses}

    def bus(self, bus_id: int) -> Bus:
        try:
            return self.bus_map[bus_id]
        except KeyError:
            raise StructuralError(f"no bus with id {bus_id}") from None

    @property
    def slack_buses(self) -> list:
        return [b for b in self.buses if b.is_slack]

    @cached_property
    def index(self) -> IndexMap:
        return index_map(self)

    def replace(self, **changes) -> "NetworkModel":
        return dataclasses.replace(self, **changes)

    def load_vector(self) -> np.ndarray:
        """Net absorbed power per bus-phase (loads minus DER output)."""
        idx = self.index
        s = np.zeros(idx.m, dtype=complex)
        for b in self.buses:
            for p, v in b.injections.items():
                s[idx[BusPhase(b.id, p)]] += v
        for d in self.ders:
            phases = self.bus(d.bus).phases
            share = complex(d.p_init, d.q_init) / len(phases)
            for p in phases:
                s[idx[BusPhase(d.bus, p)]] -= share
        s[idx.slack] = 0
        return s

    def rated_slack_vector(self) -> np.ndarray:
        """Untapped slack phasors at slack indices, zeros elsewhere."""
        idx = self.index
        v = np.zeros(idx.m, dtype=complex)
        for b in self.slack_buses:
            for p in b.phases:
                v[idx[BusPhase(b.id, p)]] = b.slack_voltage[p]
        return v

    def slack_vector(self, tap_positions: Optional[Mapping[str, float]] = None) -> np.ndarray:
        """Slack phasors at slack indices including the tap-changer ratio."""
        v = self.rated_slack_vector()
        if self.tap is not None:
            b = self.bus(self.tap.slack_bus)
            for p in b.phases:
                n = None if tap_positions is None else tap_positions.get(p)
                v[self.index[BusPhase(b.id, p)]] *= self.tap.factor(p, n)
        return v


def _check_consistency(net: NetworkModel) -> None:
    ids = [b.id for b in net.buses]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise StructuralError(f"duplicate bus ids: {dup}")
    if not any(b.is_slack for b in net.buses):
        raise StructuralError("network has no slack bus")
    phases = {b.id: set(b.phases) for b in net.buses}
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in phases:
                raise StructuralError(f"branch {br.from_bus}-{br.to_bus}: unknown bus {end}")
            missing = set(br.phases) - phases[end]
            if missing:
                raise StructuralError(
                    f"branch {br.from_bus}-{br.to_bus}: phases {sorted(missing)} absent at bus {end}")
    if net.tap is not None:
        if net.tap.slack_bus not in phases or not net.bus(net.tap.slack_bus).is_slack:
            raise StructuralError(f"tap: bus {net.tap.slack_bus} is not a slack bus")
    for d in net.ders:
        if d.bus not in phases:
            raise StructuralError(f"der: unknown bus {d.bus}")
        if net.bus(d.bus).is_slack:
            raise StructuralError(f"der: bus {d.bus} is a slack bus")


def index_map(net: NetworkModel) -> IndexMap:
    """Deterministic bus-phase ordering: ascending bus id, then a<b<c."""
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise StructuralError("duplicate bus ids")
    pairs, slack, pq = [], [], []
    for b in sorted(net.buses, key=lambda b: b.id):
        for p in b.phases:
            (slack if b.is_slack else pq).append(len(pairs))
            pairs.append(BusPhase(b.id, p))
    return IndexMap(tuple(pairs), np.array(slack, dtype=np.int64), np.array(pq, dtype=np.int64))


def validate_radial(net: NetworkModel, strict: bool = True) -> RadialReport:
    """Check that the bus graph is a connected tree.

    Parallel branches between the same pair of buses count as a loop.  With
    ``strict`` a disconnected graph raises instead of being reported.
    """
    adj = {b.id: [] for b in net.buses}
    for br in net.branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    slacks = [b.id for b in net.buses if b.is_slack]
    root = min(slacks)
    seen = {root}
    todo = deque([root])
    while todo:
        u = todo.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                todo.append(v)
    unreachable = tuple(sorted(set(adj) - seen))
    connected = not unreachable
    if strict and not connected:
        raise StructuralError(f"network is disconnected; unreachable buses: {list(unreachable)}")
    radial = connected and len(net.branches) == len(net.buses) - 1
    return RadialReport(radial=radial, connected=connected, slack_count=len(slacks),
                        unreachable=unreachable)


def _scale(net: NetworkModel, zf: float, sf: float, vf: float, units: str) -> NetworkModel:
    buses = [dataclasses.replace(
        b,
        injections={p: v * sf for p, v in b.injections.items()},
        slack_voltage={p: v * vf for p, v in b.slack_voltage.items()},
    ) for b in net.buses]
    branches = [dataclasses.replace(br, z=br.z * zf, y_shunt=br.y_shunt / zf) for br in net.branches]
    ders = [DerSpec(d.bus, d.p_init * sf, d.p_max * sf, d.q_min * sf, d.q_max * sf, d.q_init * sf)
            for d in net.ders]
    return net.replace(buses=tuple(buses), branches=tuple(branches), ders=tuple(ders), units=units)


def _check_bases(net):
    if not (net.base_power > 0 and net.base_voltage > 0):
        raise ValueError("base_power and base_voltage must be positive")


def to_per_unit(net: NetworkModel) -> NetworkModel:
    """Convert an SI network to per-unit; a per-unit network is returned as is."""
    _check_bases(net)
    if net.units == "pu":
        return net
    z_base = net.base_voltage ** 2 / net.base_power
    return _scale(net, 1.0 / z_base, 1.0 / net.base_power, 1.0 / net.base_voltage, "pu")


def from_per_unit(net: NetworkModel) -> NetworkModel:
    _check_bases(net)
    if net.units == "si":
        return net
    z_base = net.base_voltage ** 2 / net.base_power
    return _scale(net, z_base, net.base_power, net.base_voltage, "si")

"""Constant-PQ multiphase load flow (Newton-Raphson, rectangular coordinates)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse.linalg as spla

from ._assembly import block_tree, deinterleave, interleave, system_matrix, tree_factorize
from .admittance import CompoundAdmittance, build_compound_admittance
from .exceptions import LoadflowNotConverged, NumericalError
from .network import BusPhase, NetworkModel, nominal_rotation

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    """Bus-phase voltages plus the absorbed powers they were solved for.

    ``s_load`` is absorption-positive and zero on slack indices.
    """

    voltages: np.ndarray
    s_load: np.ndarray
    converged: bool
    max_mismatch: float
    iterations: int = 0
    trace: tuple = field(default=(), repr=False)

    @property
    def s_injected(self) -> np.ndarray:
        return -self.s_load

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)


def mismatch(y: CompoundAdmittance, voltages: np.ndarray, s_load: np.ndarray) -> np.ndarray:
    """``conj(E_i) * (Y E)_i - conj(S_inj_i)`` on the pq indices."""
    pq = y.index.pq
    cur = y.matrix @ voltages
    return np.conj(voltages[pq]) * cur[pq] + np.conj(s_load[pq])


def flat_start(net: NetworkModel, slack: np.ndarray) -> np.ndarray:
    idx = net.index
    ref = {}
    for b in sorted(net.slack_buses, key=lambda b: b.id):
        for p in b.phases:
            ref.setdefault(p, abs(slack[idx[BusPhase(b.id, p)]]))
    v = np.empty(idx.m, dtype=complex)
    for i, bp in enumerate(idx.pairs):
        v[i] = ref.get(bp.phase, 1.0) * nominal_rotation(bp.phase)
    v[idx.slack] = slack[idx.slack]
    return v


def _newton_step(y, v, f, tree, it):
    # the rectangular Newton matrix is the sensitivity system matrix
    if tree is not None:
        fac, worst = tree_factorize(y, v, tree)
        if not worst > 1e-14:
            raise NumericalError(f"singular Newton step at iteration {it}")
        return fac.solve(-interleave(f))
    try:
        return spla.splu(system_matrix(y, v)).solve(-interleave(f))
    except RuntimeError as exc:
        raise NumericalError(f"singular Newton step at iteration {it}: {exc}") from None


def solve_loadflow(
    net: NetworkModel,
    y: Optional[CompoundAdmittance] = None,
    *,
    s_load: Optional[np.ndarray] = None,
    slack: Optional[np.ndarray] = None,
    tap_positions: Optional[Mapping[str, float]] = None,
    v0: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 50,
    raise_on_fail: bool = False,
) -> OperatingPoint:
    """Solve for all bus-phase phasors.

    Parameters
    ----------
    s_load
        Absorbed power per bus-phase; defaults to ``net.load_vector()``.
    slack
        Slack phasors (only slack entries are read); defaults to the
        tap-adjusted values from the network.
    v0
        Initial guess; a flat start with nominal 120-degree rotations if omitted.

    The returned point has ``converged`` False when the max-norm power
    mismatch did not reach ``tol`` within ``max_iter`` Newton steps.
    """
    y = y if y is not None else build_compound_admittance(net)
    idx = y.index
    s_load = net.load_vector() if s_load is None else np.asarray(s_load, dtype=complex)
    slack = net.slack_vector(tap_positions) if slack is None else np.asarray(slack, dtype=complex)
    v = flat_start(net, slack) if v0 is None else np.array(v0, dtype=complex)
    v[idx.slack] = slack[idx.slack]
    pq = idx.pq
    tree = block_tree(y)

    trace = []
    converged = False
    it = 0
    while True:
        f = mismatch(y, v, s_load)
        err = float(np.max(np.abs(f))) if f.size else 0.0
        trace.append(err)
        if not np.isfinite(err):
            break
        if err <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        step = _newton_step(y, v, f, tree, it)
        v[pq] += deinterleave(step)
        it += 1

    if not converged:
        log.warning("load flow did not converge: mismatch %.3e after %d iterations", err, it)
        if raise_on_fail:
            raise LoadflowNotConverged(
                f"load flow did not converge (mismatch {err:.3e} after {it} iterations)", trace)
    v.setflags(write=False)
    s_load = s_load.copy()
    s_load[idx.slack] = 0
    s_load.setflags(write=False)
    return OperatingPoint(v, s_load, converged, err, it, tuple(trace))


def operating_point_from_voltages(net, y, voltages, s_load=None, tol: float = 1e-8) -> OperatingPoint:
    """Wrap externally supplied phasors (e.g. from state estimation).

    Without ``s_load`` the absorbed powers are those implied by the phasors,
    so the point is consistent by construction.  With ``s_load`` the point
    is flagged converged only if the mismatch is within ``tol``.
    """
    v = np.array(voltages, dtype=complex)
    if v.shape != (y.index.m,):
        raise ValueError(f"expected {y.index.m} phasors, got shape {v.shape}")
    if s_load is None:
        s_load = -(v * np.conj(y.matrix @ v))
    else:
        s_load = np.array(s_load, dtype=complex)
    s_load[y.index.slack] = 0
    f = mismatch(y, v, s_load)
    err = float(np.max(np.abs(f))) if f.size else 0.0
    v.setflags(write=False)
    s_load.setflags(write=False)
    return OperatingPoint(v, s_load, err <= tol, err, 0, ())


def injected_power(op: OperatingPoint, y: CompoundAdmittance, i=None):
    """Complex power ``E_i * conj((Y E)_i)`` injected into the network.

    ``i`` may be an index, a :class:`BusPhase` or ``None`` for the whole vector.
    """
    s = op.voltages * np.conj(y.matrix @ op.voltages)
    if i is None:
        return s
    if isinstance(i, (BusPhase, tuple)):
        i = y.index[i]
    return complex(s[i])


@dataclass(frozen=True, eq=False)
class BranchCurrents:
    """Current per branch-phase, in branch order then phase order."""

    keys: tuple
    values: np.ndarray
    branch_of: np.ndarray

    def __len__(self):
        return len(self.keys)


def branch_currents(op: OperatingPoint, y: CompoundAdmittance,
                    include_shunt: bool = False) -> BranchCurrents:
    """``Y_L (E_from - E_to)`` per carried phase.

    With ``include_shunt`` the sending-end half shunt ``Y_sh/2 E_from`` is
    added, giving the physical current leaving the from-bus.
    """
    keys, vals, owner = [], [], []
    e = op.voltages
    for b in y.branches:
        ef, et = e[b.from_rows], e[b.to_rows]
        cur = b.y_series @ (ef - et)
        if include_shunt:
            cur = cur + b.y_half_shunt @ ef
        for p, c in zip(b.phases, cur):
            keys.append((b.from_bus, b.to_bus, p))
            vals.append(c)
            owner.append(b.position)
    return BranchCurrents(tuple(keys), np.array(vals, dtype=complex), np.array(owner, dtype=np.int64))


def branch_losses(op: OperatingPoint, y: CompoundAdmittance) -> np.ndarray:
    """Complex power lost in each branch (series part plus both half shunts)."""
    e = op.voltages
    out = np.empty(len(y.branches), dtype=complex)
    for k, b in enumerate(y.branches):
        ef, et = e[b.from_rows], e[b.to_rows]
        de = ef - et
        series = np.sum(de * np.conj(b.y_series @ de))
        shunt = np.sum(ef * np.conj(b.y_half_shunt @ ef)) + np.sum(et * np.conj(b.y_half_shunt @ et))
        out[k] = series + shunt
    return out

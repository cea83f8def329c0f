"""Sensitivity-based voltage control step with DER and tap-changer set points.

The voltage magnitudes are linearised around the current operating point,

    d|E| = K_P dP + K_Q dQ + K_n dn,

and ``|| |E| + K dx - target ||_2`` is minimised under box constraints on
the DER powers and the tap position.  The tap is treated as continuous and
rounded afterwards.  Two modes are supported: ``balanced`` (each DER
injects the same power in all of its phases) and ``per_phase``.  The tap
changer is ganged in both modes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .admittance import CompoundAdmittance
from .exceptions import NumericalError, StructuralError
from .loadflow import OperatingPoint, solve_loadflow
from .network import BusPhase, DerSpec, NetworkModel
from .sensitivity import SensitivitySet

__all__ = [
    "DerSpec", "ControlVariable", "ControlProblem", "ControlSolution", "TrueProfile",
    "build_linear_model", "solve_control", "evaluate_true_profile", "round_half_toward_zero",
]

log = logging.getLogger(__name__)

KKT_TOL = 1e-9
MODES = ("balanced", "per_phase")


@dataclass(frozen=True)
class ControlVariable:
    kind: str                 # "p", "q" or "tap"
    der: int = -1             # position in ControlProblem.ders
    phases: tuple = ()
    init: float = 0.0         # per-phase set point (pu) or tap position


@dataclass(frozen=True, eq=False)
class ControlProblem:
    net: NetworkModel
    y: CompoundAdmittance
    op: OperatingPoint
    mode: str
    ders: tuple
    variables: tuple
    k: np.ndarray             # (M, n_var) magnitude sensitivities
    lb: np.ndarray
    ub: np.ndarray
    v0: np.ndarray            # |E| at op
    target: np.ndarray
    monitored: np.ndarray     # row indices entering the objective
    k_tap_phase: np.ndarray   # (M, n_tap_phases), one column per tap phase
    tap_phases: tuple = ()
    tap_init: dict = field(default_factory=dict)

    @property
    def n_var(self) -> int:
        return len(self.variables)

    def predicted_delta(self, dx: np.ndarray) -> np.ndarray:
        return self.k @ dx

    def objective(self, delta: Optional[np.ndarray] = None) -> float:
        v = self.v0 if delta is None else self.v0 + delta
        r = (v - self.target)[self.monitored]
        return float(np.linalg.norm(r))


def _der_phases(net, der):
    return net.bus(der.bus).phases


def build_linear_model(sens: SensitivitySet, net: NetworkModel, op: OperatingPoint,
                       y: CompoundAdmittance, *, mode: str = "balanced", target: float = 1.0,
                       ders: Optional[Sequence[DerSpec]] = None,
                       monitored: Optional[np.ndarray] = None) -> ControlProblem:
    """Stack the DER and tap sensitivity columns into ``K`` with box bounds.

    Power variables are per-phase amounts in per-unit.  In ``balanced`` mode
    one P and one Q variable per DER drive all its phases, so the column is
    the sum of the per-phase columns.
    """
    mode = mode.replace("-", "_")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    ders = tuple(net.ders if ders is None else ders)
    idx = sens.index
    if net.units != "pu":
        raise StructuralError("control problems need a per-unit network")
    cols, lb, ub, variables = [], [], [], []
    vt = sens.voltage

    def pq_col(bus, phase, table):
        bp = BusPhase(bus, phase)
        if bp not in idx or idx.pq_position[idx[bp]] < 0:
            raise StructuralError(f"der at bus {bus}: no sensitivity column for phase {phase}")
        return table[:, idx.pq_position[idx[bp]]]

    for kind, table in (("p", vt.dmag_dP), ("q", vt.dmag_dQ)):
        for d_pos, d in enumerate(ders):
            phases = _der_phases(net, d)
            n = len(phases)
            if kind == "p":
                lo, hi, init = 0.0, d.p_max / n, d.p_init / n
            else:
                lo, hi, init = d.q_min / n, d.q_max / n, d.q_init / n
            groups = [phases] if mode == "balanced" else [(p,) for p in phases]
            for g in groups:
                cols.append(sum(pq_col(d.bus, p, table) for p in g))
                lb.append(lo - init)
                ub.append(hi - init)
                variables.append(ControlVariable(kind, d_pos, tuple(g), init))

    tap_phases, k_tap, tap_init = (), np.zeros((idx.m, 0)), {}
    if net.tap is not None and sens.tap is not None:
        tap = net.tap
        tap_phases = net.bus(tap.slack_bus).phases
        slack_cols = {int(k): c for c, k in enumerate(sens.tap.slack)}
        k_tap = np.column_stack([
            sens.tap.dmag_dtap[:, slack_cols[idx[BusPhase(tap.slack_bus, p)]]] for p in tap_phases])
        tap_init = {p: tap.position.get(p, 0) for p in tap_phases}
        cols.append(k_tap.sum(axis=1))
        lb.append(max(tap.n_min - n for n in tap_init.values()))
        ub.append(min(tap.n_max - n for n in tap_init.values()))
        variables.append(ControlVariable("tap", -1, tap_phases, 0.0))

    k = np.column_stack(cols) if cols else np.zeros((idx.m, 0))
    lb, ub = np.array(lb, dtype=float), np.array(ub, dtype=float)
    if np.any(lb > ub):
        raise StructuralError("infeasible control bounds (min > max)")
    monitored = np.arange(idx.m) if monitored is None else np.asarray(monitored, dtype=np.int64)
    return ControlProblem(net, y, op, mode, ders, tuple(variables), k, lb, ub,
                          np.abs(op.voltages), np.full(idx.m, float(target)), monitored,
                          k_tap, tuple(tap_phases), tap_init)


def round_half_toward_zero(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.ceil(np.abs(x) - 0.5)


def kkt_residual(k, b, x, lb, ub) -> float:
    """Max-norm of the projected gradient of ``0.5 ||K x - b||^2``."""
    if x.size == 0:
        return 0.0
    g = k.T @ (k @ x - b)
    return float(np.max(np.abs(x - np.clip(x - g, lb, ub))))


@dataclass(frozen=True, eq=False)
class ControlSolution:
    problem: ControlProblem
    dx: np.ndarray
    tap_continuous: dict
    tap_rounded: dict
    predicted_continuous: np.ndarray
    predicted_rounded: np.ndarray
    objective_initial: float
    objective_continuous: float
    objective_rounded: float
    kkt_residual: float

    @property
    def at_bound(self) -> np.ndarray:
        cp = self.problem
        return np.isclose(self.dx, cp.lb, atol=1e-9) | np.isclose(self.dx, cp.ub, atol=1e-9)

    def der_setpoints(self):
        """Per DER phase ``(bus, phase, p, q)`` in per-unit after the step."""
        cp = self.problem
        out = {}
        for d_pos, d in enumerate(cp.ders):
            for p in _der_phases(cp.net, d):
                out[(d_pos, p)] = [d.p_init / len(_der_phases(cp.net, d)),
                                   d.q_init / len(_der_phases(cp.net, d))]
        for v, dx in zip(cp.variables, self.dx):
            if v.kind == "tap":
                continue
            for p in v.phases:
                out[(v.der, p)][0 if v.kind == "p" else 1] += dx
        return [(cp.ders[d].bus, p, pq[0], pq[1]) for (d, p), pq in out.items()]

    def phase_injection_delta(self, dx: Optional[np.ndarray] = None) -> np.ndarray:
        """Change of injected complex power per bus-phase implied by ``dx``."""
        cp = self.problem
        dx = self.dx if dx is None else dx
        idx = cp.y.index
        ds = np.zeros(idx.m, dtype=complex)
        for v, val in zip(cp.variables, dx):
            if v.kind == "tap":
                continue
            for p in v.phases:
                ds[idx[BusPhase(cp.ders[v.der].bus, p)]] += val if v.kind == "p" else 1j * val
        return ds


def solve_control(cp: ControlProblem) -> ControlSolution:
    """Bounded least squares step, then per-phase tap rounding.

    Columns with no influence on any monitored voltage, and variables whose
    bounds coincide, are pinned.
    The remaining problem is column-scaled and solved with an active-set
    BVLS; the KKT residual of the unscaled problem must not exceed 1e-9.
    """
    if np.any(cp.lb > cp.ub):
        raise StructuralError("infeasible control bounds (min > max)")
    rows = cp.monitored
    k = cp.k[rows]
    b = (cp.target - cp.v0)[rows]
    dx = np.clip(np.zeros(cp.n_var), cp.lb, cp.ub)
    norms = np.linalg.norm(k, axis=0)
    active = (norms > 0) & (cp.lb < cp.ub)
    if active.any():
        scale = norms[active]
        ks = k[:, active] / scale
        res = lsq_linear(ks, b - k[:, ~active] @ dx[~active],
                         bounds=(cp.lb[active] * scale, cp.ub[active] * scale),
                         method="bvls", tol=1e-14, max_iter=10 * cp.n_var + 100)
        dx[active] = np.clip(res.x / scale, cp.lb[active], cp.ub[active])
        kkt = kkt_residual(k, b, dx, cp.lb, cp.ub)
        if not res.success or kkt > KKT_TOL:
            raise NumericalError(
                f"bounded least squares did not converge (status {res.status}, KKT residual "
                f"{kkt:.2e}); last iterate {dx.tolist()}")
    else:
        kkt = 0.0

    tap_cont, tap_round = {}, {}
    pred_cont = cp.k @ dx
    pred_round = pred_cont.copy()
    for j, v in enumerate(cp.variables):
        if v.kind != "tap":
            continue
        pred_round -= cp.k[:, j] * dx[j]
        for c, p in enumerate(cp.tap_phases):
            n = cp.tap_init[p] + dx[j]
            tap_cont[p] = float(n)
            nr = int(round_half_toward_zero(n))
            nr = min(max(nr, cp.net.tap.n_min), cp.net.tap.n_max)
            tap_round[p] = nr
            pred_round += cp.k_tap_phase[:, c] * (nr - cp.tap_init[p])
    return ControlSolution(cp, dx, tap_cont, tap_round, pred_cont, pred_round,
                           cp.objective(), cp.objective(pred_cont), cp.objective(pred_round), kkt)


@dataclass(frozen=True, eq=False)
class TrueProfile:
    op: OperatingPoint
    predicted_delta: np.ndarray
    actual_delta: np.ndarray
    converged: bool

    @property
    def discrepancy(self) -> np.ndarray:
        return self.actual_delta - self.predicted_delta

    def objective(self, cp: ControlProblem) -> float:
        return cp.objective(self.actual_delta)


def evaluate_true_profile(sol: ControlSolution, *, rounded: bool = True,
                          dx: Optional[np.ndarray] = None) -> TrueProfile:
    """Apply the set points, rerun the load flow and compare with the prediction.

    With ``dx`` given, that (continuous) step is applied instead of the
    solution's own, the tap moving by the same amount on every phase.
    """
    cp = sol.problem
    if dx is not None:
        dx = np.asarray(dx, dtype=float)
        tap_j = [j for j, v in enumerate(cp.variables) if v.kind == "tap"]
        taps = {p: cp.tap_init[p] + dx[tap_j[0]] for p in cp.tap_phases} if tap_j else {}
        predicted = cp.k @ dx
    elif rounded:
        dx, taps, predicted = sol.dx, sol.tap_rounded, sol.predicted_rounded
    else:
        dx, taps, predicted = sol.dx, sol.tap_continuous, sol.predicted_continuous
    s_load = np.asarray(cp.op.s_load) - sol.phase_injection_delta(dx)
    slack = cp.net.slack_vector(taps if taps else None)
    op = solve_loadflow(cp.net, cp.y, s_load=s_load, slack=slack, v0=cp.op.voltages)
    if not op.converged:
        log.warning("post-control load flow did not converge; solution flagged")
    actual = np.abs(op.voltages) - cp.v0
    return TrueProfile(op, predicted, actual, op.converged)

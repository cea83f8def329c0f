"""Reference computations the analytical coefficients are checked against.

* :func:`fd_oracle` re-solves the load flow with one control variable nudged.
* :func:`jacobian_sensitivities` inverts the polar Newton-Raphson Jacobian.
* :func:`benchmark` times the Jacobian route against the analytical one.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._assembly import polar_jacobian_dense
from .admittance import CompoundAdmittance, build_compound_admittance
from .exceptions import LoadflowNotConverged, NumericalError, OracleError
from .loadflow import OperatingPoint, branch_currents, solve_loadflow
from .network import BusPhase, NetworkModel
from .sensitivity import assemble_system

log = logging.getLogger(__name__)

ORACLE_TOL = 1e-12


def oracle_tolerance(y: CompoundAdmittance) -> float:
    """Load-flow tolerance for perturbed solves.

    ``ORACLE_TOL`` unless round-off in ``Y E`` puts the attainable mismatch
    above it, which happens on feeders with very short (stiff) sections.
    """
    norm = float(abs(y.matrix).sum(axis=1).max()) if y.m else 0.0
    return max(ORACLE_TOL, 4 * np.finfo(float).eps * norm)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GRIDSENSE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PerturbationSpec:
    """One finite-difference target.

    ``kind`` is ``"p"`` or ``"q"`` (injection at a pq bus-phase) or
    ``"slack"`` (magnitude of a slack bus-phase).
    """

    kind: str
    at: BusPhase
    delta: float = 1e-5
    scheme: str = "central"

    def __post_init__(self):
        if self.kind not in ("p", "q", "slack"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.scheme not in ("central", "forward"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not isinstance(self.at, BusPhase):
            object.__setattr__(self, "at", BusPhase(*self.at))


@dataclass(frozen=True, eq=False)
class OracleColumn:
    spec: PerturbationSpec
    dmag_voltage: np.ndarray
    dmag_current: np.ndarray


def _perturbed(net, y, op, spec, sign, tol):
    idx = y.index
    i = idx[spec.at]
    s_load = np.array(op.s_load, dtype=complex)
    slack = np.array(op.voltages, dtype=complex)
    h = sign * spec.delta
    if spec.kind == "p":
        if idx.pq_position[i] < 0:
            raise ValueError(f"{spec.at} is not a pq bus-phase")
        s_load[i] -= h
    elif spec.kind == "q":
        if idx.pq_position[i] < 0:
            raise ValueError(f"{spec.at} is not a pq bus-phase")
        s_load[i] -= 1j * h
    else:
        if idx.slack_position[i] < 0:
            raise ValueError(f"{spec.at} is not a slack bus-phase")
        slack[i] *= (abs(slack[i]) + h) / abs(slack[i])
    try:
        return solve_loadflow(net, y, s_load=s_load, slack=slack, v0=op.voltages, tol=tol,
                              raise_on_fail=True)
    except (LoadflowNotConverged, NumericalError) as exc:
        raise OracleError(
            f"perturbed load flow failed for {spec}: {exc}; try a smaller delta") from None


CURRENT_STEP_FRACTION = 1e-2


def current_steps(op: OperatingPoint, y: CompoundAdmittance, delta: float,
                  floor: float = 1e-6, include_shunt: bool = False) -> np.ndarray:
    """Per-row perturbation for current magnitudes.

    ``|I|`` is far from linear once the perturbation moves ``I`` by a
    fraction of its own size, which a fixed ``delta`` does on lightly loaded
    branches.  Each row gets the largest step of the ladder
    ``delta, delta/10, ...`` that is at most 1% of its ``|I|``; rows below
    ``floor`` share the step chosen for ``floor``.
    """
    mags = np.maximum(np.abs(branch_currents(op, y, include_shunt).values), floor)
    want = CURRENT_STEP_FRACTION * mags
    k = np.ceil(np.log10(np.maximum(delta / want, 1.0)) - 1e-12)
    return delta * 10.0 ** -np.maximum(k, 0)


def _difference(net, y, op, spec, delta, tol):
    s = PerturbationSpec(spec.kind, spec.at, delta, spec.scheme)
    plus = _perturbed(net, y, op, s, +1, tol)
    if spec.scheme == "central":
        return plus, _perturbed(net, y, op, s, -1, tol), 2 * delta
    base = solve_loadflow(net, y, s_load=op.s_load, slack=np.asarray(op.voltages),
                          v0=op.voltages, tol=tol)
    return plus, base, delta


def fd_oracle(net: NetworkModel, op: OperatingPoint, spec: PerturbationSpec,
              y: Optional[CompoundAdmittance] = None, *, include_shunt: bool = False,
              tol: Optional[float] = None, current_delta=None) -> OracleColumn:
    """Finite-difference magnitude sensitivities for one control variable.

    All other injections (and slack voltages) are held at their values in
    ``op``.  The central scheme uses ``(f(x+d) - f(x-d)) / 2d``.  Current
    magnitudes use ``current_delta`` (a scalar or one step per branch-phase,
    see :func:`current_steps`) instead of ``spec.delta`` when given.
    """
    y = y if y is not None else build_compound_admittance(net)
    tol = oracle_tolerance(y) if tol is None else tol

    def cur(o):
        return np.abs(branch_currents(o, y, include_shunt).values)

    plus, minus, width = _difference(net, y, op, spec, spec.delta, tol)
    dv = (np.abs(plus.voltages) - np.abs(minus.voltages)) / width
    if current_delta is None:
        return OracleColumn(spec, dv, (cur(plus) - cur(minus)) / width)
    steps = np.broadcast_to(np.asarray(current_delta, dtype=float), (len(cur(op)),))
    di = np.empty(len(steps))
    for h in np.unique(steps):
        rows = steps == h
        if h == spec.delta:
            cp, cm, w = plus, minus, width
        else:
            cp, cm, w = _difference(net, y, op, spec, float(h), tol)
        di[rows] = ((cur(cp) - cur(cm)) / w)[rows]
    return OracleColumn(spec, dv, di)


def fd_table(net: NetworkModel, op: OperatingPoint, kind: str, targets: Sequence = None,
             y: Optional[CompoundAdmittance] = None, *, delta: float = 1e-5,
             include_shunt: bool = False, tol: Optional[float] = None,
             current_floor: Optional[float] = 1e-6):
    """Oracle columns for many targets; returns ``(voltage_table, current_table)``.

    Columns follow ``targets`` (default: every pq, or every slack,
    bus-phase).  Current rows use the steps of :func:`current_steps`
    (``current_floor=None`` keeps ``delta`` throughout).  Runs on
    ``GRIDSENSE_THREADS`` worker threads.
    """
    y = y if y is not None else build_compound_admittance(net)
    idx = y.index
    if targets is None:
        pool = idx.slack if kind == "slack" else idx.pq
        targets = [idx.pair(int(i)) for i in pool]
    specs = [PerturbationSpec(kind, t, delta) for t in targets]
    csteps = None if current_floor is None else current_steps(op, y, delta, current_floor,
                                                              include_shunt)

    def run(s):
        return fd_oracle(net, op, s, y, include_shunt=include_shunt, tol=tol, current_delta=csteps)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            cols = list(ex.map(run, specs))
    else:
        cols = [run(s) for s in specs]
    if not cols:
        return np.zeros((idx.m, 0)), np.zeros((0, 0))
    return (np.column_stack([c.dmag_voltage for c in cols]),
            np.column_stack([c.dmag_current for c in cols]))


@dataclass(frozen=True, eq=False)
class JacobianSensitivities:
    """Magnitude and angle sensitivities; rows all M bus-phases, cols pq."""

    dmag_dP: np.ndarray
    dmag_dQ: np.ndarray
    dtheta_dP: np.ndarray
    dtheta_dQ: np.ndarray


def _jacobian_blocks(y, voltages, kernels=None):
    inv = np.linalg.inv(polar_jacobian_dense(y, voltages, kernels))
    n = y.index.n_pq
    return inv[:n, :n], inv[:n, n:], inv[n:, :n], inv[n:, n:]


def jacobian_sensitivities(y: CompoundAdmittance, op: OperatingPoint,
                           kernels=None) -> JacobianSensitivities:
    """Sensitivities from the explicitly inverted polar Jacobian.

    Rows of ``J`` are ``[P; Q]`` over pq indices and columns
    ``[theta; |E|]``, so ``J^-1`` maps injection changes to state changes.
    Slack magnitudes cannot be perturbed on this route.
    """
    try:
        tp, tq, vp, vq = _jacobian_blocks(y, op.voltages, kernels)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Jacobian: {exc}") from None
    idx = y.index

    def full(block):
        out = np.zeros((idx.m, idx.n_pq))
        out[idx.pq] = block
        return out

    return JacobianSensitivities(full(vp), full(vq), full(tp), full(tq))


def algorithm_jacobian(y, voltages, kernels=None):
    """Build J, invert it, extract the magnitude blocks."""
    _, _, vp, vq = _jacobian_blocks(y, voltages, kernels)
    return vp, vq


def algorithm_analytical(y, voltages, kernels=None, method="auto"):
    """Build the sensitivity matrix, factorize, back-solve all P and Q columns."""
    return assemble_system(_Voltages(voltages), y, kernels, method).power_magnitudes()


class _Voltages:
    # minimal stand-in for an OperatingPoint inside the timed loop
    __slots__ = ("voltages",)

    def __init__(self, voltages):
        self.voltages = voltages


@dataclass(frozen=True)
class BenchmarkReport:
    feeder: str
    n_pq: int
    m: int
    repetitions: int
    jacobian_mean_ms: float
    jacobian_ci_ms: float
    analytical_mean_ms: float
    analytical_ci_ms: float

    @property
    def ratio(self) -> float:
        return self.jacobian_mean_ms / self.analytical_mean_ms

    def rows(self):
        return [
            {"method": "jacobian", "mean_ms": self.jacobian_mean_ms, "ci_ms": self.jacobian_ci_ms,
             "ratio": self.ratio},
            {"method": "analytical", "mean_ms": self.analytical_mean_ms,
             "ci_ms": self.analytical_ci_ms, "ratio": self.ratio},
        ]


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1)


def _time(fn, reps, warmup=5):
    for _ in range(warmup):
        fn()
    out = np.empty(reps)
    clock = time.perf_counter
    for r in range(reps):
        t0 = clock()
        fn()
        out[r] = clock() - t0
    return out * 1e3


def mean_ci(samples_ms: np.ndarray):
    """Mean and 95% normal-approximation half-width."""
    n = len(samples_ms)
    if n < 30:
        raise ValueError("need at least 30 repetitions for a confidence interval")
    return float(samples_ms.mean()), float(1.96 * samples_ms.std(ddof=1) / np.sqrt(n))


def benchmark(net: NetworkModel, repetitions: int = 1000, *, op: Optional[OperatingPoint] = None,
              y: Optional[CompoundAdmittance] = None, kernels=None, check: bool = True) -> BenchmarkReport:
    """Time both routes on identical, pre-loaded state (BLAS pinned to one thread).

    The runs are interleaved in blocks so slow drifts of the machine affect
    both methods alike.
    """
    y = y if y is not None else build_compound_admittance(net)
    op = op if op is not None else solve_loadflow(net, y)
    v = np.asarray(op.voltages)
    if check:
        jp, jq = algorithm_jacobian(y, v, kernels)
        ap, aq = algorithm_analytical(y, v, kernels)
        scale = max(np.abs(jp).max(), np.abs(jq).max(), 1e-12)
        err = max(np.abs(jp - ap).max(), np.abs(jq - aq).max()) / scale
        if err > 1e-6:
            raise NumericalError(f"methods disagree before timing (rel err {err:.2e})")
    jac_t, ana_t = [], []
    block = 50
    with _single_thread():
        done = 0
        while done < repetitions:
            k = min(block, repetitions - done)
            jac_t.append(_time(lambda: algorithm_jacobian(y, v, kernels), k, warmup=2))
            ana_t.append(_time(lambda: algorithm_analytical(y, v, kernels), k, warmup=2))
            done += k
    jm, jc = mean_ci(np.concatenate(jac_t))
    am, ac = mean_ci(np.concatenate(ana_t))
    return BenchmarkReport(net.name, y.index.n_pq, y.index.m, repetitions, jm, jc, am, ac)

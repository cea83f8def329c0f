"""Analytical voltage, current and tap sensitivity coefficients.

At an operating point ``E`` the injection equations

    conj(S_i) = conj(E_i) * sum_j Y_ij E_j,    i in pq

are differentiated with respect to one control variable at a time.  The
result is linear in the real and imaginary parts of the unknown voltage
derivatives, and the real 2N x 2N matrix is the same for every control
variable; only the right-hand side changes:

* ``P_l``: ``+1`` in the real slot of equation ``l``
* ``Q_l``: ``-1`` in the imaginary slot of equation ``l``
* slack magnitude ``|E_k|``: ``-conj(E_i) Y_ik exp(j theta_k)`` for every ``i``

so one factorization serves all columns.  Derivatives are taken
with respect to *injected* power (generation positive).  Slack rows are
exactly zero for power derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._assembly import block_tree, deinterleave, system_matrix, tree_factorize
from .admittance import CompoundAdmittance
from .exceptions import NumericalError, SingularSystemError
from .loadflow import OperatingPoint
from .network import BusPhase, IndexMap, NetworkModel

CURRENT_EPS = 1e-9


class UndefinedEntryError(NumericalError):
    """A magnitude derivative was requested where the magnitude is zero."""


_SINGULAR_MSG = ("sensitivity system is {}singular{}; a unique solution is only guaranteed "
                 "for radial networks at a valid operating point")
PIVOT_FLOOR = 1e-14


def _factorize(a: sp.csc_matrix):
    try:
        lu = spla.splu(a, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(_SINGULAR_MSG.format("", f" ({exc})")) from None
    d = np.abs(lu.U.diagonal())
    if d.size and (d.min() == 0 or d.min() < PIVOT_FLOOR * d.max()):
        raise SingularSystemError(_SINGULAR_MSG.format("numerically ", ""))
    return lu


@dataclass(eq=False)
class SensitivitySystem:
    """Factorized sensitivity matrix at one operating point.

    ``method`` is ``"tree"`` (block elimination along the feeder tree) or
    ``"splu"`` (general sparse LU).  The sparse matrix itself is built on
    first access when the tree path was used.
    """

    lu: object
    op: OperatingPoint
    y: CompoundAdmittance
    method: str = "splu"
    n_factorizations: int = 1
    n_solves: int = 0
    kernels: object = None
    _matrix: Optional[sp.csc_matrix] = None

    @property
    def index(self) -> IndexMap:
        return self.y.index

    @property
    def matrix(self) -> sp.csc_matrix:
        if self._matrix is None:
            self._matrix = system_matrix(self.y, self.op.voltages, self.kernels)
        return self._matrix

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        self.n_solves += 1 if rhs.ndim == 1 else rhs.shape[1]
        return self.lu.solve(rhs)

    def power_magnitudes(self):
        """``d|E|/dP`` and ``d|E|/dQ`` restricted to pq rows, shape ``(N, N)`` each."""
        idx = self.index
        e_pq = np.asarray(self.op.voltages)[idx.pq]
        self.n_solves += 2 * idx.n_pq
        if self.method == "tree":
            return self.lu.unit_magnitudes(e_pq)
        n = idx.n_pq
        pos = np.arange(n)
        x = self.lu.solve(np.hstack([power_rhs(n, pos, "p"), power_rhs(n, pos, "q")]))
        mags = magnitude_of(deinterleave(x), e_pq)
        return mags[:, :n], mags[:, n:]

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        """Max-norm of ``A x - rhs``."""
        return float(np.max(np.abs(self.matrix @ x - rhs), initial=0.0))

    def extend(self, x: np.ndarray) -> np.ndarray:
        """Real solution(s) to complex columns over all M indices (slack rows 0)."""
        z = deinterleave(x)
        out = np.zeros((self.index.m,) + z.shape[1:], dtype=complex)
        out[self.index.pq] = z
        return out


def assemble_system(op: OperatingPoint, y: CompoundAdmittance, kernels=None,
                    method: str = "auto") -> SensitivitySystem:
    """Build and factorize the sensitivity matrix once for ``op``.

    With ``method="auto"`` radial single-slack feeders use the zero-fill
    tree elimination and everything else goes through SuperLU.
    """
    if method not in ("auto", "tree", "splu"):
        raise ValueError(f"unknown factorization method {method!r}")
    tree = block_tree(y) if method != "splu" else None
    if method == "tree" and tree is None:
        raise ValueError("tree factorization needs a radial network with one slack bus")
    if tree is not None:
        lu, worst = tree_factorize(y, op.voltages, tree, kernels)
        if not worst > PIVOT_FLOOR:
            raise SingularSystemError(_SINGULAR_MSG.format("numerically ", ""))
        return SensitivitySystem(lu, op, y, "tree", kernels=kernels)
    a = system_matrix(y, op.voltages, kernels)
    return SensitivitySystem(_factorize(a), op, y, "splu", kernels=kernels, _matrix=a)


def _pq_position(sys: SensitivitySystem, l) -> int:
    idx = sys.index
    i = idx[l] if isinstance(l, (BusPhase, tuple)) else int(l)
    p = idx.pq_position[i] if 0 <= i < idx.m else -1
    if p < 0:
        raise ValueError(f"{l} is not a pq bus-phase")
    return int(p)


def _slack_index(sys: SensitivitySystem, k) -> int:
    idx = sys.index
    i = idx[k] if isinstance(k, (BusPhase, tuple)) else int(k)
    if not (0 <= i < idx.m) or idx.slack_position[i] < 0:
        raise ValueError(f"{k} is not a slack bus-phase")
    return i


def power_rhs(n: int, positions, kind: str) -> np.ndarray:
    positions = np.atleast_1d(np.asarray(positions, dtype=np.int64))
    rhs = np.zeros((2 * n, len(positions)))
    cols = np.arange(len(positions))
    if kind == "p":
        rhs[2 * positions, cols] = 1.0
    elif kind == "q":
        rhs[2 * positions + 1, cols] = -1.0
    else:
        raise ValueError(kind)
    return rhs


def tap_rhs(sys: SensitivitySystem, slack_indices) -> np.ndarray:
    """Right-hand sides ``-conj(E_i) Y_ik exp(j theta_k)`` for slack columns ``k``."""
    idx = sys.index
    e = sys.op.voltages
    ks = np.atleast_1d(np.asarray(slack_indices, dtype=np.int64))
    yk = sys.y.matrix.tocsc()[:, ks].toarray()[idx.pq]
    rot = np.exp(1j * np.angle(e[ks]))
    rhs_c = -np.conj(e[idx.pq])[:, None] * yk * rot[None, :]
    out = np.empty((2 * idx.n_pq, len(ks)))
    out[0::2] = rhs_c.real
    out[1::2] = rhs_c.imag
    return out


def solve_dP(sys: SensitivitySystem, l) -> np.ndarray:
    """Complex column ``dE/dP_l`` over all M bus-phases."""
    p = _pq_position(sys, l)
    return sys.extend(sys.solve(power_rhs(sys.index.n_pq, [p], "p")))[:, 0]


def solve_dQ(sys: SensitivitySystem, l) -> np.ndarray:
    p = _pq_position(sys, l)
    return sys.extend(sys.solve(power_rhs(sys.index.n_pq, [p], "q")))[:, 0]


def magnitude_of(de: np.ndarray, voltages: np.ndarray) -> np.ndarray:
    """``Re(conj(E_i) dE_i) / |E_i|`` row-wise; ``de`` may be 1-D or 2-D."""
    e = np.asarray(voltages)
    mag = np.abs(e)
    if np.any(mag == 0):
        bad = np.flatnonzero(mag == 0).tolist()
        raise UndefinedEntryError(f"zero voltage magnitude at indices {bad}")
    de = np.asarray(de)
    if de.ndim == 1:
        return (np.conj(e) * de).real / mag
    return (np.conj(e)[:, None] * de).real / mag[:, None]


@dataclass(frozen=True, eq=False)
class TapColumn:
    slack: int
    w: np.ndarray
    dmag_dslack: np.ndarray
    dmag_dtap: Optional[np.ndarray]


def _tap_scale(net: Optional[NetworkModel], idx: IndexMap, k: int) -> Optional[float]:
    if net is None or net.tap is None:
        return None
    bp = idx.pair(k)
    if bp.bus != net.tap.slack_bus:
        return None
    return abs(net.rated_slack_vector()[k]) * net.tap.step


def _tap_columns(sys, ks, x):
    idx = sys.index
    w = sys.extend(x)
    e = sys.op.voltages
    for c, k in enumerate(ks):
        w[k, c] = np.exp(1j * np.angle(e[k]))
    return w


def solve_tap(sys: SensitivitySystem, k, net: Optional[NetworkModel] = None) -> TapColumn:
    """Voltage sensitivities with respect to the magnitude of slack phase ``k``.

    With ``net`` given and ``k`` on the tap-changer bus, the per-position
    column ``d|E|/dn = d|E|/d|E_k| * rated_k * step`` is also returned.
    """
    i = _slack_index(sys, k)
    x = sys.solve(tap_rhs(sys, [i]))
    w = _tap_columns(sys, [i], x)[:, 0]
    dmag = magnitude_of(w, sys.op.voltages)
    scale = _tap_scale(net, sys.index, i)
    return TapColumn(i, w, dmag, None if scale is None else dmag * scale)


@dataclass(frozen=True, eq=False)
class VoltageSensitivities:
    """Rows are all M bus-phases, columns the N pq bus-phases."""

    dE_dP: np.ndarray
    dE_dQ: np.ndarray
    dmag_dP: np.ndarray
    dmag_dQ: np.ndarray


@dataclass(frozen=True, eq=False)
class TapSensitivities:
    """Columns are the slack bus-phases ``slack``.

    ``dmag_dtap`` is NaN for slack phases without a tap changer.
    """

    slack: np.ndarray
    w: np.ndarray
    dmag_dslack: np.ndarray
    dmag_dtap: np.ndarray


@dataclass(frozen=True, eq=False)
class CurrentSensitivities:
    """Rows are branch-phases (branch order, then phase); columns pq bus-phases.

    Magnitude tables are NaN on rows where ``valid`` is False.
    """

    keys: tuple
    currents: np.ndarray
    dI_dP: np.ndarray
    dI_dQ: np.ndarray
    dmag_dP: np.ndarray
    dmag_dQ: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class SensitivitySet:
    index: IndexMap
    voltage: VoltageSensitivities
    tap: Optional[TapSensitivities]
    current: Optional[CurrentSensitivities]
    system: SensitivitySystem


def branch_current_operator(y: CompoundAdmittance, include_shunt: bool = False):
    """Sparse map ``E -> I_branch`` (rows as in :func:`loadflow.branch_currents`)."""
    rows, cols, vals, keys = [], [], [], []
    r0 = 0
    for b in y.branches:
        p = len(b.phases)
        rr = np.repeat(np.arange(r0, r0 + p), p)
        yf = b.y_series + b.y_half_shunt if include_shunt else b.y_series
        rows += [rr, rr]
        cols += [np.tile(b.from_rows, p), np.tile(b.to_rows, p)]
        vals += [yf.ravel(), -b.y_series.ravel()]
        keys += [(b.from_bus, b.to_bus, ph) for ph in b.phases]
        r0 += p
    if not keys:
        return (), sp.csr_matrix((0, y.m), dtype=complex)
    op = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(r0, y.m))
    return tuple(keys), op


def current_sens(volt: VoltageSensitivities, y: CompoundAdmittance, op: OperatingPoint,
                 eps: float = CURRENT_EPS, include_shunt: bool = False) -> CurrentSensitivities:
    """Branch-current sensitivities as linear images of the voltage tables.

    ``dI = Y_L (dE_from - dE_to)``; magnitudes use ``Re(conj(I) dI) / |I|``
    and are flagged invalid where ``|I| < eps``.
    """
    keys, c = branch_current_operator(y, include_shunt)
    cur = c @ op.voltages
    di_dp = c @ volt.dE_dP
    di_dq = c @ volt.dE_dQ
    mag = np.abs(cur)
    valid = mag >= eps
    safe = np.where(valid, mag, 1.0)
    dm_p = (np.conj(cur)[:, None] * di_dp).real / safe[:, None]
    dm_q = (np.conj(cur)[:, None] * di_dq).real / safe[:, None]
    dm_p[~valid] = np.nan
    dm_q[~valid] = np.nan
    return CurrentSensitivities(keys, cur, di_dp, di_dq, dm_p, dm_q, valid)


def full_sensitivity(op: OperatingPoint, y: CompoundAdmittance, net: Optional[NetworkModel] = None,
                     *, currents: bool = True, taps: bool = True, include_shunt: bool = False,
                     kernels=None, method: str = "auto") -> SensitivitySet:
    """All tables from a single factorization.

    One block back-solve covers the N active-power, N reactive-power and
    ``|S|`` slack-magnitude right-hand sides.
    """
    sys = assemble_system(op, y, kernels, method)
    idx = y.index
    n = idx.n_pq
    pos = np.arange(n)
    blocks = [power_rhs(n, pos, "p"), power_rhs(n, pos, "q")]
    if taps:
        blocks.append(tap_rhs(sys, idx.slack))
    x = sys.solve(np.hstack(blocks))
    e = op.voltages
    de_dp = sys.extend(x[:, :n])
    de_dq = sys.extend(x[:, n:2 * n])
    volt = VoltageSensitivities(de_dp, de_dq, magnitude_of(de_dp, e), magnitude_of(de_dq, e))

    tap = None
    if taps:
        w = _tap_columns(sys, idx.slack, x[:, 2 * n:])
        dmag = magnitude_of(w, e)
        per_tap = np.full_like(dmag, np.nan)
        for c, k in enumerate(idx.slack):
            scale = _tap_scale(net, idx, int(k))
            if scale is not None:
                per_tap[:, c] = dmag[:, c] * scale
        tap = TapSensitivities(idx.slack.copy(), w, dmag, per_tap)

    cur = current_sens(volt, y, op, include_shunt=include_shunt) if currents else None
    return SensitivitySet(idx, volt, tap, cur, sys)

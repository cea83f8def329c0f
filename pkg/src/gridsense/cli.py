"""Command-line interface: ``gridsense <command> FEEDER -o OUTDIR``.

Exit codes: 0 success, 2 input validation (or a failed ``validate`` run),
3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .admittance import build_compound_admittance
from .exceptions import GridSenseError, NumericalError, SchemaError, StructuralError
from .io import emit_csv, file_sha256, load_network
from .loadflow import branch_currents, solve_loadflow

log = logging.getLogger("gridsense")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class ValidationFailed(GridSenseError):
    """The ``validate`` command found coefficients outside tolerance."""


def _pairs(idx, rows):
    return [idx.pair(int(i)) for i in rows]


def _solve(net, args):
    y = build_compound_admittance(net)
    op = solve_loadflow(net, y, tol=args.tol, max_iter=args.max_iter)
    return y, op


def _require_converged(op):
    if not op.converged:
        raise NumericalError(f"load flow did not converge (mismatch {op.max_mismatch:.3e})")


def cmd_solve(net, args, out):
    y, op = _solve(net, args)
    idx = y.index
    v = op.voltages
    emit_csv(([bp.bus, bp.phase, z.real, z.imag, abs(z), np.degrees(np.angle(z))]
              for bp, z in zip(idx.pairs, v)),
             ["bus", "phase", "re", "im", "mag", "angle_deg"], out / "voltages.csv")
    cur = branch_currents(op, y, args.include_shunt)
    emit_csv(([f, t, p, z.real, z.imag, abs(z)] for (f, t, p), z in zip(cur.keys, cur.values)),
             ["from_bus", "to_bus", "phase", "re", "im", "mag"], out / "currents.csv")
    _require_converged(op)
    return {"converged": True, "iterations": op.iterations, "max_mismatch": op.max_mismatch}


def _control_filter(pairs, args):
    return [n for n, bp in enumerate(pairs)
            if (args.bus is None or bp.bus == args.bus) and (args.phase is None or bp.phase == args.phase)]


def cmd_sens(net, args, out):
    from .sensitivity import full_sensitivity

    y, op = _solve(net, args)
    _require_converged(op)
    want_p = args.wrt in ("p", "all")
    want_q = args.wrt in ("q", "all")
    want_tap = args.wrt in ("tap", "all")
    s = full_sensitivity(op, y, net, currents=want_p or want_q, taps=want_tap,
                         include_shunt=args.include_shunt)
    idx = y.index
    rows = _pairs(idx, range(idx.m))
    files = []
    if want_p or want_q:
        cols = _pairs(idx, idx.pq)
        sel = _control_filter(cols, args)
        vt = s.voltage
        emit_csv(([i.bus, i.phase, cols[c].bus, cols[c].phase,
                   vt.dmag_dP[r, c] if want_p else None, vt.dmag_dQ[r, c] if want_q else None]
                  for r, i in enumerate(rows) for c in sel),
                 ["i_bus", "i_phase", "l_bus", "l_phase", "dmag_dP", "dmag_dQ"],
                 out / "sens_voltage.csv")
        ct = s.current

        def cell(table, r, c, wanted):
            return table[r, c] if wanted and ct.valid[r] else None

        emit_csv(([f, t, p, cols[c].bus, cols[c].phase, cell(ct.dmag_dP, r, c, want_p),
                   cell(ct.dmag_dQ, r, c, want_q), bool(ct.valid[r])]
                  for r, (f, t, p) in enumerate(ct.keys) for c in sel),
                 ["from_bus", "to_bus", "phase", "l_bus", "l_phase", "dmag_dP", "dmag_dQ", "valid"],
                 out / "sens_current.csv")
        files += ["sens_voltage.csv", "sens_current.csv"]
    if want_tap:
        tp = s.tap
        cols = _pairs(idx, tp.slack)
        sel = _control_filter(cols, args)
        emit_csv(([i.bus, i.phase, cols[c].bus, cols[c].phase, tp.dmag_dslack[r, c],
                   None if np.isnan(tp.dmag_dtap[r, c]) else tp.dmag_dtap[r, c],
                   not np.isnan(tp.dmag_dtap[r, c])]
                  for r, i in enumerate(rows) for c in sel),
                 ["i_bus", "i_phase", "k_bus", "k_phase", "dmag_dslack", "dmag_dtap", "valid"],
                 out / "sens_tap.csv")
        files.append("sens_tap.csv")
    return {"files": files, "n_pq": idx.n_pq, "m": idx.m}


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else (0.0 if a == b else float("inf"))


def cmd_validate(net, args, out):
    from .baselines import fd_table, jacobian_sensitivities
    from .sensitivity import full_sensitivity

    y, op = _solve(net, args)
    _require_converged(op)
    s = full_sensitivity(op, y, net, include_shunt=args.include_shunt)
    idx = y.index
    jac = jacobian_sensitivities(y, op)
    rows = _pairs(idx, range(idx.m))
    pq_cols = _pairs(idx, idx.pq)
    table = []
    for kind, ana, jt in (("p", s.voltage.dmag_dP, jac.dmag_dP), ("q", s.voltage.dmag_dQ, jac.dmag_dQ)):
        ov, oc = fd_table(net, op, kind, y=y, delta=args.delta, include_shunt=args.include_shunt)
        for c, l in enumerate(pq_cols):
            for r, i in enumerate(rows):
                table.append((f"v_{kind}", f"{i.bus}.{i.phase}", f"{l.bus}.{l.phase}",
                              ana[r, c], ov[r, c], jt[r, c]))
            cur_ana = s.current.dmag_dP if kind == "p" else s.current.dmag_dQ
            for r, (f, t, p) in enumerate(s.current.keys):
                if s.current.valid[r] and abs(s.current.currents[r]) >= args.current_floor:
                    table.append((f"i_{kind}", f"{f}-{t}.{p}", f"{l.bus}.{l.phase}",
                                  cur_ana[r, c], oc[r, c], None))
    ov, _ = fd_table(net, op, "slack", y=y, delta=args.delta, include_shunt=args.include_shunt)
    for c, k in enumerate(_pairs(idx, s.tap.slack)):
        for r, i in enumerate(rows):
            table.append(("tap", f"{i.bus}.{i.phase}", f"{k.bus}.{k.phase}",
                          s.tap.dmag_dslack[r, c], ov[r, c], None))

    failures = 0
    out_rows = []
    for kind, row, col, a, o, j in table:
        small = abs(o) < args.small
        ok = abs(a - o) <= args.atol if small else _rel(a, o) <= args.rtol
        failures += not ok
        out_rows.append([kind, row, col, a, o, j, _rel(a, o),
                         None if j is None else _rel(a, j), bool(ok)])
    emit_csv(out_rows, ["kind", "row", "col", "analytical", "oracle", "jacobian",
                        "rel_err_oracle", "rel_err_jacobian", "ok"], out / "errors.csv")
    summary = {"coefficients": len(out_rows), "failures": failures}
    if failures:
        raise ValidationFailed(f"{failures} of {len(out_rows)} coefficients outside tolerance", summary)
    return summary


def cmd_bench(net, args, out):
    from .baselines import benchmark

    if args.repetitions < 30:
        raise ValueError("--repetitions must be at least 30")
    y, op = _solve(net, args)
    _require_converged(op)
    rep = benchmark(net, args.repetitions, op=op, y=y)
    emit_csv(([r["method"], r["mean_ms"], r["ci_ms"], r["ratio"]] for r in rep.rows()),
             ["method", "mean_ms", "ci_ms", "ratio"], out / "bench.csv")
    print(f"{net.name}: jacobian {rep.jacobian_mean_ms:.4f} +/- {rep.jacobian_ci_ms:.4f} ms, "
          f"analytical {rep.analytical_mean_ms:.4f} +/- {rep.analytical_ci_ms:.4f} ms, "
          f"ratio {rep.ratio:.2f}")
    return {"ratio": rep.ratio, "repetitions": rep.repetitions}


def cmd_control(net, args, out):
    from .control import build_linear_model, evaluate_true_profile, solve_control
    from .sensitivity import full_sensitivity

    if not net.ders and net.tap is None:
        raise StructuralError("the feeder declares no DERs and no tap changer")
    y, op = _solve(net, args)
    _require_converged(op)
    s = full_sensitivity(op, y, net, currents=False)
    cp = build_linear_model(s, net, op, y, mode=args.mode, target=args.target_pu)
    sol = solve_control(cp)
    prof = evaluate_true_profile(sol)
    rows = []
    for v, dx, lo, hi in zip(cp.variables, sol.dx, cp.lb, cp.ub):
        if v.kind == "tap":
            for p in cp.tap_phases:
                n0 = cp.tap_init[p]
                rows.append(["tap", net.tap.slack_bus, p, n0, sol.tap_continuous[p],
                             sol.tap_rounded[p], n0 + lo, n0 + hi])
            continue
        for p in v.phases:
            rows.append([v.kind, cp.ders[v.der].bus, p, v.init, v.init + dx, v.init + dx,
                         v.init + lo, v.init + hi])
    emit_csv(rows, ["kind", "bus", "phase", "initial", "continuous", "final", "lower", "upper"],
             out / "control_solution.csv")
    idx = y.index
    emit_csv(([bp.bus, bp.phase, cp.v0[i], cp.v0[i] + sol.predicted_rounded[i],
               abs(prof.op.voltages[i])] for i, bp in enumerate(idx.pairs)),
             ["bus", "phase", "before", "predicted", "after"], out / "profile_before_after.csv")
    summary = {"objective_initial": sol.objective_initial,
               "objective_predicted": sol.objective_rounded,
               "objective_after": prof.objective(cp), "post_control_converged": prof.converged}
    print(f"objective |E|-target: before {sol.objective_initial:.6g}, predicted "
          f"{sol.objective_rounded:.6g}, after {summary['objective_after']:.6g}")
    if not prof.converged:
        raise NumericalError("post-control load flow did not converge")
    return summary


def cmd_dump_admittance(net, args, out):
    y = build_compound_admittance(net)
    r, c, v = y.triplets()
    emit_csv(([int(a), int(b), z.real, z.imag] for a, b, z in zip(r, c, v)),
             ["row", "col", "re", "im"], out / "admittance.csv")
    emit_csv(([i, bp.bus, bp.phase, "slack" if y.index.slack_position[i] >= 0 else "pq"]
              for i, bp in enumerate(y.index.pairs)),
             ["index", "bus", "phase", "kind"], out / "index.csv")
    return {"nnz": len(v), "m": y.m}


COMMANDS = {"solve": cmd_solve, "sens": cmd_sens, "validate": cmd_validate, "bench": cmd_bench,
            "control": cmd_control, "dump-admittance": cmd_dump_admittance}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridsense", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gridsense {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("feeder", help="feeder JSON file or bundled name (two_bus, ieee13_like, ieee34_like)")
        p.add_argument("-o", "--out", default=".", help="output directory (default: .)")
        p.add_argument("--tol", type=float, default=1e-10, help="load-flow tolerance, pu")
        p.add_argument("--max-iter", type=int, default=50)
        p.add_argument("--include-shunt", action="store_true",
                       help="branch currents include the sending-end half shunt")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    add("solve", "run the load flow")
    p = add("sens", "analytical sensitivity coefficients")
    p.add_argument("--wrt", choices=["p", "q", "tap", "all"], default="all")
    p.add_argument("--bus", type=int, help="only this control bus")
    p.add_argument("--phase", choices=["a", "b", "c"], help="only this control phase")
    p = add("validate", "compare against the perturbation oracle and the Jacobian baseline")
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--rtol", type=float, default=1e-3)
    p.add_argument("--atol", type=float, default=1e-6)
    p.add_argument("--small", type=float, default=1e-4,
                   help="oracle values below this use the absolute tolerance")
    p.add_argument("--current-floor", type=float, default=1e-6,
                   help="skip current rows with |I| below this, pu")
    p = add("bench", "time the Jacobian and analytical routes")
    p.add_argument("--repetitions", type=int, default=1000)
    p = add("control", "one sensitivity-based voltage control step")
    p.add_argument("--mode", choices=["balanced", "per_phase", "per-phase"], default="balanced")
    p.add_argument("--target-pu", type=float, default=1.0)
    add("dump-admittance", "write the compound admittance matrix")
    return ap


def _manifest(args, out, input_path, summary, status):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("feeder", "out", "verbose")}
    doc = {
        "command": args.command,
        "input": str(args.feeder),
        "input_sha256": file_sha256(input_path) if input_path and input_path.exists() else None,
        "flags": flags,
        "version": __version__,
        "backend": _kernels.BACKEND,
        "status": status,
        "summary": summary,
    }
    (out / "run_manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")


def _resolve_input(feeder):
    from .io import BUNDLED, bundled_path

    p = Path(feeder)
    if not p.exists() and len(p.parts) == 1 and p.stem in BUNDLED:
        return bundled_path(p.stem)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    input_path = None
    summary, status, code = None, "ok", EXIT_OK
    try:
        out.mkdir(parents=True, exist_ok=True)
        input_path = _resolve_input(args.feeder)
        net = load_network(input_path)
        summary = COMMANDS[args.command](net, args, out)
    except ValidationFailed as exc:
        status, code = f"validation failed: {exc.args[0]}", EXIT_VALIDATION
        summary = exc.args[1]
    except (SchemaError, StructuralError, ValueError) as exc:
        status, code = f"invalid input: {exc}", EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError) as exc:
        status, code = f"numerical failure: {exc}", EXIT_NUMERICAL
    except OSError as exc:
        status, code = f"I/O failure: {exc}", EXIT_IO
    if code != EXIT_OK:
        print(f"gridsense {args.command}: {status}", file=sys.stderr)
    try:
        _manifest(args, out, input_path, summary, status)
    except OSError as exc:
        print(f"gridsense: cannot write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_IO
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Feeder JSON ingestion, serialisation and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .exceptions import SchemaError, StructuralError
from .network import (PHASES, Branch, Bus, DerSpec, NetworkModel, TapChanger, from_per_unit,
                      to_per_unit, validate_radial)

log = logging.getLogger(__name__)

BUNDLED = ("two_bus", "ieee13_like", "ieee34_like")


def bundled_path(name: str) -> Path:
    """Path of a bundled feeder (``two_bus``, ``ieee13_like``, ``ieee34_like``)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED:
        raise FileNotFoundError(f"no bundled feeder named {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("gridsense.data") / f"{stem}.json"))


def _get(obj, key, path, kind=None, required=True, default=None):
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", path)
    if key not in obj:
        if required:
            raise SchemaError(f"missing key {key!r}", path)
        return default
    val = obj[key]
    if kind is not None and (not isinstance(val, kind) or isinstance(val, bool) and kind is not bool):
        raise SchemaError(f"wrong type for {key!r}: {type(val).__name__}", f"{path}/{key}")
    return val


def _phases(raw, path):
    if not isinstance(raw, list) or not raw:
        raise SchemaError("phases must be a non-empty list", path)
    for i, p in enumerate(raw):
        if p not in PHASES:
            raise SchemaError(f"unknown phase {p!r}", f"{path}/{i}")
    if len(set(raw)) != len(raw):
        raise SchemaError("repeated phase", path)
    return tuple(sorted(raw))


def _matrix(raw, p, path):
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("not a numeric matrix", path) from None
    if arr.shape != (p, p):
        raise SchemaError(f"expected a {p}x{p} matrix, got shape {arr.shape}", path)
    return arr


def _num(obj, key, path, required=True, default=0.0):
    val = _get(obj, key, path, (int, float), required, default)
    return float(val)


def network_from_dict(doc: dict, *, per_unit: bool = True, name: str = "") -> NetworkModel:
    """Parse and validate a feeder document; returns a per-unit model by default."""
    sb = _num(doc, "base_power_va", "")
    vb = _num(doc, "base_voltage_v", "")
    if sb <= 0 or vb <= 0:
        raise SchemaError("bases must be positive", "/base_power_va")
    buses = []
    for n, b in enumerate(_get(doc, "buses", "", list)):
        path = f"/buses/{n}"
        bid = _get(b, "id", path, int)
        where = f"{path} (bus {bid})"
        kind = _get(b, "kind", where, str)
        if kind not in ("slack", "pq"):
            raise SchemaError(f"kind must be 'slack' or 'pq', got {kind!r}", f"{where}/kind")
        if b.get("connection", "wye") != "wye":
            raise SchemaError("delta-connected loads are not supported; convert to wye",
                              f"{where}/connection")
        if b.get("load_model", "pq") != "pq":
            raise SchemaError("only constant-PQ loads are supported", f"{where}/load_model")
        phases = _phases(_get(b, "phases", where), f"{where}/phases")
        inj = {}
        for p, v in _get(b, "injections", where, dict, required=False, default={}).items():
            if p not in phases:
                raise SchemaError(f"injection on missing phase {p!r}", f"{where}/injections/{p}")
            ip = f"{where}/injections/{p}"
            inj[p] = complex(_num(v, "p_kw", ip), _num(v, "q_kvar", ip)) * 1e3
        vs = {}
        for p, v in _get(b, "slack_voltage", where, dict, required=False, default={}).items():
            if p not in phases:
                raise SchemaError(f"slack voltage on missing phase {p!r}", f"{where}/slack_voltage/{p}")
            sp_ = f"{where}/slack_voltage/{p}"
            vs[p] = _num(v, "mag_pu", sp_) * vb * np.exp(1j * np.deg2rad(_num(v, "angle_deg", sp_)))
        try:
            buses.append(Bus(bid, kind, phases, inj, vs, name=b.get("name")))
        except SchemaError:
            raise
        except StructuralError as exc:
            raise SchemaError(str(exc), where) from None

    branches = []
    for n, br in enumerate(_get(doc, "branches", "", list)):
        path = f"/branches/{n}"
        phases = _phases(_get(br, "phases", path), f"{path}/phases")
        p = len(phases)
        r = _matrix(_get(br, "r_ohm", path), p, f"{path}/r_ohm")
        x = _matrix(_get(br, "x_ohm", path), p, f"{path}/x_ohm")
        bsh = br.get("b_us")
        b_us = np.zeros((p, p)) if bsh is None else _matrix(bsh, p, f"{path}/b_us")
        try:
            branches.append(Branch(_get(br, "from", path, int), _get(br, "to", path, int), phases,
                                   r + 1j * x, 1j * b_us * 1e-6, name=br.get("name")))
        except SchemaError:
            raise
        except StructuralError as exc:
            raise SchemaError(str(exc), path) from None

    tap = None
    if doc.get("tap") is not None:
        t = doc["tap"]
        pos = _get(t, "position", "/tap", dict, required=False, default={})
        for p in pos:
            if p not in PHASES:
                raise SchemaError(f"unknown phase {p!r}", f"/tap/position/{p}")
        try:
            tap = TapChanger(_get(t, "slack_bus", "/tap", int), _get(t, "n_min", "/tap", int),
                             _get(t, "n_max", "/tap", int), _num(t, "step_pu", "/tap"), pos)
        except SchemaError:
            raise
        except StructuralError as exc:
            raise SchemaError(str(exc), "/tap") from None

    ders = []
    for n, d in enumerate(doc.get("ders") or []):
        path = f"/ders/{n}"
        try:
            ders.append(DerSpec(
                _get(d, "bus", path, int),
                _num(d, "p_init_kw", path) * 1e3, _num(d, "p_max_kw", path) * 1e3,
                _num(d, "q_min_kvar", path) * 1e3, _num(d, "q_max_kvar", path) * 1e3,
                _num(d, "q_init_kvar", path, required=False) * 1e3))
        except SchemaError:
            raise
        except StructuralError as exc:
            raise SchemaError(str(exc), path) from None

    try:
        net = NetworkModel(sb, vb, tuple(buses), tuple(branches), tap, tuple(ders), units="si",
                           name=doc.get("name", name))
    except StructuralError as exc:
        raise SchemaError(str(exc)) from None
    return to_per_unit(net) if per_unit else net


def load_network(path: Union[str, Path], *, per_unit: bool = True) -> NetworkModel:
    """Read a feeder file, validate it and convert it to per-unit.

    A bare bundled name such as ``"ieee13_like"`` is also accepted.  Non-radial
    networks load with a warning: uniqueness of the sensitivity solution is
    then not guaranteed.
    """
    p = Path(path)
    if not p.exists() and p.stem in BUNDLED and len(p.parts) == 1:
        p = bundled_path(p.stem)
    with open(p, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
    net = network_from_dict(doc, per_unit=per_unit, name=p.stem)
    report = validate_radial(net)
    if not report.radial:
        msg = (f"{p.name}: network is not radial; sensitivities are still computed but "
               "their uniqueness is only guaranteed for radial networks")
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
    return net


def network_to_dict(net: NetworkModel) -> dict:
    """Inverse of :func:`network_from_dict` (writes physical units)."""
    si = from_per_unit(net)
    vb = si.base_voltage
    buses = []
    for b in si.buses:
        e = {"id": b.id, "kind": b.kind, "phases": list(b.phases)}
        if b.name is not None:
            e["name"] = b.name
        if b.is_slack:
            e["slack_voltage"] = {p: {"mag_pu": abs(v) / vb, "angle_deg": float(np.rad2deg(np.angle(v)))}
                                  for p, v in b.slack_voltage.items()}
        else:
            e["injections"] = {p: {"p_kw": v.real / 1e3, "q_kvar": v.imag / 1e3}
                               for p, v in b.injections.items()}
        buses.append(e)
    branches = []
    for br in si.branches:
        e = {"from": br.from_bus, "to": br.to_bus, "phases": list(br.phases),
             "r_ohm": br.z.real.tolist(), "x_ohm": br.z.imag.tolist(),
             "b_us": (br.y_shunt.imag * 1e6).tolist()}
        if br.name is not None:
            e["name"] = br.name
        branches.append(e)
    doc = {"name": si.name, "base_power_va": si.base_power, "base_voltage_v": vb,
           "buses": buses, "branches": branches}
    if si.tap is not None:
        t = si.tap
        doc["tap"] = {"slack_bus": t.slack_bus, "n_min": t.n_min, "n_max": t.n_max,
                      "step_pu": t.step, "position": dict(t.position)}
    if si.ders:
        doc["ders"] = [{"bus": d.bus, "p_init_kw": d.p_init / 1e3, "p_max_kw": d.p_max / 1e3,
                        "q_min_kvar": d.q_min / 1e3, "q_max_kvar": d.q_max / 1e3,
                        "q_init_kvar": d.q_init / 1e3} for d in si.ders]
    return doc


def dump_network(net: NetworkModel, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n", encoding="utf-8")


def file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt(value) -> str:
    """Cell formatting: 15 significant digits for floats, blank for None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v == 0:
            v = 0.0  # drop negative zero
        return f"{v:.15g}"
    return str(value)


def emit_csv(rows: Iterable[Sequence], header: Sequence[str], path: Union[str, Path]) -> Path:
    """Write an RFC-4180 CSV (CRLF line ends) with a header row."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path

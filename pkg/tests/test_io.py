import copy
import json

import numpy as np
import pytest

import gridsense as gs
from gridsense.exceptions import SchemaError
from gridsense.io import emit_csv, file_sha256, fmt

BASE = json.loads(gs.bundled_path("two_bus").read_text())


def _doc(**edits):
    d = copy.deepcopy(BASE)
    for key, fn in edits.items():
        fn(d)
    return d


def test_bundled_feeders_load():
    for name in ("two_bus", "ieee13_like", "ieee34_like"):
        net = gs.load_network(name)
        assert net.units == "pu" and net.name == name
    with pytest.raises(FileNotFoundError):
        gs.bundled_path("ieee123")


def test_units_converted():
    net = gs.load_network("two_bus")
    s = net.bus(2).injections["a"]
    assert s == pytest.approx((0.1 + 0.05j))
    z = net.branches[0].z[0, 0]
    assert z == pytest.approx((0.01 + 0.1j) / 1.0)  # z_base = 1000^2 / 1e6
    si = gs.load_network("two_bus", per_unit=False)
    assert si.bus(2).injections["a"] == pytest.approx(1e5 + 5e4j)


def test_unknown_phase_names_bus():
    d = _doc(x=lambda d: d["buses"][1].__setitem__("phases", ["a", "d"]))
    with pytest.raises(SchemaError) as exc:
        gs.network_from_dict(d)
    assert exc.value.path == "/buses/1 (bus 2)/phases/1"
    assert "bus 2" in str(exc.value) and "'d'" in str(exc.value)


@pytest.mark.parametrize("key,val,msg", [("connection", "delta", "delta"),
                                         ("load_model", "zip", "PQ")])
def test_unsupported_load_rejected(key, val, msg):
    d = _doc(x=lambda d: d["buses"][1].__setitem__(key, val))
    with pytest.raises(SchemaError, match=msg):
        gs.network_from_dict(d)


def test_missing_and_mistyped_keys():
    with pytest.raises(SchemaError, match="missing key 'buses'"):
        gs.network_from_dict({k: v for k, v in BASE.items() if k != "buses"})
    d = _doc(x=lambda d: d["branches"][0].__setitem__("from", "1"))
    with pytest.raises(SchemaError) as exc:
        gs.network_from_dict(d)
    assert exc.value.path == "/branches/0/from"
    d = _doc(x=lambda d: d["branches"][0].__setitem__("r_ohm", [[0.1, 0.0]]))
    with pytest.raises(SchemaError, match="1x1"):
        gs.network_from_dict(d)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError, match="invalid JSON"):
        gs.load_network(p)


def test_non_radial_warns(tmp_path):
    d = json.loads(gs.bundled_path("ieee13_like").read_text())
    br = copy.deepcopy(d["branches"][-1])
    ids = [b["id"] for b in d["buses"] if set(br["phases"]) <= set(b["phases"])]
    br["from"], br["to"] = ids[1], br["to"]
    d["branches"].append(br)
    p = tmp_path / "mesh.json"
    p.write_text(json.dumps(d))
    with pytest.warns(UserWarning, match="not radial"):
        net = gs.load_network(p)
    assert len(net.branches) == len(d["branches"])


def test_round_trip(tmp_path):
    for name in ("ieee13_like", "ieee34_like"):
        net = gs.load_network(name)
        p = tmp_path / f"{name}.json"
        gs.dump_network(net, p)
        back = gs.load_network(p)
        ya = gs.build_compound_admittance(net).matrix.toarray()
        yb = gs.build_compound_admittance(back).matrix.toarray()
        assert np.abs(ya - yb).max() <= 1e-12 * np.abs(ya).max()
        for a, b in zip(net.ders, back.ders):
            assert a.bus == b.bus and a.p_max == pytest.approx(b.p_max, rel=1e-12)
        assert len(back.ders) == len(net.ders)
        sa = np.array([s for b in net.buses for s in b.injections.values()])
        sb = np.array([s for b in back.buses for s in b.injections.values()])
        np.testing.assert_allclose(sa, sb, rtol=1e-12)


def test_fmt():
    assert fmt(None) == ""
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(-0.0) == "0"
    assert fmt(0.1) == "0.1"
    assert fmt(1 / 3) == "0.333333333333333"
    assert fmt(np.float64(2.5e-20)) == "2.5e-20"
    assert fmt(7) == "7" and fmt("a") == "a"


def test_emit_csv(tmp_path):
    p = emit_csv([(1, "a", 0.5, None)], ["bus", "phase", "x", "y"], tmp_path / "o.csv")
    assert p.read_bytes() == b"bus,phase,x,y\r\n1,a,0.5,\r\n"
    h = emit_csv([], ["bus"], tmp_path / "h.csv")
    assert h.read_bytes() == b"bus\r\n"
    assert len(file_sha256(p)) == 64

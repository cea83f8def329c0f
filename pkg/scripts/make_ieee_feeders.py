"""Regenerate the bundled IEEE-13-style and IEEE-34-style feeder files.

Line configurations, segment lengths and spot/distributed loads follow the
IEEE distribution test feeder tables.  Conversions applied so the data fit
the bus-branch, constant-PQ, wye-only model:

* constant-Z and constant-I loads become constant-PQ at nominal voltage;
* delta loads become wye loads; a phase-pair load is split evenly between
  its two phases, three-phase delta columns map ab->a, bc->b, ca->c;
* distributed loads are lumped on the receiving bus of their segment;
* shunt capacitors become negative reactive absorption;
* voltage regulators are not modelled (IEEE 13: the substation tap changer
  stands in; IEEE 34: the two line regulators become their 10 ft segments);
* in-line transformers become series impedances referred to the primary
  side; downstream line impedances are referred through the turns ratio;
* the IEEE 13 switch 671-692 is a 10 ft segment of configuration 601.

Usage: python scripts/make_ieee_feeders.py [output_dir]
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

FT_PER_MILE = 5280.0
PH = "abc"


def sym(entries, phases):
    """Build a symmetric matrix restricted to ``phases`` from upper-triangle entries."""
    full = np.zeros((3, 3), dtype=complex)
    for key, val in entries.items():
        i, j = PH.index(key[0]), PH.index(key[1])
        full[i, j] = full[j, i] = val
    ix = [PH.index(p) for p in phases]
    return full[np.ix_(ix, ix)]


# ohm/mile and microsiemens/mile
IEEE13_CONFIGS = {
    601: ("abc",
          {"aa": 0.3465 + 1.0179j, "ab": 0.1560 + 0.5017j, "ac": 0.1580 + 0.4236j,
           "bb": 0.3375 + 1.0478j, "bc": 0.1535 + 0.3849j, "cc": 0.3414 + 1.0348j},
          {"aa": 6.2998, "ab": -1.9958, "ac": -1.2595, "bb": 5.9597, "bc": -0.7417, "cc": 5.6386}),
    602: ("abc",
          {"aa": 0.7526 + 1.1814j, "ab": 0.1580 + 0.4236j, "ac": 0.1560 + 0.5017j,
           "bb": 0.7475 + 1.1983j, "bc": 0.1535 + 0.3849j, "cc": 0.7436 + 1.2112j},
          {"aa": 5.6990, "ab": -1.0817, "ac": -1.6905, "bb": 5.1795, "bc": -0.6588, "cc": 5.4246}),
    603: ("bc",
          {"bb": 1.3294 + 1.3471j, "bc": 0.2066 + 0.4591j, "cc": 1.3238 + 1.3569j},
          {"bb": 4.7097, "bc": -0.8999, "cc": 4.6658}),
    604: ("ac",
          {"aa": 1.3238 + 1.3569j, "ac": 0.2066 + 0.4591j, "cc": 1.3294 + 1.3471j},
          {"aa": 4.6658, "ac": -0.8999, "cc": 4.7097}),
    605: ("c", {"cc": 1.3292 + 1.3475j}, {"cc": 4.5193}),
    606: ("abc",
          {"aa": 0.7982 + 0.4463j, "ab": 0.3192 + 0.0328j, "ac": 0.2849 - 0.0143j,
           "bb": 0.7891 + 0.4041j, "bc": 0.3192 + 0.0328j, "cc": 0.7982 + 0.4463j},
          {"aa": 96.8897, "bb": 96.8897, "cc": 96.8897}),
    607: ("a", {"aa": 1.3425 + 0.5124j}, {"aa": 88.9912}),
}

IEEE34_CONFIGS = {
    300: ("abc",
          {"aa": 1.3368 + 1.3343j, "ab": 0.2101 + 0.5779j, "ac": 0.2130 + 0.5015j,
           "bb": 1.3238 + 1.3569j, "bc": 0.2066 + 0.4591j, "cc": 1.3294 + 1.3471j},
          {"aa": 5.3350, "ab": -1.5313, "ac": -0.9943, "bb": 5.0979, "bc": -0.6212, "cc": 4.8880}),
    301: ("abc",
          {"aa": 1.9300 + 1.4115j, "ab": 0.2327 + 0.6442j, "ac": 0.2359 + 0.5691j,
           "bb": 1.9157 + 1.4281j, "bc": 0.2288 + 0.5238j, "cc": 1.9219 + 1.4209j},
          {"aa": 5.1207, "ab": -1.4364, "ac": -0.9402, "bb": 4.9055, "bc": -0.5951, "cc": 4.7154}),
    302: ("a", {"aa": 2.7995 + 1.4855j}, {"aa": 4.2251}),
    303: ("b", {"bb": 2.7995 + 1.4855j}, {"bb": 4.2251}),
    304: ("b", {"bb": 1.9217 + 1.4212j}, {"bb": 4.3637}),
}


def line(configs, cfg, length_ft, scale=1.0):
    phases, z, b = configs[cfg]
    miles = length_ft / FT_PER_MILE
    zm = sym(z, phases) * miles * scale
    bm = sym(b, phases).real * miles / scale
    return phases, zm, bm


def xfmr(kva, kv_hv, r_pct, x_pct, phases="abc"):
    zb = (kv_hv * 1e3) ** 2 / (kva * 1e3)
    z = np.eye(len(phases)) * complex(r_pct, x_pct) / 100 * zb
    return phases, z, np.zeros((len(phases), len(phases)))


def branch_json(f, t, spec, name):
    phases, z, b = spec
    return {"from": f, "to": t, "phases": list(phases), "name": name,
            "r_ohm": z.real.round(12).tolist(), "x_ohm": z.imag.round(12).tolist(),
            "b_us": np.asarray(b).real.round(12).tolist()}


def add_load(loads, bus, phase, p, q):
    cur = loads.setdefault(bus, {}).setdefault(phase, [0.0, 0.0])
    cur[0] += p
    cur[1] += q


def assemble(name, base_v, buses, phases, edges, loads, slack_name, slack_mag, numbering,
             tap=None, ders=None):
    ids = {n: i for i, n in numbering.items()}
    out_buses = []
    for i in sorted(numbering):
        n = numbering[i]
        entry = {"id": i, "name": str(n), "phases": list(phases[n])}
        if n == slack_name:
            entry["kind"] = "slack"
            entry["slack_voltage"] = {p: {"mag_pu": slack_mag, "angle_deg": a}
                                      for p, a in zip("abc", (0.0, -120.0, 120.0)) if p in phases[n]}
        else:
            entry["kind"] = "pq"
            entry["injections"] = {p: {"p_kw": round(pq[0], 9), "q_kvar": round(pq[1], 9)}
                                   for p, pq in sorted(loads.get(n, {}).items())}
        out_buses.append(entry)
    out_branches = [branch_json(ids[f], ids[t], spec, f"{f}-{t}") for f, t, spec in edges]
    doc = {"name": name, "base_power_va": 1e6, "base_voltage_v": base_v,
           "buses": out_buses, "branches": out_branches}
    if tap is not None:
        doc["tap"] = dict(tap, slack_bus=ids[slack_name])
    if ders:
        doc["ders"] = [dict(d, bus=d["bus"]) for d in ders]
    assert len(buses) == len(numbering) and len(edges) == len(buses) - 1
    return doc


def ieee13():
    c = IEEE13_CONFIGS
    edges = [
        (650, 632, line(c, 601, 2000)),
        (632, 633, line(c, 602, 500)),
        (633, 634, xfmr(500, 4.16, 1.1, 2.0)),
        (632, 645, line(c, 603, 500)),
        (645, 646, line(c, 603, 300)),
        (632, 671, line(c, 601, 2000)),
        (671, 680, line(c, 601, 1000)),
        (671, 684, line(c, 604, 300)),
        (684, 611, line(c, 605, 300)),
        (684, 652, line(c, 607, 800)),
        (671, 692, line(c, 601, 10)),
        (692, 675, line(c, 606, 500)),
    ]
    phases = {650: "abc", 632: "abc", 633: "abc", 634: "abc", 645: "bc", 646: "bc", 671: "abc",
              692: "abc", 675: "abc", 684: "ac", 611: "c", 680: "abc", 652: "a"}
    loads = {}
    for ph, p, q in (("a", 160, 110), ("b", 120, 90), ("c", 120, 90)):
        add_load(loads, 634, ph, p, q)
    add_load(loads, 645, "b", 170, 125)
    for ph in "bc":                      # delta b-c, constant Z
        add_load(loads, 646, ph, 115, 66)
    add_load(loads, 652, "a", 128, 86)
    for ph in "abc":                     # balanced delta
        add_load(loads, 671, ph, 385, 220)
    for ph, p, q in (("a", 485, 190), ("b", 68, 60), ("c", 290, 212)):
        add_load(loads, 675, ph, p, q)
    for ph in "ca":                      # delta c-a, constant I
        add_load(loads, 692, ph, 85, 75.5)
    add_load(loads, 611, "c", 170, 80)
    for ph, p, q in (("a", 17, 10), ("b", 66, 38), ("c", 117, 68)):   # 632-671 distributed
        add_load(loads, 671, ph, p, q)
    for ph in "abc":
        add_load(loads, 675, ph, 0, -200)
    add_load(loads, 611, "c", 0, -100)
    numbering = {1: 650, 2: 632, 3: 633, 4: 634, 5: 645, 6: 646, 7: 671, 8: 692, 9: 675,
                 10: 684, 11: 611, 12: 680, 13: 652}
    tap = {"n_min": -36, "n_max": 36, "step_pu": 0.06 / 36, "position": {"a": 0, "b": 0, "c": 0}}
    return assemble("ieee13_like", 4160 / math.sqrt(3), list(phases), phases, edges, loads,
                    650, 1.0, numbering, tap)


def ieee34():
    c = IEEE34_CONFIGS
    ratio2 = (24.9 / 4.16) ** 2
    segs = [
        (800, 802, 2580, 300), (802, 806, 1730, 300), (806, 808, 32230, 300),
        (808, 810, 5804, 303), (808, 812, 37500, 300), (812, 814, 29730, 300),
        (814, 850, 10, 301), (816, 818, 1710, 302), (816, 824, 10210, 301),
        (818, 820, 48150, 302), (820, 822, 13740, 302), (824, 826, 3030, 303),
        (824, 828, 840, 301), (828, 830, 20440, 301), (830, 854, 520, 301),
        (832, 858, 4900, 301), (834, 860, 2020, 301), (834, 842, 280, 301),
        (836, 840, 860, 301), (836, 862, 280, 301), (842, 844, 1350, 301),
        (844, 846, 3640, 301), (846, 848, 530, 301), (850, 816, 310, 301),
        (852, 832, 10, 301), (854, 856, 23330, 303), (854, 852, 36830, 301),
        (858, 864, 1620, 302), (858, 834, 5830, 301), (860, 836, 2680, 301),
        (862, 838, 4860, 304),
    ]
    edges = [(f, t, line(c, cfg, ft)) for f, t, ft, cfg in segs]
    edges.append((832, 888, xfmr(500, 24.9, 1.9, 4.08)))
    edges.append((888, 890, line(c, 300, 10560, scale=ratio2)))
    phases = {}
    for f, t, (ph, _, _) in edges:
        for n in (f, t):
            phases[n] = "".join(sorted(set(phases.get(n, "")) | set(ph)))
    loads = {}
    spot = {
        860: [(20, 16)] * 3, 840: [(9, 7)] * 3, 844: [(135, 105)] * 3, 848: [(20, 16)] * 3,
        890: [(150, 75)] * 3, 830: [(10, 5), (10, 5), (25, 10)],
    }
    for bus, vals in spot.items():
        for ph, (p, q) in zip("abc", vals):
            add_load(loads, bus, ph, p, q)
    distributed = [   # (to-bus, phase, kW, kvar)
        (806, "b", 30, 15), (806, "c", 25, 14), (810, "b", 16, 8), (820, "a", 34, 17),
        (822, "a", 135, 70), (824, "b", 5, 2), (826, "b", 40, 20), (828, "c", 4, 2),
        (830, "a", 7, 3), (856, "b", 4, 2), (858, "a", 7, 3), (858, "b", 2, 1), (858, "c", 6, 3),
        (864, "a", 2, 1), (834, "a", 4, 2), (834, "b", 15, 8), (834, "c", 13, 7),
        (860, "a", 16, 8), (860, "b", 20, 10), (860, "c", 110, 55), (836, "a", 30, 15),
        (836, "b", 10, 6), (836, "c", 42, 22), (840, "a", 18, 9), (840, "b", 22, 11),
        (838, "b", 28, 14), (844, "a", 9, 5), (846, "b", 25, 12), (846, "c", 20, 11),
        (848, "b", 23, 11),
    ]
    for bus, ph, p, q in distributed:
        add_load(loads, bus, ph, p, q)
    for ph in "abc":
        add_load(loads, 844, ph, 0, -100)
        add_load(loads, 848, ph, 0, -150)
    order = [800, 802, 806, 808, 810, 812, 814, 850, 816, 818, 820, 822, 824, 826, 828, 830, 854,
             852, 856, 832, 888, 890, 858, 834, 864, 842, 844, 846, 848, 860, 836, 840, 862, 838]
    numbering = {i + 1: n for i, n in enumerate(order)}
    ids = {n: i for i, n in numbering.items()}
    tap = {"n_min": -36, "n_max": 36, "step_pu": 0.06 / 36, "position": {"a": 0, "b": 0, "c": 0}}
    ders = []
    for bus, p0, pmax in ((852, 210, 300), (858, 100, 600), (834, 250, 600), (862, 150, 300)):
        ders.append({"bus": ids[bus], "p_init_kw": p0, "p_max_kw": pmax,
                     "q_min_kvar": -pmax, "q_max_kvar": pmax, "q_init_kvar": 0.0})
    assert [d["bus"] for d in ders] == [18, 23, 24, 33]
    return assemble("ieee34_like", 24900 / math.sqrt(3), list(phases), phases, edges, loads,
                    800, 1.05, numbering, tap, ders)


def two_bus():
    return {
        "name": "two_bus",
        "base_power_va": 1e6,
        "base_voltage_v": 1000.0,
        "buses": [
            {"id": 1, "kind": "slack", "phases": ["a"],
             "slack_voltage": {"a": {"mag_pu": 1.0, "angle_deg": 0.0}}},
            {"id": 2, "kind": "pq", "phases": ["a"],
             "injections": {"a": {"p_kw": 100.0, "q_kvar": 50.0}}},
        ],
        "branches": [
            {"from": 1, "to": 2, "phases": ["a"], "r_ohm": [[0.01]], "x_ohm": [[0.1]],
             "b_us": [[0.0]]},
        ],
    }


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for doc in (two_bus(), ieee13(), ieee34()):
        path = out / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src" / "gridsense" / "data"
    main(sys.argv[1] if len(sys.argv) > 1 else default)

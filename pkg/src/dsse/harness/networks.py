"""Bundled test networks.

None of the original feeder data files are redistributed here; every
network is rebuilt in code:

* ``six_bus``  - five load areas behind a reference bus, loaded with the
  100 % pseudo currents of the six-bus case study. Line impedances are not
  published for that case, so they are synthetic; under nominal load the
  voltage drop is about 6 % at bus 1 and 14 % at the far end.
* ``ieee123`` - balanced single-phase equivalent of the IEEE 123 node test
  feeder (closed switches and regulators become short lines, the open
  tie switches and the 61-610 transformer are dropped). Line lengths and
  spot loads follow the public feeder description; per-mile impedances
  are positive-sequence approximations of each line configuration.
* ``ieee615`` - five ``ieee123`` copies in parallel behind one source bus.
* ``lv23``    - synthetic 23-bus three-phase unbalanced residential LV
  feeder with mutual coupling; cable R/X is kept near 1 so that a 30 %
  resistance increase can still preserve the impedance magnitude.
"""

from __future__ import annotations

import numpy as np

from dsse.netmodel import Branch, Bus, RadialNetwork

# Pseudo (100 % loading) injected currents of the six-bus case study, A.
SIX_BUS_PSEUDO_CURRENTS = {
    "1": 18.9 - 6.7j,
    "2": 13.4 - 12.7j,
    "3": 14.8 - 10.9j,
    "4": 16.8 - 14.9j,
    "5": 17.7 - 14.9j,
}
SIX_BUS_GROUPS = {"1": "residential", "2": "residential", "4": "residential",
                  "3": "industrial", "5": "industrial"}

# (from, to, ohms) - main feeder 0-1-2-3-4 with lateral 2-5
SIX_BUS_BRANCHES = (
    ("0", "1", 2.4 + 3.0j),
    ("1", "2", 2.0 + 2.4j),
    ("2", "3", 2.2 + 2.6j),
    ("3", "4", 2.8 + 3.2j),
    ("2", "5", 2.4 + 2.8j),
)


def six_bus_network(base_voltage: float = 11e3 / np.sqrt(3)) -> RadialNetwork:
    buses = [Bus("0")] + [Bus(b, 1, (SIX_BUS_PSEUDO_CURRENTS[b],), SIX_BUS_GROUPS[b])
                          for b in ("1", "2", "3", "4", "5")]
    branches = [Branch(f, t, z) for f, t, z in SIX_BUS_BRANCHES]
    return RadialNetwork(tuple(buses), tuple(branches), "0", base_voltage, "six_bus")


# -- IEEE 123 node feeder --------------------------------------------------------------

# (node A, node B, length ft, configuration)
IEEE123_LINES = """
1 2 175 10; 1 3 250 11; 1 7 300 1; 3 4 200 11; 3 5 325 11; 5 6 250 11
7 8 200 1; 8 12 225 10; 8 9 225 9; 8 13 300 1; 9 14 425 9; 13 34 150 11
13 18 825 2; 14 11 250 9; 14 10 250 9; 15 16 375 11; 15 17 350 11; 18 19 250 9
18 21 300 2; 19 20 325 9; 21 22 525 10; 21 23 250 2; 23 24 550 11; 23 25 275 2
25 26 350 7; 25 28 200 2; 26 27 275 7; 26 31 225 11; 27 33 500 9; 28 29 300 2
29 30 350 2; 30 250 200 2; 31 32 300 11; 34 15 100 11; 35 36 650 8; 35 40 250 1
36 37 300 9; 36 38 250 10; 38 39 325 10; 40 41 325 11; 40 42 250 1; 42 43 500 10
42 44 200 1; 44 45 200 9; 44 47 250 1; 45 46 300 9; 47 48 150 4; 47 49 250 4
49 50 250 4; 50 51 250 4; 52 53 200 1; 53 54 125 1; 54 55 275 1; 54 57 350 3
55 56 275 1; 57 58 250 10; 57 60 750 3; 58 59 250 10; 60 61 550 5; 60 62 250 12
62 63 175 12; 63 64 350 12; 64 65 425 12; 65 66 325 12; 67 68 200 9; 67 72 275 3
67 97 250 3; 68 69 275 9; 69 70 325 9; 70 71 275 9; 72 73 275 11; 72 76 200 3
73 74 350 11; 74 75 400 11; 76 77 400 6; 76 86 700 3; 77 78 100 6; 78 79 225 6
78 80 475 6; 80 81 475 6; 81 82 250 6; 81 84 675 11; 82 83 250 6; 84 85 475 11
86 87 450 6; 87 88 175 9; 87 89 275 6; 89 90 225 10; 89 91 225 6; 91 92 300 11
91 93 225 6; 93 94 275 9; 93 95 300 6; 95 96 200 10; 97 98 275 3; 98 99 550 3
99 100 300 3; 100 450 800 3; 101 102 225 11; 101 105 275 3; 102 103 325 11
103 104 700 11; 105 106 225 10; 105 108 325 3; 106 107 575 10; 108 109 450 9
108 300 1000 3; 109 110 300 9; 110 111 575 9; 110 112 125 9; 112 113 525 9
113 114 325 9; 135 35 375 4; 149 1 400 1; 152 52 400 1; 197 101 250 3
"""
# closed switches and regulators, modelled as 10 ft of configuration 1
IEEE123_TIES = (("150", "149"), ("13", "152"), ("18", "135"), ("60", "160"),
                ("160", "67"), ("97", "197"))

# positive-sequence (or single-phase) ohms per mile, by line configuration
IEEE123_CONFIG_Z = {
    **{c: 0.3016 + 0.5763j for c in range(1, 9)},
    **{c: 1.3292 + 1.3475j for c in (9, 10, 11)},
    12: 0.7982 + 0.4463j,
}

# spot loads, total kW and kvar
IEEE123_LOADS = {
    1: (40, 20), 2: (20, 10), 4: (40, 20), 5: (20, 10), 6: (40, 20), 7: (20, 10),
    9: (40, 20), 10: (20, 10), 11: (40, 20), 12: (20, 10), 16: (40, 20), 17: (20, 10),
    19: (40, 20), 20: (40, 20), 22: (40, 20), 24: (40, 20), 28: (40, 20), 29: (40, 20),
    30: (40, 20), 31: (20, 10), 32: (20, 10), 33: (40, 20), 34: (40, 20), 35: (40, 20),
    37: (40, 20), 38: (20, 10), 39: (20, 10), 41: (20, 10), 42: (20, 10), 43: (40, 20),
    45: (20, 10), 46: (20, 10), 47: (105, 75), 48: (210, 150), 49: (140, 95),
    50: (40, 20), 51: (20, 10), 52: (40, 20), 53: (40, 20), 55: (20, 10), 56: (20, 10),
    58: (20, 10), 59: (20, 10), 60: (20, 10), 62: (40, 20), 63: (40, 20), 64: (75, 35),
    65: (140, 100), 66: (75, 35), 68: (20, 10), 69: (40, 20), 70: (20, 10), 71: (40, 20),
    73: (40, 20), 74: (40, 20), 75: (40, 20), 76: (245, 180), 77: (40, 20), 79: (40, 20),
    80: (40, 20), 82: (40, 20), 83: (20, 10), 84: (20, 10), 85: (40, 20), 86: (20, 10),
    87: (40, 20), 88: (40, 20), 90: (40, 20), 92: (40, 20), 94: (40, 20), 95: (20, 10),
    96: (20, 10), 98: (40, 20), 99: (40, 20), 100: (40, 20), 102: (20, 10), 103: (40, 20),
    104: (40, 20), 106: (40, 20), 107: (40, 20), 109: (40, 20), 111: (20, 10),
    112: (20, 10), 113: (40, 20), 114: (20, 10),
}

# three industrial regions: everything downstream of these buses
IEEE123_INDUSTRIAL_ROOTS = ("25", "76", "108")
IEEE123_METERS = ("28", "77", "109", "2", "48", "69")


def _ieee123_parts(prefix: str = ""):
    lines = []
    for item in IEEE123_LINES.replace("\n", ";").split(";"):
        if item.strip():
            a, b, ft, cfg = item.split()
            z = IEEE123_CONFIG_Z[int(cfg)] * float(ft) / 5280.0
            lines.append((a, b, z))
    for a, b in IEEE123_TIES:
        lines.append((a, b, IEEE123_CONFIG_Z[1] * 10.0 / 5280.0))
    ids = []
    for a, b, _ in lines:
        for x in (a, b):
            if x not in ids:
                ids.append(x)
    return lines, ids


def ieee123_network(base_voltage: float = 4160.0 / np.sqrt(3), prefix: str = "",
                    source: str = "150") -> RadialNetwork:
    lines, ids = _ieee123_parts()
    v = base_voltage

    def name(x):
        return x if x == source else prefix + x

    probe = RadialNetwork(tuple(Bus(i) for i in ids),
                          tuple(Branch(a, b, z) for a, b, z in lines), source, v)
    industrial = set()
    for root in IEEE123_INDUSTRIAL_ROOTS:
        industrial.update(probe.subtree(root))
    buses = []
    for i in ids:
        kw = IEEE123_LOADS.get(int(i)) if i.isdigit() else None
        load = None
        if kw is not None:
            s = complex(kw[0], kw[1]) * 1e3 / 3.0
            load = (np.conj(s / v),)
        group = None
        if load is not None:
            group = "industrial" if i in industrial else "residential"
        buses.append(Bus(name(i), 1, load, group))
    branches = [Branch(name(a), name(b), z) for a, b, z in lines]
    return RadialNetwork(tuple(buses), tuple(branches), source, v, "ieee123")


def ieee615_network(copies: int = 5) -> RadialNetwork:
    """Parallel copies of the 123 node feeder sharing the source bus."""
    buses, branches = [], []
    base = None
    for k in range(copies):
        net = ieee123_network(prefix=f"f{k + 1}_")
        base = net.base_voltage
        for b in net.buses:
            if b.id == net.reference_bus:
                if k == 0:
                    buses.append(b)
                continue
            buses.append(b)
        branches.extend(net.branches)
    return RadialNetwork(tuple(buses), tuple(branches), "150", base, "ieee615")


def ieee615_meters(copies: int = 5) -> tuple[str, ...]:
    return tuple(f"f{k + 1}_{m}" for k in range(copies) for m in IEEE123_METERS)


# -- LV three-phase feeder -----------------------------------------------------------

# (from, to, length m); bus 8 feeds fourteen downstream buses
LV23_SPANS = (
    ("0", "1", 40), ("1", "2", 35), ("2", "3", 45), ("3", "4", 30), ("4", "5", 40),
    ("5", "6", 35), ("6", "7", 30), ("7", "8", 40), ("8", "9", 35), ("9", "10", 30),
    ("10", "11", 40), ("11", "12", 35), ("12", "13", 30), ("13", "14", 35),
    ("14", "15", 30), ("3", "16", 50), ("8", "17", 40), ("17", "18", 35),
    ("18", "19", 30), ("19", "20", 40), ("20", "21", 35), ("21", "22", 30),
    ("22", "23", 45),
)
LV23_METERS = ("1", "10")
# self and mutual ohms per km for a four-wire aerial bundle, Kron-reduced
LV23_Z_SELF = 0.45 + 0.42j
LV23_Z_MUTUAL = 0.10 + 0.28j


def lv23_network(base_voltage: float = 230.0, seed: int = 7) -> RadialNetwork:
    """Synthetic unbalanced LV feeder; diversified per-phase loads of 0.5-2 kW
    at pf 0.95."""
    rng = np.random.default_rng(seed)
    zkm = np.full((3, 3), LV23_Z_MUTUAL) + np.eye(3) * (LV23_Z_SELF - LV23_Z_MUTUAL)
    buses = [Bus("0", 3)]
    for k in range(1, 24):
        kw = rng.uniform(0.5, 2.0, 3)
        s = kw * 1e3 * (1 + 1j * np.tan(np.arccos(0.95)))
        buses.append(Bus(str(k), 3, tuple(np.conj(s / base_voltage)), "residential"))
    branches = [Branch(f, t, zkm * length / 1000.0) for f, t, length in LV23_SPANS]
    return RadialNetwork(tuple(buses), tuple(branches), "0", base_voltage, "lv23")


BUNDLED = {
    "six_bus": six_bus_network,
    "ieee123": ieee123_network,
    "ieee615": ieee615_network,
    "lv23": lv23_network,
}
DEFAULT_METERS = {
    "six_bus": ("1",),
    "ieee123": IEEE123_METERS,
    "ieee615": ieee615_meters(),
    "lv23": LV23_METERS,
}


def bundled_network(name: str) -> RadialNetwork:
    try:
        return BUNDLED[name]()
    except KeyError:
        raise KeyError(f"unknown bundled network {name!r}; choose from {sorted(BUNDLED)}") from None

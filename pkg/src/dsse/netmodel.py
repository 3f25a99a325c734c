"""Radial network model and direct load-flow matrices.

States are ordered by a depth-first traversal from the reference bus with
phases innermost: entry ``k * p + ph`` of a stacked vector refers to phase
``ph`` of the ``k``-th non-reference bus in :attr:`RadialNetwork.order`.
Branch ``k`` is the branch feeding that bus, so branch and bus indices
coincide.

Injected currents follow the load convention: a positive current is drawn
from the network, so bus voltages drop under load::

    v = vref - DLF @ i_inj
    i_branch = BIBC @ i_inj
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class NetworkStructureError(ValueError):
    """Raised when a network is not a connected radial tree."""


@dataclass(frozen=True)
class Bus:
    id: str
    phase_count: int = 1
    # Optional nominal load current per phase (A, load convention), with its
    # angle taken relative to the bus voltage of that phase, and load type.
    load: tuple[complex, ...] | None = None
    group: str | None = None


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    impedance: np.ndarray  # (p, p) complex, ohms

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.impedance, dtype=complex))
        if z.shape[0] != z.shape[1]:
            raise NetworkStructureError(
                f"branch {self.from_bus}->{self.to_bus}: impedance must be square, got {z.shape}")
        if not np.allclose(z, z.T, rtol=0, atol=1e-12 * max(1.0, np.abs(z).max())):
            raise NetworkStructureError(
                f"branch {self.from_bus}->{self.to_bus}: impedance matrix is not symmetric")
        if np.any(np.diag(z) == 0):
            raise NetworkStructureError(
                f"branch {self.from_bus}->{self.to_bus}: zero self impedance")
        z.setflags(write=False)
        object.__setattr__(self, "impedance", z)

    @property
    def phase_count(self) -> int:
        return self.impedance.shape[0]


@dataclass(frozen=True)
class RadialNetwork:
    """A radial feeder with a single reference (source) bus.

    Branch directions given by the caller are not trusted; the tree is
    re-oriented away from the reference bus on construction.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    reference_bus: str
    base_voltage: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        buses = tuple(b if isinstance(b, Bus) else Bus(str(b)) for b in self.buses)
        object.__setattr__(self, "buses", buses)
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "reference_bus", str(self.reference_bus))
        self._validate()

    # -- structure -----------------------------------------------------------------

    def _validate(self):
        ids = [b.id for b in self.buses]
        seen = set()
        for bid in ids:
            if bid in seen:
                raise NetworkStructureError(f"duplicate bus id {bid!r}")
            seen.add(bid)
        if self.reference_bus not in seen:
            raise NetworkStructureError(f"reference bus {self.reference_bus!r} is not a bus")
        phases = {b.phase_count for b in self.buses} | {br.phase_count for br in self.branches}
        if len(phases) != 1:
            raise NetworkStructureError(f"mixed phase counts {sorted(phases)}")
        if phases.pop() not in (1, 3):
            raise NetworkStructureError("phase_count must be 1 or 3")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in seen:
                    raise NetworkStructureError(
                        f"branch {br.from_bus}->{br.to_bus} references unknown bus {end!r}")
            if br.from_bus == br.to_bus:
                raise NetworkStructureError(f"branch {br.from_bus}->{br.to_bus} is a self loop")
        if len(self.branches) != len(self.buses) - 1:
            raise NetworkStructureError(
                f"radial network needs {len(self.buses) - 1} branches for "
                f"{len(self.buses)} buses, got {len(self.branches)}")
        # touching the cached tree raises on loops / islands
        _ = self._tree

    @cached_property
    def _tree(self):
        adjacency: dict[str, list[tuple[str, int]]] = {b.id: [] for b in self.buses}
        for k, br in enumerate(self.branches):
            adjacency[br.from_bus].append((br.to_bus, k))
            adjacency[br.to_bus].append((br.from_bus, k))
        parent: dict[str, tuple[str, int]] = {}
        order: list[str] = []
        visited = {self.reference_bus}
        stack = [self.reference_bus]
        loop = None
        while stack:
            bus = stack.pop()
            if bus != self.reference_bus:
                order.append(bus)
            # reversed so that children are visited in listing order
            for nxt, k in reversed(adjacency[bus]):
                if nxt in visited:
                    if parent.get(bus, (None, None))[1] != k and loop is None:
                        loop = (nxt, self.branches[k])
                    continue
                visited.add(nxt)
                parent[nxt] = (bus, k)
                stack.append(nxt)
        missing = [b.id for b in self.buses if b.id not in visited]
        if missing:
            raise NetworkStructureError(f"bus {missing[0]!r} is not connected to the reference bus")
        if loop is not None:
            bus, br = loop
            raise NetworkStructureError(
                f"loop detected at bus {bus!r} (branch {br.from_bus}->{br.to_bus})")
        return order, parent

    @property
    def phase_count(self) -> int:
        return self.buses[0].phase_count

    @property
    def order(self) -> list[str]:
        """Non-reference bus ids in state order."""
        return list(self._tree[0])

    @cached_property
    def parent(self) -> dict[str, str]:
        return {bus: p for bus, (p, _) in self._tree[1].items()}

    @cached_property
    def upstream_branch(self) -> dict[str, Branch]:
        """Branch feeding each non-reference bus, oriented away from the reference."""
        out = {}
        for bus, (par, k) in self._tree[1].items():
            br = self.branches[k]
            if br.from_bus != par:
                br = Branch(par, bus, br.impedance)
            out[bus] = br
        return out

    @cached_property
    def index(self) -> dict[str, int]:
        """Position of each non-reference bus (and its upstream branch) in state order."""
        return {bus: k for k, bus in enumerate(self.order)}

    def bus(self, bus_id) -> Bus:
        bus_id = str(bus_id)
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    @property
    def n_states(self) -> int:
        """Length of a stacked per-phase vector over non-reference buses."""
        return self.phase_count * (len(self.buses) - 1)

    def state_index(self, bus_id, phase: int = 0) -> int:
        bus_id = str(bus_id)
        if bus_id not in self.index:
            raise KeyError(f"bus {bus_id!r} is the reference bus or unknown")
        if not 0 <= phase < self.phase_count:
            raise KeyError(f"phase {phase} out of range for a {self.phase_count}-phase network")
        return self.index[bus_id] * self.phase_count + phase

    def state_labels(self) -> list[str]:
        if self.phase_count == 1:
            return list(self.order)
        return [f"{bus}.{'abc'[ph]}" for bus in self.order for ph in range(self.phase_count)]

    def nominal_loads(self) -> np.ndarray:
        """Stacked nominal load currents; zero where a bus has no load."""
        p = self.phase_count
        out = np.zeros(self.n_states, dtype=complex)
        for bus in self.order:
            load = self.bus(bus).load
            if load is not None:
                k = self.index[bus] * p
                out[k:k + p] = np.asarray(load, dtype=complex)
        return out

    def subtree(self, bus_id) -> list[str]:
        """``bus_id`` and every bus downstream of it, in state order."""
        bus_id = str(bus_id)
        children: dict[str, list[str]] = {}
        for b, par in self.parent.items():
            children.setdefault(par, []).append(b)
        out, stack = [], [bus_id]
        while stack:
            b = stack.pop()
            out.append(b)
            stack.extend(children.get(b, []))
        return sorted(out, key=lambda b: self.index.get(b, -1))

    def path_to_reference(self, bus_id) -> list[str]:
        """Non-reference buses from ``bus_id`` up to the reference (exclusive)."""
        bus_id = str(bus_id)
        path = []
        while bus_id != self.reference_bus:
            path.append(bus_id)
            bus_id = self.parent[bus_id]
        return path

    def with_impedances(self, impedances: dict[tuple[str, str], np.ndarray]) -> "RadialNetwork":
        branches = tuple(
            Branch(br.from_bus, br.to_bus, impedances.get((br.from_bus, br.to_bus), br.impedance))
            for br in self.branches)
        return RadialNetwork(self.buses, branches, self.reference_bus, self.base_voltage, self.name)

    def reference_voltage(self, magnitude: float | None = None) -> np.ndarray:
        """Balanced per-phase reference phasors (phase a at angle zero)."""
        v = self.base_voltage if magnitude is None else magnitude
        if self.phase_count == 1:
            return np.array([complex(v)])
        a = np.exp(-2j * np.pi / 3)
        return v * a ** np.arange(3)


@dataclass(frozen=True)
class FlowMatrices:
    bibc: np.ndarray
    bcbv: np.ndarray
    dlf: np.ndarray
    phase_count: int = 1

    @property
    def n_states(self) -> int:
        return self.bibc.shape[0]


def build_flow_matrices(net: RadialNetwork) -> FlowMatrices:
    """Bus-injection to branch-current (BIBC), branch-current to bus-voltage
    (BCBV) and direct load flow (DLF = BCBV @ BIBC) matrices."""
    p = net.phase_count
    n = len(net.order)
    eye = np.eye(p)
    bibc = np.zeros((p * n, p * n), dtype=complex)
    bcbv = np.zeros((p * n, p * n), dtype=complex)
    for bus in net.order:
        b = net.index[bus]
        z = net.upstream_branch[bus].impedance
        for downstream in net.subtree(bus):
            k = net.index[downstream]
            bibc[b * p:(b + 1) * p, k * p:(k + 1) * p] = eye
            bcbv[k * p:(k + 1) * p, b * p:(b + 1) * p] = z
    dlf = bcbv @ bibc
    for m in (bibc, bcbv, dlf):
        m.setflags(write=False)
    return FlowMatrices(bibc=bibc, bcbv=bcbv, dlf=dlf, phase_count=p)


def expand_vref(vref, n_states: int, phase_count: int) -> np.ndarray:
    """Broadcast a scalar, per-phase or full-length reference voltage."""
    v = np.atleast_1d(np.asarray(vref, dtype=complex))
    if v.size == 1:
        return np.full(n_states, v[0])
    if v.size == phase_count:
        return np.tile(v, n_states // phase_count)
    if v.size == n_states:
        return v
    raise ValueError(f"vref has length {v.size}; expected 1, {phase_count} or {n_states}")


def direct_power_flow(fm: FlowMatrices, injections, vref):
    """Branch currents and bus voltages for given load currents.

    Returns ``(branch_currents, bus_voltages)``, both stacked in state order.
    """
    i = np.asarray(injections, dtype=complex)
    if i.shape != (fm.n_states,):
        raise ValueError(f"injections have shape {i.shape}, expected ({fm.n_states},)")
    v0 = expand_vref(vref, fm.n_states, fm.phase_count)
    return fm.bibc @ i, v0 - fm.dlf @ i


def admittance_matrix(net: RadialNetwork) -> tuple[np.ndarray, list[str]]:
    """Full nodal admittance matrix with the reference bus first."""
    p = net.phase_count
    buses = [net.reference_bus] + net.order
    pos = {b: k for k, b in enumerate(buses)}
    y = np.zeros((p * len(buses), p * len(buses)), dtype=complex)
    for br in net.branches:
        yb = np.linalg.inv(br.impedance)
        f, t = pos[br.from_bus] * p, pos[br.to_bus] * p
        y[f:f + p, f:f + p] += yb
        y[t:t + p, t:t + p] += yb
        y[f:f + p, t:t + p] -= yb
        y[t:t + p, f:f + p] -= yb
    return y, buses


def nodal_power_flow(net: RadialNetwork, injections, vref):
    """Independent nodal solve of ``Y V = I`` with the reference voltage fixed.

    Used as an oracle for :func:`direct_power_flow`; returns
    ``(branch_currents, bus_voltages)`` in state order.
    """
    p = net.phase_count
    y, _ = admittance_matrix(net)
    i = np.asarray(injections, dtype=complex)
    v_ref = expand_vref(vref, p, p)
    y_oo = y[p:, p:]
    y_or = y[p:, :p]
    v = np.linalg.solve(y_oo, -i - y_or @ v_ref)
    full = np.concatenate([v_ref, v])
    pos = {b: k for k, b in enumerate([net.reference_bus] + net.order)}
    ib = np.zeros(net.n_states, dtype=complex)
    for bus in net.order:
        br = net.upstream_branch[bus]
        f, t = pos[br.from_bus] * p, pos[br.to_bus] * p
        k = net.index[bus] * p
        ib[k:k + p] = np.linalg.solve(br.impedance, full[f:f + p] - full[t:t + p])
    return ib, v


def perturb_rx_ratio(net: RadialNetwork, r_scale: float) -> RadialNetwork:
    """Scale resistances by ``r_scale`` and shrink reactances so every
    impedance entry keeps its magnitude."""
    if r_scale <= 0:
        raise ValueError("r_scale must be positive")
    out = []
    for br in net.branches:
        z = br.impedance
        r = r_scale * z.real
        mag = np.abs(z)
        if np.any(np.abs(r) > mag * (1 + 1e-12)):
            raise ValueError(
                f"branch {br.from_bus}->{br.to_bus}: scaled resistance exceeds |Z|, "
                "impedance magnitude cannot be preserved")
        x = np.sign(z.imag) * np.sqrt(np.clip(mag ** 2 - r ** 2, 0.0, None))
        out.append(Branch(br.from_bus, br.to_bus, r + 1j * x))
    return RadialNetwork(net.buses, tuple(out), net.reference_bus, net.base_voltage, net.name)


# -- file formats --------------------------------------------------------------------


def _matrix(value, p):
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        return np.eye(p) * float(m) if p == 1 else np.diag(np.full(p, float(m)))
    if m.ndim == 1:
        return np.diag(m)
    return m


def network_from_dict(data: dict) -> RadialNetwork:
    p = int(data.get("phase_count", 1))
    buses = []
    for entry in data["buses"]:
        if not isinstance(entry, dict):
            buses.append(Bus(str(entry), p))
            continue
        load = entry.get("load")
        if load is not None:
            load = tuple(complex(re, im) for re, im in np.reshape(load, (-1, 2)))
        buses.append(Bus(str(entry["id"]), p, load, entry.get("group")))
    branches = []
    for entry in data["branches"]:
        r = _matrix(entry["resistance"], p)
        x = _matrix(entry["reactance"], p)
        branches.append(Branch(str(entry["from"]), str(entry["to"]), r + 1j * x))
    return RadialNetwork(tuple(buses), tuple(branches), str(data["reference_bus"]),
                         float(data["base_voltage_v"]), data.get("name", ""))


def network_to_dict(net: RadialNetwork) -> dict:
    buses = []
    for b in net.buses:
        entry: dict = {"id": b.id}
        if b.load is not None:
            entry["load"] = [[c.real, c.imag] for c in b.load]
        if b.group is not None:
            entry["group"] = b.group
        buses.append(entry)
    return {
        "name": net.name,
        "phase_count": net.phase_count,
        "base_voltage_v": net.base_voltage,
        "reference_bus": net.reference_bus,
        "buses": buses,
        "branches": [{"from": br.from_bus, "to": br.to_bus,
                      "resistance": br.impedance.real.tolist(),
                      "reactance": br.impedance.imag.tolist()} for br in net.branches],
    }


def read_network(path, reference_bus=None, base_voltage=None) -> RadialNetwork:
    """Load a network from JSON, or from a single-phase CSV branch list.

    The CSV needs ``from,to,r_ohm,x_ohm`` columns; the reference bus defaults
    to the first ``from`` entry.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise NetworkStructureError(f"{path}: no branches")
        ids: list[str] = []
        for row in rows:
            for key in ("from", "to"):
                if row[key] not in ids:
                    ids.append(row[key])
        branches = [Branch(r["from"], r["to"], complex(float(r["r_ohm"]), float(r["x_ohm"])))
                    for r in rows]
        ref = reference_bus if reference_bus is not None else rows[0]["from"]
        if base_voltage is None:
            raise ValueError("CSV networks need an explicit base_voltage")
        return RadialNetwork(tuple(Bus(i) for i in ids), tuple(branches), str(ref),
                             float(base_voltage), path.stem)
    with path.open() as fh:
        return network_from_dict(json.load(fh))


def write_network(net: RadialNetwork, path) -> None:
    with Path(path).open("w") as fh:
        json.dump(network_to_dict(net), fh, indent=1)

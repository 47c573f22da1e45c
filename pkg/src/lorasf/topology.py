"""Scenario geometry: gateways, end devices and their mean RSSI."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .phy import DomainError, PathLossModel, Thresholds, rssi

DEFAULT_RATE = 1.0 / 90.0
TRACE_HEADER = ("device_id", "gateway_id", "mean_rssi_dbm")
TOPOLOGY_HEADER = ("device_id", "x_m", "y_m", "closest_gw", "assigned_sf")


class TraceFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class Gateway:
    id: Hashable
    position: tuple[float, float] = (0.0, 0.0)
    operator: Hashable = 0


@dataclass(frozen=True)
class EndDevice:
    id: Hashable
    mean_rssi: dict
    position: tuple[float, float] | None = None
    source_rate: float = DEFAULT_RATE
    operator: Hashable = 0

    def __post_init__(self):
        if self.source_rate <= 0:
            raise DomainError(f"device {self.id!r}: source rate must be positive")

    def closest_gateway(self):
        """Gateway with the strongest mean RSSI; ties go to the lowest id."""
        if not self.mean_rssi:
            raise DomainError(f"device {self.id!r} has no RSSI entries")
        return min(self.mean_rssi, key=lambda g: (-self.mean_rssi[g], g))

    def best_rssi(self) -> float:
        return self.mean_rssi[self.closest_gateway()]


@dataclass(frozen=True)
class Topology:
    devices: tuple[EndDevice, ...]
    gateways: tuple[Gateway, ...]
    cell_radius: float | None = None
    rings: tuple[float, ...] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "gateways", tuple(self.gateways))
        ids = [g.id for g in self.gateways]
        if len(set(ids)) != len(ids):
            raise DomainError("gateway ids must be unique")
        dev_ids = [d.id for d in self.devices]
        if len(set(dev_ids)) != len(dev_ids):
            raise DomainError("device ids must be unique")
        if self.rings is not None:
            r = tuple(float(x) for x in self.rings)
            if any(b <= a for a, b in zip(r, r[1:])):
                raise DomainError("ring boundaries must be strictly increasing")
            if self.cell_radius is not None and not math.isclose(r[-1], self.cell_radius):
                raise DomainError("last ring boundary must equal the cell radius")
            object.__setattr__(self, "rings", r)

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @cached_property
    def gateway_index(self) -> dict:
        return {g.id: i for i, g in enumerate(self.gateways)}

    @cached_property
    def device_index(self) -> dict:
        return {d.id: i for i, d in enumerate(self.devices)}

    def rssi_matrix(self) -> np.ndarray:
        """Mean RSSI, devices x gateways; -inf where a pair has no entry."""
        out = np.full((len(self.devices), len(self.gateways)), -np.inf)
        gi = self.gateway_index
        for i, d in enumerate(self.devices):
            for g, v in d.mean_rssi.items():
                out[i, gi[g]] = v
        return out

    def device(self, ed_id) -> EndDevice:
        return self.devices[self.device_index[ed_id]]

    def with_devices(self, devices: Iterable[EndDevice]) -> "Topology":
        return Topology(tuple(devices), self.gateways, self.cell_radius, self.rings, dict(self.meta))

    def ring_of(self, ed: EndDevice) -> int | None:
        """Index of the ring holding ``ed`` (distance to its closest gateway)."""
        if self.rings is None or ed.position is None:
            return None
        gw = self.gateways[self.gateway_index[ed.closest_gateway()]]
        d = math.dist(ed.position, gw.position)
        for k, edge in enumerate(self.rings):
            if d <= edge:
                return k
        return len(self.rings) - 1


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def build_topology(
    positions: np.ndarray,
    gateways: Sequence[Gateway],
    pathloss: PathLossModel = PathLossModel(),
    tx_power_dbm: float = 14.0,
    source_rate: float = DEFAULT_RATE,
    cell_radius: float | None = None,
    rings: Sequence[float] | None = None,
    operators: Sequence | None = None,
) -> Topology:
    """Devices at ``positions`` with mean (unshadowed) RSSI to every gateway."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    gpos = np.array([g.position for g in gateways], dtype=float).reshape(-1, 2)
    dist = np.hypot(pos[:, None, 0] - gpos[None, :, 0], pos[:, None, 1] - gpos[None, :, 1])
    # keep log-distance finite for a device sitting on a gateway
    power = np.atleast_2d(rssi(tx_power_dbm, np.maximum(dist, 1.0), pathloss))
    devices = []
    for i in range(len(pos)):
        mean = {g.id: float(power[i, j]) for j, g in enumerate(gateways)}
        op = operators[i] if operators is not None else 0
        devices.append(
            EndDevice(i, mean, (float(pos[i, 0]), float(pos[i, 1])), source_rate, op)
        )
    return Topology(tuple(devices), tuple(gateways), cell_radius, rings)


def _annulus_points(n: int, r0: float, R: float, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(n)
    theta = rng.random(n) * 2.0 * math.pi
    r = np.sqrt(u * (R * R - r0 * r0) + r0 * r0)
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def place_ring(n: int, r0: float, R: float, seed=None, rings=None, **kw) -> Topology:
    """``n`` devices uniform over the annulus [r0, R] around one gateway."""
    if n < 1:
        raise DomainError("need at least one device")
    if not 0 <= r0 < R:
        raise DomainError(f"ring requires 0 <= r0 < R, got r0={r0}, R={R}")
    pts = _annulus_points(n, r0, R, _rng(seed))
    return build_topology(pts, (Gateway(0),), cell_radius=R, rings=rings, **kw)


def place_uniform_disk(n: int, R: float, seed=None, rings=None, **kw) -> Topology:
    return place_ring(n, 0.0, R, seed, rings=rings, **kw)


def place_gateway_grid(m_side: int, spacing: float) -> tuple[Gateway, ...]:
    """Square grid of m_side x m_side gateways centred on the origin."""
    if m_side < 1:
        raise DomainError("grid side must be at least 1")
    off = (m_side - 1) / 2.0
    gws = []
    for row in range(m_side):
        for col in range(m_side):
            gws.append(Gateway(row * m_side + col, ((col - off) * spacing, (row - off) * spacing)))
    return tuple(gws)


def place_grid(n: int, m_side: int, spacing: float, seed=None, **kw) -> Topology:
    """Devices uniform over the square tiled by the gateway grid cells."""
    if n < 1:
        raise DomainError("need at least one device")
    gws = place_gateway_grid(m_side, spacing)
    half = m_side * spacing / 2.0
    pts = _rng(seed).uniform(-half, half, size=(n, 2))
    return build_topology(pts, gws, cell_radius=spacing / 2.0, **kw)


def three_operator_gateways(R: float) -> tuple[Gateway, ...]:
    """Equilateral triangle of side R centred on the origin, one operator each."""
    rc = R / math.sqrt(3.0)
    return tuple(
        Gateway(k, (rc * math.cos(math.pi / 2 + 2 * math.pi * k / 3),
                    rc * math.sin(math.pi / 2 + 2 * math.pi * k / 3)), operator=k)
        for k in range(3)
    )


def place_three_operator(n: int, R: float, seed=None, **kw) -> Topology:
    """Devices uniform over the union of three overlapping cells of radius R.

    Each device belongs to the operator of the gateway it hears best.
    """
    rng = _rng(seed)
    gws = three_operator_gateways(R)
    centers = np.array([g.position for g in gws])
    lo, hi = centers.min(axis=0) - R, centers.max(axis=0) + R
    pts = np.empty((0, 2))
    while len(pts) < n:
        cand = rng.uniform(lo, hi, size=(2 * n, 2))
        d = np.hypot(cand[:, None, 0] - centers[None, :, 0], cand[:, None, 1] - centers[None, :, 1])
        pts = np.vstack((pts, cand[(d <= R).any(axis=1)]))
    pts = pts[:n]
    topo = build_topology(pts, gws, cell_radius=R, **kw)
    devices = [
        EndDevice(d.id, d.mean_rssi, d.position, d.source_rate,
                  gws[topo.gateway_index[d.closest_gateway()]].operator)
        for d in topo.devices
    ]
    return topo.with_devices(devices)


def partition_by_closest_gw(t: Topology) -> dict:
    """Gateway id -> device ids that hear it best. Every gateway gets a key."""
    out = {g.id: [] for g in sorted(t.gateways, key=lambda g: g.id)}
    for d in t.devices:
        out[d.closest_gateway()].append(d.id)
    return out


def coverage_set(ed: EndDevice, thr: Thresholds) -> frozenset:
    floor = thr.sensitivity(max(thr.sensitivity_dbm))
    return frozenset(g for g, v in ed.mean_rssi.items() if v >= floor)


def _parse_trace(lines: Iterable[str], default_rate: float) -> Topology:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("empty trace file") from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)}", 1)
    rows: dict[str, dict[str, float]] = {}
    gateways: dict[str, None] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise TraceFormatError(f"expected 3 fields, got {len(row)}", line)
        dev, gw, val = (c.strip() for c in row)
        if not dev or not gw:
            raise TraceFormatError("empty device or gateway id", line)
        try:
            power = float(val)
        except ValueError:
            raise TraceFormatError(f"bad RSSI value {val!r}", line) from None
        if not math.isfinite(power):
            raise TraceFormatError(f"non-finite RSSI value {val!r}", line)
        per_dev = rows.setdefault(dev, {})
        if gw in per_dev:
            raise TraceFormatError(f"duplicate entry for device {dev!r} gateway {gw!r}", line)
        per_dev[gw] = power
        gateways.setdefault(gw)
    if not rows:
        raise TraceFormatError("trace contains no device rows")
    gws = tuple(Gateway(g) for g in sorted(gateways))
    devices = tuple(EndDevice(d, m, None, default_rate) for d, m in rows.items())
    return Topology(devices, gws)


def import_rssi_trace(path, default_rate: float = DEFAULT_RATE) -> Topology:
    """Load a per-device mean-RSSI trace (CSV) into a position-free topology."""
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_trace(fh, default_rate)


def export_rssi_trace(t: Topology, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for d in t.devices:
            for g, v in d.mean_rssi.items():
                w.writerow((d.id, g, repr(float(v))))


def topology_csv(t: Topology, plan=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOPOLOGY_HEADER)
    assignment = plan.assignment if plan is not None else {}
    for d in t.devices:
        x, y = d.position if d.position is not None else ("", "")
        w.writerow((d.id, x, y, d.closest_gateway(), assignment.get(d.id, "")))
    return buf.getvalue()


def export_topology(t: Topology, path, plan=None) -> None:
    Path(path).write_text(topology_csv(t, plan), encoding="utf-8")

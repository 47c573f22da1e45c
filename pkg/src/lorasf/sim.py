"""Discrete-event uplink simulator.

Unslotted ALOHA on a single channel. Each packet occupies the channel for
its SF's airtime; a packet is delivered when at least one gateway decodes
it. Decoding at a gateway requires the power to clear the SF sensitivity,
the SIR against the summed same-SF overlappers to clear the capture
margin (or no same-SF overlap at all when capture is off) and, with
inter-SF interference on, the SIR against the summed other-SF overlappers
to clear the rejection threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import kernel
from .allocators import SfPlan
from .phy import CANONICAL_TOA_S, DomainError, PathLossModel, Thresholds, draw_shadowing
from .topology import Topology

TRAFFIC_STREAM = 1
SHADOW_STREAM = 2


@dataclass(frozen=True)
class TransmissionEvent:
    ed_id: object
    sf: int
    start: float
    duration: float
    rx_power: Mapping

    def __post_init__(self):
        if self.start < 0 or self.duration <= 0:
            raise DomainError("event needs start >= 0 and positive duration")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def overlaps(self, other: "TransmissionEvent") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass
class EventStream:
    """Packets sorted by start time, in array form.

    ``ed`` indexes ``ed_ids``; ``power[ed, g]`` is the frozen received power
    at gateway ``gw_ids[g]``.
    """

    start: np.ndarray
    duration: np.ndarray
    sf: np.ndarray
    ed: np.ndarray
    power: np.ndarray
    ed_ids: tuple
    gw_ids: tuple

    def __len__(self):
        return len(self.start)

    @property
    def end(self) -> np.ndarray:
        return self.start + self.duration

    def __iter__(self) -> Iterator[TransmissionEvent]:
        for k in range(len(self)):
            i = self.ed[k]
            yield TransmissionEvent(
                self.ed_ids[i], int(self.sf[k]), float(self.start[k]), float(self.duration[k]),
                {g: float(self.power[i, j]) for j, g in enumerate(self.gw_ids)},
            )


@dataclass(frozen=True)
class SimOptions:
    capture: bool = True
    intersf: bool = False
    traffic: str = "poisson"
    toa: Mapping[int, float] = field(default_factory=lambda: dict(CANONICAL_TOA_S))
    pathloss: PathLossModel = PathLossModel()
    # decode only at gateways run by the device's own operator
    same_operator_only: bool = False

    def __post_init__(self):
        if self.traffic not in ("poisson", "periodic"):
            raise DomainError(f"unknown traffic mode {self.traffic!r}")


@dataclass
class SimReport:
    generated: dict
    delivered: dict
    der_global: float
    der_per_sf: dict
    der_per_ring: dict
    seed: int
    sim_duration: float
    generated_per_sf: dict = field(default_factory=dict)
    generated_per_ring: dict = field(default_factory=dict)
    der_per_operator: dict = field(default_factory=dict)
    unallocatable: tuple = ()
    ring_of: dict = field(default_factory=dict)

    def node_der(self) -> dict:
        return {ed: self.delivered[ed] / n for ed, n in self.generated.items() if n > 0}


def _shadowing(t: Topology, ids: list, pathloss: PathLossModel, seed: int) -> np.ndarray:
    out = np.zeros((len(ids), len(t.gateways)))
    if pathloss.sigma2 == 0:
        return out
    all_idx = np.array([t.device_index[i] for i in ids], dtype=np.int64)
    for g in range(len(t.gateways)):
        # one column per gateway so adding gateways leaves existing draws intact
        col = draw_shadowing(pathloss, np.random.default_rng([seed, SHADOW_STREAM, g]), t.n_devices)
        out[:, g] = col[all_idx]
    return out


def generate_traffic(
    t: Topology,
    plan: SfPlan,
    duration: float,
    mode: str = "poisson",
    seed: int = 0,
    toa: Mapping[int, float] = CANONICAL_TOA_S,
    pathloss: PathLossModel = PathLossModel(),
) -> EventStream:
    """Packet arrivals for every allocated device over [0, duration)."""
    if duration <= 0:
        raise DomainError("duration must be positive")
    ids = [d.id for d in t.devices if d.id in plan.assignment]
    rates = np.array([t.device(i).source_rate for i in ids], dtype=float)
    dev_sf = np.array([plan.assignment[i] for i in ids], dtype=np.int64)
    rng = np.random.default_rng([seed, TRAFFIC_STREAM])
    if mode == "poisson":
        counts = rng.poisson(rates * duration)
        ed = np.repeat(np.arange(len(ids), dtype=np.int64), counts)
        start = rng.uniform(0.0, duration, size=int(counts.sum()))
    elif mode == "periodic":
        period = 1.0 / rates
        phase = rng.uniform(0.0, period)
        counts = np.ceil((duration - phase) / period).astype(np.int64)
        counts = np.maximum(counts, 0)
        ed = np.repeat(np.arange(len(ids), dtype=np.int64), counts)
        first = np.concatenate(([0], np.cumsum(counts)[:-1]))
        k = np.arange(len(ed)) - np.repeat(first, counts)
        start = phase[ed] + k * period[ed]
    else:
        raise DomainError(f"unknown traffic mode {mode!r}")
    order = np.lexsort((ed, start))
    ed, start = ed[order], start[order]
    sf = dev_sf[ed]
    toa_arr = np.zeros(13)
    for s, v in toa.items():
        toa_arr[s] = v
    rssi = t.rssi_matrix()[[t.device_index[i] for i in ids]] if ids else np.zeros((0, len(t.gateways)))
    power = rssi - _shadowing(t, ids, pathloss, seed)
    return EventStream(
        np.ascontiguousarray(start), toa_arr[sf], sf, ed, np.ascontiguousarray(power),
        tuple(ids), tuple(g.id for g in t.gateways),
    )


def resolve_reception(
    e: TransmissionEvent,
    overlapping: Iterable[TransmissionEvent],
    gw,
    thr: Thresholds,
    capture: bool = True,
    intersf: bool = False,
) -> bool:
    """Decode decision for one packet at one gateway (reference version)."""
    p = e.rx_power.get(gw, -math.inf)
    if p < thr.sensitivity(e.sf):
        return False
    same = cross = 0.0
    n_same = 0
    for o in overlapping:
        if o is e or not o.overlaps(e):
            continue
        lin = 10.0 ** (o.rx_power.get(gw, -math.inf) / 10.0)
        if o.sf == e.sf:
            n_same += 1
            same += lin
        else:
            cross += lin
    p_lin = 10.0 ** (p / 10.0)
    if n_same:
        if not capture or not p_lin >= same * 10.0 ** (thr.capture_sir_db / 10.0):
            return False
    if intersf and cross > 0 and not p_lin >= cross * 10.0 ** (thr.intersf_rejection_db / 10.0):
        return False
    return True


def delivered_events(stream: EventStream, t: Topology, thr: Thresholds, options: SimOptions,
                     resolver=None) -> np.ndarray:
    resolver = resolver or kernel.resolve_events
    n_gw = len(stream.gw_ids)
    sens = np.full(13, np.inf)
    for sf, v in thr.sensitivity_dbm.items():
        sens[sf] = v + thr.margin_db
    allowed = np.ones((len(stream.ed_ids), n_gw), dtype=np.uint8)
    if options.same_operator_only:
        ops = [t.device(i).operator for i in stream.ed_ids]
        gops = [g.operator for g in t.gateways]
        allowed = np.array([[o == go for go in gops] for o in ops], dtype=np.uint8).reshape(-1, n_gw)
    if len(stream) == 0:
        return np.zeros(0, dtype=bool)
    return np.asarray(resolver(
        stream.start, np.ascontiguousarray(stream.end), stream.sf, stream.ed, stream.power,
        sens, np.ascontiguousarray(allowed),
        thr.capture_sir_db if options.capture else math.inf,
        thr.intersf_rejection_db if options.intersf else -math.inf,
        float(stream.duration.max()),
    ), dtype=bool)


def run(
    t: Topology,
    plan: SfPlan,
    duration: float,
    thr: Thresholds,
    options: SimOptions = SimOptions(),
    seed: int = 0,
    resolver=None,
) -> SimReport:
    stream = generate_traffic(t, plan, duration, options.traffic, seed, options.toa, options.pathloss)
    if len(stream) == 0:
        raise DomainError("no packets generated; increase duration or node count")
    ok = delivered_events(stream, t, thr, options, resolver)
    return build_report(t, plan, stream, ok, seed, duration)


def build_report(t: Topology, plan: SfPlan, stream: EventStream, ok: np.ndarray, seed, duration):
    n_ed = len(stream.ed_ids)
    gen = np.bincount(stream.ed, minlength=n_ed)
    dlv = np.bincount(stream.ed, weights=ok, minlength=n_ed).astype(np.int64)
    generated = {i: int(gen[k]) for k, i in enumerate(stream.ed_ids)}
    delivered = {i: int(dlv[k]) for k, i in enumerate(stream.ed_ids)}

    def group(keys):
        g_gen: dict = {}
        g_dlv: dict = {}
        for k, key in enumerate(keys):
            if key is None:
                continue
            g_gen[key] = g_gen.get(key, 0) + int(gen[k])
            g_dlv[key] = g_dlv.get(key, 0) + int(dlv[k])
        ders = {k: g_dlv[k] / g_gen[k] for k in sorted(g_gen) if g_gen[k] > 0}
        return ders, dict(sorted(g_gen.items()))

    sfs = [plan.assignment[i] for i in stream.ed_ids]
    rings = [t.ring_of(t.device(i)) for i in stream.ed_ids]
    ops = [t.device(i).operator for i in stream.ed_ids]
    der_sf, gen_sf = group(sfs)
    der_ring, gen_ring = group(rings)
    der_op, _ = group(ops)
    return SimReport(
        generated=generated,
        delivered=delivered,
        der_global=float(dlv.sum() / gen.sum()),
        der_per_sf=der_sf,
        der_per_ring=der_ring,
        seed=seed,
        sim_duration=float(duration),
        generated_per_sf=gen_sf,
        generated_per_ring=gen_ring,
        der_per_operator=der_op,
        unallocatable=tuple(plan.unallocatable),
        ring_of={i: r for i, r in zip(stream.ed_ids, rings)},
    )


def der_histogram(r: SimReport, bins=10, by_ring: bool = False) -> dict:
    """Node counts per DER bin; keyed by ring index when ``by_ring``."""
    node = r.node_der()
    if not node:
        raise DomainError("report has no nodes with generated packets")
    edges = np.linspace(0.0, 1.0, bins + 1) if np.isscalar(bins) else np.asarray(bins, float)
    if not by_ring:
        counts, _ = np.histogram(list(node.values()), bins=edges)
        return {"all": counts.tolist(), "edges": edges.tolist()}
    out: dict = {"edges": edges.tolist()}
    groups: dict = {}
    for ed, v in node.items():
        groups.setdefault(r.ring_of.get(ed), []).append(v)
    for ring in sorted(groups, key=lambda x: (x is None, x)):
        out[ring] = np.histogram(groups[ring], bins=edges)[0].tolist()
    return out

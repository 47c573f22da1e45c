"""Topology -> allocator -> simulator pipeline for one config point and seed."""

from __future__ import annotations

import numpy as np

from . import allocators as al
from .config import AllocatorSpec, ConfigError, ScenarioConfig
from .phy import SPREADING_FACTORS, toa_table
from .sim import SimOptions, SimReport, run
from .topology import (
    EndDevice,
    Topology,
    import_rssi_trace,
    place_grid,
    place_ring,
    place_three_operator,
)

TOPOLOGY_STREAM = 0
ALLOCATOR_STREAM = 3


def build_topology(cfg: ScenarioConfig, seed: int) -> Topology:
    pl = cfg.placement
    kw = dict(pathloss=cfg.pathloss, tx_power_dbm=cfg.radio.tx_power_dbm,
              source_rate=cfg.traffic.source_rate)
    rng = np.random.default_rng([seed, TOPOLOGY_STREAM])
    if pl.kind in ("disk", "ring"):
        return place_ring(pl.n_nodes, pl.r0, pl.cell_radius, rng, rings=pl.rings, **kw)
    if pl.kind == "grid":
        return place_grid(pl.n_nodes, pl.m_side, pl.spacing, rng, **kw)
    if pl.kind == "three_operator":
        return place_three_operator(pl.n_nodes, pl.cell_radius, rng, **kw)
    if pl.kind == "trace":
        t = import_rssi_trace(pl.path, cfg.traffic.source_rate)
        return t.with_devices(
            EndDevice(d.id, d.mean_rssi, d.position, cfg.traffic.source_rate, d.operator)
            for d in t.devices
        )
    raise ConfigError("placement.kind", f"unknown placement {pl.kind!r}")


def _proportions(spec: AllocatorSpec, cfg: ScenarioConfig):
    p = spec.params.get("proportions", "orth")
    toa = toa_table(cfg.radio)
    if p == "orth":
        return None
    if p == "uniform":
        return {sf: 1.0 / len(SPREADING_FACTORS) for sf in SPREADING_FACTORS}
    if p == "computed":
        from .analytic import optimal_allocation_orthogonal, proportions
        return proportions(optimal_allocation_orthogonal(1.0, toa))
    if isinstance(p, dict):
        return {int(k): float(v) for k, v in p.items()}
    raise ConfigError(f"allocators.{spec.name}.params.proportions", f"unknown value {p!r}")


def allocate(cfg: ScenarioConfig, t: Topology, spec: AllocatorSpec, seed: int) -> al.SfPlan:
    """Plan for the whole topology.

    In three-operator scenarios the allocator only drives operator 0; the
    other operators run ``params.interferer_allocator`` (legacy ADR default).
    """
    thr = cfg.thresholds
    aseed = [seed, ALLOCATOR_STREAM]
    toa = toa_table(cfg.radio)
    p = _proportions(spec, cfg)
    multi_op = cfg.placement.kind == "three_operator"
    own = [d.id for d in t.devices if not multi_op or d.operator == 0]
    own_t = t.with_devices(d for d in t.devices if d.id in set(own))
    foreign_t = t.with_devices(d for d in t.devices if d.id not in set(own))

    name = spec.name
    if name == "adr":
        plan = al.adr_legacy(own_t, thr)
    elif name == "fixed":
        plan = al.fixed_sf(own_t, thr, int(spec.params.get("sf", 7)))
    elif name == "explora_sf":
        plan = al.explora_sf(own_t, thr, aseed)
    elif name == "explora_at":
        plan = al.explora_at(own_t, thr, p)
    elif name == "rand_at":
        plan = al.rand_at(own_t, thr, p, aseed)
    elif name == "explora_c":
        plan = al.explora_c(own_t, thr, p, aseed)
    elif name == "explora_intersf":
        beta = spec.params.get("beta")
        if beta is None:
            from .phy import sir_coefficient
            beta = sir_coefficient(spec.params.get("rejection_db", thr.intersf_rejection_db),
                                   cfg.pathloss.eta)
        plan = al.explora_intersf(own_t, thr, float(beta), aseed, toa)
    elif name == "explora_c_plus":
        foreign = _foreign_plan(cfg, foreign_t, spec) if foreign_t.devices else al.SfPlan()
        ctx = al.operator_context(t, own, foreign, thr, cfg.traffic.source_rate, toa)
        plan = al.explora_c_plus(t, thr, ctx, aseed, p, toa)
    else:
        raise ConfigError("allocators", f"unknown allocator {name!r}")

    if foreign_t.devices:
        plan = al.merge_plans(plan, _foreign_plan(cfg, foreign_t, spec))
    return plan


def _foreign_plan(cfg, foreign_t, spec) -> al.SfPlan:
    other = spec.params.get("interferer_allocator", "adr")
    if other == "adr":
        return al.adr_legacy(foreign_t, cfg.thresholds)
    if other == "explora_at":
        return al.explora_at(foreign_t, cfg.thresholds)
    raise ConfigError(f"allocators.{spec.name}.params.interferer_allocator",
                      f"unsupported interferer allocator {other!r}")


def sim_options(cfg: ScenarioConfig) -> SimOptions:
    return SimOptions(
        capture=cfg.reception.capture,
        intersf=cfg.reception.intersf,
        traffic=cfg.traffic.mode,
        toa=toa_table(cfg.radio),
        pathloss=cfg.pathloss,
        same_operator_only=cfg.reception.same_operator_only,
    )


def run_point(cfg: ScenarioConfig, seed: int) -> list[tuple[AllocatorSpec, SimReport, Topology]]:
    """Every configured allocator on one shared topology for ``seed``."""
    t = build_topology(cfg, seed)
    out = []
    for spec in cfg.allocators:
        plan = allocate(cfg, t, spec, seed)
        report = run(t, plan, cfg.duration, cfg.thresholds, sim_options(cfg), seed)
        out.append((spec, report, t))
    return out


def with_sweep_value(cfg: ScenarioConfig, variable: str, value) -> ScenarioConfig:
    if variable == "none":
        return cfg
    return cfg.at(variable, value)


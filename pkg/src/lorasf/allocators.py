"""Spreading-factor allocators.

All allocators take a :class:`Topology` and :class:`Thresholds` and return an
:class:`SfPlan`. Devices that cannot reach their best gateway even at the
most robust SF are listed in ``SfPlan.unallocatable`` and left out.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping

import numpy as np

from .analytic import InterSfParams, largest_remainder, optimal_allocation_intersf, proportions
from .phy import (
    CANONICAL_TOA_S,
    SPREADING_FACTORS,
    TABLE_ORTH_PERCENT,
    DomainError,
    Thresholds,
    feasible_sfs,
    min_feasible_sf,
)
from .topology import EndDevice, Topology, coverage_set, partition_by_closest_gw

TABLE_ORTH_P = proportions(TABLE_ORTH_PERCENT)
PLAN_HEADER = ("device_id", "sf", "phase")


@dataclass
class SfPlan:
    assignment: dict = field(default_factory=dict)
    phase: dict = field(default_factory=dict)
    unallocatable: tuple = ()
    proportions: dict | None = None
    budgets: dict | None = None

    @property
    def counts(self) -> dict[int, int]:
        out = {sf: 0 for sf in SPREADING_FACTORS}
        for sf in self.assignment.values():
            out[sf] += 1
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PLAN_HEADER)
        for ed, sf in self.assignment.items():
            w.writerow((ed, sf, self.phase.get(ed, "fixed")))
        return buf.getvalue()


@dataclass(frozen=True)
class OperatorContext:
    """Airtime that foreign devices already put on each (gateway, SF)."""

    own_devices: frozenset
    g_int: Mapping[tuple, float]
    n_int: Mapping[Hashable, float]
    source_rate: float

    def __post_init__(self):
        if any(v < 0 for v in self.g_int.values()):
            raise DomainError("interfering load must be non-negative")


def _normalize_p(p_sf: Mapping[int, float] | None) -> dict[int, float]:
    p = dict(TABLE_ORTH_P if p_sf is None else p_sf)
    total = sum(p.values())
    if total <= 0 or any(v < 0 for v in p.values()):
        raise DomainError("SF proportions must be non-negative with positive sum")
    if abs(total - 1.0) > 1e-3:
        raise DomainError(f"SF proportions must sum to 1, got {total:.6f}")
    return {sf: p.get(sf, 0.0) / total for sf in SPREADING_FACTORS}


def _split(t: Topology, thr: Thresholds) -> tuple[list[EndDevice], tuple]:
    ok, bad = [], []
    for d in t.devices:
        (ok if min_feasible_sf(d.best_rssi(), thr) is not None else bad).append(d)
    return ok, tuple(d.id for d in bad)


def _by_rssi(devices) -> list[EndDevice]:
    return sorted(devices, key=lambda d: (-d.best_rssi(), d.id))


def _bump(sf: int, ed: EndDevice, thr: Thresholds) -> int:
    return max(sf, min_feasible_sf(ed.best_rssi(), thr))


def adr_legacy(t: Topology, thr: Thresholds) -> SfPlan:
    """Fastest feasible SF at each device's best gateway."""
    ok, bad = _split(t, thr)
    plan = SfPlan(unallocatable=bad)
    for d in ok:
        plan.assignment[d.id] = min_feasible_sf(d.best_rssi(), thr)
        plan.phase[d.id] = "adr"
    return plan


def fixed_sf(t: Topology, thr: Thresholds, sf: int = 7) -> SfPlan:
    """Every device on ``sf``, raised to its minimum feasible SF when needed."""
    if sf not in SPREADING_FACTORS:
        raise DomainError(f"SF must be in 7..12, got {sf}")
    ok, bad = _split(t, thr)
    plan = SfPlan(unallocatable=bad)
    for d in ok:
        plan.assignment[d.id] = _bump(sf, d, thr)
        plan.phase[d.id] = "fixed"
    return plan


def _blocks(devices: list[EndDevice], counts: Mapping[int, int], thr: Thresholds, plan: SfPlan):
    labels = [sf for sf in SPREADING_FACTORS for _ in range(counts.get(sf, 0))]
    for d, sf in zip(devices, labels):
        plan.assignment[d.id] = _bump(sf, d, thr)
        plan.phase[d.id] = "fixed"


def explora_sf(t: Topology, thr: Thresholds, seed=None) -> SfPlan:
    """Equal head-count per SF in contiguous RSSI blocks."""
    ok, bad = _split(t, thr)
    n, k = len(ok), len(SPREADING_FACTORS)
    counts = {sf: n // k + (1 if i < n % k else 0) for i, sf in enumerate(SPREADING_FACTORS)}
    plan = SfPlan(unallocatable=bad, proportions={sf: 1.0 / k for sf in SPREADING_FACTORS})
    _blocks(_by_rssi(ok), counts, thr, plan)
    return plan


def explora_at(t: Topology, thr: Thresholds, p_sf=None) -> SfPlan:
    """Airtime-balanced head-counts in contiguous RSSI rings (fastest SF nearest)."""
    p = _normalize_p(p_sf)
    ok, bad = _split(t, thr)
    counts = largest_remainder({sf: p[sf] * len(ok) for sf in p}, len(ok))
    plan = SfPlan(unallocatable=bad, proportions=p)
    _blocks(_by_rssi(ok), counts, thr, plan)
    return plan


def rand_at(t: Topology, thr: Thresholds, p_sf=None, seed=None) -> SfPlan:
    """Same head-counts as :func:`explora_at`, membership drawn at random."""
    p = _normalize_p(p_sf)
    ok, bad = _split(t, thr)
    counts = largest_remainder({sf: p[sf] * len(ok) for sf in p}, len(ok))
    labels = np.array([sf for sf in SPREADING_FACTORS for _ in range(counts[sf])], dtype=int)
    labels = np.random.default_rng(seed).permutation(labels)
    plan = SfPlan(unallocatable=bad, proportions=p)
    for d, sf in zip(_by_rssi(ok), labels):
        plan.assignment[d.id] = _bump(int(sf), d, thr)
        plan.phase[d.id] = "fixed"
    return plan


def _sequential_fill(
    devices: list[EndDevice],
    budgets: Mapping[int, float],
    thr: Thresholds,
    multi_gw: bool,
    rng: np.random.Generator,
    fallback_p: Mapping[int, float],
    plan: SfPlan,
) -> None:
    """Three-phase capture-aware waterfilling over one gateway's devices."""
    order = _by_rssi(devices)
    if not order:
        return
    sfs = list(SPREADING_FACTORS)
    num = {sf: 0 for sf in sfs}
    cur = 0

    def skip_empty():
        nonlocal cur
        while cur < len(sfs) and budgets[sfs[cur]] <= 0:
            cur += 1

    def give(d: EndDevice, phase: int):
        nonlocal cur
        sf = sfs[cur]
        plan.assignment[d.id] = sf
        plan.phase[d.id] = phase
        num[sf] += 1
        if num[sf] > budgets[sf]:
            cur += 1
            skip_empty()

    def can_take(d: EndDevice) -> bool:
        return cur < len(sfs) and d.best_rssi() >= thr.sensitivity(sfs[cur]) + thr.margin_db

    skip_empty()
    rssi = [d.best_rssi() for d in order]
    if can_take(order[0]):
        give(order[0], 1)
    for i in range(1, len(order)):
        if rssi[i - 1] - rssi[i] > thr.capture_sir_db and can_take(order[i]):
            give(order[i], 1)

    if multi_gw:
        cov = [coverage_set(d, thr) for d in order]
        for i in range(1, len(order)):
            d = order[i]
            if d.id not in plan.assignment and cov[i - 1] != cov[i] and can_take(d):
                give(d, 2)

    rest = [d for d in order if d.id not in plan.assignment]
    if not rest:
        return
    targets = largest_remainder(budgets, int(round(sum(budgets.values()))))
    quota = {sf: max(0, targets[sf] - num[sf]) for sf in sfs}
    if sum(quota.values()) == 0:
        quota = largest_remainder({sf: fallback_p[sf] * len(rest) for sf in sfs}, len(rest))
    elif sum(quota.values()) != len(rest):
        total = sum(quota.values())
        quota = largest_remainder({sf: q * len(rest) / total for sf, q in quota.items()}, len(rest))
    # most constrained devices draw first so they find a feasible slot
    for d in reversed(rest):
        feas = feasible_sfs(d.best_rssi(), thr)
        weights = np.array([quota[sf] for sf in feas], dtype=float)
        if weights.sum() > 0:
            sf = feas[int(rng.choice(len(feas), p=weights / weights.sum()))]
            quota[sf] -= 1
        else:
            sf = feas[0]
        plan.assignment[d.id] = sf
        plan.phase[d.id] = 3


def _run_sets(t, thr, devices, budget_fn, rng, p) -> SfPlan:
    plan = SfPlan(proportions=p)
    by_id = {d.id: d for d in devices}
    multi = len(t.gateways) > 1
    real_budgets = {}
    for gw, ids in partition_by_closest_gw(t).items():
        members = [by_id[i] for i in ids if i in by_id]
        if not members:
            continue
        b = budget_fn(gw, len(members))
        real_budgets[gw] = b
        _sequential_fill(members, b, thr, multi, rng, p, plan)
    plan.budgets = real_budgets
    # restore topology order for stable output
    plan.assignment = {d.id: plan.assignment[d.id] for d in devices}
    plan.phase = {d.id: plan.phase[d.id] for d in devices}
    return plan


def explora_c(t: Topology, thr: Thresholds, p_sf=None, seed=None, devices=None) -> SfPlan:
    """Capture-aware sequential waterfilling, run per closest-gateway set.

    ``devices`` restricts allocation to a subset (e.g. one operator's devices).
    """
    p = _normalize_p(p_sf)
    ok, bad = _split(t, thr)
    if devices is not None:
        keep = set(devices)
        ok = [d for d in ok if d.id in keep]
        bad = tuple(i for i in bad if i in keep)
    rng = np.random.default_rng(seed)
    plan = _run_sets(t, thr, ok, lambda gw, n_m: {sf: p[sf] * n_m for sf in p}, rng, p)
    plan.unallocatable = bad
    return plan


def intersf_proportions(beta: float, toa: Mapping[int, float] = CANONICAL_TOA_S) -> dict[int, float]:
    alloc = optimal_allocation_intersf(1.0, {sf: toa[sf] for sf in SPREADING_FACTORS}, InterSfParams(beta))
    return proportions(alloc)


def explora_intersf(t: Topology, thr: Thresholds, beta: float, seed=None, toa=CANONICAL_TOA_S) -> SfPlan:
    if not 0 < beta < 1:
        raise DomainError("beta must lie in (0, 1)")
    return explora_c(t, thr, intersf_proportions(beta, toa), seed)


def explora_c_plus_budgets(
    n_m: float, n_int: float, g_int: Mapping[int, float], p_sf, s: float, toa=CANONICAL_TOA_S
) -> dict[int, float]:
    """Per-SF allocation budget at one gateway after discounting foreign airtime."""
    p = _normalize_p(p_sf)
    return {
        sf: max(0.0, p[sf] * (n_m + n_int) - g_int.get(sf, 0.0) / (s * toa[sf]))
        for sf in SPREADING_FACTORS
    }


def explora_c_plus(
    t: Topology, thr: Thresholds, ctx: OperatorContext, seed=None, p_sf=None, toa=CANONICAL_TOA_S
) -> SfPlan:
    """EXPLoRa-C with per-gateway budgets reduced by other operators' load.

    ``plan.budgets`` keeps the real-valued budgets per gateway; see
    :func:`rounded_budgets` for the integer view.
    """
    p = _normalize_p(p_sf)
    ok, bad = _split(t, thr)
    ok = [d for d in ok if d.id in ctx.own_devices]
    bad = tuple(i for i in bad if i in ctx.own_devices)

    def budget(gw, n_m):
        g = {sf: ctx.g_int.get((gw, sf), 0.0) for sf in SPREADING_FACTORS}
        return explora_c_plus_budgets(n_m, ctx.n_int.get(gw, 0.0), g, p, ctx.source_rate, toa)

    plan = _run_sets(t, thr, ok, budget, np.random.default_rng(seed), p)
    plan.unallocatable = bad
    return plan


def rounded_budgets(plan: SfPlan) -> dict:
    return {
        gw: largest_remainder(b, int(round(sum(b.values()))))
        for gw, b in (plan.budgets or {}).items()
    }


def operator_context(
    t: Topology, own_devices, foreign_plan: SfPlan, thr: Thresholds,
    source_rate: float, toa=CANONICAL_TOA_S,
) -> OperatorContext:
    """Foreign airtime per (gateway, SF), counting devices a gateway can decode."""
    own = frozenset(own_devices)
    g_int: dict[tuple, float] = {}
    for d in t.devices:
        sf = foreign_plan.assignment.get(d.id)
        if d.id in own or sf is None:
            continue
        for gw, power in d.mean_rssi.items():
            if power >= thr.sensitivity(sf):
                key = (gw, sf)
                g_int[key] = g_int.get(key, 0.0) + d.source_rate * toa[sf]
    n_int: dict = {}
    for (gw, sf), g in g_int.items():
        n_int[gw] = n_int.get(gw, 0.0) + g / (source_rate * toa[sf])
    return OperatorContext(own, g_int, n_int, source_rate)


def merge_plans(*plans: SfPlan) -> SfPlan:
    out = SfPlan()
    bad = []
    for p in plans:
        out.assignment.update(p.assignment)
        out.phase.update(p.phase)
        bad.extend(p.unallocatable)
    out.unallocatable = tuple(i for i in dict.fromkeys(bad) if i not in out.assignment)
    return out


ALLOCATORS: dict[str, Callable] = {
    "adr": adr_legacy,
    "fixed": fixed_sf,
    "explora_sf": explora_sf,
    "explora_at": explora_at,
    "rand_at": rand_at,
    "explora_c": explora_c,
    "explora_intersf": explora_intersf,
    "explora_c_plus": explora_c_plus,
}

"""Closed-form capacity models of a LoRa cell.

Every SF is treated as an unslotted ALOHA channel with normalized load
``G = n * s * ToA``. Inter-SF leakage and the capture effect are folded in
as reductions of the load a tagged device actually competes with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .phy import DomainError, sir_coefficient


@dataclass(frozen=True)
class LoadProfile:
    n: Mapping[int, float]
    s: float
    toa: Mapping[int, float]

    def __post_init__(self):
        if self.s <= 0:
            raise DomainError("source rate must be positive")
        for sf, cnt in self.n.items():
            if cnt < 0:
                raise DomainError(f"negative node count on SF{sf}")
            if self.toa[sf] <= 0:
                raise DomainError(f"non-positive ToA on SF{sf}")

    @property
    def total(self) -> float:
        return float(sum(self.n.values()))

    def load(self, sf: int) -> float:
        return self.n.get(sf, 0.0) * self.s * self.toa[sf]


@dataclass(frozen=True)
class InterSfParams:
    beta: float
    eta: float = 2.9

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise DomainError("beta must lie in [0, 1)")

    @classmethod
    def from_rejection(cls, rejection_db: float, eta: float = 2.9) -> "InterSfParams":
        return cls(sir_coefficient(rejection_db, eta), eta)


@dataclass(frozen=True)
class CaptureParams:
    alpha: float
    cell_radius: float = 12_000.0

    def __post_init__(self):
        if not self.alpha > 1 or self.cell_radius <= 0:
            raise DomainError("capture requires alpha > 1 and a positive radius")

    @classmethod
    def from_sir(cls, sir_db: float, eta: float = 2.9, cell_radius: float = 12_000.0):
        return cls(sir_coefficient(sir_db, eta), cell_radius)


def aloha_der(G: float) -> float:
    if G < 0:
        raise DomainError("load must be non-negative")
    return math.exp(-2.0 * G)


def expected_der_orthogonal(lp: LoadProfile) -> float:
    N = lp.total
    if N <= 0:
        raise DomainError("empty load profile")
    return sum(n * aloha_der(lp.load(sf)) for sf, n in lp.n.items()) / N


def optimal_allocation_orthogonal(N: float, toa: Mapping[int, float]) -> dict[int, float]:
    """Node counts that equalize the aggregate airtime on every SF."""
    if N <= 0:
        raise DomainError("N must be positive")
    top = max(toa)
    weights = {sf: toa[top] / t for sf, t in toa.items()}
    total_w = sum(weights.values())
    return {sf: N * w / total_w for sf, w in weights.items()}


def _is_stable(alloc: Mapping[int, float], s: float, toa: Mapping[int, float]) -> bool:
    return all(1.0 - 2.0 * n * s * toa[sf] > 0 for sf, n in alloc.items())


def optimal_allocation_highload(N: float, s: float, toa: Mapping[int, float]) -> dict[int, float]:
    """High-load optimum: every SF but the slowest is held at G = 0.5.

    Falls back to the airtime-equalizing allocation when that one is stable
    or when N is too small to saturate the faster SFs.
    """
    balanced = optimal_allocation_orthogonal(N, toa)
    if _is_stable(balanced, s, toa):
        return balanced
    top = max(toa)
    alloc = {sf: 0.5 / (s * t) for sf, t in toa.items() if sf != top}
    rest = N - sum(alloc.values())
    if rest < 0:
        return balanced
    alloc[top] = rest
    return dict(sorted(alloc.items()))


def _cross_load(sf: int, lp: LoadProfile) -> float:
    """sum over k != sf of n_k * s * (ToA_k + ToA_sf)."""
    return sum(
        n * lp.s * (lp.toa[k] + lp.toa[sf]) for k, n in lp.n.items() if k != sf
    )


def competing_load(sf: int, lp: LoadProfile, p: InterSfParams) -> float:
    return lp.load(sf) + p.beta**2 / 4.0 * _cross_load(sf, lp)


def der_intersf(sf: int, lp: LoadProfile, p: InterSfParams) -> float:
    """Success probability on ``sf`` averaged over a uniform disk of targets."""
    base = aloha_der(lp.load(sf))
    x = p.beta**2 * _cross_load(sf, lp)
    if x <= 0:
        return base
    # -expm1(-x)/x keeps precision as x -> 0
    return base * (-math.expm1(-x) / x)


def der_intersf_stable(sf: int, lp: LoadProfile, p: InterSfParams) -> float:
    """Stable-regime approximation exp(-2G) * exp(-X/2)."""
    x = p.beta**2 * _cross_load(sf, lp)
    return aloha_der(lp.load(sf)) * math.exp(-x / 2.0)


def expected_der_intersf(lp: LoadProfile, p: InterSfParams) -> float:
    N = lp.total
    if N <= 0:
        raise DomainError("empty load profile")
    return sum(n * math.exp(-2.0 * competing_load(sf, lp, p)) for sf, n in lp.n.items()) / N


def _solve_equal_load(sfs: list[int], toa: Mapping[int, float], beta: float) -> np.ndarray:
    t = np.array([toa[sf] for sf in sfs], dtype=float)
    q = beta**2 / 4.0
    A = q * (t[:, None] + t[None, :])
    np.fill_diagonal(A, t)
    try:
        x = np.linalg.solve(A, np.ones(len(sfs)))
    except np.linalg.LinAlgError:
        x = None
    if x is None or not np.all(np.isfinite(x)) or abs(x.sum()) < 1e-300:
        raise DomainError(
            f"singular equal-load system for beta={beta!r}, ToA={dict(zip(sfs, t))}"
        )
    return x / x.sum()


def optimal_allocation_intersf(
    N: float, toa: Mapping[int, float], p: InterSfParams
) -> dict[int, float]:
    """Allocation making the competing load equal on every used SF.

    The source rate cancels out of the equal-load condition. SFs that come
    out negative are dropped and the system is solved again on the rest.
    """
    if N <= 0:
        raise DomainError("N must be positive")
    active = sorted(toa)
    while True:
        frac = _solve_equal_load(active, toa, p.beta)
        if np.all(frac >= 0):
            break
        active = [sf for sf, f in zip(active, frac) if f > 0]
        if not active:
            raise DomainError(f"no SF survives clamping for beta={p.beta!r}")
    out = {sf: 0.0 for sf in toa}
    out.update({sf: float(N * f) for sf, f in zip(active, frac)})
    return out


def optimal_allocation_intersf_closed_form(
    N: float, toa: Mapping[int, float], p: InterSfParams
) -> dict[int, float]:
    """Closed form of the equal-load solution, kept as a cross-check."""
    top = max(toa)
    q = p.beta**2 / 4.0
    denom = sum(toa[top] / t for t in toa.values()) * (1.0 - 2.0 * q)
    out = {}
    for sf, t_sf in toa.items():
        spread = sum(t_sf / t_k - 1.0 for t_k in toa.values()) + 2.0
        out[sf] = toa[top] / t_sf * (N - q * N * spread) / denom
    return out


def capture_throughput(G: float, cp: CaptureParams) -> float:
    """Throughput of one SF with capture, nodes uniform over the cell."""
    if G < 0:
        raise DomainError("load must be non-negative")
    a2 = cp.alpha**2
    return -math.expm1(-2.0 * G) / (2.0 * a2) + G * (1.0 - 1.0 / a2) * math.exp(-2.0 * G)


def capture_der(G: float, cp: CaptureParams) -> float:
    if G == 0:
        return 1.0
    return capture_throughput(G, cp) / G


def multi_gw_capacity(M: int, lp: LoadProfile, cp: CaptureParams) -> float:
    """M cells each carrying a 1/M share of the load, with capture."""
    if M < 1:
        raise DomainError("need at least one gateway")
    return M * sum(capture_throughput(lp.load(sf) / M, cp) for sf in lp.n)


def expected_der_capture(lp: LoadProfile, cp: CaptureParams, M: int = 1) -> float:
    """Packet-weighted DER under the capture model (multi-cell approximation for M > 1)."""
    N = lp.total
    if N <= 0:
        raise DomainError("empty load profile")
    num = sum(n * capture_der(lp.load(sf) / M, cp) for sf, n in lp.n.items())
    return num / N


def largest_remainder(values: Mapping[int, float], total: int | None = None) -> dict[int, int]:
    """Round non-negative reals to integers summing to ``total``.

    Ties in the remainders go to the smaller key.
    """
    if total is None:
        total = int(round(sum(values.values())))
    keys = sorted(values)
    floors = {k: int(math.floor(values[k] + 1e-12)) for k in keys}
    left = total - sum(floors.values())
    order = sorted(keys, key=lambda k: (-(values[k] - floors[k]), k))
    if left >= 0:
        for k in order[:left]:
            floors[k] += 1
    else:
        for k in reversed(order):
            if left == 0:
                break
            if floors[k] > 0:
                floors[k] -= 1
                left += 1
    return floors


def proportions(alloc: Mapping[int, float]) -> dict[int, float]:
    total = sum(alloc.values())
    if total <= 0:
        raise DomainError("allocation is empty")
    return {sf: v / total for sf, v in alloc.items()}

"""LoRa physical-layer arithmetic: airtime, data rate, link budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPREADING_FACTORS = (7, 8, 9, 10, 11, 12)
BANDWIDTHS_HZ = (125_000, 250_000, 500_000)

# ToA in seconds for 20 B payload, CR 4/5, 125 kHz (canonical airtime table).
CANONICAL_TOA_S = {
    7: 0.04941,
    8: 0.09062,
    9: 0.16486,
    10: 0.32973,
    11: 0.65946,
    12: 1.18784,
}

# Reference waterfilling percentages for the canonical airtime table.
TABLE_ORTH_PERCENT = {7: 47.02, 8: 25.85, 9: 14.36, 10: 7.18, 11: 3.59, 12: 2.02}

SENSITIVITY_DBM_125KHZ = {
    7: -123.0,
    8: -126.0,
    9: -129.0,
    10: -132.0,
    11: -134.5,
    12: -137.0,
}


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a model."""


def _check_sf(sf: int) -> None:
    if int(sf) != sf or not 7 <= sf <= 12:
        raise DomainError(f"spreading factor must be an integer in [7, 12], got {sf!r}")


def _check_rdd(rdd: int) -> None:
    if rdd not in (1, 2, 3, 4):
        raise DomainError(f"redundancy bits must be in 1..4, got {rdd!r}")


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: int = 125_000
    spreading_factors: tuple[int, ...] = SPREADING_FACTORS
    rdd: int = 1
    preamble_symbols: float = 12.25
    payload_bytes: int = 20
    carrier_hz: int = 863_000_000
    tx_power_dbm: float = 14.0
    # "table" uses CANONICAL_TOA_S (or toa_override), "formula" evaluates time_on_air
    toa_mode: str = "table"
    toa_override: dict[int, float] | None = None

    def __post_init__(self):
        if self.bandwidth_hz not in BANDWIDTHS_HZ:
            raise DomainError(f"bandwidth_hz must be one of {BANDWIDTHS_HZ}")
        _check_rdd(self.rdd)
        sfs = tuple(self.spreading_factors)
        if not sfs or list(sfs) != sorted(set(sfs)):
            raise DomainError("spreading_factors must be a non-empty increasing set")
        for sf in sfs:
            _check_sf(sf)
        object.__setattr__(self, "spreading_factors", sfs)
        if self.preamble_symbols <= 0 or self.payload_bytes <= 0:
            raise DomainError("preamble_symbols and payload_bytes must be positive")
        if self.toa_mode not in ("table", "formula"):
            raise DomainError(f"toa_mode must be 'table' or 'formula', got {self.toa_mode!r}")

    @property
    def coding_rate(self) -> float:
        return 4.0 / (4.0 + self.rdd)


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss with optional log-normal shadowing.

    ``ref_loss_db`` is a positive attenuation at ``ref_distance_m``.
    """

    eta: float = 2.9
    sigma2: float = 0.0
    ref_loss_db: float = 66.0
    ref_distance_m: float = 40.0

    def __post_init__(self):
        if self.eta <= 0 or self.sigma2 < 0 or self.ref_distance_m <= 0:
            raise DomainError("path loss requires eta > 0, sigma2 >= 0, ref_distance_m > 0")

    def mean_loss_db(self, distance_m):
        d = np.asarray(distance_m, dtype=float)
        if np.any(d <= 0):
            raise DomainError("distance must be positive")
        return self.ref_loss_db + 10.0 * self.eta * np.log10(d / self.ref_distance_m)


@dataclass(frozen=True)
class Thresholds:
    capture_sir_db: float = 1.0
    intersf_rejection_db: float = -16.0
    sensitivity_dbm: dict[int, float] = field(
        default_factory=lambda: dict(SENSITIVITY_DBM_125KHZ)
    )
    margin_db: float = 0.0

    def __post_init__(self):
        if self.capture_sir_db <= 0:
            raise DomainError("capture_sir_db must be positive")
        if self.intersf_rejection_db >= 0:
            raise DomainError("intersf_rejection_db must be negative")
        sens = {int(k): float(v) for k, v in self.sensitivity_dbm.items()}
        object.__setattr__(self, "sensitivity_dbm", sens)
        sfs = sorted(sens)
        for lo, hi in zip(sfs, sfs[1:]):
            if not sens[hi] < sens[lo]:
                raise DomainError("sensitivity must be strictly decreasing in SF")

    def sensitivity(self, sf: int) -> float:
        return self.sensitivity_dbm[sf]


def symbol_time(sf: int, bw: float) -> float:
    _check_sf(sf)
    if bw <= 0:
        raise DomainError("bandwidth must be positive")
    return 2.0**sf / bw


def data_rate(sf: int, bw: float, rdd: int) -> float:
    """Useful bit rate in bit/s."""
    _check_sf(sf)
    _check_rdd(rdd)
    if bw <= 0:
        raise DomainError("bandwidth must be positive")
    return sf * (bw / 2.0**sf) * 4.0 / (4.0 + rdd)


def time_on_air(sf: int, payload_bytes: int, rdd: int, bw: float, m_ph: float) -> float:
    """Simplified airtime: preamble plus coded payload symbols, in seconds."""
    _check_rdd(rdd)
    if payload_bytes <= 0:
        raise DomainError("payload_bytes must be positive")
    if m_ph < 0:
        raise DomainError("preamble length must be non-negative")
    n_sym = m_ph + math.ceil(8 * payload_bytes / (4 * sf)) * (4 + rdd)
    return n_sym * symbol_time(sf, bw)


def toa_table(radio: RadioParams) -> dict[int, float]:
    """Airtime per SF (seconds) for the configured radio."""
    if radio.toa_mode == "table":
        src = radio.toa_override if radio.toa_override is not None else CANONICAL_TOA_S
        return {sf: float(src[sf]) for sf in radio.spreading_factors}
    return {
        sf: time_on_air(
            sf, radio.payload_bytes, radio.rdd, radio.bandwidth_hz, radio.preamble_symbols
        )
        for sf in radio.spreading_factors
    }


def rssi(tx_power_dbm, distance_m, model: PathLossModel, shadow_db=0.0):
    """Received power in dBm. Works elementwise on arrays."""
    out = np.asarray(tx_power_dbm, dtype=float) - model.mean_loss_db(distance_m) - shadow_db
    return float(out) if out.ndim == 0 else out


def draw_shadowing(model: PathLossModel, rng: np.random.Generator, size) -> np.ndarray:
    if model.sigma2 == 0:
        return np.zeros(size)
    return rng.normal(0.0, math.sqrt(model.sigma2), size)


def sir_coefficient(sir_db: float, eta: float) -> float:
    """Distance ratio equivalent to an SIR margin: alpha (>1) or beta (<1)."""
    if eta <= 0:
        raise DomainError("eta must be positive")
    return 10.0 ** (sir_db / (10.0 * eta))


def min_feasible_sf(rssi_dbm: float, thr: Thresholds, sfs=SPREADING_FACTORS) -> int | None:
    for sf in sfs:
        if rssi_dbm >= thr.sensitivity_dbm[sf] + thr.margin_db:
            return sf
    return None


def feasible_sfs(rssi_dbm: float, thr: Thresholds, sfs=SPREADING_FACTORS) -> list[int]:
    return [sf for sf in sfs if rssi_dbm >= thr.sensitivity_dbm[sf] + thr.margin_db]

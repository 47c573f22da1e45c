import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lorasf.phy import (
    CANONICAL_TOA_S,
    DomainError,
    PathLossModel,
    RadioParams,
    Thresholds,
    data_rate,
    draw_shadowing,
    feasible_sfs,
    min_feasible_sf,
    rssi,
    sir_coefficient,
    symbol_time,
    time_on_air,
    toa_table,
)

sfs = st.integers(min_value=7, max_value=12)


@pytest.mark.parametrize("sf,bw,expected", [(7, 125_000, 1.024e-3), (12, 125_000, 32.768e-3), (7, 250_000, 0.512e-3)])
def test_symbol_time(sf, bw, expected):
    assert symbol_time(sf, bw) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("sf", [6, 13, 7.5])
def test_symbol_time_rejects_bad_sf(sf):
    with pytest.raises(DomainError):
        symbol_time(sf, 125_000)


@pytest.mark.parametrize("sf,rdd,expected", [(7, 1, 5468.75), (12, 1, 292.96875), (7, 4, 3417.96875)])
def test_data_rate(sf, rdd, expected):
    assert data_rate(sf, 125_000, rdd) == pytest.approx(expected, rel=1e-12)


def test_data_rate_rejects_bad_rdd():
    with pytest.raises(DomainError):
        data_rate(7, 125_000, 5)


def test_time_on_air_formula_values():
    # 6 payload blocks at SF7, 4 at SF12
    assert time_on_air(7, 20, 1, 125_000, 12.25) == pytest.approx(43.264e-3, rel=1e-12)
    assert time_on_air(12, 20, 1, 125_000, 12.25) == pytest.approx(1.056768, rel=1e-12)


def test_time_on_air_rejects_empty_payload():
    with pytest.raises(DomainError):
        time_on_air(7, 0, 1, 125_000, 12.25)


def test_toa_table_modes():
    table = toa_table(RadioParams())
    assert table[7] == pytest.approx(0.04941)
    assert table[12] == pytest.approx(1.18784)
    assert table[12] / table[11] == pytest.approx(1.801, abs=5e-4)
    formula = toa_table(RadioParams(toa_mode="formula"))
    assert formula[7] == pytest.approx(43.264e-3)
    override = toa_table(RadioParams(toa_override={sf: 0.1 * sf for sf in range(7, 13)}))
    assert override[9] == pytest.approx(0.9)


def test_radio_params_validation():
    with pytest.raises(DomainError):
        RadioParams(bandwidth_hz=200_000)
    with pytest.raises(DomainError):
        RadioParams(rdd=0)
    with pytest.raises(DomainError):
        RadioParams(spreading_factors=(9, 8))
    assert RadioParams(rdd=4).coding_rate == 0.5


def test_rssi_examples():
    m = PathLossModel()
    assert rssi(14, 40, m) == pytest.approx(-52.0)
    assert rssi(14, 12_000, m) == pytest.approx(-52.0 - 29 * math.log10(300), abs=1e-12)
    assert rssi(14, 12_000, m) == pytest.approx(-123.8365, abs=1e-4)
    with pytest.raises(DomainError):
        rssi(14, 0.0, m)


def test_shadowing_is_seeded():
    m = PathLossModel(sigma2=6.0)
    a = draw_shadowing(m, np.random.default_rng(3), 5)
    b = draw_shadowing(m, np.random.default_rng(3), 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, draw_shadowing(m, np.random.default_rng(4), 5))
    assert np.all(draw_shadowing(PathLossModel(), np.random.default_rng(3), 5) == 0)


def test_sir_coefficient_examples():
    assert sir_coefficient(1, 2.9) == pytest.approx(1.08264, abs=5e-6)
    assert sir_coefficient(-16, 2.9) == pytest.approx(0.2807216, abs=1e-7)
    assert sir_coefficient(0, 2.9) == 1.0


def test_min_feasible_sf_examples():
    thr = Thresholds()
    assert min_feasible_sf(-120.0, thr) == 7
    assert min_feasible_sf(-136.0, thr) == 12
    assert min_feasible_sf(-140.0, thr) is None
    assert feasible_sfs(-130.0, thr) == [10, 11, 12]


def test_margin_shifts_feasibility():
    assert min_feasible_sf(-122.5, Thresholds(margin_db=1.0)) == 8


def test_thresholds_validation():
    with pytest.raises(DomainError):
        Thresholds(capture_sir_db=0)
    with pytest.raises(DomainError):
        Thresholds(intersf_rejection_db=3)
    with pytest.raises(DomainError):
        Thresholds(sensitivity_dbm={7: -130, 8: -126})


def test_path_loss_validation():
    with pytest.raises(DomainError):
        PathLossModel(eta=0)
    with pytest.raises(DomainError):
        PathLossModel(sigma2=-1)


@given(sfs.filter(lambda s: s < 12))
def test_symbol_time_doubles(sf):
    assert symbol_time(sf + 1, 125_000) == 2 * symbol_time(sf, 125_000)


def test_time_on_air_strictly_increasing():
    vals = [time_on_air(sf, 20, 1, 125_000, 12.25) for sf in range(7, 13)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    canon = [CANONICAL_TOA_S[sf] for sf in range(7, 13)]
    assert all(b > a for a, b in zip(canon, canon[1:]))


@given(st.floats(1.0, 1e5), st.floats(1.0, 1e5))
def test_rssi_decreasing_in_distance(d1, d2):
    m = PathLossModel()
    if d1 < d2:
        assert rssi(14, d1, m) > rssi(14, d2, m)


@given(st.floats(1.0, 1e5), st.floats(-20, 20))
def test_rssi_tx_shift(d, x):
    m = PathLossModel()
    assert rssi(14 + x, d, m) - rssi(14, d, m) == pytest.approx(x, abs=1e-9)


@given(st.floats(-40, 40), st.floats(0.5, 6))
def test_sir_coefficient_reciprocal(a, eta):
    assert sir_coefficient(a, eta) * sir_coefficient(-a, eta) == pytest.approx(1.0, rel=1e-12)


@given(st.floats(-150, -40), st.floats(-150, -40))
def test_min_feasible_sf_monotone(r1, r2):
    thr = Thresholds()
    weak, strong = sorted((r1, r2))
    a, b = min_feasible_sf(strong, thr), min_feasible_sf(weak, thr)
    if b is not None:
        assert a is not None and a <= b

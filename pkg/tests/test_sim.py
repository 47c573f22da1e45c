import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorasf import allocators as al
from lorasf import kernel
from lorasf._pykernel import overlapping_pairs
from lorasf.phy import CANONICAL_TOA_S, DomainError, PathLossModel, Thresholds
from lorasf.sim import (
    EventStream,
    SimOptions,
    TransmissionEvent,
    delivered_events,
    der_histogram,
    generate_traffic,
    resolve_reception,
    run,
)
from lorasf.topology import EndDevice, Gateway, Topology, build_topology, place_grid, place_ring, place_uniform_disk

UNCONSTRAINED = Thresholds(sensitivity_dbm={7: -125.0, 8: -126.0, 9: -129.0, 10: -132.0, 11: -134.5, 12: -137.0})


def ev(ed, sf, start, power, dur=None):
    return TransmissionEvent(ed, sf, start, dur or CANONICAL_TOA_S[sf], {0: power})


# ---- resolve_reception


def test_lonely_packet_is_delivered():
    e = ev(1, 7, 0.0, -100.0)
    assert resolve_reception(e, [], 0, Thresholds())
    assert not resolve_reception(ev(1, 7, 0.0, -124.0), [], 0, Thresholds())


def test_capture_margin_two_db():
    a, b = ev(1, 7, 0.0, -100.0), ev(2, 7, 0.01, -102.0)
    assert resolve_reception(a, [b], 0, Thresholds())
    assert not resolve_reception(b, [a], 0, Thresholds())


def test_capture_margin_half_db():
    a, b = ev(1, 7, 0.0, -100.0), ev(2, 7, 0.01, -100.5)
    assert not resolve_reception(a, [b], 0, Thresholds())
    assert not resolve_reception(b, [a], 0, Thresholds())


def test_capture_off_kills_both():
    a, b = ev(1, 7, 0.0, -80.0), ev(2, 7, 0.01, -110.0)
    assert not resolve_reception(a, [b], 0, Thresholds(), capture=False)


def test_interference_sums_in_linear_power():
    a = ev(1, 7, 0.0, -100.0)
    # each interferer alone is 2 dB weaker, together only ~1 dB margin short
    others = [ev(2, 7, 0.01, -102.0), ev(3, 7, 0.02, -102.0)]
    assert resolve_reception(a, others[:1], 0, Thresholds())
    assert not resolve_reception(a, others, 0, Thresholds())


def test_intersf_rejection():
    a, b = ev(1, 7, 0.0, -110.0), ev(2, 12, 0.0, -90.0)
    assert resolve_reception(a, [b], 0, Thresholds())
    # 20 dB weaker than a different-SF interferer: below the -16 dB threshold
    assert not resolve_reception(a, [b], 0, Thresholds(), intersf=True)
    c = ev(3, 12, 0.0, -100.0)
    assert resolve_reception(a, [c], 0, Thresholds(), intersf=True)


def test_non_overlapping_events_ignored():
    a, b = ev(1, 7, 0.0, -100.0), ev(2, 7, 1.0, -90.0)
    assert resolve_reception(a, [b], 0, Thresholds(), capture=False)


def test_event_validation():
    with pytest.raises(DomainError):
        TransmissionEvent(1, 7, -1.0, 0.1, {})
    with pytest.raises(DomainError):
        TransmissionEvent(1, 7, 0.0, 0.0, {})


# ---- kernel parity


def random_stream(rng, n_events, n_ed, n_gw, span):
    start = np.sort(rng.uniform(0, span, n_events))
    sf = rng.integers(7, 13, n_events).astype(np.int64)
    dur = np.array([CANONICAL_TOA_S[s] for s in sf])
    ed = rng.integers(0, n_ed, n_events).astype(np.int64)
    power = rng.uniform(-135, -60, (n_ed, n_gw))
    allowed = (rng.random((n_ed, n_gw)) < 0.8).astype(np.uint8)
    return start, start + dur, sf, ed, power, allowed


def brute_force(start, end, sf, ed, power, allowed, thr, capture, intersf):
    events = [
        TransmissionEvent(int(ed[k]), int(sf[k]), float(start[k]), float(end[k] - start[k]),
                          {g: float(power[ed[k], g]) for g in range(power.shape[1])})
        for k in range(len(start))
    ]
    out = []
    for k, e in enumerate(events):
        others = [o for j, o in enumerate(events) if j != k and o.overlaps(e)]
        out.append(any(
            allowed[ed[k], g] and resolve_reception(e, others, g, thr, capture, intersf)
            for g in range(power.shape[1])
        ))
    return np.array(out)


def sens_array(thr):
    s = np.full(13, np.inf)
    for k, v in thr.sensitivity_dbm.items():
        s[k] = v
    return s


@pytest.mark.parametrize("capture", [True, False])
@pytest.mark.parametrize("intersf", [True, False])
@pytest.mark.parametrize("seed", range(4))
def test_kernels_agree_with_reference(capture, intersf, seed):
    rng = np.random.default_rng(seed)
    start, end, sf, ed, power, allowed = random_stream(rng, 250, 40, 3, 20.0)
    thr = Thresholds()
    args = (start, end, sf, ed, power, sens_array(thr), allowed,
            thr.capture_sir_db if capture else math.inf,
            thr.intersf_rejection_db if intersf else -math.inf,
            float((end - start).max()))
    ref = brute_force(start, end, sf, ed, power, allowed, thr, capture, intersf)
    for name, fn in kernel.KERNELS.items():
        got = np.asarray(fn(*args), dtype=bool)
        assert np.array_equal(got, ref), name


def test_compiled_kernel_available():
    assert "cython" in kernel.KERNELS
    assert kernel.BACKEND in kernel.KERNELS


def test_overlapping_pairs_matches_quadratic_scan():
    rng = np.random.default_rng(1)
    start = np.sort(rng.uniform(0, 5, 200))
    end = start + rng.uniform(0.01, 0.5, 200)
    a, b = overlapping_pairs(start, end)
    got = set(zip(a.tolist(), b.tolist()))
    want = {(i, j) for i in range(200) for j in range(i + 1, 200) if start[j] < end[i] and start[i] < end[j]}
    assert got == want


# ---- traffic


def small_cell(n=50, seed=0, **kw):
    return place_uniform_disk(n, 12_000, seed=seed, **kw)


def test_poisson_counts():
    t = small_cell(200)
    plan = al.adr_legacy(t, UNCONSTRAINED)
    st_ = generate_traffic(t, plan, 90_000, "poisson", seed=1)
    counts = np.bincount(st_.ed, minlength=200)
    assert abs(counts.mean() - 1000) < 3 * math.sqrt(1000 / 200)
    assert np.all(np.abs(counts - 1000) < 6 * math.sqrt(1000))
    assert np.all(np.diff(st_.start) >= 0)


def test_periodic_interarrival():
    t = small_cell(20)
    plan = al.adr_legacy(t, UNCONSTRAINED)
    st_ = generate_traffic(t, plan, 9000, "periodic", seed=2)
    for k in range(20):
        times = st_.start[st_.ed == k]
        assert np.allclose(np.diff(times), 90.0)
        assert 0 <= times[0] < 90


def test_traffic_is_seeded():
    t = small_cell(30)
    plan = al.adr_legacy(t, UNCONSTRAINED)
    a = generate_traffic(t, plan, 5000, seed=3, pathloss=PathLossModel(sigma2=6))
    b = generate_traffic(t, plan, 5000, seed=3, pathloss=PathLossModel(sigma2=6))
    assert np.array_equal(a.start, b.start) and np.array_equal(a.power, b.power)
    c = generate_traffic(t, plan, 5000, seed=4)
    assert not np.array_equal(a.start, c.start)


def test_event_stream_iteration():
    t = small_cell(5)
    st_ = generate_traffic(t, al.adr_legacy(t, UNCONSTRAINED), 1000, seed=0)
    evs = list(st_)
    assert len(evs) == len(st_)
    assert all(e.duration == CANONICAL_TOA_S[e.sf] for e in evs)


def test_unallocatable_devices_excluded():
    t = Topology(
        (EndDevice(1, {0: -80.0}), EndDevice(2, {0: -150.0})), (Gateway(0),)
    )
    plan = al.adr_legacy(t, Thresholds())
    rep = run(t, plan, 9000, Thresholds(), seed=0)
    assert set(rep.generated) == {1}
    assert rep.unallocatable == (2,)


def test_zero_packets_is_an_error():
    t = small_cell(1)
    with pytest.raises(DomainError):
        run(t, al.adr_legacy(t, UNCONSTRAINED), 1e-6, UNCONSTRAINED, seed=0)
    with pytest.raises(DomainError):
        generate_traffic(t, al.adr_legacy(t, UNCONSTRAINED), 0.0)
    with pytest.raises(DomainError):
        SimOptions(traffic="bursty")


# ---- reports and invariants


def test_report_invariants():
    t = small_cell(300, rings=(4000.0, 8000.0, 12_000.0))
    plan = al.explora_c(t, UNCONSTRAINED, seed=0)
    rep = run(t, plan, 20_000, UNCONSTRAINED, seed=5)
    assert all(rep.delivered[k] <= rep.generated[k] for k in rep.generated)
    tot_g, tot_d = sum(rep.generated.values()), sum(rep.delivered.values())
    assert rep.der_global == tot_d / tot_g
    weighted = sum(rep.der_per_sf[sf] * rep.generated_per_sf[sf] for sf in rep.der_per_sf) / tot_g
    assert weighted == pytest.approx(rep.der_global, rel=1e-12)
    assert set(rep.der_per_ring) == {0, 1, 2}


def test_run_is_deterministic():
    t = small_cell(200)
    plan = al.explora_c(t, UNCONSTRAINED, seed=0)
    opts = SimOptions(pathloss=PathLossModel(sigma2=6.0), intersf=True)
    a = run(t, plan, 20_000, UNCONSTRAINED, opts, seed=9)
    b = run(t, plan, 20_000, UNCONSTRAINED, opts, seed=9)
    assert a == b


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(50, 400))
def test_capture_never_hurts_a_node(seed, n):
    t = small_cell(n, seed=seed)
    plan = al.rand_at(t, UNCONSTRAINED, seed=seed)
    on = run(t, plan, 9000, UNCONSTRAINED, SimOptions(capture=True), seed=seed)
    off = run(t, plan, 9000, UNCONSTRAINED, SimOptions(capture=False), seed=seed)
    assert all(on.delivered[k] >= off.delivered[k] for k in on.delivered)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_extra_gateway_never_hurts(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-8000, 8000, size=(300, 2))
    one = build_topology(pts, (Gateway(0, (0.0, 0.0)),))
    two = build_topology(pts, (Gateway(0, (0.0, 0.0)), Gateway(1, (6000.0, 0.0))))
    plan = al.adr_legacy(one, UNCONSTRAINED)
    for opts in (SimOptions(), SimOptions(capture=False), SimOptions(intersf=True)):
        a = run(one, plan, 9000, UNCONSTRAINED, opts, seed=seed)
        b = run(two, plan, 9000, UNCONSTRAINED, opts, seed=seed)
        assert a.generated == b.generated
        assert all(b.delivered[k] >= a.delivered[k] for k in a.delivered)


@pytest.mark.parametrize("n", [20, 60, 120, 200])
def test_aloha_agreement(n):
    t = small_cell(n, seed=n)
    plan = al.fixed_sf(t, UNCONSTRAINED, 12)
    G = n / 90 * CANONICAL_TOA_S[12]
    rep = run(t, plan, 90_000, UNCONSTRAINED, SimOptions(capture=False), seed=1)
    packets = sum(rep.generated.values())
    p = math.exp(-2 * G)
    se = math.sqrt(p * (1 - p) / packets)
    assert abs(rep.der_global - p) <= 3 * se


def test_same_operator_only_restricts_gateways():
    gws = (Gateway(0, (0.0, 0.0), operator=0), Gateway(1, (500.0, 0.0), operator=1))
    t = Topology((EndDevice(1, {0: -130.0, 1: -80.0}, operator=0),), gws)
    plan = al.SfPlan({1: 7}, {1: "fixed"})
    open_ = run(t, plan, 9000, Thresholds(), SimOptions(), seed=0)
    closed = run(t, plan, 9000, Thresholds(), SimOptions(same_operator_only=True), seed=0)
    assert open_.der_global == 1.0 and closed.der_global == 0.0


def test_python_and_compiled_runs_match():
    t = place_grid(500, 2, 12_000, seed=3)
    plan = al.explora_c(t, Thresholds(), seed=0)
    opts = SimOptions(intersf=True, pathloss=PathLossModel(sigma2=6.0))
    reps = {name: run(t, plan, 9000, Thresholds(), opts, seed=2, resolver=fn) for name, fn in kernel.KERNELS.items()}
    vals = list(reps.values())
    assert all(v.delivered == vals[0].delivered for v in vals)


# ---- histograms


def test_histogram_capture_off_single_sf():
    t = small_cell(150, seed=1)
    plan = al.fixed_sf(t, UNCONSTRAINED, 7)
    rep = run(t, plan, 90_000, UNCONSTRAINED, SimOptions(capture=False), seed=0)
    node = np.array(list(rep.node_der().values()))
    p = rep.der_global
    # spread no wider than binomial noise
    assert node.std() < 2 * math.sqrt(p * (1 - p) / 1000)
    h = der_histogram(rep, bins=10)
    assert sum(h["all"]) == 150
    assert max(h["all"]) >= 0.7 * 150


def test_histogram_capture_favours_near_nodes():
    t = small_cell(750, seed=2, rings=(2000.0, 4000.0, 6000.0, 8000.0, 10_000.0, 12_000.0))
    plan = al.fixed_sf(t, UNCONSTRAINED, 7)
    rep = run(t, plan, 20_000, UNCONSTRAINED, SimOptions(capture=True), seed=0)
    h = der_histogram(rep, bins=10, by_ring=True)
    edges = np.array(h["edges"])
    mids = (edges[:-1] + edges[1:]) / 2

    def mean(counts):
        return float(np.dot(counts, mids) / sum(counts))

    assert mean(h[0]) > mean(h[5])
    assert rep.der_per_ring[0] > rep.der_per_ring[5]


def test_histogram_empty_report():
    from lorasf.sim import SimReport

    with pytest.raises(DomainError):
        der_histogram(SimReport({}, {}, 0.0, {}, {}, 0, 1.0))


def test_delivered_events_empty_stream():
    t = small_cell(3)
    empty = EventStream(np.zeros(0), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64),
                        np.zeros((3, 1)), (0, 1, 2), (0,))
    assert delivered_events(empty, t, UNCONSTRAINED, SimOptions()).size == 0

import csv
import io
import json

import pytest

from lorasf import cli
from lorasf.config import ConfigError
from lorasf.topology import export_rssi_trace, place_ring


def small_config(tmp_path, **kw):
    d = {
        "name": "small",
        "placement": {"kind": "disk", "n_nodes": 60, "cell_radius": 5000},
        "allocators": ["adr", "explora_at", "explora_c"],
        "sweep": {"variable": "n_nodes", "values": [40, 80]},
        "seeds": [0, 1, 2],
        "duration": 3000,
    }
    d.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_analyze_capture_curve(tmp_path, capsys):
    assert cli.main(["analyze", "--preset", "fig2a", "--no-header-timestamp"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(cli.ANALYZE_COLUMNS)
    assert "capture_der_vs_load,G,0.5,,0.593321468043" in out.splitlines()


def test_analyze_optimal_counts(tmp_path):
    out = tmp_path / "a.csv"
    assert cli.main(["analyze", "--preset", "fig2a", "--out", str(out)]) == 0
    assert out.read_text().startswith("# lorasf ")
    got = {int(r["sf"]): int(r["value"]) for r in rows(out)
           if r["curve"] == "optimal_orth_count" and r["x"] == "1000"}
    assert got == {7: 474, 8: 258, 9: 142, 10: 71, 11: 35, 12: 20}


def test_simulate_deterministic_and_parallel(tmp_path):
    cfg = small_config(tmp_path)
    a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a), "--no-header-timestamp"]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b), "--no-header-timestamp"]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(c), "--no-header-timestamp",
                     "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    data = rows(a)
    glob = [r for r in data if r["scope"] == "global"]
    assert len(glob) == 2 * 3 * 3
    assert {r["scope"] for r in data} >= {"global", "sf"}
    for r in data:
        if r["scope"] == "unallocatable":
            continue
        assert 0.0 <= float(r["der"]) <= 1.0
        assert int(r["delivered"]) <= int(r["generated"])


def test_seed_override(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "s.csv"
    assert cli.main(["simulate", "--config", str(cfg), "--seeds", "5-6", "--out", str(out)]) == 0
    assert {r["seed"] for r in rows(out)} == {"5", "6"}


def test_compare_self_gives_zero_gain(tmp_path):
    cfg = small_config(tmp_path)
    sim = tmp_path / "sim.csv"
    cmp_ = tmp_path / "cmp.csv"
    cli.main(["simulate", "--config", str(cfg), "--out", str(sim)])
    assert cli.main(["compare", str(sim), str(sim), "--out", str(cmp_)]) == 0
    gains = [r for r in rows(cmp_) if r["metric"] == "gain"]
    assert gains and all(float(r["value"]) == 0.0 for r in gains)
    assert {r["allocator"] for r in gains} == {"adr#2", "explora_at#2", "explora_c#2"}


def test_compare_reference_gains(tmp_path):
    cfg = small_config(tmp_path)
    sim = tmp_path / "sim.csv"
    cmp_ = tmp_path / "cmp.csv"
    cli.main(["simulate", "--config", str(cfg), "--out", str(sim)])
    assert cli.main(["compare", str(sim), "--reference", "adr", "--out", str(cmp_)]) == 0
    data = rows(cmp_)
    gains = [r for r in data if r["metric"] == "gain"]
    assert {r["reference"] for r in gains} == {"adr"}
    means = {(r["x"], r["allocator"]): float(r["value"]) for r in data if r["metric"] == "der_mean"}
    for r in gains:
        want = means[(r["x"], r["allocator"])] / means[(r["x"], "adr")] - 1
        assert float(r["value"]) == pytest.approx(want, rel=1e-9)
    assert {r["value"] for r in data if r["metric"] == "n_seeds"} == {"3"}
    assert cli.main(["compare", str(sim), "--reference", "nobody"]) == 3


def test_compare_axis_mismatch(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    cli.main(["simulate", "--config", str(small_config(tmp_path)), "--out", str(a)])
    cli.main(["simulate", "--config", str(small_config(tmp_path, sweep={"variable": "n_nodes", "values": [40, 90]})),
              "--out", str(b)])
    assert cli.main(["compare", str(a), str(b)]) == 3
    err = capsys.readouterr().err
    assert "n_nodes=80" in err and "n_nodes=90" in err


def test_compare_rejects_non_report(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    assert cli.main(["compare", str(p)]) == 3
    assert cli.main(["compare", str(tmp_path / "missing.csv")]) == 3


def test_import_trace_bundle(tmp_path):
    t = place_ring(30, 0, 8000, seed=1)
    trace = tmp_path / "trace.csv"
    export_rssi_trace(t, trace)
    out = tmp_path / "bundle"
    assert cli.main(["import-trace", str(trace), "--out", str(out), "--no-header-timestamp"]) == 0
    cfg = json.loads((out / "scenario.json").read_text())
    assert cfg["placement"]["kind"] == "trace"
    assert cfg["pathloss"]["sigma2"] == 6.0
    assert len(cfg["sweep"]["values"]) == len(cli.TRACE_RATES_PER_DAY)
    cdf = rows(out / "rssi_cdf.csv")
    assert len(cdf) == 30 and float(cdf[-1]["cdf"]) == 1.0
    assert [float(r["rssi_dbm"]) for r in cdf] == sorted(float(r["rssi_dbm"]) for r in cdf)
    assert (out / "topology.csv").is_file()
    # the bundle is directly runnable
    sim = tmp_path / "sim.csv"
    assert cli.main(["simulate", "--config", str(out / "scenario.json"), "--seeds", "0",
                     "--out", str(sim)]) == 0


def test_import_trace_duplicate_row(tmp_path, capsys):
    trace = tmp_path / "dup.csv"
    trace.write_text("device_id,gateway_id,mean_rssi_dbm\n1,a,-100\n1,a,-101\n")
    assert cli.main(["import-trace", str(trace), "--out", str(tmp_path / "o")]) == 3
    assert "line 3" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"allocators": ["nope"]}))
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert "allocators[0].name" in capsys.readouterr().err
    assert cli.main(["analyze"]) == 2
    assert cli.main(["simulate", "--preset", "fig2a", "--jobs", "0"]) == 2
    assert cli.main(["simulate", "--preset", "fig2a", "--seeds", "x"]) == 2


def test_runtime_error_exit_code(tmp_path):
    cfg = small_config(tmp_path, duration=1e-6, sweep=None)
    assert cli.main(["simulate", "--config", str(cfg)]) == 4


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "deep" / "out.csv"
    cli.write_atomic(p, "x\n")
    assert p.read_text() == "x\n"
    assert [f.name for f in p.parent.iterdir()] == ["out.csv"]


def test_parse_seeds():
    assert cli.parse_seeds("0,1,2") == (0, 1, 2)
    assert cli.parse_seeds("0-4") == (0, 1, 2, 3, 4)
    assert cli.parse_seeds("0-2, 7, 1") == (0, 1, 2, 7)
    for bad in ("", "a", "3-1", "-1"):
        with pytest.raises(ConfigError):
            cli.parse_seeds(bad)


def test_fmt():
    assert cli.fmt(0.1 + 0.2) == "0.3"
    assert cli.fmt(True) == "true"
    assert cli.fmt(None) == ""
    assert cli.fmt(3) == "3"

"""``lorasf`` command line: analyze, simulate, compare, import-trace.

Every command writes CSV. Output bytes depend only on the config and the
seeds; the optional first line ``# lorasf ... generated <UTC time>`` is the
one exception and is dropped with ``--no-header-timestamp``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import analytic as an
from . import config as cfgmod
from .config import ConfigError, ScenarioConfig
from .phy import DomainError, sir_coefficient, toa_table
from .topology import TraceFormatError, import_rssi_trace, topology_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

SIM_COLUMNS = ("scenario", "allocator", "sweep", "x", "n_nodes", "n_gateways", "seed",
               "der_global", "scope", "key", "der", "generated", "delivered")
COMPARE_COLUMNS = ("sweep", "x", "metric", "allocator", "reference", "value")
ANALYZE_COLUMNS = ("curve", "x_name", "x", "sf", "value")
TRACE_RATES_PER_DAY = (18, 50, 100, 250, 500, 1000, 2000, 4000, 8000)
CAPTURE_LOAD_GRID = tuple(round(0.05 * k, 2) for k in range(61))


class DataError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return "" if v is None else str(v)


def _csv_text(header, rows, command: str, timestamp: bool) -> str:
    buf = io.StringIO()
    if timestamp:
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        buf.write(f"# lorasf {__version__} {command} generated {now}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,2"`` or ``"0-4"`` or a mix such as ``"0-2,7"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                a, b = part.split("-", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError("--seeds", f"bad seed list element {part!r}") from None
    if not out or any(s < 0 for s in out):
        raise ConfigError("--seeds", "expected non-negative seeds such as 0,1,2 or 0-4")
    return tuple(dict.fromkeys(out))


def _load_config(args) -> ScenarioConfig:
    if args.config and args.preset:
        raise ConfigError("config", "give either --config or --preset, not both")
    if args.config:
        cfg = cfgmod.load(args.config)
    elif args.preset:
        cfg = cfgmod.load_preset(args.preset)
    else:
        raise ConfigError("config", "no scenario given; use --config PATH or --preset NAME")
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=parse_seeds(args.seeds))
    return cfg


# ---------------------------------------------------------------- analyze

def _n_gateways(cfg: ScenarioConfig) -> int:
    kind = cfg.placement.kind
    if kind == "grid":
        return cfg.placement.m_side ** 2
    if kind == "three_operator":
        return 3
    return 1


def analyze_rows(cfg: ScenarioConfig) -> list[tuple]:
    toa = toa_table(cfg.radio)
    sfs = list(cfg.radio.spreading_factors)
    alpha = sir_coefficient(cfg.thresholds.capture_sir_db, cfg.pathloss.eta)
    beta = sir_coefficient(cfg.thresholds.intersf_rejection_db, cfg.pathloss.eta)
    cp = an.CaptureParams(alpha, cfg.placement.cell_radius)
    ip = an.InterSfParams(beta, cfg.pathloss.eta)
    sub_toa = {sf: toa[sf] for sf in sfs}
    rows: list[tuple] = []

    points = cfg.sweep_points()
    for var, val in points:
        c = cfg if var == "none" else cfg.at(var, val)
        x_name = "n_nodes" if var == "none" else var
        x = c.placement.n_nodes if var == "none" else val
        n = c.placement.n_nodes
        s = c.traffic.source_rate
        m = _n_gateways(c)
        for sf in sfs:
            g = n * s * toa[sf]
            rows.append(("single_sf_load", x_name, x, sf, g))
            rows.append(("aloha_der", x_name, x, sf, an.aloha_der(g)))
            rows.append(("capture_der", x_name, x, sf, an.capture_der(g, cp)))
        uniform = an.LoadProfile({sf: n / len(sfs) for sf in sfs}, s, sub_toa)
        orth = an.optimal_allocation_orthogonal(n, sub_toa)
        orth_lp = an.LoadProfile(orth, s, sub_toa)
        rows.append(("uniform_mix_der", x_name, x, "", an.expected_der_orthogonal(uniform)))
        rows.append(("orth_optimal_der", x_name, x, "", an.expected_der_orthogonal(orth_lp)))
        rows.append(("capture_optimal_der", x_name, x, "", an.expected_der_capture(orth_lp, cp)))
        rows.append(("multi_gw_der", x_name, x, m, an.expected_der_capture(orth_lp, cp, m)))
        rows.append(("multi_gw_throughput", x_name, x, m, an.multi_gw_capacity(m, orth_lp, cp)))
        if len(sfs) > 1:
            inter = an.optimal_allocation_intersf(n, sub_toa, ip)
            inter_lp = an.LoadProfile(inter, s, sub_toa)
            rows.append(("intersf_optimal_der", x_name, x, "", an.expected_der_intersf(inter_lp, ip)))
            rows.append(("orth_alloc_intersf_der", x_name, x, "", an.expected_der_intersf(orth_lp, ip)))
            inter_counts = an.largest_remainder(inter, n)
        high = an.optimal_allocation_highload(n, s, sub_toa)
        for sf, v in an.largest_remainder(orth, n).items():
            rows.append(("optimal_orth_count", x_name, x, sf, v))
        for sf in sfs:
            rows.append(("optimal_orth_share", x_name, x, sf, orth[sf] / n))
            rows.append(("optimal_highload", x_name, x, sf, high[sf]))
        if len(sfs) > 1:
            for sf, v in inter_counts.items():
                rows.append(("optimal_intersf_count", x_name, x, sf, v))
            for sf in sfs:
                rows.append(("optimal_intersf_share", x_name, x, sf, inter[sf] / n))

    for g in CAPTURE_LOAD_GRID:
        rows.append(("capture_der_vs_load", "G", g, "", an.capture_der(g, cp)))
        rows.append(("capture_throughput_vs_load", "G", g, "", an.capture_throughput(g, cp)))
        rows.append(("aloha_der_vs_load", "G", g, "", an.aloha_der(g)))
    return rows


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    rows = analyze_rows(cfg)
    write_atomic(args.out, _csv_text(ANALYZE_COLUMNS, rows, "analyze", not args.no_header_timestamp))
    return EXIT_OK


# --------------------------------------------------------------- simulate

def _run_task(task) -> list[tuple]:
    from . import experiment

    cfg_dict, idx, var, val, seed = task
    cfg = cfgmod.from_dict(cfg_dict)
    point = experiment.with_sweep_value(cfg, var, val)
    rows = []
    for k, (spec, rep, t) in enumerate(experiment.run_point(point, seed)):
        base = (cfg.name, spec.label, var, val, len(t.devices), len(t.gateways), seed,
                rep.der_global)
        key = (idx, k, seed)
        rows.append((key, 0, "", base + ("global", "", rep.der_global,
                                         sum(rep.generated.values()), sum(rep.delivered.values()))))
        for sf, der in rep.der_per_sf.items():
            rows.append((key, 1, sf, base + ("sf", sf, der, rep.generated_per_sf[sf],
                                             round(der * rep.generated_per_sf[sf]))))
        for ring, der in rep.der_per_ring.items():
            rows.append((key, 2, ring, base + ("ring", ring, der, rep.generated_per_ring[ring],
                                               round(der * rep.generated_per_ring[ring]))))
        if len(rep.der_per_operator) > 1:
            for op, der in rep.der_per_operator.items():
                rows.append((key, 3, op, base + ("operator", op, der, "", "")))
        rows.append((key, 4, "", base + ("unallocatable", "", "", len(rep.unallocatable), 0)))
    return rows


def simulate_rows(cfg: ScenarioConfig, jobs: int = 1) -> list[tuple]:
    d = cfg.to_dict()
    tasks = [(d, i, var, val, seed)
             for i, (var, val) in enumerate(cfg.sweep_points()) for seed in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r[0], r[1], _x_key(str(r[2]))))
    return [r[3] for r in rows]


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be at least 1")
    rows = simulate_rows(cfg, args.jobs)
    write_atomic(args.out, _csv_text(SIM_COLUMNS, rows, "simulate", not args.no_header_timestamp))
    return EXIT_OK


# ---------------------------------------------------------------- compare

def _read_sim_csv(path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read: {exc.strerror}") from None
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(SIM_COLUMNS) <= set(reader.fieldnames):
        raise DataError(f"{path}: not a simulate report (expected columns {','.join(SIM_COLUMNS)})")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if row["scope"] != "global":
            continue
        try:
            row["der"] = float(row["der"])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad der value {row['der']!r}") from None
        out.append(row)
    if not out:
        raise DataError(f"{path}: no global rows")
    return out


def _x_key(x: str):
    try:
        return (0, float(x), x)
    except ValueError:
        return (1, 0.0, x)


def compare_rows(paths, reference: str | None = None) -> list[tuple]:
    """DER mean/std per allocator and sweep point, plus relative gains.

    When the same allocator name occurs in several files each copy is
    labelled ``name#k`` (k = file position) and gains compare the copies
    against the first one. Otherwise gains compare every allocator against
    every other one, or only against ``reference`` when given.
    """
    tables = [_read_sim_csv(p) for p in paths]
    axes = [{(r["sweep"], r["x"]) for r in rows} for rows in tables]
    for p, ax in zip(paths[1:], axes[1:]):
        if ax != axes[0]:
            diff = sorted(ax ^ axes[0], key=lambda a: (a[0], _x_key(a[1])))
            listing = ", ".join(f"{v}={x}" for v, x in diff)
            raise DataError(f"sweep axis of {p} differs from {paths[0]} at: {listing}")

    names_per_file = [sorted({r["allocator"] for r in rows}) for rows in tables]
    seen: dict[str, int] = defaultdict(int)
    for names in names_per_file:
        for n in names:
            seen[n] += 1
    repeated = {n for n, c in seen.items() if c > 1}

    samples: dict = defaultdict(dict)  # (sweep, x, label) -> {seed: der}
    base_of: dict[str, str] = {}
    order: list[str] = []
    for k, rows in enumerate(tables, start=1):
        for r in rows:
            label = f"{r['allocator']}#{k}" if r["allocator"] in repeated else r["allocator"]
            if label not in base_of:
                base_of[label] = r["allocator"]
                order.append(label)
            samples[(r["sweep"], r["x"], label)][r["seed"]] = r["der"]

    if reference is not None and reference not in base_of.values() and reference not in base_of:
        raise DataError(f"reference allocator {reference!r} not found in inputs")

    points = sorted(axes[0], key=lambda a: (a[0], _x_key(a[1])))
    out = []
    for sweep, x in points:
        means = {}
        for label in order:
            vals = samples.get((sweep, x, label))
            if not vals:
                continue
            arr = np.array([vals[s] for s in sorted(vals, key=int)], dtype=float)
            means[label] = float(arr.mean())
            std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            out.append((sweep, x, "der_mean", label, "", means[label]))
            out.append((sweep, x, "der_std", label, "", std))
            out.append((sweep, x, "n_seeds", label, "", len(arr)))
        for a in order:
            for ref in order:
                if a == ref or a not in means or ref not in means:
                    continue
                if repeated:
                    first = next(l for l in order if base_of[l] == base_of[a])
                    if base_of[a] != base_of[ref] or ref != first:
                        continue
                elif reference is not None and reference not in (ref, base_of[ref]):
                    continue
                gain = means[a] / means[ref] - 1.0 if means[ref] > 0 else math.nan
                out.append((sweep, x, "gain", a, ref, gain))
    return out


def cmd_compare(args) -> int:
    rows = compare_rows(args.results, args.reference)
    write_atomic(args.out, _csv_text(COMPARE_COLUMNS, rows, "compare", not args.no_header_timestamp))
    return EXIT_OK


# ----------------------------------------------------------- import-trace

def trace_config(trace_path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Scenario replaying a trace with 6 dB^2 shadowing and a message-rate sweep."""
    base = base or ScenarioConfig(
        name="trace",
        allocators=(cfgmod.AllocatorSpec("adr"), cfgmod.AllocatorSpec("explora_at"),
                    cfgmod.AllocatorSpec("explora_c")),
    )
    return replace(
        base,
        name=base.name if base.name != "custom" else "trace",
        pathloss=replace(base.pathloss, sigma2=6.0),
        placement=cfgmod.Placement(kind="trace", path=str(trace_path)),
        sweep=cfgmod.Sweep("source_rate", tuple(r / 86400.0 for r in TRACE_RATES_PER_DAY)),
    )


def rssi_cdf_rows(t) -> list[tuple]:
    vals = np.sort(np.array([d.best_rssi() for d in t.devices]))
    n = len(vals)
    return [(v, (i + 1) / n) for i, v in enumerate(vals)]


def cmd_import_trace(args) -> int:
    base = None
    if args.config or args.preset:
        base = _load_config(args)
    trace_path = os.path.abspath(args.trace)
    t = import_rssi_trace(trace_path)
    cfg = trace_config(trace_path, base)
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=parse_seeds(args.seeds))
    out = Path(args.out)
    ts = not args.no_header_timestamp
    write_atomic(out / "scenario.json", cfg.to_json())
    write_atomic(out / "rssi_cdf.csv", _csv_text(("rssi_dbm", "cdf"), rssi_cdf_rows(t), "import-trace", ts))
    topo = topology_csv(t)
    if ts:
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        topo = f"# lorasf {__version__} import-trace generated {now}\n" + topo
    write_atomic(out / "topology.csv", topo)
    return EXIT_OK


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lorasf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lorasf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--config", metavar="PATH", help="scenario JSON file")
            sp.add_argument("--preset", metavar="NAME", help=f"bundled scenario: {', '.join(cfgmod.PRESETS)}")
            sp.add_argument("--seeds", metavar="LIST", help="override seeds, e.g. 0,1,2 or 0-4")
        sp.add_argument("--no-header-timestamp", action="store_true",
                        help="omit the timestamped first line")

    a = sub.add_parser("analyze", help="closed-form DER curves and optimal allocations")
    common(a)
    a.add_argument("--out", metavar="PATH", default="-")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run topology -> allocator -> simulator sweeps")
    common(s)
    s.add_argument("--out", metavar="PATH", default="-")
    s.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="summarize simulate reports and allocator gains")
    c.add_argument("results", nargs="+", metavar="CSV")
    c.add_argument("--reference", metavar="ALLOCATOR", help="only report gains against this allocator")
    c.add_argument("--out", metavar="PATH", default="-")
    common(c, scenario=False)
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("import-trace", help="turn an RSSI trace into a scenario bundle")
    t.add_argument("trace", metavar="TRACE_CSV")
    common(t)
    t.add_argument("--out", metavar="DIR", required=True)
    t.set_defaults(func=cmd_import_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lorasf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceFormatError, DataError) as exc:
        print(f"lorasf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DomainError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"lorasf: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

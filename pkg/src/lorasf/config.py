"""Scenario configuration: JSON-compatible, validated, round-trippable."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .phy import PathLossModel, RadioParams, Thresholds, DomainError

PLACEMENTS = ("disk", "ring", "grid", "three_operator", "trace")
SWEEP_VARIABLES = ("n_nodes", "n_gateways", "cell_radius", "source_rate")
ALLOCATOR_NAMES = (
    "adr", "fixed", "explora_sf", "explora_at", "rand_at",
    "explora_c", "explora_intersf", "explora_c_plus",
)
PRESETS = ("fig2a", "fig3a", "fig6a", "grid25", "ring", "three-operator", "trace")
UNCONSTRAINED_SENSITIVITY = {7: -125.0, 8: -126.0, 9: -129.0, 10: -132.0, 11: -134.5, 12: -137.0}


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


@dataclass(frozen=True)
class Placement:
    kind: str = "disk"
    n_nodes: int = 1000
    cell_radius: float = 12_000.0
    r0: float = 0.0
    m_side: int = 1
    spacing: float = 12_000.0
    rings: tuple[float, ...] | None = None
    path: str | None = None


@dataclass(frozen=True)
class Traffic:
    mode: str = "poisson"
    source_rate: float = 1.0 / 90.0


@dataclass(frozen=True)
class Reception:
    capture: bool = True
    intersf: bool = False
    same_operator_only: bool = False


@dataclass(frozen=True)
class AllocatorSpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.name == "fixed":
            return f"fixed_sf{self.params.get('sf', 7)}"
        if self.params.get("proportions") == "uniform":
            return f"{self.name}_uniform"
        return self.name


@dataclass(frozen=True)
class Sweep:
    variable: str = "n_nodes"
    values: tuple = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    radio: RadioParams = RadioParams()
    pathloss: PathLossModel = PathLossModel()
    thresholds: Thresholds = Thresholds()
    placement: Placement = Placement()
    traffic: Traffic = Traffic()
    reception: Reception = Reception()
    allocators: tuple[AllocatorSpec, ...] = (AllocatorSpec("explora_c"),)
    sweep: Sweep | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    duration: float = 90_000.0

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def at(self, variable: str, value) -> "ScenarioConfig":
        """Copy with one sweep variable set."""
        if variable == "n_nodes":
            return replace(self, placement=replace(self.placement, n_nodes=int(value)))
        if variable == "cell_radius":
            return replace(self, placement=replace(self.placement, cell_radius=float(value)))
        if variable == "source_rate":
            return replace(self, traffic=replace(self.traffic, source_rate=float(value)))
        if variable == "n_gateways":
            side = int(round(float(value) ** 0.5))
            if side * side != int(value):
                raise ConfigError("sweep.values", f"n_gateways={value} is not a square grid size")
            return replace(self, placement=replace(self.placement, m_side=side))
        raise ConfigError("sweep.variable", f"unknown sweep variable {variable!r}")

    def sweep_points(self) -> list[tuple[str, Any]]:
        if self.sweep is None:
            return [("none", "")]
        return [(self.sweep.variable, v) for v in self.sweep.values]


def _to_plain(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _take(d: dict, path: str, allowed) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")
    return d


def _num(v, path, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    return kind(v)


def _build(cls, d: dict | None, path: str, conv: dict):
    if d is None:
        return cls()
    _take(d, path, [f.name for f in fields(cls)])
    kw = {}
    for key, value in d.items():
        fn = conv.get(key)
        kw[key] = fn(value, f"{path}.{key}") if fn else value
    try:
        return cls(**kw)
    except (DomainError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _sf_map(v, path):
    if v is None:
        return None
    if not isinstance(v, dict):
        raise ConfigError(path, "expected an object keyed by SF")
    try:
        return {int(k): _num(x, f"{path}.{k}") for k, x in v.items()}
    except ValueError:
        raise ConfigError(path, "SF keys must be integers") from None


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    return v


def _opt_floats(v, path):
    if v is None:
        return None
    if not isinstance(v, list):
        raise ConfigError(path, "expected a list")
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))


def _allocators(v, path) -> tuple[AllocatorSpec, ...]:
    if isinstance(v, (str, dict)):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list of allocators")
    out = []
    for i, item in enumerate(v):
        p = f"{path}[{i}]"
        if isinstance(item, str):
            item = {"name": item}
        _take(item, p, ("name", "params"))
        if "name" not in item:
            raise ConfigError(f"{p}.name", "missing allocator name")
        if item["name"] not in ALLOCATOR_NAMES:
            raise ConfigError(f"{p}.name", f"unknown allocator {item['name']!r}")
        params = item.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError(f"{p}.params", "expected an object")
        out.append(AllocatorSpec(item["name"], dict(params)))
    return tuple(out)


def from_dict(d: dict, base_dir=None) -> ScenarioConfig:
    """Validate a plain mapping. Relative trace paths resolve against ``base_dir``."""
    _take(d, "config", [f.name for f in fields(ScenarioConfig)])
    if "allocators" not in d:
        raise ConfigError("config.allocators", "missing allocator name")
    radio = _build(RadioParams, d.get("radio"), "radio", {
        "spreading_factors": lambda v, p: tuple(_num(x, p, int) for x in v),
        "bandwidth_hz": lambda v, p: _num(v, p, int),
        "rdd": lambda v, p: _num(v, p, int),
        "payload_bytes": lambda v, p: _num(v, p, int),
        "carrier_hz": lambda v, p: _num(v, p, int),
        "toa_override": _sf_map,
    })
    pathloss = _build(PathLossModel, d.get("pathloss"), "pathloss", {
        k: _num for k in ("eta", "sigma2", "ref_loss_db", "ref_distance_m")
    })
    thresholds = _build(Thresholds, d.get("thresholds"), "thresholds", {"sensitivity_dbm": _sf_map})
    placement = _build(Placement, d.get("placement"), "placement", {
        "n_nodes": lambda v, p: _num(v, p, int),
        "m_side": lambda v, p: _num(v, p, int),
        "rings": _opt_floats,
        "kind": _str,
    })
    if placement.kind not in PLACEMENTS:
        raise ConfigError("placement.kind", f"unknown placement {placement.kind!r}")
    if placement.kind == "trace" and not placement.path:
        raise ConfigError("placement.path", "trace placement needs a path")
    if placement.path and base_dir is not None and not Path(placement.path).is_absolute():
        placement = replace(placement, path=str(Path(base_dir) / placement.path))
    traffic = _build(Traffic, d.get("traffic"), "traffic", {"source_rate": _num, "mode": _str})
    if traffic.mode not in ("poisson", "periodic"):
        raise ConfigError("traffic.mode", f"unknown traffic mode {traffic.mode!r}")
    if traffic.source_rate <= 0:
        raise ConfigError("traffic.source_rate", "must be positive")
    reception = _build(Reception, d.get("reception"), "reception", {
        k: _bool for k in ("capture", "intersf", "same_operator_only")
    })
    sweep = None
    if d.get("sweep") is not None:
        sw = _take(d["sweep"], "sweep", ("variable", "values"))
        if sw.get("variable") not in SWEEP_VARIABLES:
            raise ConfigError("sweep.variable", f"must be one of {', '.join(SWEEP_VARIABLES)}")
        vals = sw.get("values")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("sweep.values", "expected a non-empty list")
        sweep = Sweep(sw["variable"], tuple(_num(v, f"sweep.values[{i}]") for i, v in enumerate(vals)))
    seeds = d.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "expected a non-empty list")
    seeds = tuple(_num(s, f"seeds[{i}]", int) for i, s in enumerate(seeds))
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds", "seeds must be non-negative")
    duration = _num(d.get("duration", 90_000.0), "duration")
    if duration <= 0:
        raise ConfigError("duration", "must be positive")
    return ScenarioConfig(
        name=_str(d.get("name", "custom"), "name"),
        radio=radio, pathloss=pathloss, thresholds=thresholds, placement=placement,
        traffic=traffic, reception=reception,
        allocators=_allocators(d["allocators"], "allocators"),
        sweep=sweep, seeds=seeds, duration=duration,
    )


def load(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return from_dict(data, Path(path).resolve().parent)


def load_preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    folder = resources.files("lorasf").joinpath("presets")
    text = folder.joinpath(f"{name}.json").read_text(encoding="utf-8")
    return from_dict(json.loads(text), Path(str(folder)))

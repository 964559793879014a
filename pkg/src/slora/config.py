"""Configuration loading, validation and resolution into model objects.

A config is a YAML mapping whose sections mirror the model types.  User
files are merged key-by-key over ``default.yaml``; unknown keys and
ill-typed values are reported with their line number.  A run manifest
(JSON) is accepted wherever a config is, and reproduces that run.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import yaml

from .analytic import ErrorFamily, SlotPlan, TimingErrorModel, TrafficModel, optimal_guard, plan_slots
from .errors import ConfigError, ParameterError
from .phy import LoRaPhyProfile, ReceptionThresholds
from .sim.channel import ChannelModel
from .sim.engine import MacMode, SimConfig
from .uncertainty import DeploymentGeometry, UncertaintyBudget, build_budget

# ---------------------------------------------------------------------------
# value checkers: each returns the normalized value or raises ValueError


def _num(v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    if not math.isfinite(v):
        raise ValueError("expected a finite number")
    return float(v)


def _int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _nullable(check: Callable) -> Callable:
    return lambda v: None if v is None else check(v)


def _or_literal(check: Callable, literal: str) -> Callable:
    def inner(v):
        if v == literal:
            return v
        try:
            return check(v)
        except ValueError:
            raise ValueError(f"expected a number or {literal!r}") from None

    return inner


def _choice(options: tuple[str, ...]) -> Callable:
    def inner(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v

    return inner


def _list(check: Callable, nonempty: bool = True) -> Callable:
    def inner(v):
        if not isinstance(v, list):
            raise ValueError("expected a list")
        if nonempty and not v:
            raise ValueError("expected a non-empty list")
        return [check(x) for x in v]

    return inner


def _sf_map(v: Any) -> dict[int, float]:
    if not isinstance(v, dict):
        raise ValueError("expected a mapping from SF to dB")
    # JSON manifests carry the SF keys as strings
    return {_int(int(k) if isinstance(k, str) and k.isdigit() else k): _num(x) for k, x in v.items()}


_FAMILIES = tuple(f.value for f in ErrorFamily)
_MODES = tuple(m.value for m in MacMode)

SCHEMA: dict[str, dict[str, Any]] = {
    "phy": {
        "sf": _int,
        "bandwidth_hz": _num,
        "coding_rate_denominator": _int,
        "preamble_symbols": _int,
        "payload_bytes": _int,
        "explicit_header": _bool,
        "tx_power_dbm": _num,
        "low_data_rate_optimize": _nullable(_bool),
    },
    "thresholds": {
        "snr_threshold_db": _sf_map,
        "sir_capture_threshold_db": _num,
        "noise_figure_db": _num,
        "noise_psd_dbm_hz": _num,
    },
    "channel": {
        "path_loss_exponent": _num,
        "reference_distance_m": _num,
        "reference_loss_db": _nullable(_num),
        "carrier_hz": _num,
        "fading": _bool,
        "noise": _bool,
        "capture": _bool,
        "preamble_tolerance": _bool,
        "propagation_delay": _bool,
    },
    "plan": {
        "t_sync_s": _num,
        "guard_time_s": _or_literal(_num, "optimal"),
        "periodicity_jitter_s": _num,
        "clock_skew_ppm": _num,
    },
    "traffic": {
        "n_devices": _int,
        "duty_cycle": _num,
        "mean_interarrival_s": _nullable(_num),
        "offered_load": _nullable(_num),
    },
    "error_model": {
        "family": _choice(_FAMILIES),
        "sigma_s": _or_literal(_num, "budget"),
    },
    "uncertainty": {
        "u_tx_s": _num,
        "u_t0s_s": _num,
        "t0_period_s": _num,
        "beta": _num,
        "delay_spread_s": _num,
    },
    "geometry": {
        "r_outer_m": _num,
        "r_inner_m": _num,
        "propagation_speed_m_s": _num,
    },
    "sim": {
        "duration_s": _num,
        "warmup_s": _nullable(_num),
        "seeds": _list(_int),
        "replications": _int,
        "distance_bins": _int,
        "mac_modes": _list(_choice(_MODES)),
        "enforce_duty_cycle": _bool,
        "sweep": {
            "offered_load": _nullable(_list(_num)),
            "n_devices": _nullable(_list(_int)),
        },
    },
    "analyze": {
        "offered_load": _list(_num),
        "t_sync_inband_s": _list(_num),
        "sfs": _list(_int),
        "n_devices": _int,
        "mean_interarrival_s": _num,
    },
    "guard": {
        "sigma_s": _list(_num),
        "families": _list(_choice(_FAMILIES)),
        "sfs": _list(_int),
        "verify_step_s": _num,
    },
    "inband": {
        "t_sync_s": _num,
        "guard_time_s": _or_literal(_num, "skew"),
    },
}


# ---------------------------------------------------------------------------
# loading


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e6``-style floats (YAML 1.2 syntax)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _line_map(text: str) -> dict[tuple, int]:
    """1-based line of every key path in a YAML document."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)

    root = yaml.compose(text, Loader=_Loader)
    if root is not None:
        walk(root, ())
    return lines


def default_config() -> dict:
    text = resources.files("slora").joinpath("default.yaml").read_text()
    return yaml.load(text, Loader=_Loader)


def _merge(base: dict, user: dict, schema: dict, lines: dict, source: str, path: tuple = ()) -> None:
    if not isinstance(user, dict):
        where = f"{source}:{lines.get(path, '?')}"
        raise ConfigError(f"{where}: section {'.'.join(map(str, path)) or '<root>'} must be a mapping")
    for key, value in user.items():
        p = path + (key,)
        dotted = ".".join(map(str, p))
        where = f"{source}:{lines.get(p, '?')}"
        if key not in schema:
            known = ", ".join(sorted(map(str, schema)))
            raise ConfigError(f"{where}: unknown key {dotted!r} (expected one of: {known})")
        rule = schema[key]
        if isinstance(rule, dict):
            _merge(base[key], value, rule, lines, source, p)
            continue
        try:
            base[key] = rule(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: {dotted}: {exc}, got {value!r}") from None


def load_config(path: str | Path | None = None) -> tuple[dict, dict | None]:
    """Merged config dict and, for a manifest input, the manifest itself."""
    cfg = default_config()
    _merge(cfg, copy.deepcopy(cfg), SCHEMA, {}, "default.yaml")
    if path is None:
        return cfg, None
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    manifest = None
    if path.suffix == ".json":
        try:
            manifest = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(manifest, dict) or "config" not in manifest:
            raise ConfigError(f"{path}: a JSON config must be a run manifest with a 'config' field")
        user, lines = manifest["config"], {}
    else:
        try:
            user = yaml.load(text, Loader=_Loader)
            lines = _line_map(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark else "?"
            raise ConfigError(f"{path}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if user is not None:
        _merge(cfg, user, SCHEMA, lines, str(path))
    return cfg, manifest


# ---------------------------------------------------------------------------
# resolution into model objects


def _build(section: str, fn: Callable, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def phy_from(cfg: dict, sf: int | None = None) -> LoRaPhyProfile:
    p = dict(cfg["phy"])
    if sf is not None:
        p["sf"] = sf
    return _build("phy", LoRaPhyProfile, **p)


def thresholds_from(cfg: dict) -> ReceptionThresholds:
    return _build("thresholds", ReceptionThresholds, **cfg["thresholds"])


def channel_from(cfg: dict) -> ChannelModel:
    return _build("channel", ChannelModel, **cfg["channel"])


def geometry_from(cfg: dict) -> DeploymentGeometry:
    return _build("geometry", DeploymentGeometry, **cfg["geometry"])


def budget_from(cfg: dict) -> UncertaintyBudget:
    u = cfg["uncertainty"]
    return _build(
        "uncertainty",
        build_budget,
        geometry_from(cfg),
        u_tx_s=u["u_tx_s"],
        u_t0s_s=u["u_t0s_s"],
        t0_period_s=u["t0_period_s"],
        beta=u["beta"],
        t_sync_s=cfg["plan"]["t_sync_s"],
        delay_spread_s=u["delay_spread_s"],
    )


def error_model_from(cfg: dict) -> TimingErrorModel:
    e = cfg["error_model"]
    sigma = budget_from(cfg).sigma_s if e["sigma_s"] == "budget" else e["sigma_s"]
    return _build("error_model", TimingErrorModel, e["family"], sigma)


def traffic_from(cfg: dict, toa_s: float, n_devices: int | None = None, offered_load: float | None = None) -> TrafficModel:
    t = cfg["traffic"]
    if t["offered_load"] is not None and t["mean_interarrival_s"] is not None:
        raise ConfigError("traffic: set at most one of offered_load and mean_interarrival_s")
    n = t["n_devices"] if n_devices is None else n_devices
    if offered_load is not None:
        return _build("traffic", TrafficModel.from_offered_load, offered_load, n, toa_s, t["duty_cycle"])
    if t["offered_load"] is not None:
        return _build("traffic", TrafficModel.from_offered_load, t["offered_load"], n, toa_s, t["duty_cycle"])
    if t["mean_interarrival_s"] is not None:
        return _build("traffic", TrafficModel, n, t["mean_interarrival_s"], toa_s, t["duty_cycle"])
    return _build("traffic", TrafficModel.at_duty_cycle_limit, n, toa_s, t["duty_cycle"])


def plan_from(cfg: dict, phy: LoRaPhyProfile, model: TimingErrorModel) -> SlotPlan:
    p = cfg["plan"]
    tg = p["guard_time_s"]
    if tg == "optimal":
        tg = optimal_guard(model, phy.toa, phy.t_c)
    return _build("plan", plan_slots, p["t_sync_s"], phy.toa, tg, p["periodicity_jitter_s"], p["clock_skew_ppm"])


@dataclass(frozen=True)
class SweepPoint:
    mac_mode: MacMode
    n_devices: int
    offered_load: float | None


def sweep_points(cfg: dict) -> list[SweepPoint]:
    s = cfg["sim"]
    loads = s["sweep"]["offered_load"] or [cfg["traffic"]["offered_load"]]
    sizes = s["sweep"]["n_devices"] or [cfg["traffic"]["n_devices"]]
    return [SweepPoint(MacMode(m), n, g) for m in s["mac_modes"] for n in sizes for g in loads]


def seed_list(cfg: dict) -> list[int]:
    seeds = list(cfg["sim"]["seeds"])
    k = cfg["sim"]["replications"]
    if k < 1:
        raise ConfigError("sim.replications must be >= 1")
    nxt = max(seeds) + 1
    while len(seeds) < k:
        seeds.append(nxt)
        nxt += 1
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sim.seeds must be distinct")
    return seeds


def sim_config_from(cfg: dict, point: SweepPoint, seed: int) -> SimConfig:
    phy = phy_from(cfg)
    model = error_model_from(cfg)
    plan = plan_from(cfg, phy, model)
    traffic = traffic_from(cfg, phy.toa, point.n_devices, point.offered_load)
    s = cfg["sim"]
    config = SimConfig(
        phy=phy,
        traffic=traffic,
        plan=plan,
        error_model=model,
        geometry=geometry_from(cfg),
        thresholds=thresholds_from(cfg),
        channel=channel_from(cfg),
        mac_mode=point.mac_mode,
        sim_duration_s=s["duration_s"],
        warmup_s=s["warmup_s"],
        rng_seed=seed,
        distance_bins=s["distance_bins"],
        enforce_duty_cycle=s["enforce_duty_cycle"],
    )
    config.validate()
    return config


def inband_guard_s(cfg: dict, t_sync_inband_s: float | None = None) -> float:
    """In-band guard time: fixed, or the full clock-skew allowance over the interval."""
    t = cfg["inband"]["t_sync_s"] if t_sync_inband_s is None else t_sync_inband_s
    g = cfg["inband"]["guard_time_s"]
    return cfg["plan"]["clock_skew_ppm"] * 1e-6 * t if g == "skew" else g

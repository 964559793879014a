"""Seeded discrete-event simulation of a single-gateway, single-SF LoRa cell.

Two access schemes share the same devices, traffic and channel:

``PureAloha``
    a frame leaves as soon as it is generated (queued behind the device's
    own ongoing transmission, if any).

``SlottedOob``
    every message waits for the next two synchronization events; the second
    one opens the transmission phase in which the message goes out in a
    uniformly chosen slot, offset by one timing-error draw.  A device holding
    several ready messages puts them in distinct slots.  Ready messages that
    do not fit stay queued for the following phase.

Randomness.  Every device owns independent streams for placement, traffic,
slot choice, timing error and fading, derived from the root seed as
``SeedSequence(seed, spawn_key=(device_id, stream))``.  Adding devices or
changing sigma, guard time or thresholds therefore leaves all other draws
untouched.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from enum import Enum
from typing import Any

import numpy as np

from ..analytic import SlotPlan, TimingErrorModel, TrafficModel
from ..errors import ConfigError, ParameterError
from ..metrics import (
    DeviceStats,
    SimReport,
    data_extraction_rate,
    distance_binned_success,
    jain_fairness,
    normalized_throughput,
)
from ..phy import LoRaPhyProfile, ReceptionThresholds
from ..uncertainty import DeploymentGeometry
from .channel import ChannelModel, channel_gain, draw_timing_error, place_devices
from .reception import FrameRecord, Outcome, resolve_receptions

STREAM_PLACEMENT = 0
STREAM_TRAFFIC = 1
STREAM_SLOT = 2
STREAM_TIMING = 3
STREAM_FADING = 4


class MacMode(str, Enum):
    PURE_ALOHA = "PureAloha"
    SLOTTED_OOB = "SlottedOob"


class Phase(str, Enum):
    SLEEP = "Sleep"
    SYNCING = "Syncing"
    TX_PHASE = "TxPhase"


def device_rng(seed: int, device_id: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(device_id, stream))))


@dataclass(frozen=True)
class SimConfig:
    phy: LoRaPhyProfile
    traffic: TrafficModel
    plan: SlotPlan
    error_model: TimingErrorModel = TimingErrorModel()
    geometry: DeploymentGeometry = DeploymentGeometry()
    thresholds: ReceptionThresholds = field(default_factory=ReceptionThresholds)
    channel: ChannelModel = ChannelModel()
    mac_mode: MacMode = MacMode.SLOTTED_OOB
    sim_duration_s: float = 1200.0
    warmup_s: float | None = None
    rng_seed: int = 0
    distance_bins: int = 10
    enforce_duty_cycle: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "mac_mode", MacMode(self.mac_mode))

    @property
    def effective_warmup_s(self) -> float:
        if self.warmup_s is not None:
            return self.warmup_s
        return max(2.0 * self.plan.t_sync_s, 60.0)

    def validate(self) -> None:
        toa = self.phy.toa
        warm = self.effective_warmup_s
        if not self.sim_duration_s > warm >= 0:
            raise ConfigError(f"need sim_duration_s ({self.sim_duration_s}) > warmup_s ({warm}) >= 0")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        if self.distance_bins < 1:
            raise ConfigError("distance_bins must be >= 1")
        if not math.isclose(self.traffic.toa_s, toa, rel_tol=1e-12):
            raise ConfigError(f"traffic ToA {self.traffic.toa_s} does not match PHY ToA {toa}")
        span = self.plan.slot_count * (toa + self.plan.guard_time_s) + self.plan.phase_guard_s
        if self.plan.slot_count < 1 or not math.isclose(span, self.plan.t_sync_s, rel_tol=1e-9):
            raise ConfigError("slot plan does not tile the sync interval for this PHY")
        if self.plan.phase_guard_s < 2 * self.plan.periodicity_jitter_s - 1e-12:
            raise ConfigError("phase guard smaller than twice the periodicity jitter")
        if self.enforce_duty_cycle:
            try:
                self.traffic.check_oob()
            except ParameterError as exc:
                raise ConfigError(str(exc)) from exc
        try:
            self.thresholds.snr_threshold(self.phy.sf)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class Message:
    generated_s: float
    syncs: int = 0


@dataclass
class DeviceState:
    """Protocol state of one end device.

    ``phase`` reports the most advanced activity: ``TxPhase`` while frames are
    scheduled in the current phase, else ``Syncing`` while messages wait for
    sync events, else ``Sleep``.
    """

    id: int
    position: tuple[float, float]
    distance_m: float
    phase: Phase = Phase.SLEEP
    queue: list[Message] = field(default_factory=list)
    next_event_s: float = math.inf
    t_minus1_s: float | None = None
    t0_s: float | None = None
    busy_until_s: float = -math.inf
    generated: int = 0

    @property
    def queued_message(self) -> Message | None:
        return self.queue[0] if self.queue else None


@dataclass
class SimRun:
    config: SimConfig
    devices: list[DeviceState]
    frames: list[FrameRecord]
    generated: int
    queued_at_end: int
    phase_log: list[tuple[float, int, Phase, Phase]]

    def outcome_counts(self) -> dict[str, int]:
        counts = {o.value: 0 for o in Outcome}
        for f in self.frames:
            counts[f.outcome.value] += 1
        return counts


# event kinds, ordered for ties at equal timestamps
_SYNC, _TX_END, _TX_START, _GEN = range(4)


class _Simulator:
    def __init__(self, config: SimConfig, log_phases: bool = False):
        self.cfg = config
        self.toa = config.phy.toa
        self.end = config.sim_duration_s
        self.heap: list = []
        self.seq = itertools.count()
        self.frames: list[FrameRecord] = []
        self.log_phases = log_phases
        self.phase_log: list[tuple[float, int, Phase, Phase]] = []
        n = config.traffic.n_devices
        seed = config.rng_seed
        self.rng_traffic = [device_rng(seed, i, STREAM_TRAFFIC) for i in range(n)]
        self.rng_slot = [device_rng(seed, i, STREAM_SLOT) for i in range(n)]
        self.rng_timing = [device_rng(seed, i, STREAM_TIMING) for i in range(n)]
        self.rng_fading = [device_rng(seed, i, STREAM_FADING) for i in range(n)]
        self.devices = []
        for i in range(n):
            x, y = place_devices(1, config.geometry, device_rng(seed, i, STREAM_PLACEMENT))[0]
            self.devices.append(DeviceState(i, (float(x), float(y)), max(math.hypot(x, y), 1e-3)))

    def push(self, t: float, kind: int, payload: Any) -> None:
        heapq.heappush(self.heap, (t, kind, next(self.seq), payload))

    def set_phase(self, t: float, dev: DeviceState, phase: Phase) -> None:
        if self.log_phases and phase is not dev.phase:
            self.phase_log.append((t, dev.id, dev.phase, phase))
        dev.phase = phase

    def schedule_generation(self, dev: DeviceState, now: float) -> None:
        t = now + self.rng_traffic[dev.id].exponential(self.cfg.traffic.mean_interarrival_s)
        if t < self.end:
            dev.next_event_s = t
            self.push(t, _GEN, dev)

    def emit(self, dev: DeviceState, msg: Message, nominal: float, actual: float, slot: int | None) -> None:
        rx = channel_gain(dev.distance_m, self.rng_fading[dev.id], self.cfg.channel, self.cfg.phy.tx_power_dbm)
        arrival = actual
        if self.cfg.channel.propagation_delay:
            arrival += dev.distance_m / self.cfg.geometry.propagation_speed_m_s
        self.frames.append(FrameRecord(dev.id, slot, nominal, actual, arrival, rx, dev.distance_m, msg.generated_s))

    # -- pure ALOHA ---------------------------------------------------------

    def aloha_start(self, dev: DeviceState, msg: Message, t: float) -> None:
        self.emit(dev, msg, t, t, None)
        dev.busy_until_s = t + self.toa
        self.set_phase(t, dev, Phase.TX_PHASE)
        self.push(dev.busy_until_s, _TX_END, dev)

    def run_aloha(self) -> None:
        while self.heap:
            t, kind, _, dev = heapq.heappop(self.heap)
            if kind == _GEN:
                dev.generated += 1
                msg = Message(t)
                if t >= dev.busy_until_s and not dev.queue:
                    self.aloha_start(dev, msg, t)
                else:
                    dev.queue.append(msg)
                self.schedule_generation(dev, t)
            elif kind == _TX_END:
                if dev.queue and t < self.end:
                    self.aloha_start(dev, dev.queue.pop(0), t)
                else:
                    self.set_phase(t, dev, Phase.SLEEP)

    # -- slotted, out-of-band synchronized ------------------------------------

    def run_slotted(self) -> None:
        plan = self.cfg.plan
        slot_len = self.toa + plan.guard_time_s
        k = 1
        while k * plan.t_sync_s < self.end:
            self.push(k * plan.t_sync_s, _SYNC, None)
            k += 1
        awake: dict[int, DeviceState] = {}

        while self.heap:
            t, kind, _, payload = heapq.heappop(self.heap)
            if kind == _GEN:
                dev = payload
                dev.generated += 1
                dev.queue.append(Message(t))
                if dev.phase is Phase.SLEEP:
                    self.set_phase(t, dev, Phase.SYNCING)
                awake[dev.id] = dev
                self.schedule_generation(dev, t)
            elif kind == _TX_START:
                dev, msg, nominal, actual, slot = payload
                self.emit(dev, msg, nominal, actual, slot)
            elif kind == _SYNC:
                for dev_id in sorted(awake):
                    dev = awake[dev_id]
                    dev.t_minus1_s, dev.t0_s = dev.t0_s, t
                    ready = []
                    for msg in dev.queue:
                        msg.syncs += 1
                        if msg.syncs >= 2:
                            ready.append(msg)
                    sent = []
                    if ready:
                        count = min(len(ready), plan.slot_count)
                        slots = self.rng_slot[dev_id].choice(plan.slot_count, size=count, replace=False)
                        for msg, slot in zip(ready[:count], slots):
                            nominal = plan.slot_start(t, int(slot), self.toa)
                            if nominal >= self.end:
                                continue
                            actual = nominal + draw_timing_error(self.cfg.error_model, self.rng_timing[dev_id])
                            self.push(actual, _TX_START, (dev, msg, nominal, actual, int(slot)))
                            sent.append(msg)
                    if sent:
                        sent_ids = {id(m) for m in sent}
                        dev.queue = [m for m in dev.queue if id(m) not in sent_ids]
                        self.set_phase(t, dev, Phase.TX_PHASE)
                    elif dev.queue:
                        self.set_phase(t, dev, Phase.SYNCING)
                    else:
                        self.set_phase(t, dev, Phase.SLEEP)
                        del awake[dev_id]
        # frames are emitted in time order of their actual start; keep them that way
        self.frames.sort(key=lambda f: (f.actual_start_s, f.device_id))

    def run(self) -> SimRun:
        for dev in self.devices:
            self.schedule_generation(dev, 0.0)
        if self.cfg.mac_mode is MacMode.PURE_ALOHA:
            self.run_aloha()
        else:
            self.run_slotted()
        resolve_receptions(self.frames, self.cfg.thresholds, self.cfg.phy, self.cfg.channel)
        generated = sum(d.generated for d in self.devices)
        queued = sum(len(d.queue) for d in self.devices)
        return SimRun(self.cfg, self.devices, self.frames, generated, queued, self.phase_log)


def simulate(config: SimConfig, log_phases: bool = False) -> SimRun:
    """Run the event loop and resolve every frame; no metrics."""
    config.validate()
    return _Simulator(config, log_phases).run()


def _jsonable(obj: Any) -> Any:
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_to_dict(config: SimConfig) -> dict:
    return _jsonable(config)


def config_hash(config: SimConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_report(run: SimRun) -> SimReport:
    cfg = run.config
    toa = cfg.phy.toa
    start, end = cfg.effective_warmup_s, cfg.sim_duration_s
    measured = end - start
    window = [f for f in run.frames if start <= f.actual_start_s < end]
    success = [f.outcome is Outcome.SUCCESS for f in window]

    offered = np.zeros(len(run.devices), dtype=int)
    delivered = np.zeros(len(run.devices), dtype=int)
    for f, ok in zip(window, success):
        offered[f.device_id] += 1
        delivered[f.device_id] += ok
    per_device = tuple(
        DeviceStats(d.id, d.distance_m, int(offered[d.id]), int(delivered[d.id])) for d in run.devices
    )
    ratios = [s.ratio for s in per_device if s.offered > 0]
    jain = jain_fairness(ratios) if ratios else None

    bins = distance_binned_success(
        [f.distance_m for f in window], success, cfg.geometry.r_outer_m, cfg.distance_bins
    )
    n_success = int(sum(success))
    counts = run.outcome_counts()
    counts.update(
        generated=run.generated,
        queued_at_end=run.queued_at_end,
        transmitted=len(run.frames),
        window_transmitted=len(window),
        window_success=n_success,
        captured=sum(1 for f in run.frames if f.captured),
    )
    meta = {
        "seed": cfg.rng_seed,
        "mac_mode": cfg.mac_mode.value,
        "sf": cfg.phy.sf,
        "n_devices": cfg.traffic.n_devices,
        "offered_load": cfg.traffic.offered_load,
        "sigma_s": cfg.error_model.sigma_s,
        "guard_time_s": cfg.plan.guard_time_s,
        "slot_count": cfg.plan.slot_count,
        "duration_s": cfg.sim_duration_s,
        "warmup_s": start,
        "measured_s": measured,
        "toa_s": toa,
        "config_hash": config_hash(cfg),
    }
    return SimReport(
        normalized_throughput=normalized_throughput(n_success, toa, measured),
        der=data_extraction_rate(n_success, len(window)),
        per_device=per_device,
        jain=jain,
        distance_bins=tuple(bins),
        run_meta=meta,
        counts=counts,
    )


def run_simulation(config: SimConfig) -> SimReport:
    """Simulate one seeded run and compute its metrics over ``[warmup, duration)``."""
    return build_report(simulate(config))


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, rng_seed=seed)


def scenario(
    sf: int = 7,
    n_devices: int = 200,
    offered_load: float | None = None,
    sigma_s: float = 0.0,
    family: str = "gaussian",
    guard_time_s: float | str = "optimal",
    mac_mode: MacMode | str = MacMode.SLOTTED_OOB,
    channel: ChannelModel | None = None,
    duration_s: float = 1200.0,
    seed: int = 0,
    t_sync_s: float = 60.0,
    jitter_s: float = 0.0,
    radius_m: float = 6000.0,
    duty_cycle: float = 0.0033,
    warmup_s: float | None = None,
    thresholds: ReceptionThresholds | None = None,
    enforce_duty_cycle: bool | None = None,
) -> SimConfig:
    """Single-gateway cell with the usual defaults; ``offered_load=None`` runs at the duty-cycle limit.

    An explicit ``offered_load`` above what the duty cycle allows is accepted
    unless ``enforce_duty_cycle`` is set, since validation scenarios need
    loads the regulatory cap would forbid at small ``N``.
    """
    from ..analytic import optimal_guard, plan_slots

    phy = LoRaPhyProfile(sf=sf)
    toa = phy.toa
    if offered_load is None:
        traffic = TrafficModel.at_duty_cycle_limit(n_devices, toa, duty_cycle)
    else:
        traffic = TrafficModel.from_offered_load(offered_load, n_devices, toa, duty_cycle)
    model = TimingErrorModel(family, sigma_s)
    tg = optimal_guard(model, toa, phy.t_c) if guard_time_s == "optimal" else float(guard_time_s)
    plan = plan_slots(t_sync_s, toa, tg, jitter_s)
    if enforce_duty_cycle is None:
        enforce_duty_cycle = offered_load is None
    return SimConfig(
        phy=phy,
        traffic=traffic,
        plan=plan,
        error_model=model,
        geometry=DeploymentGeometry.disk(radius_m),
        thresholds=thresholds or ReceptionThresholds(),
        channel=channel or ChannelModel(),
        mac_mode=MacMode(mac_mode),
        sim_duration_s=duration_s,
        warmup_s=warmup_s,
        rng_seed=seed,
        enforce_duty_cycle=enforce_duty_cycle,
    )

"""Discrete-event simulation of a single LoRa cell."""

from .channel import ChannelModel, channel_gain, draw_timing_error, inject_timing_error, place_devices
from .engine import (
    DeviceState,
    MacMode,
    Phase,
    SimConfig,
    SimRun,
    build_report,
    config_hash,
    config_to_dict,
    run_simulation,
    scenario,
    simulate,
)
from .reception import FrameRecord, Outcome, resolve_receptions

__all__ = [
    "ChannelModel",
    "DeviceState",
    "FrameRecord",
    "MacMode",
    "Outcome",
    "Phase",
    "SimConfig",
    "SimRun",
    "build_report",
    "channel_gain",
    "config_hash",
    "config_to_dict",
    "draw_timing_error",
    "inject_timing_error",
    "place_devices",
    "resolve_receptions",
    "run_simulation",
    "scenario",
    "simulate",
]

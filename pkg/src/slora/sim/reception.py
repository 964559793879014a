"""Gateway-side outcome of overlapping frames on one spreading factor.

Order of verdicts for each frame:

1. below the SNR floor -> ``BelowNoise`` (such frames also do not interfere);
2. timing: a later frame overlapping our tail -> ``CrcError``; an earlier
   (or simultaneous) frame overlapping our preamble by at least ``t_c`` ->
   ``Dropped``;
3. capture: a loss from step 2 becomes ``Success`` when our power exceeds
   the summed power of every overlapping audible frame by the SIR threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from ..errors import AccountingError
from ..phy import LoRaPhyProfile, ReceptionThresholds
from .channel import ChannelModel

# Frames that merely touch (float residue of back-to-back slots) do not overlap.
OVERLAP_EPS_S = 1e-9


class Outcome(str, Enum):
    SUCCESS = "Success"
    CRC_ERROR = "CrcError"
    DROPPED = "Dropped"
    BELOW_NOISE = "BelowNoise"


@dataclass(slots=True)
class FrameRecord:
    device_id: int
    slot_index: int | None
    nominal_start_s: float
    actual_start_s: float
    arrival_start_s: float
    rx_power_dbm: float
    distance_m: float = 0.0
    generated_s: float = 0.0
    outcome: Outcome | None = None
    captured: bool = False

    def set_outcome(self, outcome: Outcome, captured: bool = False) -> None:
        if self.outcome is not None:
            raise AccountingError(f"outcome already set for frame of device {self.device_id}")
        self.outcome = outcome
        self.captured = captured

    @property
    def timing_error_s(self) -> float:
        return self.actual_start_s - self.nominal_start_s


def _loss_verdict(order_starts: list[float], pos: int, toa: float, tc: float, audible_sorted: list[bool]) -> tuple[Outcome, list[int]]:
    start = order_starts[pos]
    verdict = Outcome.SUCCESS
    overlapping = []
    j = pos - 1
    while j >= 0 and start - order_starts[j] < toa - OVERLAP_EPS_S:
        if audible_sorted[j]:
            overlapping.append(j)
            overlap = order_starts[j] + toa - start
            if overlap >= tc:
                verdict = Outcome.DROPPED
        j -= 1
    j = pos + 1
    n = len(order_starts)
    while j < n and order_starts[j] - start < toa - OVERLAP_EPS_S:
        if audible_sorted[j]:
            overlapping.append(j)
            if order_starts[j] - start <= OVERLAP_EPS_S:
                # simultaneous start hits the preamble as well
                verdict = Outcome.DROPPED
            elif verdict is not Outcome.DROPPED:
                verdict = Outcome.CRC_ERROR
        j += 1
    return verdict, overlapping


def resolve_receptions(
    frames: Sequence[FrameRecord],
    thresholds: ReceptionThresholds,
    phy: LoRaPhyProfile,
    channel: ChannelModel | None = None,
) -> list[Outcome]:
    """Assign an outcome to every frame (in place) and return them in input order."""
    channel = channel or ChannelModel()
    toa = phy.toa
    tc = phy.t_c if channel.preamble_tolerance else 0.0
    noise_floor = thresholds.noise_floor_dbm(phy.bandwidth_hz)
    snr_min = thresholds.snr_threshold(phy.sf)
    sir_min = thresholds.sir_capture_threshold_db

    order = sorted(range(len(frames)), key=lambda i: (frames[i].arrival_start_s, frames[i].device_id, i))
    starts = [frames[i].arrival_start_s for i in order]
    audible = [(not channel.noise) or (frames[i].rx_power_dbm - noise_floor >= snr_min) for i in order]
    power_mw = [10.0 ** (frames[i].rx_power_dbm / 10.0) for i in order]

    for pos, idx in enumerate(order):
        frame = frames[idx]
        if not audible[pos]:
            frame.set_outcome(Outcome.BELOW_NOISE)
            continue
        verdict, overlapping = _loss_verdict(starts, pos, toa, tc, audible)
        if verdict is not Outcome.SUCCESS and channel.capture:
            interference = math.fsum(power_mw[j] for j in overlapping)
            if 10.0 * math.log10(power_mw[pos] / interference) >= sir_min:
                frame.set_outcome(Outcome.SUCCESS, captured=True)
                continue
        frame.set_outcome(verdict)
    return [f.outcome for f in frames]


"""Radio channel, device placement and timing-error injection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..analytic import ErrorFamily, TimingErrorModel
from ..errors import ParameterError
from ..uncertainty import DeploymentGeometry

SQRT3 = math.sqrt(3.0)


def free_space_loss_db(distance_m: float, carrier_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * distance_m * carrier_hz / 299_792_458.0)


@dataclass(frozen=True)
class ChannelModel:
    """Log-distance path loss with optional Rayleigh fading, noise floor and capture.

    ``reference_loss_db=None`` uses the free-space loss at
    ``reference_distance_m`` for ``carrier_hz``.  Switching ``fading``,
    ``noise`` and ``capture`` off (with ``preamble_tolerance`` off too) gives
    the textbook destructive-collision channel.
    """

    path_loss_exponent: float = 3.0
    reference_distance_m: float = 1.0
    reference_loss_db: float | None = None
    carrier_hz: float = 868.1e6
    fading: bool = True
    noise: bool = True
    capture: bool = True
    preamble_tolerance: bool = True
    propagation_delay: bool = False

    def __post_init__(self) -> None:
        if not self.reference_distance_m > 0 or not self.carrier_hz > 0:
            raise ParameterError("reference distance and carrier must be positive")

    @classmethod
    def ideal(cls, preamble_tolerance: bool = True) -> ChannelModel:
        return cls(fading=False, noise=False, capture=False, preamble_tolerance=preamble_tolerance)

    @property
    def pl0_db(self) -> float:
        if self.reference_loss_db is not None:
            return self.reference_loss_db
        return free_space_loss_db(self.reference_distance_m, self.carrier_hz)

    def path_loss_db(self, distance_m: float) -> float:
        if not distance_m > 0:
            raise ParameterError("distance must be positive")
        return self.pl0_db + 10.0 * self.path_loss_exponent * math.log10(distance_m / self.reference_distance_m)


def channel_gain(
    distance_m: float,
    rng: np.random.Generator | None,
    channel: ChannelModel,
    tx_power_dbm: float = 14.0,
) -> float:
    """Received power in dBm for one frame.

    The fading draw is consumed whenever ``rng`` is given, even with fading
    disabled, so toggling fading never shifts later draws.
    """
    h = rng.exponential(1.0) if rng is not None else 1.0
    rx = tx_power_dbm - channel.path_loss_db(distance_m)
    if channel.fading:
        rx += 10.0 * math.log10(h)
    return rx


def place_devices(n: int, geometry: DeploymentGeometry, rng: np.random.Generator) -> np.ndarray:
    """``(n, 2)`` positions uniform over the deployment annulus, gateway at the origin."""
    if n < 1:
        raise ParameterError("need at least one device")
    u = rng.random(n)
    theta = rng.random(n) * 2.0 * math.pi
    r_in, r_out = geometry.r_inner_m, geometry.r_outer_m
    r = np.sqrt(r_in * r_in + u * (r_out * r_out - r_in * r_in))
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def draw_timing_error(model: TimingErrorModel, rng: np.random.Generator) -> float:
    if model.family is ErrorFamily.GAUSSIAN:
        z = rng.standard_normal()
    else:
        z = rng.uniform(-SQRT3, SQRT3)
    return z * model.sigma_s


def inject_timing_error(nominal_start_s: float, model: TimingErrorModel, rng: np.random.Generator) -> float:
    """Shift a nominal slot boundary by one i.i.d. draw of the timing error."""
    return nominal_start_s + draw_timing_error(model, rng)

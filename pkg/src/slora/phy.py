"""LoRa physical-layer profile: symbol and frame airtimes, reception thresholds.

Airtime follows the Semtech SX1272 datasheet formula::

    T_sym      = 2**SF / BW
    T_preamble = (n_preamble + 4.25) * T_sym
    n_payload  = 8 + max(ceil((8*PL - 4*SF + 28 + 16*CRC - 20*IH) / (4*(SF - 2*DE))) * CR_den, 0)
    ToA        = T_preamble + n_payload * T_sym

Worked example (SF7, 125 kHz, 10 byte payload, CR 4/8, 8 preamble symbols,
explicit header, CRC on, DE = 0)::

    T_sym      = 128 / 125000            = 1.024 ms
    numerator  = 80 - 28 + 28 + 16 - 0   = 96
    n_payload  = 8 + ceil(96 / 28) * 8   = 8 + 4 * 8 = 40
    ToA        = (12.25 + 40) * 1.024 ms = 53.504 ms

The survivable preamble overlap ``t_c`` is the preamble minus the five
symbols the demodulator needs to lock: ``t_c = T_preamble - 5 * T_sym``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ParameterError

SF_MIN = 7
SF_MAX = 12
PREAMBLE_FIXED_SYMBOLS = 4.25
PREAMBLE_LOCK_SYMBOLS = 5

# SF8/9/11 values are SX1272 datasheet demodulator floors.
DEFAULT_SNR_THRESHOLDS_DB: dict[int, float] = {
    7: -6.0,
    8: -10.0,
    9: -12.5,
    10: -15.0,
    11: -17.5,
    12: -20.0,
}


def _check_sf(sf: int) -> None:
    if not isinstance(sf, (int,)) or isinstance(sf, bool) or not SF_MIN <= sf <= SF_MAX:
        raise ParameterError(f"spreading factor must be an integer in [{SF_MIN}, {SF_MAX}], got {sf!r}")


def symbol_time(sf: int, bandwidth_hz: float) -> float:
    """Chirp symbol duration ``2**sf / bandwidth_hz`` in seconds."""
    _check_sf(sf)
    if not bandwidth_hz > 0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth_hz!r}")
    return (2**sf) / bandwidth_hz


@dataclass(frozen=True)
class LoRaPhyProfile:
    """Frame and modulation parameters for one spreading factor.

    Derived airtimes (``t_sym``, ``t_preamble``, ``t_c``, ``toa``) are
    recomputed from the primitive fields on access.
    """

    sf: int = 7
    bandwidth_hz: float = 125_000.0
    coding_rate_denominator: int = 8
    preamble_symbols: int = 8
    payload_bytes: int = 10
    explicit_header: bool = True
    tx_power_dbm: float = 14.0
    crc_on: bool = True
    low_data_rate_optimize: bool | None = None

    def __post_init__(self) -> None:
        _check_sf(self.sf)
        if not self.bandwidth_hz > 0:
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth_hz!r}")
        if not 5 <= self.coding_rate_denominator <= 8:
            raise ParameterError(
                f"coding rate denominator must be in 5..8 (4/5..4/8), got {self.coding_rate_denominator!r}"
            )
        if self.preamble_symbols < 1:
            raise ParameterError(f"preamble must have at least one symbol, got {self.preamble_symbols!r}")
        if not 0 <= self.payload_bytes <= 255:
            raise ParameterError(f"payload must be 0..255 bytes, got {self.payload_bytes!r}")

    @property
    def low_data_rate(self) -> bool:
        if self.low_data_rate_optimize is not None:
            return self.low_data_rate_optimize
        return self.sf >= 11 and self.bandwidth_hz <= 125_000.0

    @property
    def t_sym(self) -> float:
        return symbol_time(self.sf, self.bandwidth_hz)

    @property
    def t_preamble(self) -> float:
        return (self.preamble_symbols + PREAMBLE_FIXED_SYMBOLS) * self.t_sym

    @property
    def t_c(self) -> float:
        """Longest preamble overlap the receiver survives."""
        return self.t_preamble - PREAMBLE_LOCK_SYMBOLS * self.t_sym

    @property
    def payload_symbols(self) -> int:
        de = 1 if self.low_data_rate else 0
        ih = 0 if self.explicit_header else 1
        crc = 16 if self.crc_on else 0
        numerator = 8 * self.payload_bytes - 4 * self.sf + 28 + crc - 20 * ih
        blocks = math.ceil(numerator / (4 * (self.sf - 2 * de)))
        return 8 + max(blocks * self.coding_rate_denominator, 0)

    @property
    def toa(self) -> float:
        return self.t_preamble + self.payload_symbols * self.t_sym


def time_on_air(profile: LoRaPhyProfile) -> float:
    """Total frame airtime in seconds."""
    return profile.toa


@dataclass(frozen=True)
class ReceptionThresholds:
    """Gateway demodulation floors and the power-capture threshold."""

    snr_threshold_db: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_SNR_THRESHOLDS_DB))
    sir_capture_threshold_db: float = 1.0
    noise_figure_db: float = 6.0
    noise_psd_dbm_hz: float = -174.0

    def snr_threshold(self, sf: int) -> float:
        try:
            return self.snr_threshold_db[sf]
        except KeyError:
            raise ParameterError(f"no SNR threshold configured for SF{sf}") from None

    def noise_floor_dbm(self, bandwidth_hz: float) -> float:
        return self.noise_psd_dbm_hz + 10.0 * math.log10(bandwidth_hz) + self.noise_figure_db

    def sensitivity_dbm(self, sf: int, bandwidth_hz: float) -> float:
        return self.noise_floor_dbm(bandwidth_hz) + self.snr_threshold(sf)

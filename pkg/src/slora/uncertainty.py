"""Timing-error budget for out-of-band synchronized transmissions.

Components, all standard uncertainties in seconds:

* ``u_tx``  transceiver start-of-transmission jitter (Type A),
* ``u_pd``  unknown propagation delay of a device placed uniformly in an annulus (Type B),
* ``u_v``   local-clock error accumulated over one synchronization interval.

Clock convention.  Quantization terms are expressed in seconds
(``u_t0q = u_t0d = T_0 / sqrt(3)``), so the clock term is
``u_v = beta * sqrt(u_Tsync**2 + u_td**2 + u_t0**2)``, which gives
``sqrt(5) * u_t0s`` when the detection error dominates and ``sqrt(2) * T_0``
when quantization alone remains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParameterError

SPEED_OF_LIGHT = 2.998e8


@dataclass(frozen=True)
class DeploymentGeometry:
    """Devices uniform over the annulus ``r_inner_m <= r <= r_outer_m``."""

    r_outer_m: float = 6000.0
    r_inner_m: float = 0.0
    propagation_speed_m_s: float = SPEED_OF_LIGHT

    def __post_init__(self) -> None:
        if self.r_inner_m < 0 or self.r_outer_m < self.r_inner_m:
            raise ParameterError("need 0 <= r_inner <= r_outer")
        if self.r_outer_m > 0 and self.r_inner_m == self.r_outer_m:
            raise ParameterError("annulus must have positive width")
        if not self.propagation_speed_m_s > 0:
            raise ParameterError("propagation speed must be positive")

    @classmethod
    def disk(cls, radius_m: float, propagation_speed_m_s: float = SPEED_OF_LIGHT) -> DeploymentGeometry:
        return cls(radius_m, 0.0, propagation_speed_m_s)

    @property
    def cell_radius_m(self) -> float:
        return self.r_outer_m


def propagation_delay_stats(geometry: DeploymentGeometry, delay_spread_s: float = 0.0) -> tuple[float, float, float]:
    """Mean, standard deviation and Type B uncertainty of the one-way delay.

    The delay density is ``2 x v^2 / (R_L^2 - R_l^2)`` on ``[R_l/v, R_L/v]``.
    ``delay_spread_s`` adds an RMS multipath spread in quadrature to the
    uncertainty only.
    """
    if delay_spread_s < 0:
        raise ParameterError("delay spread must be non-negative")
    a, b, v = geometry.r_inner_m, geometry.r_outer_m, geometry.propagation_speed_m_s
    if b == 0:
        return 0.0, 0.0, delay_spread_s
    mean = 2.0 * (a * a + a * b + b * b) / (3.0 * (a + b) * v)
    # variance factored so the thin-ring limit does not cancel catastrophically
    var = (b - a) ** 2 * (a * a + 4 * a * b + b * b) / (18.0 * (a + b) ** 2 * v * v)
    sd = math.sqrt(var)
    return mean, sd, math.sqrt(mean * mean + var + delay_spread_s**2)


def estimate_clock_rate(t_minus1_s: float, t0_s: float, t_sync_s: float, t0_period_s: float) -> float:
    """Clock rate from the local clock values latched at two successive sync events."""
    if not t0_s > t_minus1_s:
        raise ParameterError("sync timestamps must be strictly increasing")
    if not t_sync_s > 0 or not t0_period_s > 0:
        raise ParameterError("sync period and clock period must be positive")
    return (t0_s - t_minus1_s) / (t_sync_s * t0_period_s)


@dataclass(frozen=True)
class ClockModel:
    """First-order (skew) local clock anchored at the last sync event."""

    t0_period_s: float
    rate: float = 1.0
    skew_ppm: float = 40.0
    t_sync_s: float = 60.0
    t_minus1_s: float = 0.0
    t0_s: float = 60.0

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ParameterError("clock rate must be positive")
        if not self.t0_s > self.t_minus1_s:
            raise ParameterError("need t_minus1 < t0")

    @classmethod
    def synchronized(cls, t_minus1_s: float, t0_s: float, t_sync_s: float, t0_period_s: float, **kw) -> ClockModel:
        beta = estimate_clock_rate(t_minus1_s, t0_s, t_sync_s, t0_period_s)
        return cls(t0_period_s, beta, t_sync_s=t_sync_s, t_minus1_s=t_minus1_s, t0_s=t0_s, **kw)

    def value(self, t: float) -> float:
        """Local clock reading ``C(t) = t0 + beta T_0 (t - t0)``."""
        return self.t0_s + self.rate * self.t0_period_s * (t - self.t0_s)

    def elapsed(self, td_s: float) -> float:
        """Clock advance since the sync event, ``V(t_d) = beta (t_d - t0) T_0``."""
        if td_s < self.t0_s:
            raise ParameterError("t_d precedes the sync event")
        return self.rate * (td_s - self.t0_s) * self.t0_period_s

    @property
    def skew_within_bound(self) -> bool:
        # relative slack so a rate estimated at exactly the ppm limit still passes
        return abs(self.rate - 1.0) <= self.skew_ppm * 1e-6 * (1.0 + 1e-9)


@dataclass(frozen=True)
class ClockUncertainty:
    u_t0q_s: float
    u_t0d_s: float
    u_tsync_s: float
    u_t0_s: float
    u_td_s: float
    u_beta: float
    u_v_s: float


def clock_components(u_t0s_s: float, t0_period_s: float, beta: float = 1.0, t_sync_s: float = 60.0) -> ClockUncertainty:
    if u_t0s_s < 0 or t0_period_s < 0 or beta < 0:
        raise ParameterError("uncertainty inputs must be non-negative")
    quant = t0_period_s / math.sqrt(3.0)
    u_tsync = math.sqrt(4 * quant**2 + 4 * u_t0s_s**2)
    u_t0 = math.sqrt(quant**2 + u_t0s_s**2)
    u_td = quant
    u_v = beta * math.sqrt(u_tsync**2 + u_td**2 + u_t0**2)
    return ClockUncertainty(quant, quant, u_tsync, u_t0, u_td, beta / t_sync_s * u_tsync, u_v)


def clock_uncertainty(u_t0s_s: float, t0_period_s: float, beta: float = 1.0) -> float:
    """Worst-case clock-induced uncertainty over a full synchronization interval."""
    return clock_components(u_t0s_s, t0_period_s, beta).u_v_s


def total_uncertainty(u_tx_s: float, u_pd_s: float, u_v_s: float) -> tuple[float, float]:
    """Root-sum-square total and the equivalent error standard deviation (equal to it)."""
    if min(u_tx_s, u_pd_s, u_v_s) < 0:
        raise ParameterError("uncertainty components must be non-negative")
    u = math.sqrt(u_tx_s**2 + u_pd_s**2 + u_v_s**2)
    return u, u


@dataclass(frozen=True)
class UncertaintyBudget:
    u_tx_s: float
    u_pd_s: float
    u_t0s_s: float
    u_t0q_s: float
    u_t0d_s: float
    u_tsync_s: float
    u_t0_s: float
    u_td_s: float
    u_beta: float
    u_v_s: float
    u_total_s: float
    sigma_s: float
    mu_pd_s: float = 0.0
    sigma_pd_s: float = 0.0

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("u_tx_s", self.u_tx_s),
            ("mu_pd_s", self.mu_pd_s),
            ("sigma_pd_s", self.sigma_pd_s),
            ("u_pd_s", self.u_pd_s),
            ("u_t0s_s", self.u_t0s_s),
            ("u_t0q_s", self.u_t0q_s),
            ("u_t0d_s", self.u_t0d_s),
            ("u_tsync_s", self.u_tsync_s),
            ("u_t0_s", self.u_t0_s),
            ("u_td_s", self.u_td_s),
            ("u_beta_per_s", self.u_beta),
            ("u_v_s", self.u_v_s),
            ("u_total_s", self.u_total_s),
            ("sigma_s", self.sigma_s),
        ]


def build_budget(
    geometry: DeploymentGeometry,
    u_tx_s: float = 2e-6,
    u_t0s_s: float = 0.34e-3,
    t0_period_s: float = 1.0 / 32e6,
    beta: float = 1.0,
    t_sync_s: float = 60.0,
    delay_spread_s: float = 0.0,
) -> UncertaintyBudget:
    """Assemble every component into a budget whose ``sigma_s`` drives the error model."""
    mu, sd, u_pd = propagation_delay_stats(geometry, delay_spread_s)
    clk = clock_components(u_t0s_s, t0_period_s, beta, t_sync_s)
    u, sigma = total_uncertainty(u_tx_s, u_pd, clk.u_v_s)
    return UncertaintyBudget(
        u_tx_s=u_tx_s,
        u_pd_s=u_pd,
        u_t0s_s=u_t0s_s,
        u_t0q_s=clk.u_t0q_s,
        u_t0d_s=clk.u_t0d_s,
        u_tsync_s=clk.u_tsync_s,
        u_t0_s=clk.u_t0_s,
        u_td_s=clk.u_td_s,
        u_beta=clk.u_beta,
        u_v_s=clk.u_v_s,
        u_total_s=u,
        sigma_s=sigma,
        mu_pd_s=mu,
        sigma_pd_s=sd,
    )

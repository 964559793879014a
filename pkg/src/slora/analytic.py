"""Closed-form throughput of slotted LoRa uplink and guard-time optimization.

Throughput is normalized to messages per time-on-air.  Out-of-band
synchronized access divides each synchronization interval ``T_SYNC`` into
``M`` slots of length ``ToA + T_g`` followed by a phase guard ``Delta``;
in-band access pays for a two-way synchronization exchange with extra
channel load ``G_s``.  Inter-slot collisions from timing error enter through
``p_L`` (preamble hit by the previous slot) and ``p_R`` (tail hit by the
next slot).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import optimize, special, stats

from .errors import (
    BracketFallbackWarning,
    DutyCycleError,
    ParameterError,
    SyncIntervalError,
    TailMassError,
)

SQRT3 = math.sqrt(3.0)
TAIL_MASS = 1e-12
GAUSSIAN_BRACKET_SIGMAS = 12.0


def q_function(x):
    """Standard normal upper tail ``Q(x) = erfc(x / sqrt(2)) / 2``."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class TrafficModel:
    """Aggregate Poisson traffic of ``n_devices`` transmitting ``toa_s``-long frames."""

    n_devices: int
    mean_interarrival_s: float
    toa_s: float
    duty_cycle: float = 0.0033
    t_sync_inband_s: float | None = None

    def __post_init__(self) -> None:
        if self.n_devices < 1:
            raise ParameterError(f"n_devices must be >= 1, got {self.n_devices}")
        if not self.mean_interarrival_s > 0:
            raise ParameterError("mean inter-arrival time must be positive")
        if not self.toa_s > 0:
            raise ParameterError("time-on-air must be positive")
        if not 0 < self.duty_cycle <= 1:
            raise ParameterError(f"duty cycle must be in (0, 1], got {self.duty_cycle}")

    @classmethod
    def from_offered_load(
        cls, offered_load: float, n_devices: int, toa_s: float, duty_cycle: float = 0.0033, **kw
    ) -> TrafficModel:
        if not offered_load > 0:
            raise ParameterError("offered load must be positive")
        return cls(n_devices, n_devices * toa_s / offered_load, toa_s, duty_cycle, **kw)

    @classmethod
    def at_duty_cycle_limit(cls, n_devices: int, toa_s: float, duty_cycle: float = 0.0033) -> TrafficModel:
        return cls(n_devices, toa_s / duty_cycle, toa_s, duty_cycle)

    @property
    def offered_load(self) -> float:
        """G = N * ToA / mean inter-arrival."""
        return self.n_devices * self.toa_s / self.mean_interarrival_s

    @property
    def sync_load_inband(self) -> float:
        """G_s = N * 2 ToA / T_SYNC,i; zero when no in-band interval is set."""
        if self.t_sync_inband_s is None:
            return 0.0
        return self.n_devices * 2.0 * self.toa_s / self.t_sync_inband_s

    @property
    def min_interarrival_oob_s(self) -> float:
        return self.toa_s / self.duty_cycle

    def min_interarrival_inband_s(self, t_sync_inband_s: float) -> float:
        headroom = self.duty_cycle - self.toa_s / t_sync_inband_s
        if headroom <= 0:
            raise DutyCycleError(
                f"duty cycle {self.duty_cycle} exhausted by synchronization every {t_sync_inband_s} s"
            )
        return self.toa_s / headroom

    def check_oob(self) -> None:
        # relative slack absorbs the round trip through offered_load
        if self.mean_interarrival_s < self.min_interarrival_oob_s * (1 - 1e-12):
            raise DutyCycleError(
                f"mean inter-arrival {self.mean_interarrival_s:.6g} s below ToA/alpha = "
                f"{self.min_interarrival_oob_s:.6g} s"
            )

    def check_inband(self) -> None:
        if self.t_sync_inband_s is None:
            raise ParameterError("in-band synchronization interval not set")
        if self.mean_interarrival_s < self.min_interarrival_inband_s(self.t_sync_inband_s) * (1 - 1e-12):
            raise DutyCycleError("mean inter-arrival violates the in-band duty-cycle constraint")

    def inband_capped(self, t_sync_inband_s: float) -> TrafficModel:
        """Same population with in-band sync; data rate throttled to fit the duty cycle."""
        xbar = max(self.mean_interarrival_s, self.min_interarrival_inband_s(t_sync_inband_s))
        return TrafficModel(self.n_devices, xbar, self.toa_s, self.duty_cycle, t_sync_inband_s)


@dataclass(frozen=True)
class SlotPlan:
    """Layout of one transmission phase."""

    t_sync_s: float
    guard_time_s: float
    slot_count: int
    phase_guard_s: float
    periodicity_jitter_s: float = 0.0
    clock_skew_ppm: float = 40.0

    @property
    def skew_guard_bound_s(self) -> float:
        return self.clock_skew_ppm * 1e-6 * self.t_sync_s

    @property
    def within_skew_bound(self) -> bool:
        return 0.0 <= self.guard_time_s < self.skew_guard_bound_s

    def slot_duration(self, toa_s: float) -> float:
        return toa_s + self.guard_time_s

    def slot_start(self, t0_s: float, index: int, toa_s: float) -> float:
        return t0_s + index * (toa_s + self.guard_time_s)


class ErrorFamily(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class TimingErrorModel:
    """Zero-mean timing error with standard deviation ``sigma_s``."""

    family: ErrorFamily = ErrorFamily.GAUSSIAN
    sigma_s: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", ErrorFamily(self.family))
        if not self.sigma_s >= 0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma_s}")

    @property
    def half_width_s(self) -> float:
        """Support half-width of the uniform family."""
        return SQRT3 * self.sigma_s


Load = Union[TrafficModel, float]


def _offered(load: Load) -> float:
    g = load.offered_load if isinstance(load, TrafficModel) else float(load)
    if g < 0:
        raise ParameterError(f"offered load must be non-negative, got {g}")
    return g


# ---------------------------------------------------------------------------
# Occupancy distributions


def active_device_pmf(k: int, load: Load, window_s: float, toa_s: float) -> float:
    """Poisson probability of ``k`` transmissions within ``window_s``.

    ``load`` is the aggregate load in messages per ToA; pass ``G + G_s`` for
    in-band access.
    """
    if k < 0:
        raise ParameterError(f"k must be non-negative, got {k}")
    if not window_s > 0 or not toa_s > 0:
        raise ParameterError("window and time-on-air must be positive")
    mean = _offered(load) * window_s / toa_s
    return float(stats.poisson.pmf(k, mean))


def slot_occupancy_pmf(i: int, k: int, m: int) -> float:
    """Probability that exactly ``i`` of ``k`` devices pick a given one of ``m`` slots."""
    if m < 1:
        raise ParameterError(f"slot count must be >= 1, got {m}")
    if not 0 <= i <= k:
        raise ParameterError(f"need 0 <= i <= k, got i={i}, k={k}")
    return float(stats.binom.pmf(i, k, 1.0 / m))


# ---------------------------------------------------------------------------
# Slot plan


def plan_slots(
    t_sync_s: float,
    toa_s: float,
    guard_time_s: float,
    jitter_s: float = 0.0,
    clock_skew_ppm: float = 40.0,
) -> SlotPlan:
    """Fit the largest whole number of slots while keeping ``Delta >= 2 * jitter``."""
    if toa_s <= 0 or guard_time_s < 0 or jitter_s < 0:
        raise ParameterError("need toa > 0, guard >= 0, jitter >= 0")
    slot = toa_s + guard_time_s
    usable = t_sync_s - 2.0 * jitter_s
    if not usable > slot:
        raise SyncIntervalError(
            f"sync interval too short: {t_sync_s} s cannot hold one {slot} s slot plus 2*{jitter_s} s"
        )
    m = math.floor(usable / slot + 1e-9)
    if m * slot > usable + 1e-9 * slot:
        m -= 1
    delta = t_sync_s - m * slot
    return SlotPlan(t_sync_s, guard_time_s, m, delta, jitter_s, clock_skew_ppm)


# ---------------------------------------------------------------------------
# Inter-slot collision probabilities


def collision_prob(model: TimingErrorModel, tau_s):
    """Probability that the error difference of two adjacent frames exceeds ``tau_s``.

    Accepts scalars or arrays.  A zero-width error never causes overlap, so
    ``sigma = 0`` yields 0 for every ``tau >= 0``.
    """
    tau = np.asarray(tau_s, dtype=float)
    if np.any(tau < 0):
        raise ParameterError("tau must be non-negative")
    sigma = model.sigma_s
    if sigma == 0:
        out = np.zeros_like(tau)
    elif model.family is ErrorFamily.GAUSSIAN:
        out = 0.5 * special.erfc(tau / (2.0 * sigma))
    else:
        width = 2.0 * SQRT3 * sigma
        out = np.maximum(0.0, width - tau) ** 2 / (2.0 * width**2)
    return float(out) if out.ndim == 0 else out


def inter_slot_probs(model: TimingErrorModel, guard_time_s: float, t_c_s: float) -> tuple[float, float]:
    """Return ``(p_L, p_R)`` for guard ``guard_time_s`` and preamble margin ``t_c_s``."""
    if guard_time_s < 0 or t_c_s < 0:
        raise ParameterError("guard time and preamble margin must be non-negative")
    p_r = collision_prob(model, guard_time_s)
    p_l = collision_prob(model, guard_time_s + t_c_s)
    return p_l, p_r


# ---------------------------------------------------------------------------
# Throughput


def _check_prob(name: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


def throughput_oob(load: Load, plan: SlotPlan, toa_s: float, p_l: float = 0.0, p_r: float = 0.0) -> float:
    """Out-of-band slotted throughput in the many-slot limit."""
    _check_prob("p_L", p_l)
    _check_prob("p_R", p_r)
    if plan.phase_guard_s >= plan.t_sync_s:
        raise ParameterError("phase guard must be shorter than the sync interval")
    g = _offered(load)
    stretch = plan.t_sync_s / (plan.t_sync_s - plan.phase_guard_s)
    return g * math.exp(-g * stretch * (1.0 + plan.guard_time_s / toa_s) * (1.0 + p_l + p_r))


def poisson_kmax(mean: float, tail: float = TAIL_MASS) -> int:
    """Smallest ``k`` with Poisson tail mass beyond it below ``tail``."""
    if mean <= 0:
        return 0
    k = int(stats.poisson.isf(tail, mean))
    while stats.poisson.sf(k, mean) >= tail:
        k += 1
    return k


def exact_series_throughput(
    offered_load: float,
    t_sync_s: float,
    toa_s: float,
    guard_time_s: float,
    phase_guard_s: float,
    slot_count: float,
    p_l: float,
    p_r: float,
    k_max: int | None = None,
    allow_truncation: bool = False,
) -> float:
    """Truncated Poisson-Binomial series for the out-of-band throughput.

    Sums, over ``k`` devices active in one phase, the chance that a tagged
    slot holds exactly one frame and neither neighbour slot's frame crosses
    into it.  ``slot_count`` may be fractional: the analytic slot count is
    ``(T_SYNC - Delta) / (ToA + T_g)`` before rounding.
    """
    _check_prob("p_L", p_l)
    _check_prob("p_R", p_r)
    m = float(slot_count)
    if m < 1:
        raise ParameterError("slot count must be >= 1")
    mean = offered_load * t_sync_s / toa_s
    if k_max is None:
        k_max = poisson_kmax(mean)
    elif not allow_truncation and mean > 0 and stats.poisson.sf(k_max, mean) >= TAIL_MASS:
        raise TailMassError(f"k_max={k_max} leaves Poisson tail mass >= {TAIL_MASS} at mean {mean:.6g}")
    if k_max < 1 or mean == 0:
        return 0.0

    k = np.arange(1, k_max + 1, dtype=float)
    # log of Psi(k) * B_{k,M}(1) * Pr(no left hit) * Pr(no right hit)
    log_terms = k * math.log(mean) - mean - special.gammaln(k + 1.0) + np.log(k / m)
    if m > 1:
        per_other = math.log1p(-1.0 / m) + math.log1p(-p_l / (m - 1.0)) + math.log1p(-p_r / (m - 1.0))
        log_terms = log_terms + (k - 1.0) * per_other
    else:
        # a single slot has no neighbours; any second device collides intra-slot
        log_terms = np.where(k == 1.0, log_terms, -np.inf)
    per_slot = float(np.exp(log_terms).sum())
    slot = toa_s + guard_time_s
    return per_slot * (toa_s / slot) * ((t_sync_s - phase_guard_s) / t_sync_s)


def throughput_oob_exact(
    load: Load,
    plan: SlotPlan,
    toa_s: float,
    p_l: float = 0.0,
    p_r: float = 0.0,
    k_max: int | None = None,
    allow_truncation: bool = False,
) -> float:
    """Finite-``M`` counterpart of :func:`throughput_oob` for the plan's whole slot count."""
    return exact_series_throughput(
        _offered(load),
        plan.t_sync_s,
        toa_s,
        plan.guard_time_s,
        plan.phase_guard_s,
        plan.slot_count,
        p_l,
        p_r,
        k_max=k_max,
        allow_truncation=allow_truncation,
    )


def throughput_inband(load: Load, guard_time_s: float, toa_s: float, sync_load: float | None = None) -> float:
    """Slotted ALOHA with two-way in-band synchronization.

    With a :class:`TrafficModel` carrying ``t_sync_inband_s`` the sync load
    and the duty-cycle constraint come from the model; otherwise pass
    ``sync_load`` (G_s) explicitly.
    """
    if isinstance(load, TrafficModel):
        if load.t_sync_inband_s is not None:
            load.check_inband()
        g_s = load.sync_load_inband if sync_load is None else sync_load
    else:
        g_s = 0.0 if sync_load is None else sync_load
    if g_s < 0:
        raise ParameterError("sync load must be non-negative")
    g = _offered(load)
    return g * math.exp(-(g + g_s) * (1.0 + guard_time_s / toa_s))


def throughput_ratio(
    load_ib: Load,
    load_oob: Load,
    plan_oob: SlotPlan,
    t_g_ib: float,
    t_sync_ib: float,
    toa_s: float,
) -> float:
    """In-band over out-of-band throughput, as a direct quotient of the two models."""
    if isinstance(load_ib, TrafficModel):
        if load_ib.t_sync_inband_s is None:
            load_ib = TrafficModel(
                load_ib.n_devices, load_ib.mean_interarrival_s, load_ib.toa_s, load_ib.duty_cycle, t_sync_ib
            )
        s_ib = throughput_inband(load_ib, t_g_ib, toa_s)
    else:
        raise ParameterError("in-band load must be a TrafficModel (the sync load depends on N)")
    s_oob = throughput_oob(load_oob, plan_oob, toa_s)
    if s_oob == 0:
        raise ZeroDivisionError("out-of-band throughput is zero")
    return s_ib / s_oob


def throughput_ratio_closed_form(
    n_devices: int,
    mean_interarrival_s: float,
    t_g_oob: float,
    t_g_ib: float,
    t_sync_ib: float,
    toa_s: float,
) -> float:
    """Published closed form of the throughput ratio, kept as a diagnostic.

    It carries the opposite overall sign to the direct quotient, so it is
    ``>= 1`` wherever the quotient is ``<= 1``.
    """
    exponent = (t_g_oob - t_g_ib) / mean_interarrival_s - 2.0 * (toa_s + t_g_ib) / t_sync_ib
    return math.exp(-n_devices * exponent)


# ---------------------------------------------------------------------------
# Optimal guard time


def guard_objective(model: TimingErrorModel, guard_time_s, toa_s: float, t_c_s: float):
    """Throughput-exponent factor ``(1 + T_g/ToA)(1 + p_L + p_R)``; smaller is better."""
    tg = np.asarray(guard_time_s, dtype=float)
    p_r = collision_prob(model, tg)
    p_l = collision_prob(model, tg + t_c_s)
    out = (1.0 + tg / toa_s) * (1.0 + p_l + p_r)
    return float(out) if np.ndim(out) == 0 else out


def optimal_guard_uniform(sigma_s: float, toa_s: float, t_c_s: float) -> float:
    """Exact minimizer of the guard objective for uniformly distributed error.

    The objective is a cubic on each of two pieces, split where the left
    collision probability reaches zero; every stationary point and piece
    boundary in ``[0, 2*sqrt(3)*sigma]`` is a candidate.
    """
    if sigma_s < 0 or toa_s <= 0 or t_c_s < 0:
        raise ParameterError("need sigma >= 0, toa > 0, t_c >= 0")
    if sigma_s == 0:
        return 0.0
    a = 2.0 * SQRT3 * sigma_s
    c = 1.0 / (2.0 * a * a)
    split = max(0.0, a - t_c_s)
    model = TimingErrorModel(ErrorFamily.UNIFORM, sigma_s)
    candidates = [0.0, split, a]

    # piece with both collision terms: x in [0, split)
    # f = (1 + x/T)(1 + c[(a - tc - x)^2 + (a - x)^2])
    if split > 0:
        b = a - t_c_s
        # f'(x) * T = 1 + c[(b-x)^2 + (a-x)^2] - 2c (T + x)[(b-x) + (a-x)]
        #   (b-x)^2 + (a-x)^2 = 2x^2 - 2(a+b)x + (a^2+b^2)
        #   (T+x)(a+b-2x)     = -2x^2 + (a+b-2T)x + T(a+b)
        coeffs = [
            c * 2 + 4 * c,
            -2 * c * (a + b) - 2 * c * (a + b - 2 * toa_s),
            1 + c * (a * a + b * b) - 2 * c * toa_s * (a + b),
        ]
        for r in np.roots(coeffs):
            if abs(r.imag) < 1e-12 and 0.0 <= r.real < split:
                candidates.append(float(r.real))

    # piece with only the right term: x in [split, a]
    # f'(x) * T = 1 + c (a-x)^2 - 2c (T + x)(a - x)
    coeffs = [
        c + 2 * c,
        -2 * c * a - 2 * c * (a - toa_s),
        1 + c * a * a - 2 * c * toa_s * a,
    ]
    for r in np.roots(coeffs):
        if abs(r.imag) < 1e-12 and split <= r.real <= a:
            candidates.append(float(r.real))

    values = [guard_objective(model, x, toa_s, t_c_s) for x in candidates]
    return candidates[int(np.argmin(values))]


def gaussian_stationarity(guard_time_s, sigma_s: float, toa_s: float, t_c_s: float):
    """Left side minus right side of the Gaussian first-order optimality condition.

    Positive where the objective is still decreasing in the guard time.
    """
    tg = np.asarray(guard_time_s, dtype=float)
    two_sigma = 2.0 * sigma_s
    density = (toa_s + tg) / (two_sigma * math.sqrt(math.pi))
    slope = density * (np.exp(-(tg / two_sigma) ** 2) + np.exp(-((tg + t_c_s) / two_sigma) ** 2))
    tails = 0.5 * special.erfc(tg / two_sigma) + 0.5 * special.erfc((tg + t_c_s) / two_sigma)
    out = slope - tails - 1.0
    return float(out) if np.ndim(out) == 0 else out


def optimal_guard_gaussian(sigma_s: float, toa_s: float, t_c_s: float, scan_points: int = 2001) -> float:
    """Minimizer of the guard objective for Gaussian timing error.

    Every sign change of the stationarity condition on ``[0, 12*sigma]`` is
    polished with Brent's method; the root or boundary with the lowest
    objective wins.  If the scan shows no usable bracket, a grid argmin is
    returned and :class:`BracketFallbackWarning` is issued.
    """
    if sigma_s < 0 or toa_s <= 0 or t_c_s < 0:
        raise ParameterError("need sigma >= 0, toa > 0, t_c >= 0")
    if sigma_s == 0:
        return 0.0
    model = TimingErrorModel(ErrorFamily.GAUSSIAN, sigma_s)
    hi = GAUSSIAN_BRACKET_SIGMAS * sigma_s
    grid = np.linspace(0.0, hi, scan_points)
    h = gaussian_stationarity(grid, sigma_s, toa_s, t_c_s)

    candidates = [0.0, hi]
    roots = []
    for i in np.flatnonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0):
        # only + to - crossings are minima of the objective
        if h[i] > 0:
            root = optimize.brentq(
                gaussian_stationarity, grid[i], grid[i + 1], args=(sigma_s, toa_s, t_c_s), xtol=1e-16, rtol=4 * np.finfo(float).eps
            )
            roots.append(root)
    exact_zero = grid[(h == 0)]
    roots.extend(float(x) for x in exact_zero)
    candidates.extend(roots)

    if not roots and h[0] > 0:
        warnings.warn(
            f"no stationary point bracketed on [0, {hi:.3g}] s; using grid argmin",
            BracketFallbackWarning,
            stacklevel=2,
        )
        values = guard_objective(model, grid, toa_s, t_c_s)
        return float(grid[int(np.argmin(values))])

    values = [guard_objective(model, x, toa_s, t_c_s) for x in candidates]
    return float(candidates[int(np.argmin(values))])


def optimal_guard(model: TimingErrorModel, toa_s: float, t_c_s: float) -> float:
    """Dispatch to the optimizer matching the error family."""
    if model.family is ErrorFamily.GAUSSIAN:
        return optimal_guard_gaussian(model.sigma_s, toa_s, t_c_s)
    return optimal_guard_uniform(model.sigma_s, toa_s, t_c_s)


def grid_search_guard(
    model: TimingErrorModel,
    toa_s: float,
    t_c_s: float,
    t_sync_s: float = 60.0,
    phase_guard_s: float = 0.0,
    offered_load: float = 1.0,
    step_s: float = 1e-5,
) -> float:
    """Brute-force reference for the optimal guard: argmax of the exact series.

    Scans ``T_g`` on ``[0, 12*sigma]`` with the given step, treating the slot
    count as the continuous ``(T_SYNC - Delta) / (ToA + T_g)`` so that slot
    rounding does not add a sawtooth to the curve.
    """
    if model.sigma_s == 0:
        return 0.0
    if not step_s > 0:
        raise ParameterError("grid step must be positive")
    grid = np.arange(0.0, GAUSSIAN_BRACKET_SIGMAS * model.sigma_s + step_s / 2, step_s)
    best, best_s = 0.0, -math.inf
    for tg in grid:
        p_l, p_r = inter_slot_probs(model, tg, t_c_s)
        m = (t_sync_s - phase_guard_s) / (toa_s + tg)
        s = exact_series_throughput(offered_load, t_sync_s, toa_s, tg, phase_guard_s, m, p_l, p_r)
        if s > best_s:
            best, best_s = float(tg), s
    return best

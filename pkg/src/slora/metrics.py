"""Evaluation metrics computed from simulated frame records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import AccountingError, ParameterError

Z50 = float(stats.norm.ppf(0.75))
Z95 = float(stats.norm.ppf(0.975))


def normalized_throughput(success_count: int, toa_s: float, measured_duration_s: float) -> float:
    """Fraction of the measured airtime carrying successfully received frames."""
    if not measured_duration_s > 0:
        raise ParameterError("measured duration must be positive")
    return success_count * toa_s / measured_duration_s


def data_extraction_rate(received: int, transmitted: int) -> float | None:
    """Received over transmitted messages; ``None`` when nothing was sent."""
    if received < 0 or transmitted < 0:
        raise AccountingError("counts must be non-negative")
    if received > transmitted:
        raise AccountingError(f"received {received} exceeds transmitted {transmitted}")
    if transmitted == 0:
        return None
    return received / transmitted


def jain_fairness(x: Iterable[float]) -> float | None:
    """Jain's index ``(sum x)^2 / (n sum x^2)``; ``None`` for an all-zero vector."""
    arr = np.asarray(list(x), dtype=float)
    if arr.size == 0:
        raise ParameterError("need at least one value")
    if np.any(arr < 0):
        raise ParameterError("values must be non-negative")
    top = arr.max()
    if top == 0.0:
        return None
    arr = arr / top  # scale-free, and keeps tiny values from underflowing when squared
    return float(arr.sum() ** 2 / (arr.size * np.dot(arr, arr)))


@dataclass(frozen=True)
class DeviceStats:
    device_id: int
    distance_m: float
    offered: int
    delivered: int

    @property
    def ratio(self) -> float | None:
        return self.delivered / self.offered if self.offered else None


@dataclass(frozen=True)
class DistanceBin:
    r_low_m: float
    r_high_m: float
    attempts: int
    successes: int

    @property
    def success_prob(self) -> float | None:
        return self.successes / self.attempts if self.attempts else None

    def interval(self, z: float = Z50) -> tuple[float, float] | None:
        """Normal-approximation binomial interval, clipped to [0, 1]."""
        p = self.success_prob
        if p is None:
            return None
        half = z * math.sqrt(p * (1.0 - p) / self.attempts)
        return max(0.0, p - half), min(1.0, p + half)


def distance_binned_success(
    distances_m: Sequence[float], delivered: Sequence[bool], radius_m: float, bins: int
) -> list[DistanceBin]:
    """Per-attempt success ratio in equal-width radial bins over ``[0, radius_m]``."""
    if bins < 1:
        raise ParameterError("need at least one bin")
    if not radius_m > 0:
        raise ParameterError("radius must be positive")
    d = np.asarray(distances_m, dtype=float)
    ok = np.asarray(delivered, dtype=bool)
    edges = np.linspace(0.0, radius_m, bins + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, bins - 1)
    attempts = np.bincount(idx, minlength=bins)
    successes = np.bincount(idx, weights=ok, minlength=bins)
    return [
        DistanceBin(float(edges[b]), float(edges[b + 1]), int(attempts[b]), int(successes[b]))
        for b in range(bins)
    ]


@dataclass(frozen=True)
class SimReport:
    normalized_throughput: float
    der: float | None
    per_device: tuple[DeviceStats, ...]
    jain: float | None
    distance_bins: tuple[DistanceBin, ...]
    run_meta: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    @property
    def offered_airtime(self) -> float:
        """Transmitted airtime in the window as a fraction of the window length."""
        return self.counts["window_transmitted"] * self.run_meta["toa_s"] / self.run_meta["measured_s"]


@dataclass(frozen=True)
class ReplicationSummary:
    n: int
    mean: float
    se: float

    def interval(self, z: float) -> tuple[float, float]:
        return self.mean - z * self.se, self.mean + z * self.se

    @property
    def ci50(self) -> tuple[float, float]:
        return self.interval(Z50)

    @property
    def ci95(self) -> tuple[float, float]:
        return self.interval(Z95)


def summarize(values: Iterable[float | None]) -> ReplicationSummary | None:
    """Mean and across-replication standard error, skipping absent values."""
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else float("nan")
    return ReplicationSummary(int(arr.size), float(arr.mean()), se)

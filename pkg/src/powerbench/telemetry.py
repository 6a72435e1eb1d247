"""Meter and usage telemetry.

Socket meters are sampled once per simulated second with multiplicative
Gaussian noise.  The noise for a given (seed, socket, t) is a pure function of
those three values, so streams are reproducible regardless of the order in
which samples are requested.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, InputDomainError
from .simnode import PowerBreakdown


@dataclass(frozen=True)
class PowerSample:
    t: int
    socket_id: int
    pkg: float
    dram: float


@dataclass(frozen=True)
class UsageSample:
    """Per-tick resource usage of one container or native process."""

    t: int
    container_id: str
    cpu_fraction: float
    cycles: float
    bandwidth: float
    requested_cores: float
    core_id: int
    native: bool = False
    active: bool = True


@dataclass(frozen=True)
class CoreSample:
    """Per-core counters: frequency and C-state residency for one tick."""

    t: int
    core_id: int
    socket_id: int
    frequency: float
    residency: tuple[float, float, float, float]


@dataclass(frozen=True)
class NoiseModel:
    relative_sigma: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if self.relative_sigma < 0:
            raise InputDomainError("relative_sigma must be >= 0")


def sample_socket(breakdown: PowerBreakdown, noise: NoiseModel, t: int) -> PowerSample:
    """Noisy meter reading of one socket at tick ``t``."""
    if int(t) != t:
        raise InputDomainError(f"t={t} is not on the 1 s grid")
    t = int(t)
    if noise.relative_sigma == 0:
        return PowerSample(t, breakdown.socket_id, breakdown.pkg, breakdown.dram)
    rng = np.random.default_rng([noise.seed, breakdown.socket_id, t])
    eps = rng.normal(0.0, noise.relative_sigma, size=2)
    return PowerSample(
        t,
        breakdown.socket_id,
        max(breakdown.pkg * (1.0 + eps[0]), 0.0),
        max(breakdown.dram * (1.0 + eps[1]), 0.0),
    )


def aggregate_window(series: Sequence[float], interval: int) -> list[float]:
    """Means over consecutive non-overlapping windows of ``interval`` samples.

    A trailing partial window is dropped.
    """
    if int(interval) != interval or interval < 1:
        raise InputDomainError(f"interval must be a positive whole number of seconds, got {interval}")
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise EmptyInputError("cannot aggregate an empty series")
    n = values.size // int(interval)
    if n == 0:
        return []
    return values[: n * int(interval)].reshape(n, int(interval)).mean(axis=1).tolist()


POWER_CSV_HEADER = ("t", "socket", "pkg_w", "dram_w")
USAGE_CSV_HEADER = ("t", "container", "cpu_fraction", "cycles", "bandwidth_gbs")


def write_power_csv(samples: Iterable[PowerSample], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POWER_CSV_HEADER)
        for s in samples:
            w.writerow((s.t, s.socket_id, f"{s.pkg:.6g}", f"{s.dram:.6g}"))
    return path


def write_usage_csv(samples: Iterable[UsageSample], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(USAGE_CSV_HEADER)
        for s in samples:
            w.writerow((s.t, s.container_id, f"{s.cpu_fraction:.6g}", f"{s.cycles:.6g}", f"{s.bandwidth:.6g}"))
    return path

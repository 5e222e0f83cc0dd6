"""Simulated local oscillators and the two-stage clock discipline algorithm.

A :class:`VirtualClock` maps true (simulation) time to a local reading through

    local = round(true * (1 + freq_error_ppm * 1e-6) * rate_correction) + offset_correction

with all times in integer nanoseconds.  Servo corrections are a step on the
offset (no slewing) plus a multiplicative rate adjustment derived from the two
most recent synchronization opportunities.  Rate changes are rebased so the
reading stays continuous at the correction instant; offset steps may move time
backward, which the harness records as warps.
"""

from __future__ import annotations

from dataclasses import dataclass

RATE_CLAMP_LOW = 1.0 - 1e-3
RATE_CLAMP_HIGH = 1.0 + 1e-3


@dataclass(frozen=True)
class SyncSample:
    """One paired match: the same beacon timestamped locally and by the parent
    (remote_ns is expressed in the parent's time base)."""

    local_ns: int
    remote_ns: int


@dataclass
class VirtualClock:
    freq_error_ppm: float = 0.0
    offset_correction: int = 0  # ns
    rate_correction: float = 1.0
    last_true_time: int = 0  # ns, simulation bookkeeping
    max_freq_error_ppm: float = 100.0

    def __post_init__(self):
        if abs(self.freq_error_ppm) > self.max_freq_error_ppm:
            raise ValueError(
                f"|freq_error_ppm|={abs(self.freq_error_ppm)} exceeds "
                f"{self.max_freq_error_ppm}"
            )
        if self.rate_correction <= 0:
            raise ValueError("rate_correction must stay positive")

    def _scale(self) -> float:
        return (1.0 + self.freq_error_ppm * 1e-6) * self.rate_correction

    def read(self, true_time: int) -> int:
        """Local reading at `true_time`; true time must never run backward."""
        if true_time < self.last_true_time:
            raise ValueError(
                f"true_time moved backward: {true_time} < {self.last_true_time}"
            )
        self.last_true_time = true_time
        return round(true_time * self._scale()) + self.offset_correction

    def apply_offset(self, offset_ns: int) -> None:
        """Step the clock by subtracting a measured offset (local - remote)."""
        self.offset_correction -= offset_ns

    def apply_rate(self, rate: float, true_time: int) -> float:
        """Fold a rate factor into the correction, clamped to +/-1000 ppm total.

        The offset is rebased so the reading is continuous at `true_time`.
        Returns the resulting total rate_correction.
        """
        if rate <= 0:
            raise ValueError(f"rate factor must be positive, got {rate}")
        if true_time < self.last_true_time:
            raise ValueError(
                f"true_time moved backward: {true_time} < {self.last_true_time}"
            )
        old_scale = self._scale()
        self.rate_correction = min(
            max(self.rate_correction * rate, RATE_CLAMP_LOW), RATE_CLAMP_HIGH
        )
        self.offset_correction += round(true_time * (old_scale - self._scale()))
        self.last_true_time = true_time
        return self.rate_correction


def cda_offset(sample: SyncSample) -> int:
    """Offset of the local clock relative to the parent: o = local - remote.

    The caller subtracts o from the clock's offset correction (a step; after
    it, an immediate re-read in the parent base differs by zero).
    """
    return sample.local_ns - sample.remote_ns


def cda_rate(first: SyncSample, second: SyncSample) -> float:
    """Rate factor from two samples: r = delta_remote / delta_local.

    The caller multiplies the clock's rate correction by r.  Requires a
    strictly positive local interval between the samples.
    """
    delta_local = second.local_ns - first.local_ns
    if delta_local <= 0:
        raise ValueError(f"local interval must be positive, got {delta_local} ns")
    return (second.remote_ns - first.remote_ns) / delta_local

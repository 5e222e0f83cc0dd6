"""Oscillator model and servo-primitive tests."""

import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from domino.timebase import (
    RATE_CLAMP_HIGH,
    RATE_CLAMP_LOW,
    SyncSample,
    VirtualClock,
    cda_offset,
    cda_rate,
)

S = 1_000_000_000  # ns per second


# --- read -------------------------------------------------------------------


def test_read_identity():
    clock = VirtualClock(freq_error_ppm=0.0)
    assert clock.read(5 * S) == 5 * S


def test_read_positive_drift_leads_true_time():
    clock = VirtualClock(freq_error_ppm=10.0)
    # +10 ppm over one second: local leads true by 10 us.
    assert clock.read(S) - S == 10_000


def test_rate_correction_cancels_drift():
    clock = VirtualClock(freq_error_ppm=10.0, rate_correction=1 / (1 + 10e-6))
    assert clock.read(S) == S
    assert clock.read(7 * S) == 7 * S


def test_read_rejects_backward_true_time():
    clock = VirtualClock()
    clock.read(2 * S)
    with pytest.raises(ValueError):
        clock.read(S)


def test_freq_error_bound_enforced():
    with pytest.raises(ValueError):
        VirtualClock(freq_error_ppm=150.0)
    VirtualClock(freq_error_ppm=150.0, max_freq_error_ppm=200.0)


@settings(max_examples=100)
@given(
    freq=st.floats(-100, 100),
    times=st.lists(st.integers(0, 10**13), min_size=2, max_size=20).map(sorted),
)
def test_read_monotone_without_corrections(freq, times):
    clock = VirtualClock(freq_error_ppm=freq)
    readings = [clock.read(t) for t in times]
    assert readings == sorted(readings)


# --- offset correction --------------------------------------------------------


def test_offset_zero_when_aligned():
    assert cda_offset(SyncSample(local_ns=10 * S, remote_ns=10 * S)) == 0


def test_offset_substitution():
    # local 10.000005 s vs remote 10.000000 s -> +5 us.
    assert cda_offset(SyncSample(10 * S + 5_000, 10 * S)) == 5_000


def test_offset_step_aligns_with_parent():
    slave = VirtualClock(freq_error_ppm=25.0)
    parent = VirtualClock(freq_error_ppm=0.0)
    t = 3 * S
    sample = SyncSample(local_ns=slave.read(t), remote_ns=parent.read(t))
    slave.apply_offset(cda_offset(sample))
    # Immediate re-read in the parent base differs by zero...
    fresh = SyncSample(local_ns=slave.read(t), remote_ns=parent.read(t))
    assert cda_offset(fresh) == 0
    # ...so a second application of the (fresh) offset changes nothing.
    before = slave.offset_correction
    slave.apply_offset(cda_offset(fresh))
    assert slave.offset_correction == before


# --- rate correction ----------------------------------------------------------


def test_rate_identity_for_equal_intervals():
    s1 = SyncSample(0, 0)
    s2 = SyncSample(2 * S, 2 * S)
    assert cda_rate(s1, s2) == 1.0


def test_rate_substitution():
    # Remote advanced 2 s while local advanced 2.00002 s: r = 0.99999 (-10 ppm).
    s1 = SyncSample(0, 0)
    s2 = SyncSample(2 * S + 20_000, 2 * S)
    assert cda_rate(s1, s2) == 2 * S / (2 * S + 20_000)
    assert cda_rate(s1, s2) == pytest.approx(0.99999, abs=1e-9)


def test_rate_rejects_nonpositive_interval():
    with pytest.raises(ValueError):
        cda_rate(SyncSample(S, S), SyncSample(S, 2 * S))
    with pytest.raises(ValueError):
        cda_rate(SyncSample(2 * S, S), SyncSample(S, 2 * S))


def test_apply_rate_clamps_total_correction():
    clock = VirtualClock()
    clock.apply_rate(1.5, 0)
    assert clock.rate_correction == RATE_CLAMP_HIGH
    clock2 = VirtualClock()
    clock2.apply_rate(0.5, 0)
    assert clock2.rate_correction == RATE_CLAMP_LOW


def test_apply_rate_is_continuous_at_application_time():
    clock = VirtualClock(freq_error_ppm=40.0)
    t = 123 * S
    before = clock.read(t)
    clock.apply_rate(1 / (1 + 40e-6), t)
    after = clock.read(t)
    assert abs(after - before) <= 1  # rounding only
    # Future readings now track true time from this anchor.
    assert abs((clock.read(t + 10 * S) - after) - 10 * S) <= 1


def test_short_baseline_amplifies_timestamp_noise():
    # Why a minimum rate baseline exists: with sigma=50 ns of capture jitter,
    # the rate estimate error scales as 1/delta_local, so a 0.1 s baseline is
    # ~20x noisier than a 2 s one.
    rng = random.Random(1234)

    def rate_errors(baseline_ns, n=400):
        errs = []
        for _ in range(n):
            jit = [round(rng.gauss(0, 50)) for _ in range(4)]
            s1 = SyncSample(0 + jit[0], 0 + jit[1])
            s2 = SyncSample(baseline_ns + jit[2], baseline_ns + jit[3])
            errs.append(cda_rate(s1, s2) - 1.0)
        return statistics.stdev(errs)

    short, long = rate_errors(S // 10), rate_errors(2 * S)
    assert short > 5 * long


def test_sawtooth_bound_against_true_clock():
    # A rate-corrected clock with residual error eps stepped every T stays
    # within eps*T (plus jitter) of its parent just before each correction.
    eps_ppm = 5.0
    period = S  # one correction per second
    sigma = 50
    rng = random.Random(99)
    slave = VirtualClock(freq_error_ppm=eps_ppm)
    parent = VirtualClock(freq_error_ppm=0.0)
    bound = round(eps_ppm * 1e-6 * period) + 8 * sigma
    for k in range(1, 60):
        t = k * period
        local = slave.read(t) + round(rng.gauss(0, sigma))
        remote = parent.read(t) + round(rng.gauss(0, sigma))
        offset = cda_offset(SyncSample(local, remote))
        assert abs(offset) <= bound
        slave.apply_offset(offset)

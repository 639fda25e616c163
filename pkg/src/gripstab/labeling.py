"""Slip detection and label normalization.

The maximum pull force of an experiment is the measured force at the slip
time: the *latest* sample at which the measured force still tracks the
commanded step profile to within the threshold epsilon. That force is then
mapped into [0, 1] against fixed force bounds to form the training label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ForceTrace, LabelingConfig


class NeverTrackedError(RuntimeError):
    """No sample of the trace was within epsilon of the commanded force;
    the experiment never tracked and cannot be labeled."""


@dataclass(frozen=True)
class SlipResult:
    t_slip: float  # s, one of the trace timestamps
    f_max: float  # N, measured force at t_slip
    index: int  # sample index of t_slip


def smooth_measured(trace: ForceTrace, window: int) -> ForceTrace:
    """Centered moving average over the measured signal only.

    Optional pre-filter for hardware-style logs where driver reaction time
    offsets the two signals; detection itself never filters.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return trace
    kernel = np.full(window, 1.0 / window)
    padded = np.pad(trace.measured, (window // 2, window - 1 - window // 2), mode="edge")
    smoothed = np.convolve(padded, kernel, mode="valid")
    return ForceTrace(trace.timestamps, smoothed, trace.desired)


def detect_slip(
    trace: ForceTrace, epsilon: float, smooth_window: int | None = None
) -> SlipResult:
    """Find the slip time and the maximum pull force of a trace.

    The slip time is the latest timestamp where |measured - desired| is
    strictly below epsilon; f_max is the measured force there.

    Raises NeverTrackedError when no sample satisfies the threshold
    (a mis-run experiment).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if smooth_window is not None:
        trace = smooth_measured(trace, smooth_window)
    deviation = np.abs(trace.measured - trace.desired)
    tracked = np.flatnonzero(deviation < epsilon)
    if tracked.size == 0:
        raise NeverTrackedError(
            f"no sample within epsilon={epsilon} N of the commanded force "
            f"(min deviation {deviation.min():.3f} N)"
        )
    index = int(tracked[-1])
    return SlipResult(
        t_slip=float(trace.timestamps[index]),
        f_max=float(trace.measured[index]),
        index=index,
    )


def normalize_label(f_max: float, cfg: LabelingConfig) -> float:
    """Normalize a maximum pull force into [0, 1], clamping overshoots.

    Whether clamping occurred is the caller's bookkeeping (compare f_max
    against cfg.f_min/cfg.f_max).
    """
    return min(1.0, max(0.0, (f_max - cfg.f_min) / cfg.span))


def denormalize_label(label: float, cfg: LabelingConfig) -> float:
    """Inverse of normalize_label on [0, 1]; result in newtons."""
    if not (0.0 <= label <= 1.0):
        raise ValueError(f"label {label!r} outside [0, 1]")
    return cfg.f_min + label * cfg.span

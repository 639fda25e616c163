"""Domain types shared by the whole pipeline: grip configurations, force
traces, tactile image pairs and labeled data points.

All types validate their structural invariants on construction and are
immutable afterwards (numpy payloads are marked read-only), so instances can
be shared freely across threads. The one deliberate exception is the
label/raw-force consistency of a DataPoint, which is *reported* by
``validate_datapoint`` instead of raised, so that malformed points coming
from disk can be inspected rather than lost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GRIP_FORCE_MIN_N = 20.0
GRIP_FORCE_MAX_N = 60.0
GRIP_FORCE_STEP_N = 5.0

#: Nominal sensor raster (rows, cols); smaller fast-mode rasters are allowed
#: as long as left/right agree.
SENSOR_RESOLUTION = (480, 640)

LABEL_ATOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GripConfiguration:
    """One gripper placement: in-plane offsets, rotation and closing force."""

    object_id: str
    y: float  # lateral offset in m
    z: float  # vertical offset in m
    theta: float  # rotation about the gripper x-axis, rad, in [-pi, pi)
    grip_force: float  # N, on the 20..60 grid in steps of 5

    def __post_init__(self) -> None:
        if not (GRIP_FORCE_MIN_N <= self.grip_force <= GRIP_FORCE_MAX_N):
            raise ValueError(
                f"grip_force {self.grip_force} N outside "
                f"[{GRIP_FORCE_MIN_N}, {GRIP_FORCE_MAX_N}]"
            )
        steps = self.grip_force / GRIP_FORCE_STEP_N
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(
                f"grip_force {self.grip_force} N is not a multiple of "
                f"{GRIP_FORCE_STEP_N} N"
            )
        if not (-math.pi <= self.theta < math.pi):
            raise ValueError(f"theta {self.theta} outside [-pi, pi)")


@dataclass(frozen=True)
class StepForceProfile:
    """Step-like target pull force: start at f0, increase by delta_f every
    delta_t seconds, for max_steps steps."""

    f0: float  # N
    delta_f: float  # N per step, > 0
    delta_t: float  # s dwell per step, > 0
    max_steps: int

    def __post_init__(self) -> None:
        if self.delta_f <= 0:
            raise ValueError("delta_f must be > 0")
        if self.delta_t <= 0:
            raise ValueError("delta_t must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def level(self, step: int) -> float:
        return self.f0 + step * self.delta_f


@dataclass(frozen=True)
class ForceTrace:
    """Time-aligned desired and measured pull-force signals from one pull."""

    timestamps: np.ndarray  # s, strictly increasing
    measured: np.ndarray  # N
    desired: np.ndarray  # N

    def __post_init__(self) -> None:
        t = np.asarray(self.timestamps, dtype=np.float64)
        m = np.asarray(self.measured, dtype=np.float64)
        d = np.asarray(self.desired, dtype=np.float64)
        if not (len(t) == len(m) == len(d)):
            raise ValueError("timestamps/measured/desired lengths differ")
        if len(t) < 2:
            raise ValueError("a force trace needs at least 2 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(d))):
            raise ValueError("force samples must be finite")
        object.__setattr__(self, "timestamps", _freeze(t))
        object.__setattr__(self, "measured", _freeze(m))
        object.__setattr__(self, "desired", _freeze(d))

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class TactileImagePair:
    """Left/right sensor rasters, float32 RGB in [0, 1], identical shape.

    The physical sensor delivers 480x640x3; fast-mode renders are smaller.
    """

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self) -> None:
        lt = np.asarray(self.left, dtype=np.float32)
        rt = np.asarray(self.right, dtype=np.float32)
        for name, img in (("left", lt), ("right", rt)):
            if img.ndim != 3 or img.shape[2] != 3:
                raise ValueError(f"{name} image must be HxWx3, got {img.shape}")
            if not np.all(np.isfinite(img)):
                raise ValueError(f"{name} image has non-finite values")
            if img.min() < 0.0 or img.max() > 1.0:
                raise ValueError(f"{name} image values outside [0, 1]")
        if lt.shape != rt.shape:
            raise ValueError(f"image shapes differ: {lt.shape} vs {rt.shape}")
        object.__setattr__(self, "left", _freeze(lt))
        object.__setattr__(self, "right", _freeze(rt))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.left.shape[0], self.left.shape[1]


@dataclass(frozen=True)
class LabelingConfig:
    """Normalization bounds, slip threshold and the (metadata-only)
    displacement threshold of the pull experiment."""

    f_min: float = 0.0  # N
    f_max: float = 35.0  # N
    epsilon: float = 3.0  # N, tracking threshold for slip detection
    delta_z: float = 0.002  # m, displacement threshold; recorded, not used

    def __post_init__(self) -> None:
        if self.f_min < 0 or self.f_max <= self.f_min:
            raise ValueError("need f_max > f_min >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.delta_z <= 0:
            raise ValueError("delta_z must be > 0")

    @property
    def span(self) -> float:
        return self.f_max - self.f_min


@dataclass(frozen=True)
class DataPoint:
    """One labeled experiment: image pair, normalized label, raw pull force
    and the grip configuration that produced it.

    Construction only checks structure; label/raw-force consistency is the
    job of ``validate_datapoint``.
    """

    point_id: str
    images: TactileImagePair
    label: float  # normalized pull force, nominally in [0, 1]
    raw_force: float  # N, measured maximum pull force
    config: GripConfiguration
    clamped: bool = field(default=False)  # raw_force fell outside [f_min, f_max]


def normalized_force(raw_force: float, cfg: LabelingConfig) -> float:
    """Map a force to [0, 1] under cfg, clamping out-of-range values."""
    value = (raw_force - cfg.f_min) / cfg.span
    return min(1.0, max(0.0, value))


def canonical_float(x: float) -> float:
    """Snap to the 9-significant-digit grid used by the on-disk records.

    Values produced through this helper survive a text round trip exactly,
    which keeps stored labels within LABEL_ATOL of the live ones.
    """
    return float(f"{float(x):.9g}")


def validate_datapoint(d: DataPoint, cfg: LabelingConfig) -> list[str]:
    """Return human-readable invariant violations (empty list == valid).

    Pure: identical inputs always produce the identical list.
    """
    violations: list[str] = []
    if not np.isfinite(d.raw_force):
        violations.append(f"raw_force not finite: {d.raw_force!r}")
        return violations
    if not (0.0 <= d.label <= 1.0):
        # An out-of-range label can never match the (clamped) normalization,
        # so the mismatch check below would only repeat this finding.
        violations.append(f"label out of range: {d.label!r} not in [0, 1]")
    else:
        expected = normalized_force(d.raw_force, cfg)
        if abs(d.label - expected) > LABEL_ATOL:
            violations.append(
                "label/raw_force mismatch: "
                f"label={d.label!r} but normalize({d.raw_force!r}) = {expected!r}"
            )
    in_range = cfg.f_min <= d.raw_force <= cfg.f_max
    if d.clamped == in_range:
        violations.append(
            f"clamped flag is {d.clamped} but raw_force {d.raw_force!r} is "
            f"{'inside' if in_range else 'outside'} [{cfg.f_min}, {cfg.f_max}]"
        )
    return violations


def grip_force_grid() -> Sequence[float]:
    """The admissible grip forces: 20..60 N in steps of 5 N."""
    n = int(round((GRIP_FORCE_MAX_N - GRIP_FORCE_MIN_N) / GRIP_FORCE_STEP_N)) + 1
    return [GRIP_FORCE_MIN_N + i * GRIP_FORCE_STEP_N for i in range(n)]

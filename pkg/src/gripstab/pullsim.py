"""Hardware-free pull experiment: Coulomb-model ground truth, step-profile
force traces with lag and sensor noise, and synthetic tactile image pairs.

The visual model is photometric-plausible rather than gel-mechanical: a
contact height map shaded per channel by one of three fixed directional
lights, plus a per-class background texture and pixel noise. All randomness
flows from explicit seeds; identical seeds give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import (
    DataPoint,
    ForceTrace,
    GripConfiguration,
    LabelingConfig,
    StepForceProfile,
    TactileImagePair,
    canonical_float,
    normalized_force,
)
from .labeling import detect_slip

# Gel window (m), centered on the sensor origin: 4:3 like the 640x480 raster.
GEL_WIDTH_M = 0.032
GEL_HEIGHT_M = 0.024

# Friction acts on both gripper jaws.
N_FINGERS = 2

# Photometric constants of the synthetic sensor.
_EDGE_WIDTH_M = 0.0008  # soft rim width of the contact profile
_AMBIENT = 0.16
_DIFFUSE = 0.50
_PRESSURE_GAIN = 0.28  # brightening of pressed regions, per unit depth
_TEXTURE_STD = 0.018  # object surface pattern, visible inside the contact
_GEL_TEXTURE_STD = 0.008  # the sensor's own faint surface pattern
_GEL_TEXTURE_SEED = 977  # one gel surface shared by every render
_DILATE_PER_N = 0.0015  # relative patch growth per newton above the 40 N reference
_AREA_SAMPLES = 320  # supersampling grid for the contact area fraction

# Lights are mirror-symmetric in the lateral axis (top, overhead, bottom),
# so a mirrored contact renders as the mirrored image.
_LIGHT_ELEVATION = math.radians(50.0)
_LIGHT_DIRS = np.array(
    [
        [0.0, math.cos(_LIGHT_ELEVATION), math.sin(_LIGHT_ELEVATION)],
        [0.0, 0.0, 1.0],
        [0.0, -math.cos(_LIGHT_ELEVATION), math.sin(_LIGHT_ELEVATION)],
    ]
)

SHAPE_KINDS = ("disk", "ring", "rectangle", "cylinder-line")


def _float_bits(value: float) -> int:
    """Float64 payload as an int, usable as SeedSequence entropy."""
    return int(np.float64(value).view(np.uint64))


class NoContactError(RuntimeError):
    """The contact shape lies entirely outside the gel window."""


class NoSlipError(RuntimeError):
    """The step profile ended before the pull visibly slipped; extend
    max_steps."""


@dataclass(frozen=True)
class SyntheticObjectClass:
    """A stand-in object class: friction coefficient plus a parametric
    contact footprint and a seed for its surface-pattern family."""

    class_id: str
    friction_mu: float
    contact_shape: str  # one of SHAPE_KINDS
    shape_params: dict[str, float]  # meters, keys per shape kind
    texture_seed: int
    size_jitter: float = 0.0  # relative instance-size spread, per grasp

    def __post_init__(self) -> None:
        if not (0.0 < self.friction_mu <= 2.0):
            raise ValueError(f"friction_mu {self.friction_mu} outside (0, 2]")
        if self.contact_shape not in SHAPE_KINDS:
            raise ValueError(f"unknown contact_shape {self.contact_shape!r}")
        required = _SHAPE_PARAM_KEYS[self.contact_shape]
        if set(self.shape_params) != set(required):
            raise ValueError(
                f"{self.contact_shape} needs params {required}, "
                f"got {sorted(self.shape_params)}"
            )
        if any(v <= 0 for v in self.shape_params.values()):
            raise ValueError("shape dimensions must be positive")
        if self.contact_shape == "ring":
            if self.shape_params["inner_radius"] >= self.shape_params["outer_radius"]:
                raise ValueError("ring inner_radius must be < outer_radius")
        if not (0.0 <= self.size_jitter < 0.5):
            raise ValueError(f"size_jitter {self.size_jitter} outside [0, 0.5)")
        if 2.0 * self.circumradius * (1.0 + self.size_jitter) > min(
            GEL_WIDTH_M, GEL_HEIGHT_M
        ):
            raise ValueError(
                f"shape of class {self.class_id!r} does not fit the gel window"
            )

    @property
    def circumradius(self) -> float:
        p = self.shape_params
        if self.contact_shape == "disk":
            return p["radius"]
        if self.contact_shape == "ring":
            return p["outer_radius"]
        if self.contact_shape == "rectangle":
            return 0.5 * math.hypot(p["width"], p["height"])
        return 0.5 * math.hypot(p["length"], p["width"])


_SHAPE_PARAM_KEYS = {
    "disk": ("radius",),
    "ring": ("outer_radius", "inner_radius"),
    "rectangle": ("width", "height"),
    "cylinder-line": ("length", "width"),
}


@dataclass(frozen=True)
class SimulatorConfig:
    """Noise, dynamics and rendering knobs of the synthetic rig."""

    force_noise_std: float = 1.3  # N; ~3 sigma inside the +-4 N sensor band
    lag_time: float = 0.05  # s, first-order force tracking lag
    pixel_noise_std: float = 0.01
    gravity_sag: float = 0.0  # N, constant offset on the measured force
    rng_seed: int = 0
    sample_rate: float = 10.0  # Hz of the force log
    resolution: tuple[int, int] = (480, 640)  # (rows, cols); (120, 160) = fast mode

    def __post_init__(self) -> None:
        if self.force_noise_std < 0 or self.pixel_noise_std < 0:
            raise ValueError("noise stds must be >= 0")
        if self.lag_time < 0:
            raise ValueError("lag_time must be >= 0")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        rows, cols = self.resolution
        if rows < 8 or cols < 8:
            raise ValueError("resolution too small")


@dataclass(frozen=True)
class GripGrid:
    """Cartesian product of pose offsets, rotations and grip forces."""

    ys: tuple[float, ...]
    zs: tuple[float, ...]
    thetas: tuple[float, ...]
    grip_forces: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (self.ys and self.zs and self.thetas and self.grip_forces):
            raise ValueError("grid axes must be non-empty")

    def cells(self) -> Iterator[tuple[float, float, float, float]]:
        for y in self.ys:
            for z in self.zs:
                for theta in self.thetas:
                    for f in self.grip_forces:
                        yield (y, z, theta, f)

    def __len__(self) -> int:
        return len(self.ys) * len(self.zs) * len(self.thetas) * len(self.grip_forces)


def default_grid() -> GripGrid:
    """Desk-scale default: 4 x 4 x 5 poses times the 9 grip forces = 720 cells."""
    return GripGrid(
        ys=(-0.012, -0.005, 0.005, 0.012),
        zs=(-0.008, -0.003, 0.003, 0.008),
        thetas=(-math.pi / 2, -math.pi / 4, 0.0, math.pi / 4, math.pi / 2),
        grip_forces=tuple(20.0 + 5.0 * i for i in range(9)),
    )


def object_catalog() -> dict[str, SyntheticObjectClass]:
    """Built-in object classes mirroring a gearbox-parts collection: rings
    (gears, bearings), contact lines (axles, shafts) and one disk."""
    classes = [
        SyntheticObjectClass(
            "gear", 0.32, "ring",
            {"outer_radius": 0.011, "inner_radius": 0.0065}, texture_seed=101,
            size_jitter=0.08,
        ),
        SyntheticObjectClass(
            "ball_bearing", 0.33, "ring",
            {"outer_radius": 0.009, "inner_radius": 0.0045}, texture_seed=102,
            size_jitter=0.10,
        ),
        SyntheticObjectClass(
            "axle_long", 0.40, "cylinder-line",
            {"length": 0.022, "width": 0.005}, texture_seed=103,
            size_jitter=0.05,
        ),
        SyntheticObjectClass(
            "gear_1", 0.36, "disk", {"radius": 0.010}, texture_seed=104,
            size_jitter=0.08,
        ),
        SyntheticObjectClass(
            "gear_2", 0.325, "ring",
            {"outer_radius": 0.0102, "inner_radius": 0.0060}, texture_seed=105,
            size_jitter=0.06,
        ),
        SyntheticObjectClass(
            "pinion_shaft", 0.405, "cylinder-line",
            {"length": 0.021, "width": 0.00478}, texture_seed=106,
            size_jitter=0.05,
        ),
    ]
    return {c.class_id: c for c in classes}

#: Default split: train on the first three classes, generalize to two unseen ones.
DEFAULT_TRAIN_CLASSES = ("gear", "ball_bearing", "axle_long")
DEFAULT_HELDOUT_CLASSES = ("gear_2", "pinion_shaft")


# ---------------------------------------------------------------------------
# Contact geometry
# ---------------------------------------------------------------------------

def _shape_fields(
    obj: SyntheticObjectClass, x: np.ndarray, y: np.ndarray, scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Hard indicator and soft depth profile of the footprint, evaluated at
    object-frame coordinates (x, y) in meters. `scale` dilates the footprint."""
    kind = obj.contact_shape
    p = {k: v * scale for k, v in obj.shape_params.items()}
    edge = _EDGE_WIDTH_M
    if kind == "disk":
        r = np.hypot(x, y)
        d_in = p["radius"] - r
        inside = d_in > 0
        profile = np.clip(d_in / edge, 0.0, 1.0)
    elif kind == "ring":
        r = np.hypot(x, y)
        d_in = np.minimum(p["outer_radius"] - r, r - p["inner_radius"])
        inside = d_in > 0
        profile = np.clip(d_in / edge, 0.0, 1.0)
    elif kind == "rectangle":
        d_in = np.minimum(p["width"] / 2 - np.abs(x), p["height"] / 2 - np.abs(y))
        inside = d_in > 0
        profile = np.clip(d_in / edge, 0.0, 1.0)
    else:  # cylinder-line: half-cylinder cross-section along the x axis
        cap = np.clip((p["length"] / 2 - np.abs(x)) / edge, 0.0, 1.0)
        t = 2.0 * y / p["width"]
        cross = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        inside = (np.abs(x) < p["length"] / 2) & (np.abs(y) < p["width"] / 2)
        profile = cap * cross
    return inside, profile


def _to_object_frame(
    u: np.ndarray, v: np.ndarray, grip: GripConfiguration
) -> tuple[np.ndarray, np.ndarray]:
    du = u - grip.y
    dv = v - grip.z
    c, s = math.cos(grip.theta), math.sin(grip.theta)
    return c * du + s * dv, -s * du + c * dv


_SCALE_STREAM = 11  # seed-stream tag separating instance size from texture


def effective_scale(obj: SyntheticObjectClass, grip: GripConfiguration) -> float:
    """Instance-size factor for one grasp, in [1-size_jitter, 1+size_jitter].

    Parts from one class vary a little piece to piece; the pose (y, z, theta)
    identifies which physical instance was gripped, so the factor is a
    deterministic function of it — and of it only: squeezing the same grasp
    harder must not change the part. Rendering, contact area and ground-truth
    slip force all share this factor.
    """
    if obj.size_jitter == 0.0:
        return 1.0
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        (obj.texture_seed, _SCALE_STREAM, _float_bits(grip.y),
         _float_bits(grip.z), _float_bits(grip.theta))
    )))
    return 1.0 + obj.size_jitter * (2.0 * rng.random() - 1.0)


def contact_area_factor(obj: SyntheticObjectClass, grip: GripConfiguration) -> float:
    """Fraction of the footprint inside the gel window, in (0, 1].

    Evaluated for the grasp's jittered instance size. Supersampled on a
    fixed grid so that full containment is exactly 1.0; raises
    NoContactError when nothing overlaps.
    """
    scale = effective_scale(obj, grip)
    rho = obj.circumradius * scale
    n = _AREA_SAMPLES
    # Cell centers over the footprint bounding square, in the object frame.
    axis = (np.arange(n) + 0.5) / n * 2 * rho - rho
    xo, yo = np.meshgrid(axis, axis)
    inside, _ = _shape_fields(obj, xo, yo, scale=scale)
    # Map the sampled footprint points into the gel frame.
    c, s = math.cos(grip.theta), math.sin(grip.theta)
    u = c * xo - s * yo + grip.y
    v = s * xo + c * yo + grip.z
    in_window = (
        (np.abs(u) <= GEL_WIDTH_M / 2) & (np.abs(v) <= GEL_HEIGHT_M / 2) & inside
    )
    total = int(inside.sum())
    overlap = int(in_window.sum())
    if overlap == 0:
        raise NoContactError(
            f"class {obj.class_id!r} at (y={grip.y}, z={grip.z}, "
            f"theta={grip.theta}) has no contact with the gel window"
        )
    return overlap / total


def slip_force_from(friction_mu: float, grip_force: float, area_factor: float) -> float:
    """Coulomb slip force for a two-finger grip: 2 * mu * F_grip * area."""
    return N_FINGERS * friction_mu * grip_force * area_factor


def ground_truth_slip_force(
    obj: SyntheticObjectClass, grip: GripConfiguration
) -> float:
    """Deterministic slip force of an object under a grip configuration."""
    return slip_force_from(
        obj.friction_mu, grip.grip_force, contact_area_factor(obj, grip)
    )


# ---------------------------------------------------------------------------
# Force traces
# ---------------------------------------------------------------------------

def generate_desired_profile(
    profile: StepForceProfile, sample_rate: float
) -> tuple[np.ndarray, np.ndarray]:
    """Sample the step-like target pull force.

    Returns (timestamps, desired): piecewise-constant levels f0 + i*delta_f
    on [i*delta_t, (i+1)*delta_t), covering all max_steps dwells.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be > 0")
    n = int(round(profile.max_steps * profile.delta_t * sample_rate))
    n = max(n, profile.max_steps)
    t = np.arange(n, dtype=np.float64) / sample_rate
    steps = np.minimum(
        np.floor(t / profile.delta_t + 1e-12).astype(np.int64),
        profile.max_steps - 1,
    )
    desired = profile.f0 + steps * profile.delta_f
    return t, desired


def simulate_pull(
    obj: SyntheticObjectClass,
    grip: GripConfiguration,
    profile: StepForceProfile,
    sim: SimulatorConfig,
    *,
    rng: np.random.Generator | None = None,
    ground_truth: float | None = None,
) -> tuple[ForceTrace, float]:
    """Run one pull: returns the logged force trace and the true slip force.

    The measured force tracks the commanded steps through a first-order lag
    (plus Gaussian noise and the optional constant sag) until the commanded
    force exceeds the slip force; from there it plateaus at the slip force.
    The log ends one dwell period after the noise-free deviation first
    reaches the slip threshold, i.e. once the slip is unmistakable.

    Raises NoSlipError when the profile ends before that point.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(sim.rng_seed))
    gt = ground_truth_slip_force(obj, grip) if ground_truth is None else ground_truth
    t, desired = generate_desired_profile(profile, sim.sample_rate)
    target = np.minimum(desired, gt)

    if sim.lag_time == 0.0:
        clean = target.copy()
    else:
        dt = 1.0 / sim.sample_rate
        alpha = 1.0 - math.exp(-dt / sim.lag_time)
        clean = np.empty_like(target)
        clean[0] = target[0]
        for k in range(1, len(target)):
            clean[k] = clean[k - 1] + alpha * (target[k] - clean[k - 1])

    epsilon = 3.0  # termination mirrors the labeling threshold
    diverged = np.flatnonzero(desired - clean >= epsilon)
    if diverged.size == 0 or desired.max() <= gt:
        raise NoSlipError(
            f"profile tops out at {desired.max():.2f} N without slipping "
            f"(slip force {gt:.2f} N); extend max_steps"
        )
    t_end = t[diverged[0]] + profile.delta_t
    keep = t < t_end
    n = int(keep.sum())
    if n < 2:
        n = 2

    measured = clean[:n] + sim.gravity_sag
    if sim.force_noise_std > 0:
        measured = measured + rng.normal(0.0, sim.force_noise_std, size=n)
    return ForceTrace(t[:n], measured, desired[:n]), float(gt)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _texture_field(u: np.ndarray, v: np.ndarray, seed, std: float) -> np.ndarray:
    """Smooth zero-mean wave-mixture texture, symmetric under u-mirroring."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    k = 6
    wavelengths = rng.uniform(0.003, 0.012, size=k)
    angles = rng.uniform(0.0, math.pi, size=k)
    phases = rng.uniform(0.0, 2 * math.pi, size=k)
    amps = rng.uniform(0.5, 1.0, size=k)
    fld = np.zeros_like(u)
    for lam, ang, ph, amp in zip(wavelengths, angles, phases, amps):
        cx, cy = math.cos(ang) / lam, math.sin(ang) / lam
        wave = np.cos(2 * math.pi * (u * cx + v * cy) + ph)
        mirrored = np.cos(2 * math.pi * (-u * cx + v * cy) + ph)
        fld += amp * 0.5 * (wave + mirrored)
    fld *= std / max(fld.std(), 1e-12)
    return fld


def _quantize(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and snap to the 8-bit grid, like the real camera."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def render_tactile_pair(
    obj: SyntheticObjectClass,
    grip: GripConfiguration,
    sim: SimulatorConfig,
    *,
    rng: np.random.Generator | None = None,
) -> TactileImagePair:
    """Render the left/right sensor views of a grip.

    Indentation depth and patch dilation grow monotonically with grip force;
    each RGB channel is shaded by one fixed directional light over the
    height map. Two textures overlay the shading: the sensor gel's own faint
    pattern (identical in every render) and the object's surface pattern at
    the gripped patch, which is seeded by (texture_seed, y, z, theta) and
    fades in with the contact profile — a new pose exposes a new patch of the
    object, while squeezing harder only deepens the same one. The footprint
    is drawn at the grasp's instance size (see effective_scale). The right
    view is the mirrored geometry with independent pixel noise. No contact
    simply yields background-only images.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(sim.rng_seed))
    rows, cols = sim.resolution

    u_axis = (np.arange(cols) + 0.5) / cols * GEL_WIDTH_M - GEL_WIDTH_M / 2
    v_axis = GEL_HEIGHT_M / 2 - (np.arange(rows) + 0.5) / rows * GEL_HEIGHT_M
    u, v = np.meshgrid(u_axis, v_axis)

    xo, yo = _to_object_frame(u, v, grip)
    dilate = 1.0 + _DILATE_PER_N * (grip.grip_force - 40.0)
    _, profile = _shape_fields(obj, xo, yo,
                               scale=dilate * effective_scale(obj, grip))
    depth = profile * math.sqrt(grip.grip_force / 40.0)  # normalized depth map

    pitch_u = GEL_WIDTH_M / cols
    pitch_v = GEL_HEIGHT_M / rows
    # Gradients in physical units, scaled so rim slopes are order-1.
    gv, gu = np.gradient(depth * _EDGE_WIDTH_M, -pitch_v, pitch_u)
    norm = np.sqrt(1.0 + gu * gu + gv * gv)
    nx, ny, nz = -gu / norm, -gv / norm, 1.0 / norm

    gel = _texture_field(u, v, _GEL_TEXTURE_SEED, _GEL_TEXTURE_STD)
    patch_seed = (obj.texture_seed, _float_bits(grip.y), _float_bits(grip.z),
                  _float_bits(grip.theta))
    texture = gel + profile * _texture_field(u, v, patch_seed, _TEXTURE_STD)
    base = np.empty((rows, cols, 3), dtype=np.float64)
    for ch, light in enumerate(_LIGHT_DIRS):
        shade = np.maximum(0.0, nx * light[0] + ny * light[1] + nz * light[2])
        base[:, :, ch] = _AMBIENT + _DIFFUSE * shade + _PRESSURE_GAIN * depth + texture

    left = base
    right = base[:, ::-1, :]
    if sim.pixel_noise_std > 0:
        left = left + rng.normal(0.0, sim.pixel_noise_std, size=base.shape)
        right = right + rng.normal(0.0, sim.pixel_noise_std, size=base.shape)
    return TactileImagePair(_quantize(left), _quantize(right))


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

class DatasetGenerationError(RuntimeError):
    """A pull could not be completed; carries the offending configuration."""


def generate_dataset(
    classes: Sequence[SyntheticObjectClass],
    grid: GripGrid | Iterable[tuple[float, float, float, float]],
    profile: StepForceProfile,
    sim: SimulatorConfig,
    labeling_cfg: LabelingConfig,
) -> list[DataPoint]:
    """Run the full experiment matrix: one labeled DataPoint per
    (class, grid cell).

    Each point runs on its own RNG substream derived from
    (sim.rng_seed, point index), so serial and fan-out execution agree
    bit-exactly.
    """
    cells = list(grid.cells() if isinstance(grid, GripGrid) else grid)
    if not classes:
        raise ValueError("need at least one object class")
    if not cells:
        raise ValueError("grip grid is empty")

    points: list[DataPoint] = []
    index = 0
    for obj in classes:
        for cell_idx, (y, z, theta, f_grip) in enumerate(cells):
            # Snap grid values to the serialization grid up front so a
            # stored configuration reproduces this pull bit for bit.
            grip = GripConfiguration(
                obj.class_id, canonical_float(y), canonical_float(z),
                canonical_float(theta), canonical_float(f_grip),
            )
            pull_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((sim.rng_seed, index, 0)))
            )
            render_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((sim.rng_seed, index, 1)))
            )
            try:
                trace, _ = simulate_pull(obj, grip, profile, sim, rng=pull_rng)
            except (NoSlipError, NoContactError) as e:
                raise DatasetGenerationError(
                    f"point {index} (class {obj.class_id!r}, y={y}, z={z}, "
                    f"theta={theta}, grip_force={f_grip}): {e}"
                ) from e
            slip = detect_slip(trace, labeling_cfg.epsilon)
            # Canonical 9-significant-digit grid keeps on-disk records lossless.
            raw = canonical_float(slip.f_max)
            label = canonical_float(normalized_force(raw, labeling_cfg))
            clamped = not (labeling_cfg.f_min <= raw <= labeling_cfg.f_max)
            images = render_tactile_pair(obj, grip, sim, rng=render_rng)
            points.append(
                DataPoint(
                    point_id=f"{obj.class_id}_{cell_idx:05d}",
                    images=images,
                    label=label,
                    raw_force=raw,
                    config=grip,
                    clamped=clamped,
                )
            )
            index += 1
    return points

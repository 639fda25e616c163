"""Friction model, pull simulation, tactile rendering and dataset assembly."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gripstab.core import (
    GripConfiguration,
    LabelingConfig,
    StepForceProfile,
    canonical_float,
    grip_force_grid,
    normalized_force,
)
from gripstab.labeling import detect_slip
from gripstab.pullsim import (
    DEFAULT_HELDOUT_CLASSES,
    DEFAULT_TRAIN_CLASSES,
    GEL_HEIGHT_M,
    GEL_WIDTH_M,
    DatasetGenerationError,
    GripGrid,
    NoContactError,
    NoSlipError,
    SimulatorConfig,
    SyntheticObjectClass,
    contact_area_factor,
    default_grid,
    generate_dataset,
    generate_desired_profile,
    ground_truth_slip_force,
    object_catalog,
    render_tactile_pair,
    simulate_pull,
    slip_force_from,
)

DISK = SyntheticObjectClass("disk_test", 0.3, "disk",
                            {"radius": 0.006}, texture_seed=1)


def _grip(y=0.0, z=0.0, theta=0.0, force=30.0):
    return GripConfiguration("disk_test", y, z, theta, force)


NOISELESS = SimulatorConfig(force_noise_std=0.0, lag_time=0.0,
                            pixel_noise_std=0.0, rng_seed=0,
                            resolution=(24, 32))


class TestSyntheticObjectClass:
    def test_friction_range(self):
        with pytest.raises(ValueError):
            SyntheticObjectClass("x", 0.0, "disk", {"radius": 0.005}, 0)
        with pytest.raises(ValueError):
            SyntheticObjectClass("x", 2.5, "disk", {"radius": 0.005}, 0)

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            SyntheticObjectClass("x", 0.3, "blob", {"radius": 0.005}, 0)

    def test_must_fit_gel_window(self):
        with pytest.raises(ValueError):
            SyntheticObjectClass("x", 0.3, "disk", {"radius": 0.02}, 0)

    def test_catalog_classes_are_valid_and_fit(self):
        cat = object_catalog()
        assert set(DEFAULT_TRAIN_CLASSES) | set(DEFAULT_HELDOUT_CLASSES) <= set(cat)
        for obj in cat.values():
            assert 0.0 < obj.friction_mu <= 2.0
            assert 2 * obj.circumradius <= min(GEL_WIDTH_M, GEL_HEIGHT_M)

    def test_train_and_heldout_disjoint(self):
        assert not set(DEFAULT_TRAIN_CLASSES) & set(DEFAULT_HELDOUT_CLASSES)


class TestSlipForce:
    def test_full_contact_example(self):
        # 2 * 0.3 * 30 * 1
        assert slip_force_from(0.3, 30.0, 1.0) == 18.0

    def test_zero_grip_force(self):
        assert slip_force_from(0.3, 0.0, 1.0) == 0.0

    def test_half_contact(self):
        # Formula value 2 * 0.25 * 20 * 0.5.
        assert slip_force_from(0.25, 20.0, 0.5) == 5.0

    def test_ground_truth_uses_area_factor(self):
        got = ground_truth_slip_force(DISK, _grip())
        af = contact_area_factor(DISK, _grip())
        assert got == slip_force_from(DISK.friction_mu, 30.0, af)

    def test_monotone_in_grip_force(self):
        vals = [ground_truth_slip_force(DISK, _grip(force=f))
                for f in grip_force_grid()]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_monotone_in_friction(self):
        vals = []
        for mu in (0.1, 0.3, 0.6, 1.0, 1.8):
            obj = SyntheticObjectClass("m", mu, "disk", {"radius": 0.006}, 0)
            grip = GripConfiguration("m", 0.0, 0.0, 0.0, 30.0)
            vals.append(ground_truth_slip_force(obj, grip))
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_no_contact_error(self):
        with pytest.raises(NoContactError):
            ground_truth_slip_force(DISK, _grip(y=0.05))


class TestAreaFactor:
    def test_centered_disk_fully_inside_is_exactly_one(self):
        assert contact_area_factor(DISK, _grip()) == 1.0

    def test_partial_overlap_below_one(self):
        af = contact_area_factor(DISK, _grip(y=0.013))
        assert 0.0 < af < 1.0

    def test_deterministic(self):
        g = _grip(y=0.011, z=0.004)
        assert contact_area_factor(DISK, g) == contact_area_factor(DISK, g)


class TestDesiredProfile:
    def test_reference_steps(self):
        p = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0, max_steps=3)
        t, d = generate_desired_profile(p, 2.0)
        assert np.array_equal(d, [0, 0, 1, 1, 2, 2])
        assert np.allclose(t, [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])

    def test_first_sample_is_f0(self):
        p = StepForceProfile(f0=5.0, delta_f=0.5, delta_t=1.0, max_steps=3)
        _, d = generate_desired_profile(p, 4.0)
        assert d[0] == 5.0

    def test_single_step_is_constant(self):
        p = StepForceProfile(f0=2.0, delta_f=1.0, delta_t=1.0, max_steps=1)
        _, d = generate_desired_profile(p, 5.0)
        assert np.all(d == 2.0)

    def test_rejects_nonpositive_rate(self):
        p = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0, max_steps=2)
        with pytest.raises(ValueError):
            generate_desired_profile(p, 0.0)


class TestSimulatePull:
    def test_noiseless_plateau(self):
        profile = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0,
                                   max_steps=10)
        trace, gt = simulate_pull(DISK, _grip(), profile, NOISELESS,
                                  ground_truth=2.4)
        assert gt == 2.4
        below = trace.desired < 2.4
        assert np.array_equal(trace.measured[below], trace.desired[below])
        assert np.all(trace.measured[~below] == 2.4)

    def test_noiseless_recovery_matches_ground_truth(self):
        profile = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0,
                                   max_steps=30)
        trace, gt = simulate_pull(DISK, _grip(), profile, NOISELESS)
        res = detect_slip(trace, 3.0)
        assert abs(res.f_max - gt) <= profile.delta_f

    def test_zero_ground_truth_plateaus_immediately(self):
        profile = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0,
                                   max_steps=10)
        trace, _ = simulate_pull(DISK, _grip(), profile, NOISELESS,
                                 ground_truth=0.0)
        assert np.all(trace.measured == 0.0)

    def test_seeded_noise_is_deterministic(self):
        sim = SimulatorConfig(force_noise_std=0.5, lag_time=0.05,
                              rng_seed=3, resolution=(24, 32))
        profile = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=0.5,
                                   max_steps=40)
        t1, _ = simulate_pull(DISK, _grip(), profile, sim)
        t2, _ = simulate_pull(DISK, _grip(), profile, sim)
        assert np.array_equal(t1.measured, t2.measured)

    def test_deviation_exceeds_epsilon_by_end(self):
        profile = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0,
                                   max_steps=30)
        trace, _ = simulate_pull(DISK, _grip(), profile, NOISELESS)
        assert abs(trace.measured[-1] - trace.desired[-1]) >= 3.0

    def test_profile_too_short_raises(self):
        profile = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=1.0,
                                   max_steps=2)
        with pytest.raises(NoSlipError):
            simulate_pull(DISK, _grip(force=60.0), profile, NOISELESS)


class TestRendering:
    def test_contact_pixels_monotone_in_grip_force(self):
        counts = []
        for f in grip_force_grid()[::2]:  # 5-point force grid
            pair = render_tactile_pair(DISK, _grip(force=f), NOISELESS)
            lum = pair.left.mean(axis=2)
            # The corner pixel stays background at every force.
            counts.append(int((lum > lum[0, 0] + 0.05).sum()))
        assert all(a <= b for a, b in zip(counts, counts[1:]))
        assert counts[0] < counts[-1]

    def test_disk_mirror_symmetry_noiseless(self):
        pair = render_tactile_pair(DISK, _grip(), NOISELESS)
        assert np.array_equal(pair.right, pair.left[:, ::-1])

    def test_seeded_determinism(self):
        sim = SimulatorConfig(pixel_noise_std=0.01, rng_seed=5,
                              resolution=(24, 32))
        a = render_tactile_pair(DISK, _grip(), sim)
        b = render_tactile_pair(DISK, _grip(), sim)
        assert np.array_equal(a.left, b.left)
        assert np.array_equal(a.right, b.right)

    def test_left_right_noise_independent(self):
        sim = SimulatorConfig(pixel_noise_std=0.01, rng_seed=5,
                              resolution=(24, 32))
        pair = render_tactile_pair(DISK, _grip(), sim)
        assert not np.array_equal(pair.right, pair.left[:, ::-1])

    def test_no_contact_gives_background_only(self):
        far = _grip(y=0.05)
        pair = render_tactile_pair(DISK, far, NOISELESS)
        lum = pair.left.mean(axis=2)
        assert lum.max() - lum.min() < 0.2  # texture only, no indentation

    def test_values_in_range_and_quantized(self):
        sim = SimulatorConfig(pixel_noise_std=0.02, rng_seed=1,
                              resolution=(24, 32))
        pair = render_tactile_pair(DISK, _grip(), sim)
        assert pair.left.min() >= 0.0 and pair.left.max() <= 1.0
        scaled = pair.left * 255.0
        assert np.allclose(scaled, np.round(scaled), atol=1e-4)


class TestGenerateDataset:
    GRID = GripGrid(ys=(0.0, 0.004), zs=(0.0,), thetas=(0.0,),
                    grip_forces=(30.0, 45.0))
    PROFILE = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=0.4, max_steps=60)

    def _classes(self, n=2):
        cat = object_catalog()
        return [cat[name] for name in list(cat)[:n]]

    def test_cardinality(self):
        sim = SimulatorConfig(rng_seed=1, resolution=(24, 32))
        pts = generate_dataset(self._classes(3), self.GRID, self.PROFILE,
                               sim, LabelingConfig())
        assert len(pts) == 3 * len(self.GRID)

    def test_point_ids_unique(self):
        sim = SimulatorConfig(rng_seed=1, resolution=(24, 32))
        pts = generate_dataset(self._classes(2), self.GRID, self.PROFILE,
                               sim, LabelingConfig())
        ids = [p.point_id for p in pts]
        assert len(set(ids)) == len(ids)

    def test_noiseless_recovery_within_delta_f(self):
        sim = SimulatorConfig(force_noise_std=0.0, lag_time=0.0,
                              pixel_noise_std=0.0, rng_seed=1,
                              resolution=(24, 32))
        cat = object_catalog()
        classes = [cat[c] for c in DEFAULT_TRAIN_CLASSES]
        pts = generate_dataset(classes, self.GRID, self.PROFILE, sim,
                               LabelingConfig())
        for p in pts:
            obj = cat[p.config.object_id]
            gt = ground_truth_slip_force(obj, p.config)
            assert abs(p.raw_force - gt) <= self.PROFILE.delta_f + 1e-9

    def test_bit_identical_under_seed(self):
        sim = SimulatorConfig(rng_seed=9, resolution=(24, 32))
        a = generate_dataset(self._classes(1), self.GRID, self.PROFILE, sim,
                             LabelingConfig())
        b = generate_dataset(self._classes(1), self.GRID, self.PROFILE, sim,
                             LabelingConfig())
        for pa, pb in zip(a, b):
            assert pa.label == pb.label and pa.raw_force == pb.raw_force
            assert np.array_equal(pa.images.left, pb.images.left)
            assert np.array_equal(pa.images.right, pb.images.right)

    def test_labels_consistent_with_raw(self):
        sim = SimulatorConfig(rng_seed=2, resolution=(24, 32))
        cfg = LabelingConfig()
        pts = generate_dataset(self._classes(2), self.GRID, self.PROFILE,
                               sim, cfg)
        for p in pts:
            assert p.label == canonical_float(normalized_force(p.raw_force, cfg))
            assert p.clamped == (not cfg.f_min <= p.raw_force <= cfg.f_max)

    def test_empty_grid_raises(self):
        sim = SimulatorConfig(rng_seed=1, resolution=(24, 32))
        with pytest.raises(ValueError):
            generate_dataset(self._classes(1), [], self.PROFILE, sim,
                             LabelingConfig())

    def test_short_profile_attaches_configuration(self):
        sim = SimulatorConfig(rng_seed=1, resolution=(24, 32))
        short = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=0.4, max_steps=2)
        with pytest.raises(DatasetGenerationError) as exc:
            generate_dataset(self._classes(1), self.GRID, short, sim,
                             LabelingConfig())
        assert "grip" in str(exc.value).lower() or "force" in str(exc.value).lower()

    def test_grid_configs_survive_text_round_trip(self):
        sim = SimulatorConfig(rng_seed=3, resolution=(24, 32))
        grid = GripGrid(ys=(0.0,), zs=(0.0,), thetas=(0.7853981633974483,),
                        grip_forces=(30.0,))
        pts = generate_dataset(self._classes(1), grid, self.PROFILE, sim,
                               LabelingConfig())
        theta = pts[0].config.theta
        assert float(f"{theta:.9g}") == theta


class TestDefaultGrid:
    def test_size(self):
        assert len(default_grid()) == 720

    def test_cells_are_valid_configurations(self):
        for y, z, theta, f in default_grid().cells():
            GripConfiguration("x", y, z, theta, f)


@given(st.floats(0.01, 2.0), st.sampled_from(grip_force_grid()),
       st.floats(0.0, 1.0))
def test_slip_force_formula_properties(mu, force, af):
    v = slip_force_from(mu, force, af)
    assert v >= 0.0
    assert v == 2.0 * mu * force * af

"""Shared fixtures: tiny model graphs and small synthetic datasets."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from gripstab.core import LabelingConfig, StepForceProfile
from gripstab.datasets import ArrayDataset
from gripstab.models import (
    INPUT_LEFT,
    INPUT_RIGHT,
    GraphNode,
    LayerSpec,
    ModelSpec,
)
from gripstab.pullsim import GripGrid, SimulatorConfig, generate_dataset, object_catalog

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def tiny_model_spec(h: int = 8, w: int = 8, name: str = "tiny") -> ModelSpec:
    """Smallest legal two-input model exercising the common layer kinds."""
    graph = (
        GraphNode("cat", LayerSpec("concat"), (INPUT_LEFT, INPUT_RIGHT)),
        GraphNode("c1", LayerSpec("conv", {"filters": 4, "kernel": 3,
                                           "stride": 2, "param_id": "c1"}),
                  ("cat",)),
        GraphNode("r1", LayerSpec("relu"), ("c1",)),
        GraphNode("b1", LayerSpec("batch_norm", {"param_id": "b1"}), ("r1",)),
        GraphNode("fl", LayerSpec("flatten"), ("b1",)),
        GraphNode("d1", LayerSpec("dense", {"nodes": 8, "param_id": "d1"}),
                  ("fl",)),
        GraphNode("r2", LayerSpec("relu"), ("d1",)),
        GraphNode("dr", LayerSpec("dropout", {"rate": 0.5}), ("r2",)),
        GraphNode("d2", LayerSpec("dense", {"nodes": 1, "param_id": "d2"}),
                  ("dr",)),
        GraphNode("sg", LayerSpec("sigmoid"), ("d2",)),
    )
    return ModelSpec(name, (h, w, 3), graph)


def toy_array_dataset(n: int = 24, h: int = 8, w: int = 8,
                      seed: int = 0) -> ArrayDataset:
    """Random image pairs whose label is the left image's mean brightness."""
    rng = np.random.default_rng(seed)
    left = rng.uniform(0, 1, (n, 3, h, w)).astype(np.float32)
    right = rng.uniform(0, 1, (n, 3, h, w)).astype(np.float32)
    labels = left.mean(axis=(1, 2, 3)).astype(np.float32)
    return ArrayDataset(
        left=left, right=right, labels=labels,
        point_ids=tuple(f"p{i}" for i in range(n)),
        class_ids=tuple("ab"[i % 2] for i in range(n)),
    )


def gradient_check(spec: ModelSpec, *, batch: int = 3, seed: int = 0,
                   fd_eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central finite-difference
    gradients of the MSE loss, evaluated in float64 with fixed dropout
    masks. The relative error uses a floored denominator so exactly-zero
    gradient pairs compare cleanly."""
    from gripstab.nn.network import Network

    net = Network(spec, rng=np.random.default_rng(seed), dtype=np.float64)
    data_rng = np.random.default_rng(seed + 1)
    h, w, _ = spec.input_shape
    left = data_rng.uniform(0, 1, (batch, 3, h, w))
    right = data_rng.uniform(0, 1, (batch, 3, h, w))
    target = data_rng.uniform(0.2, 0.8, (batch, 1))

    def loss() -> float:
        # Re-seeded per call so every evaluation uses identical dropout
        # masks; update_stats stays off so buffers cannot drift.
        pred = net.forward(left, right, training=True,
                           rng=np.random.default_rng(seed + 2),
                           update_stats=False)
        return float(np.mean((pred - target) ** 2))

    net.zero_grads()
    pred = net.forward(left, right, training=True,
                       rng=np.random.default_rng(seed + 2),
                       update_stats=False)
    net.backward((2.0 / batch) * (pred - target) / pred.shape[1])
    analytic = net.get_flat_grads().copy()

    flat = net.get_flat_params().copy()
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + fd_eps
        net.set_flat_params(flat)
        up = loss()
        flat[i] = saved - fd_eps
        net.set_flat_params(flat)
        down = loss()
        flat[i] = saved
        fd = (up - down) / (2.0 * fd_eps)
        denom = max(abs(analytic[i]) + abs(fd), 1e-6)
        worst = max(worst, abs(analytic[i] - fd) / denom)
    net.set_flat_params(flat)
    return worst


SMALL_GRID = GripGrid(
    ys=(0.0, 0.004), zs=(0.0,), thetas=(0.0, 0.785398163),
    grip_forces=(30.0, 45.0),
)
SMALL_PROFILE = StepForceProfile(f0=0.0, delta_f=1.0, delta_t=0.4,
                                 max_steps=60)


@pytest.fixture(scope="session")
def small_points():
    """16 simulated points (2 classes x 8 cells) at 24x32 resolution."""
    cat = object_catalog()
    sim = SimulatorConfig(rng_seed=7, resolution=(24, 32))
    return generate_dataset(
        [cat["gear"], cat["gear_2"]], SMALL_GRID, SMALL_PROFILE, sim,
        LabelingConfig(),
    )

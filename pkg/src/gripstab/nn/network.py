"""Executable network compiled from a ModelSpec.

Owns the parameter store (shared across weight-tied graph nodes), runs
forward/backward over the node plan, and exposes flat parameter/gradient
vectors for the optimizer.
"""

from __future__ import annotations

import numpy as np

from ..models import (
    INPUT_LEFT,
    INPUT_RIGHT,
    ModelSpec,
    parameter_shapes,
    propagate_shapes,
)
from . import layers
from .layers import FwdCtx


class Network:
    def __init__(
        self,
        spec: ModelSpec,
        *,
        rng: np.random.Generator | None = None,
        dtype=None,
        params: dict | None = None,
        buffers: dict | None = None,
    ):
        self.spec = spec
        h, w, c = spec.input_shape
        inputs = {INPUT_LEFT: (c, h, w), INPUT_RIGHT: (c, h, w)}
        self._shapes = propagate_shapes(spec.graph, inputs)
        self._shapes.update(inputs)
        self._param_order, self._buffer_order = parameter_shapes(
            spec.graph, inputs
        )
        if dtype is None:
            if params:
                dtype = next(iter(params.values())).dtype
            else:
                dtype = np.float32
        self.dtype = np.dtype(dtype)

        self.params: dict[str, dict[str, np.ndarray]] = {}
        self.grads: dict[str, dict[str, np.ndarray]] = {}
        self.buffers: dict[str, dict[str, np.ndarray]] = {}
        self._init_store(rng, params, buffers)
        self._plan = [(node, self._make_layer(node)) for node in spec.graph]

    # -- parameter store ----------------------------------------------------

    def _init_store(self, rng, params, buffers) -> None:
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            self._init_fresh(rng)
        else:
            for (pid, name), shape in _grouped(self._param_order):
                src = params.get((pid, name))
                if src is None or src.shape != shape:
                    raise ValueError(
                        f"checkpoint parameter {pid}/{name} missing or "
                        f"mis-shaped (want {shape})"
                    )
                self.params.setdefault(pid, {})[name] = (
                    np.array(src, dtype=self.dtype)
                )
        for pid, store in self.params.items():
            self.grads[pid] = {k: np.zeros_like(v) for k, v in store.items()}
        for (pid, name), shape in _grouped(self._buffer_order):
            if buffers is not None and (pid, name) in buffers:
                arr = np.array(buffers[(pid, name)], dtype=self.dtype)
                if arr.shape != shape:
                    raise ValueError(f"buffer {pid}/{name} mis-shaped")
            else:
                fill = 1.0 if name == "running_var" else 0.0
                arr = np.full(shape, fill, dtype=self.dtype)
            self.buffers.setdefault(pid, {})[name] = arr

    def _init_fresh(self, rng: np.random.Generator) -> None:
        # Draw in graph order at first param_id use, so init is a pure
        # function of (spec, seed).
        done: set[str] = set()
        for node in self.spec.graph:
            kind = node.spec.kind
            pid = node.spec.param_id
            if pid is None or pid in done:
                continue
            done.add(pid)
            in_shape = self._shapes[node.inputs[0]]
            if kind == "conv":
                p = layers.Conv2D.init_params(
                    in_shape[0], node.spec.params["filters"],
                    node.spec.params["kernel"], rng, self.dtype,
                )
            elif kind == "dense":
                p = layers.Dense.init_params(
                    in_shape[0], node.spec.params["nodes"], rng, self.dtype
                )
            else:
                p = layers.BatchNorm2D.init_params(in_shape[0], self.dtype)
            self.params[pid] = p

    def _make_layer(self, node) -> layers.LayerBase:
        kind = node.spec.kind
        p = node.spec.params
        pid = node.spec.param_id
        if kind == "conv":
            return layers.Conv2D(self.params[pid], self.grads[pid],
                                 p["kernel"], p["stride"])
        if kind == "batch_norm":
            return layers.BatchNorm2D(self.params[pid], self.grads[pid],
                                      self.buffers[pid])
        if kind == "dense":
            return layers.Dense(self.params[pid], self.grads[pid])
        if kind == "relu":
            return layers.ReLU()
        if kind == "max_pool":
            return layers.MaxPool2D(p["kernel"], p["stride"])
        if kind == "dropout":
            return layers.Dropout(p["rate"])
        if kind == "sigmoid":
            return layers.Sigmoid()
        if kind == "flatten":
            return layers.Flatten()
        if kind == "add_skip":
            return layers.AddSkip(p.get("stride", 1))
        if kind == "concat":
            return layers.Concat()
        raise ValueError(f"unhandled kind {kind!r}")  # pragma: no cover

    # -- execution ----------------------------------------------------------

    def forward(
        self,
        left: np.ndarray,
        right: np.ndarray,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
        update_stats: bool | None = None,
    ) -> np.ndarray:
        """Run both images (B, 3, H, W) through the graph; returns (B, 1)."""
        if update_stats is None:
            update_stats = training
        ctx = FwdCtx(training=training, update_stats=update_stats, rng=rng)
        acts: dict[str, np.ndarray] = {
            INPUT_LEFT: np.ascontiguousarray(left, dtype=self.dtype),
            INPUT_RIGHT: np.ascontiguousarray(right, dtype=self.dtype),
        }
        remaining = _use_counts(self.spec)
        out = None
        for node, layer in self._plan:
            xs = [acts[n] for n in node.inputs]
            out = layer.forward(xs, ctx)
            acts[node.name] = out
            for n in node.inputs:
                remaining[n] -= 1
                if remaining[n] == 0:
                    del acts[n]
        return out

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients for the last training-mode
        forward pass."""
        grads: dict[str, np.ndarray] = {
            self.spec.output_name: np.asarray(grad_out, dtype=self.dtype)
        }
        for node, layer in reversed(self._plan):
            g = grads.pop(node.name, None)
            if g is None:
                continue
            in_grads = layer.backward(g)
            for ref, gi in zip(node.inputs, in_grads):
                if ref in (INPUT_LEFT, INPUT_RIGHT):
                    continue
                if ref in grads:
                    grads[ref] = grads[ref] + gi
                else:
                    grads[ref] = gi

    def zero_grads(self) -> None:
        for store in self.grads.values():
            for arr in store.values():
                arr.fill(0.0)

    # -- flat views ---------------------------------------------------------

    def parameter_arrays(self) -> dict[tuple[str, str], np.ndarray]:
        """Trainable arrays keyed (param_id, name), in declared order."""
        return {(pid, name): self.params[pid][name]
                for pid, name, _ in self._param_order}

    def buffer_arrays(self) -> dict[tuple[str, str], np.ndarray]:
        return {(pid, name): self.buffers[pid][name]
                for pid, name, _ in self._buffer_order}

    @property
    def n_params(self) -> int:
        return sum(arr.size for arr in self.parameter_arrays().values())

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate(
            [arr.ravel() for arr in self.parameter_arrays().values()]
        )

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=self.dtype)
        if flat.shape != (self.n_params,):
            raise ValueError(
                f"expected flat vector of {self.n_params}, got {flat.shape}"
            )
        start = 0
        for arr in self.parameter_arrays().values():
            stop = start + arr.size
            np.copyto(arr, flat[start:stop].reshape(arr.shape))
            start = stop

    def get_flat_grads(self) -> np.ndarray:
        return np.concatenate(
            [self.grads[pid][name].ravel()
             for pid, name, _ in self._param_order]
        )


def _grouped(order: list[tuple[str, str, tuple[int, ...]]]):
    for pid, name, shape in order:
        yield (pid, name), shape


def _use_counts(spec: ModelSpec) -> dict[str, int]:
    counts: dict[str, int] = {}
    for node in spec.graph:
        for ref in node.inputs:
            counts[ref] = counts.get(ref, 0) + 1
    counts[spec.output_name] = counts.get(spec.output_name, 0) + 1
    return counts

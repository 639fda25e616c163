"""Declarative layer graphs for the stability network and its baseline.

A model is an ordered list of named graph nodes (kind + params + input
edges) over two image inputs. Construction, shape checking and
serialization are pure; the execution engine lives in gripstab.nn.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

INPUT_LEFT = "image_left"
INPUT_RIGHT = "image_right"

VALID_KINDS = frozenset(
    {"conv", "batch_norm", "relu", "max_pool", "dense", "dropout",
     "sigmoid", "add_skip", "concat", "flatten"}
)
#: Kinds that own trainable parameters and therefore need a param_id.
PARAM_KINDS = frozenset({"conv", "batch_norm", "dense"})

CHECKPOINT_VERSION = 1

#: Parameter array names per kind, in checkpoint/flattening order.
_PARAM_NAMES = {
    "conv": ("weight", "bias"),
    "batch_norm": ("gamma", "beta"),
    "dense": ("weight", "bias"),
}
_BUFFER_NAMES = {"batch_norm": ("running_mean", "running_var")}

_ALLOWED_PARAMS = {
    "conv": {"filters", "kernel", "stride", "param_id"},
    "batch_norm": {"param_id"},
    "relu": set(),
    "max_pool": {"kernel", "stride"},
    "dense": {"nodes", "param_id"},
    "dropout": {"rate"},
    "sigmoid": set(),
    "add_skip": {"stride"},
    "concat": set(),
    "flatten": set(),
}


class ShapeError(ValueError):
    """A graph edge or input does not shape-check."""


def _require_positive_int(params: dict, key: str, kind: str) -> None:
    v = params.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ValueError(f"{kind} needs integer {key} >= 1, got {v!r}")


@dataclass(frozen=True)
class LayerSpec:
    """One layer kind plus its kind-specific parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        allowed = _ALLOWED_PARAMS[self.kind]
        extra = set(self.params) - allowed
        if extra:
            raise ValueError(f"{self.kind} got unsupported params {sorted(extra)}")
        if self.kind in PARAM_KINDS:
            pid = self.params.get("param_id")
            if not isinstance(pid, str) or not pid:
                raise ValueError(f"{self.kind} needs a non-empty param_id")
        if self.kind == "conv":
            for key in ("filters", "kernel", "stride"):
                _require_positive_int(self.params, key, "conv")
        elif self.kind == "max_pool":
            for key in ("kernel", "stride"):
                _require_positive_int(self.params, key, "max_pool")
        elif self.kind == "dense":
            _require_positive_int(self.params, "nodes", "dense")
        elif self.kind == "dropout":
            rate = self.params.get("rate")
            if not isinstance(rate, float) or not (0.0 < rate < 1.0):
                raise ValueError(f"dropout rate must be in (0,1), got {rate!r}")
        elif self.kind == "add_skip" and "stride" in self.params:
            _require_positive_int(self.params, "stride", "add_skip")

    @property
    def param_id(self) -> str | None:
        return self.params.get("param_id")


@dataclass(frozen=True)
class GraphNode:
    """A named occurrence of an operation in the model graph."""

    name: str
    spec: LayerSpec
    inputs: tuple[str, ...]

    def __post_init__(self) -> None:
        kind = self.spec.kind
        n = len(self.inputs)
        if kind == "add_skip":
            if n != 2:
                raise ValueError(f"add_skip takes (main, skip), got {n} inputs")
        elif kind == "concat":
            if n < 2:
                raise ValueError("concat takes at least two inputs")
        elif n != 1:
            raise ValueError(f"{kind} takes exactly one input, got {n}")


@dataclass(frozen=True)
class ModelSpec:
    """A complete two-image regression model ending in a sigmoid scalar."""

    name: str
    input_shape: tuple[int, int, int]  # (height, width, 3) per image
    graph: tuple[GraphNode, ...]

    def __post_init__(self) -> None:
        h, w, c = self.input_shape
        if c != 3 or h < 1 or w < 1:
            raise ValueError(f"input_shape must be (h, w, 3), got {self.input_shape}")
        if not self.graph:
            raise ValueError("empty graph")
        seen: set[str] = set()
        used_inputs: set[str] = set()
        for node in self.graph:
            if node.name in (INPUT_LEFT, INPUT_RIGHT) or node.name in seen:
                raise ValueError(f"duplicate or reserved node name {node.name!r}")
            for ref in node.inputs:
                if ref in (INPUT_LEFT, INPUT_RIGHT):
                    used_inputs.add(ref)
                elif ref not in seen:
                    raise ValueError(
                        f"node {node.name!r} references undefined input {ref!r}"
                    )
            seen.add(node.name)
        if used_inputs != {INPUT_LEFT, INPUT_RIGHT}:
            raise ValueError("model must consume both image inputs")
        if self.graph[-1].spec.kind != "sigmoid":
            raise ValueError("model output must be sigmoid-activated")

    @property
    def output_name(self) -> str:
        return self.graph[-1].name


# ---------------------------------------------------------------------------
# Shape propagation
# ---------------------------------------------------------------------------

def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _pool_dim(d: int, kernel: int, stride: int) -> int:
    # Ceil mode: edge windows are clipped, so spatial dims never reach zero.
    return max(_ceil_div(d - kernel, stride) + 1, 1)


def propagate_shapes(
    graph: Sequence[GraphNode], inputs: Mapping[str, tuple[int, ...]]
) -> dict[str, tuple[int, ...]]:
    """Forward symbolic shapes ((channels, h, w) or (features,)) through a
    node sequence; raises ShapeError naming the first bad edge."""
    shapes: dict[str, tuple[int, ...]] = dict(inputs)

    def get(node: GraphNode, ref: str) -> tuple[int, ...]:
        if ref not in shapes:
            raise ShapeError(f"node {node.name!r}: unresolved input {ref!r}")
        return shapes[ref]

    for node in graph:
        kind = node.spec.kind
        p = node.spec.params
        ins = [get(node, r) for r in node.inputs]
        if kind in ("conv", "batch_norm", "max_pool", "add_skip", "concat"):
            for r, s in zip(node.inputs, ins):
                if len(s) != 3:
                    raise ShapeError(
                        f"node {node.name!r}: input {r!r} must be (c, h, w), got {s}"
                    )
        if kind == "conv":
            c, h, w = ins[0]
            s = p["stride"]
            out = (p["filters"], _ceil_div(h, s), _ceil_div(w, s))
        elif kind == "max_pool":
            c, h, w = ins[0]
            out = (c, _pool_dim(h, p["kernel"], p["stride"]),
                   _pool_dim(w, p["kernel"], p["stride"]))
        elif kind in ("batch_norm", "relu"):
            out = ins[0]  # relu accepts any rank; batch_norm is gated above
        elif kind == "add_skip":
            (cm, hm, wm), (cs, hs, ws) = ins
            stride = p.get("stride", 1)
            hs, ws = _ceil_div(hs, stride), _ceil_div(ws, stride)
            if (hs, ws) != (hm, wm):
                raise ShapeError(
                    f"node {node.name!r}: skip input {node.inputs[1]!r} is "
                    f"{hs}x{ws} but the main path is {hm}x{wm}"
                )
            out = ins[0]
        elif kind == "concat":
            spatial = {s[1:] for s in ins}
            if len(spatial) != 1:
                raise ShapeError(
                    f"node {node.name!r}: concat inputs disagree on spatial "
                    f"dims: {sorted(spatial)}"
                )
            out = (sum(s[0] for s in ins),) + ins[0][1:]
        elif kind == "flatten":
            s = ins[0]
            if len(s) != 3:
                raise ShapeError(
                    f"node {node.name!r}: flatten expects (c, h, w), got {s}"
                )
            out = (s[0] * s[1] * s[2],)
        elif kind == "dense":
            s = ins[0]
            if len(s) != 1:
                raise ShapeError(
                    f"node {node.name!r}: dense expects a flat input, got {s}"
                )
            out = (p["nodes"],)
        elif kind in ("dropout", "sigmoid"):
            out = ins[0]
        else:  # pragma: no cover - VALID_KINDS is closed
            raise ShapeError(f"node {node.name!r}: unhandled kind {kind!r}")
        shapes[node.name] = out
    return shapes


def check_shapes(spec: ModelSpec) -> list[tuple[str, str, tuple[int, ...]]]:
    """Per-layer shape table (name, kind, output shape), one row per node."""
    h, w, c = spec.input_shape
    shapes = propagate_shapes(
        spec.graph, {INPUT_LEFT: (c, h, w), INPUT_RIGHT: (c, h, w)}
    )
    return [(n.name, n.spec.kind, shapes[n.name]) for n in spec.graph]


def parameter_shapes(
    graph: Sequence[GraphNode], inputs: Mapping[str, tuple[int, ...]]
) -> tuple[list[tuple[str, str, tuple[int, ...]]], list[tuple[str, str, tuple[int, ...]]]]:
    """Parameter and buffer allocations in declared (first-use) order.

    Returns two lists of (param_id, array_name, shape). Shared param_ids
    appear once; a reuse with an incompatible shape raises ShapeError.
    """
    shapes = propagate_shapes(graph, inputs)
    full = dict(inputs)
    full.update(shapes)
    alloc: dict[tuple[str, str], tuple[int, ...]] = {}
    params: list[tuple[str, str, tuple[int, ...]]] = []
    buffers: list[tuple[str, str, tuple[int, ...]]] = []

    def add(target: list, pid: str, name: str, shape: tuple[int, ...],
            node: GraphNode) -> None:
        key = (pid, name)
        if key in alloc:
            if alloc[key] != shape:
                raise ShapeError(
                    f"node {node.name!r} reuses param {pid!r}/{name} with shape "
                    f"{shape}, previously {alloc[key]}"
                )
            return
        alloc[key] = shape
        target.append((pid, name, shape))

    for node in graph:
        kind = node.spec.kind
        if kind not in PARAM_KINDS:
            continue
        pid = node.spec.param_id
        in_shape = full[node.inputs[0]]
        if kind == "conv":
            f = node.spec.params["filters"]
            k = node.spec.params["kernel"]
            add(params, pid, "weight", (f, in_shape[0], k, k), node)
            add(params, pid, "bias", (f,), node)
        elif kind == "dense":
            n = node.spec.params["nodes"]
            add(params, pid, "weight", (n, in_shape[0]), node)
            add(params, pid, "bias", (n,), node)
        else:  # batch_norm
            c = in_shape[0]
            add(params, pid, "gamma", (c,), node)
            add(params, pid, "beta", (c,), node)
            add(buffers, pid, "running_mean", (c,), node)
            add(buffers, pid, "running_var", (c,), node)
    return params, buffers


def count_fragment_parameters(
    graph: Sequence[GraphNode], inputs: Mapping[str, tuple[int, ...]]
) -> int:
    """Trainable scalar count of a node sequence (shared params once)."""
    params, _ = parameter_shapes(graph, inputs)
    total = 0
    for _, _, shape in params:
        n = 1
        for d in shape:
            n *= d
        total += n
    return total


def count_parameters(spec: ModelSpec) -> int:
    """Trainable scalar count of a full model."""
    h, w, c = spec.input_shape
    return count_fragment_parameters(
        spec.graph, {INPUT_LEFT: (c, h, w), INPUT_RIGHT: (c, h, w)}
    )


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _conv(name: str, pid: str, inp: str, filters: int, kernel: int = 3,
          stride: int = 1) -> GraphNode:
    return GraphNode(
        name,
        LayerSpec("conv", {"filters": filters, "kernel": kernel,
                           "stride": stride, "param_id": pid}),
        (inp,),
    )


def _bn(name: str, pid: str, inp: str) -> GraphNode:
    return GraphNode(name, LayerSpec("batch_norm", {"param_id": pid}), (inp,))


def _relu(name: str, inp: str) -> GraphNode:
    return GraphNode(name, LayerSpec("relu"), (inp,))


def _pool(name: str, inp: str, kernel: int = 2, stride: int = 2) -> GraphNode:
    return GraphNode(
        name, LayerSpec("max_pool", {"kernel": kernel, "stride": stride}), (inp,)
    )


def build_resnet_block(
    in_channels: int,
    filters: int,
    *,
    name: str = "block",
    input_name: str = "in",
    scope: str | None = None,
) -> tuple[GraphNode, ...]:
    """Residual block: conv-relu-bn-conv, skip-add of the block input
    (zero-padding its channels when filters grow, cropping when they
    shrink), then relu-bn. Block output always has `filters` channels.

    The fragment reads `input_name` and ends with the `{name}/bn2` node.
    """
    if in_channels < 1 or filters < 1:
        raise ValueError("in_channels and filters must be >= 1")
    scope = scope or name
    nodes = (
        _conv(f"{name}/conv1", f"{scope}/conv1", input_name, filters),
        _relu(f"{name}/relu1", f"{name}/conv1"),
        _bn(f"{name}/bn1", f"{scope}/bn1", f"{name}/relu1"),
        _conv(f"{name}/conv2", f"{scope}/conv2", f"{name}/bn1", filters),
        GraphNode(f"{name}/add", LayerSpec("add_skip"),
                  (f"{name}/conv2", input_name)),
        _relu(f"{name}/relu2", f"{name}/add"),
        _bn(f"{name}/bn2", f"{scope}/bn2", f"{name}/relu2"),
    )
    return nodes


ENCODER_MIN_HW = 32


def _require_encoder_input(input_shape: tuple[int, int, int]) -> None:
    h, w, c = input_shape
    if c != 3:
        raise ShapeError(f"encoder input must have 3 channels, got {c}")
    if h < ENCODER_MIN_HW or w < ENCODER_MIN_HW:
        raise ShapeError(
            f"encoder input {h}x{w} is too small for the pooling cascade "
            f"(need at least {ENCODER_MIN_HW}x{ENCODER_MIN_HW})"
        )


_ENCODER_FILTERS = (128, 256, 512)
_DECODER_FILTERS = (256, 128, 64, 32)
_INTERPRETER_WIDTHS = (512, 256, 128, 64)
STEM_FILTERS = 64


def _encoder_fragment(
    branch: str, input_name: str, scope: str = "encoder"
) -> tuple[GraphNode, ...]:
    nodes: list[GraphNode] = [
        _conv(f"{branch}/stem_conv", f"{scope}/stem_conv", input_name,
              STEM_FILTERS, kernel=7, stride=2),
        _pool(f"{branch}/stem_pool", f"{branch}/stem_conv"),
        _relu(f"{branch}/stem_relu", f"{branch}/stem_pool"),
        _bn(f"{branch}/stem_bn", f"{scope}/stem_bn", f"{branch}/stem_relu"),
    ]
    cur = f"{branch}/stem_bn"
    in_c = STEM_FILTERS
    for bi, filters in enumerate(_ENCODER_FILTERS, 1):
        block = build_resnet_block(
            in_c, filters, name=f"{branch}/block{bi}", input_name=cur,
            scope=f"{scope}/block{bi}",
        )
        nodes.extend(block)
        cur = block[-1].name
        in_c = filters
        if bi < len(_ENCODER_FILTERS):
            nodes.append(_pool(f"{branch}/between{bi}_pool", cur))
            nodes.append(_relu(f"{branch}/between{bi}_relu",
                               f"{branch}/between{bi}_pool"))
            nodes.append(_bn(f"{branch}/between{bi}_bn",
                             f"{scope}/between{bi}_bn",
                             f"{branch}/between{bi}_relu"))
            cur = f"{branch}/between{bi}_bn"
    return tuple(nodes)


def build_snn_encoder(input_shape: tuple[int, int, int]) -> tuple[GraphNode, ...]:
    """Encoder fragment for one image branch: stem conv/pool/relu/bn, then
    residual blocks of 128, 256, 512 filters with pool/relu/bn between.

    Output has 512 channels; raises ShapeError when the input is too small.
    """
    _require_encoder_input(input_shape)
    return _encoder_fragment("encoder", INPUT_LEFT)


def _interpreter_fragment(input_name: str) -> tuple[GraphNode, ...]:
    nodes: list[GraphNode] = []
    cur = input_name
    for i, width in enumerate(_INTERPRETER_WIDTHS, 1):
        nodes.append(GraphNode(
            f"interpreter/dense{i}",
            LayerSpec("dense", {"nodes": width,
                                "param_id": f"interpreter/dense{i}"}),
            (cur,),
        ))
        nodes.append(_relu(f"interpreter/relu{i}", f"interpreter/dense{i}"))
        cur = f"interpreter/relu{i}"
        if i in (2, 4):
            nodes.append(GraphNode(
                f"interpreter/dropout{i}", LayerSpec("dropout", {"rate": 0.5}),
                (cur,),
            ))
            cur = f"interpreter/dropout{i}"
    nodes.append(GraphNode(
        "interpreter/dense_out",
        LayerSpec("dense", {"nodes": 1, "param_id": "interpreter/dense_out"}),
        (cur,),
    ))
    nodes.append(GraphNode(
        "interpreter/sigmoid", LayerSpec("sigmoid"), ("interpreter/dense_out",)
    ))
    return tuple(nodes)


def interpreter_signature(spec: ModelSpec) -> tuple[tuple[str, ...], ...]:
    """Structural fingerprint of a model's interpreter subgraph: the
    (kind, key-param) sequence of all nodes from the first dense onward."""
    sig: list[tuple[str, ...]] = []
    started = False
    for node in spec.graph:
        if not started and node.spec.kind == "dense":
            started = True
        if not started:
            continue
        kind = node.spec.kind
        if kind == "dense":
            sig.append((kind, str(node.spec.params["nodes"])))
        elif kind == "dropout":
            sig.append((kind, str(node.spec.params["rate"])))
        else:
            sig.append((kind,))
    return tuple(sig)


def build_snn(input_shape: tuple[int, int, int]) -> ModelSpec:
    """The stability network: one weight-shared encoder over both images,
    channel concat (1024), a four-block feature decoder (256..32), and the
    dense interpreter 512-256-128-64 with a sigmoid scalar head."""
    _require_encoder_input(input_shape)
    nodes: list[GraphNode] = []
    left = _encoder_fragment("enc_left", INPUT_LEFT)
    right = _encoder_fragment("enc_right", INPUT_RIGHT)
    nodes.extend(left)
    nodes.extend(right)
    nodes.append(GraphNode(
        "fusion/concat", LayerSpec("concat"), (left[-1].name, right[-1].name)
    ))
    cur = "fusion/concat"
    in_c = 2 * _ENCODER_FILTERS[-1]
    for di, filters in enumerate(_DECODER_FILTERS, 1):
        block = build_resnet_block(in_c, filters, name=f"decoder/block{di}",
                                   input_name=cur, scope=f"decoder/block{di}")
        nodes.extend(block)
        cur = block[-1].name
        in_c = filters
        if di < len(_DECODER_FILTERS):
            nodes.append(_bn(f"decoder/between{di}_bn",
                             f"decoder/between{di}_bn", cur))
            nodes.append(_pool(f"decoder/between{di}_pool",
                               f"decoder/between{di}_bn"))
            nodes.append(_relu(f"decoder/between{di}_relu",
                               f"decoder/between{di}_pool"))
            cur = f"decoder/between{di}_relu"
    nodes.append(GraphNode("decoder/flatten", LayerSpec("flatten"), (cur,)))
    nodes.extend(_interpreter_fragment("decoder/flatten"))
    spec = ModelSpec("snn", input_shape, tuple(nodes))
    rows = check_shapes(spec)
    assert rows[-1][2] == (1,)
    return spec


_BASELINE_STAGES = (64, 128, 256, 512)


def _basic_block(
    name: str, filters: int, stride: int, input_name: str
) -> tuple[GraphNode, ...]:
    """Canonical residual basic block: conv-bn-relu-conv-bn, identity add
    (strided subsample + channel pad on the shortcut), relu."""
    nodes = (
        _conv(f"{name}/conv1", f"{name}/conv1", input_name, filters,
              stride=stride),
        _bn(f"{name}/bn1", f"{name}/bn1", f"{name}/conv1"),
        _relu(f"{name}/relu1", f"{name}/bn1"),
        _conv(f"{name}/conv2", f"{name}/conv2", f"{name}/relu1", filters),
        _bn(f"{name}/bn2", f"{name}/bn2", f"{name}/conv2"),
        GraphNode(f"{name}/add",
                  LayerSpec("add_skip", {"stride": stride} if stride > 1 else {}),
                  (f"{name}/bn2", input_name)),
        _relu(f"{name}/relu2", f"{name}/add"),
    )
    return nodes


def build_baseline(input_shape: tuple[int, int, int]) -> ModelSpec:
    """ResNet-18 comparison model: both images concatenated channel-wise,
    the standard 17-conv residual trunk, flatten, then the identical
    interpreter head used by the stability network."""
    _require_encoder_input(input_shape)
    nodes: list[GraphNode] = [
        GraphNode("trunk/concat_input", LayerSpec("concat"),
                  (INPUT_LEFT, INPUT_RIGHT)),
        _conv("trunk/stem_conv", "trunk/stem_conv", "trunk/concat_input",
              STEM_FILTERS, kernel=7, stride=2),
        _bn("trunk/stem_bn", "trunk/stem_bn", "trunk/stem_conv"),
        _relu("trunk/stem_relu", "trunk/stem_bn"),
        _pool("trunk/stem_pool", "trunk/stem_relu", kernel=3, stride=2),
    ]
    cur = "trunk/stem_pool"
    for si, filters in enumerate(_BASELINE_STAGES, 1):
        for bi in (1, 2):
            stride = 2 if (si > 1 and bi == 1) else 1
            block = _basic_block(f"trunk/stage{si}_block{bi}", filters,
                                 stride, cur)
            nodes.extend(block)
            cur = block[-1].name
    nodes.append(GraphNode("trunk/flatten", LayerSpec("flatten"), (cur,)))
    nodes.extend(_interpreter_fragment("trunk/flatten"))
    spec = ModelSpec("baseline", input_shape, tuple(nodes))
    rows = check_shapes(spec)
    assert rows[-1][2] == (1,)
    return spec


# ---------------------------------------------------------------------------
# Serialization and checkpoints
# ---------------------------------------------------------------------------

def model_spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "name": spec.name,
        "input_shape": list(spec.input_shape),
        "graph": [
            {
                "name": n.name,
                "kind": n.spec.kind,
                "params": dict(n.spec.params),
                "inputs": list(n.inputs),
            }
            for n in spec.graph
        ],
    }


def model_spec_from_dict(d: dict) -> ModelSpec:
    graph = tuple(
        GraphNode(n["name"], LayerSpec(n["kind"], dict(n["params"])),
                  tuple(n["inputs"]))
        for n in d["graph"]
    )
    return ModelSpec(d["name"], tuple(d["input_shape"]), graph)


def model_spec_to_json(spec: ModelSpec) -> str:
    """Canonical (sorted-key, compact) JSON form; equal specs give equal
    strings."""
    return json.dumps(model_spec_to_dict(spec), sort_keys=True,
                      separators=(",", ":"))


def model_spec_from_json(s: str) -> ModelSpec:
    return model_spec_from_dict(json.loads(s))


@dataclass
class Checkpoint:
    """Portable trained-model container: spec, parameter and buffer arrays
    in declared order, training step, and optional RNG state."""

    spec: ModelSpec
    params: dict[tuple[str, str], np.ndarray]
    buffers: dict[tuple[str, str], np.ndarray]
    step: int
    rng_state: dict | None = None

    @classmethod
    def from_network(cls, network, step: int,
                     rng_state: dict | None = None) -> "Checkpoint":
        return cls(
            spec=network.spec,
            params={k: v.copy() for k, v in network.parameter_arrays().items()},
            buffers={k: v.copy() for k, v in network.buffer_arrays().items()},
            step=step,
            rng_state=rng_state,
        )

    def to_network(self, dtype=None):
        from .nn.network import Network

        return Network(self.spec, params=self.params, buffers=self.buffers,
                       dtype=dtype)


class CheckpointError(RuntimeError):
    """A checkpoint file is missing pieces or structurally inconsistent."""


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write a checkpoint as an npz container at exactly `path`."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_spec": model_spec_to_dict(ckpt.spec),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "param_order": [[pid, name] for pid, name in ckpt.params],
        "buffer_order": [[pid, name] for pid, name in ckpt.buffers],
    }
    arrays = {"__meta__": np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )}
    for (pid, name), arr in ckpt.params.items():
        arrays[f"p/{pid}/{name}"] = arr
    for (pid, name), arr in ckpt.buffers.items():
        arrays[f"b/{pid}/{name}"] = arr
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path) as z:
            if "__meta__" not in z:
                raise CheckpointError(f"{path}: missing checkpoint metadata")
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: unsupported format_version "
                    f"{meta.get('format_version')!r}"
                )
            spec = model_spec_from_dict(meta["model_spec"])
            params = {}
            for pid, name in meta["param_order"]:
                key = f"p/{pid}/{name}"
                if key not in z:
                    raise CheckpointError(f"{path}: missing array {key!r}")
                params[(pid, name)] = z[key]
            buffers = {}
            for pid, name in meta["buffer_order"]:
                key = f"b/{pid}/{name}"
                if key not in z:
                    raise CheckpointError(f"{path}: missing array {key!r}")
                buffers[(pid, name)] = z[key]
    except (OSError, ValueError, KeyError, json.JSONDecodeError,
            zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return Checkpoint(spec, params, buffers, int(meta["step"]),
                      meta.get("rng_state"))

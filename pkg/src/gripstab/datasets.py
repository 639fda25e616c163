"""Dataset persistence, train/validation splitting and K-fold assignment.

On-disk layout under one root directory:
  images/<point_id>_{left,right}.png   lossless 8-bit RGB
  points.ndrec                         one tab-separated record per point
  manifest                             JSON with schema, labeling, seed

Floats are serialized with 9 significant digits; values produced through
core.canonical_float survive the round trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .core import (
    DataPoint,
    GripConfiguration,
    LabelingConfig,
    TactileImagePair,
    canonical_float,
    normalized_force,
    validate_datapoint,
)

SCHEMA_VERSION = 1

#: Fixed ndrec field order.
NDREC_FIELDS = ("point_id", "class_id", "y", "z", "theta", "grip_force",
                "raw_force", "label", "clamped")


class DatasetError(RuntimeError):
    """The on-disk dataset is missing pieces or violates its manifest."""


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a stored dataset; the ndrec file holds the per-point rows."""

    name: str
    points: tuple[str, ...]  # point ids, in record order
    object_classes: tuple[str, ...]
    labeling: LabelingConfig
    creation_seed: int
    resolution: tuple[int, int]  # (rows, cols) of every image
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of point indices into n_folds balanced folds."""

    n_folds: int
    assignment: tuple[int, ...]  # point index -> fold index

    def __post_init__(self) -> None:
        n = len(self.assignment)
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        counts = np.bincount(np.asarray(self.assignment), minlength=self.n_folds)
        if len(counts) > self.n_folds or counts.min() == 0:
            raise ValueError("assignment does not use exactly n_folds folds")
        lo, hi = n // self.n_folds, -(-n // self.n_folds)
        if counts.min() < lo or counts.max() > hi:
            raise ValueError(
                f"fold sizes {sorted(counts)} are not within +-1 of "
                f"{n}/{self.n_folds}"
            )

    def fold_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == k)

    def train_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) != k)


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def _image_path(root: Path, point_id: str, side: str) -> Path:
    return root / "images" / f"{point_id}_{side}.png"


def save_dataset(
    points: Sequence[DataPoint],
    path: Path | str,
    *,
    labeling: LabelingConfig,
    creation_seed: int,
    name: str = "dataset",
) -> DatasetManifest:
    """Persist points and return the written manifest.

    Images are stored as 8-bit PNGs (bit-exact for the quantized float
    images the simulator produces); metadata goes to points.ndrec and the
    JSON manifest.
    """
    if not points:
        raise ValueError("nothing to save: empty point list")
    ids = [p.point_id for p in points]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate point ids: {dupes[:5]}")
    resolutions = {p.images.resolution for p in points}
    if len(resolutions) != 1:
        raise ValueError(f"mixed image resolutions: {sorted(resolutions)}")

    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for p in points:
        for side, img in (("left", p.images.left), ("right", p.images.right)):
            arr = np.round(img * 255.0).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(_image_path(root, p.point_id, side))
        c = p.config
        lines.append("\t".join((
            p.point_id, c.object_id, _fmt(c.y), _fmt(c.z), _fmt(c.theta),
            _fmt(c.grip_force), _fmt(p.raw_force), _fmt(p.label),
            "1" if p.clamped else "0",
        )))
    (root / "points.ndrec").write_text("\n".join(lines) + "\n")

    manifest = DatasetManifest(
        name=name,
        points=tuple(ids),
        object_classes=tuple(sorted({p.config.object_id for p in points})),
        labeling=labeling,
        creation_seed=creation_seed,
        resolution=points[0].images.resolution,
    )
    (root / "manifest").write_text(_manifest_to_json(manifest))
    return manifest


def _manifest_to_json(m: DatasetManifest) -> str:
    doc = {
        "schema_version": m.schema_version,
        "name": m.name,
        "creation_seed": m.creation_seed,
        "resolution": list(m.resolution),
        "labeling": {
            "f_min": m.labeling.f_min,
            "f_max": m.labeling.f_max,
            "epsilon": m.labeling.epsilon,
            "delta_z": m.labeling.delta_z,
        },
        "object_classes": list(m.object_classes),
        "points": list(m.points),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _manifest_from_json(text: str) -> DatasetManifest:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(
            f"unsupported schema_version {doc.get('schema_version')!r}"
        )
    lab = doc["labeling"]
    return DatasetManifest(
        name=doc["name"],
        points=tuple(doc["points"]),
        object_classes=tuple(doc["object_classes"]),
        labeling=LabelingConfig(f_min=lab["f_min"], f_max=lab["f_max"],
                                epsilon=lab["epsilon"], delta_z=lab["delta_z"]),
        creation_seed=doc["creation_seed"],
        resolution=tuple(doc["resolution"]),
    )


def load_manifest(path: Path | str) -> DatasetManifest:
    root = Path(path)
    f = root / "manifest"
    if not f.is_file():
        raise DatasetError(f"no manifest under {root}")
    return _manifest_from_json(f.read_text())


def _parse_ndrec(root: Path) -> list[dict]:
    f = root / "points.ndrec"
    if not f.is_file():
        raise DatasetError(f"missing {f}")
    rows = []
    for ln, line in enumerate(f.read_text().splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != len(NDREC_FIELDS):
            raise DatasetError(
                f"{f}:{ln}: expected {len(NDREC_FIELDS)} fields, "
                f"got {len(parts)}"
            )
        rows.append({
            "point_id": parts[0],
            "class_id": parts[1],
            "y": float(parts[2]),
            "z": float(parts[3]),
            "theta": float(parts[4]),
            "grip_force": float(parts[5]),
            "raw_force": float(parts[6]),
            "label": float(parts[7]),
            "clamped": parts[8] == "1",
        })
    return rows


def _load_image(root: Path, point_id: str, side: str,
                resolution: tuple[int, int]) -> np.ndarray:
    p = _image_path(root, point_id, side)
    if not p.is_file():
        raise DatasetError(f"missing image file {p}")
    with Image.open(p) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if arr.shape[:2] != tuple(resolution):
        raise DatasetError(
            f"{p}: resolution {arr.shape[:2]} does not match manifest "
            f"{tuple(resolution)}"
        )
    return (arr.astype(np.float32) / np.float32(255.0))


def load_records(path: Path | str) -> list[dict]:
    """Read the per-point metadata rows without touching the images."""
    root = Path(path)
    manifest = load_manifest(root)
    rows = _parse_ndrec(root)
    if tuple(r["point_id"] for r in rows) != manifest.points:
        raise DatasetError(f"{root}: ndrec point ids disagree with the manifest")
    return rows


def load_dataset(path: Path | str) -> tuple[list[DataPoint], DatasetManifest]:
    """Load a stored dataset; checks manifest/record agreement, image
    presence and resolution, label range, and per-point label consistency."""
    root = Path(path)
    manifest = load_manifest(root)
    rows = _parse_ndrec(root)
    if tuple(r["point_id"] for r in rows) != manifest.points:
        raise DatasetError(
            f"{root}: ndrec point ids disagree with the manifest"
        )
    points: list[DataPoint] = []
    for r in rows:
        if not (0.0 <= r["label"] <= 1.0):
            raise DatasetError(
                f"point {r['point_id']!r}: label {r['label']} outside [0, 1]"
            )
        pair = TactileImagePair(
            _load_image(root, r["point_id"], "left", manifest.resolution),
            _load_image(root, r["point_id"], "right", manifest.resolution),
        )
        point = DataPoint(
            point_id=r["point_id"],
            images=pair,
            label=r["label"],
            raw_force=r["raw_force"],
            config=GripConfiguration(r["class_id"], r["y"], r["z"],
                                     r["theta"], r["grip_force"]),
            clamped=r["clamped"],
        )
        problems = validate_datapoint(point, manifest.labeling)
        if problems:
            raise DatasetError(
                f"point {r['point_id']!r}: {'; '.join(problems)}"
            )
        points.append(point)
    return points, manifest


def relabel(path: Path | str, labeling: LabelingConfig) -> DatasetManifest:
    """Recompute labels from the stored raw forces under a new labeling
    config, rewriting points.ndrec and the manifest in place."""
    root = Path(path)
    manifest = load_manifest(root)
    rows = _parse_ndrec(root)
    lines = []
    for r in rows:
        label = canonical_float(normalized_force(r["raw_force"], labeling))
        clamped = not (labeling.f_min <= r["raw_force"] <= labeling.f_max)
        lines.append("\t".join((
            r["point_id"], r["class_id"], _fmt(r["y"]), _fmt(r["z"]),
            _fmt(r["theta"]), _fmt(r["grip_force"]), _fmt(r["raw_force"]),
            _fmt(label), "1" if clamped else "0",
        )))
    (root / "points.ndrec").write_text("\n".join(lines) + "\n")
    new_manifest = DatasetManifest(
        name=manifest.name,
        points=manifest.points,
        object_classes=manifest.object_classes,
        labeling=labeling,
        creation_seed=manifest.creation_seed,
        resolution=manifest.resolution,
    )
    (root / "manifest").write_text(_manifest_to_json(new_manifest))
    return new_manifest


def split_train_validation(
    points: Sequence[DataPoint], held_out_classes: Sequence[str]
) -> tuple[list[DataPoint], list[DataPoint]]:
    """Class-level split: validation gets every point of the held-out
    classes, training the remainder."""
    if not held_out_classes:
        raise ValueError("held_out_classes must be non-empty")
    held = set(held_out_classes)
    present = {p.config.object_id for p in points}
    missing = sorted(held - present)
    if missing:
        raise ValueError(f"held-out classes not in dataset: {missing}")
    d_v = [p for p in points if p.config.object_id in held]
    d_t = [p for p in points if p.config.object_id not in held]
    return d_t, d_v


def make_folds(dataset, n_folds: int = 10, seed: int = 0) -> FoldAssignment:
    """Seeded shuffle plus round-robin: deterministic balanced folds.

    `dataset` may be a DatasetManifest, a sized collection, or an integer
    point count.
    """
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if n < n_folds:
        raise ValueError(f"cannot split {n} points into {n_folds} folds")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % n_folds
    return FoldAssignment(n_folds, tuple(int(a) for a in assignment))


@dataclass(frozen=True)
class ArrayDataset:
    """Batched in-memory form: NCHW float32 images plus labels."""

    left: np.ndarray  # (n, 3, h, w) float32
    right: np.ndarray
    labels: np.ndarray  # (n,) float32
    point_ids: tuple[str, ...]
    class_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        n = len(self.labels)
        if not (len(self.left) == len(self.right) == len(self.point_ids)
                == len(self.class_ids) == n):
            raise ValueError("array dataset fields disagree on length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_points(cls, points: Sequence[DataPoint]) -> "ArrayDataset":
        if not points:
            raise ValueError("empty point list")
        left = np.stack([p.images.left.transpose(2, 0, 1) for p in points])
        right = np.stack([p.images.right.transpose(2, 0, 1) for p in points])
        labels = np.array([p.label for p in points], dtype=np.float32)
        return cls(
            left=np.ascontiguousarray(left),
            right=np.ascontiguousarray(right),
            labels=labels,
            point_ids=tuple(p.point_id for p in points),
            class_ids=tuple(p.config.object_id for p in points),
        )

    def take(self, indices: Iterable[int]) -> "ArrayDataset":
        idx = np.asarray(list(indices), dtype=np.int64)
        return ArrayDataset(
            left=self.left[idx],
            right=self.right[idx],
            labels=self.labels[idx],
            point_ids=tuple(self.point_ids[i] for i in idx),
            class_ids=tuple(self.class_ids[i] for i in idx),
        )

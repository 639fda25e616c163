"""SAM training with momentum SGD and MSE loss, single runs and K-fold
cross-validation.

Determinism contract: (seed, config, dataset) fixes parameter init, epoch
shuffles and dropout draws, so loss curves reproduce bit-exactly in serial
mode. All derived randomness comes from seed substreams: (seed, 0) init,
(seed, 1, epoch) shuffling, (seed, 2, step) dropout, (seed, 3, fold) folds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import LabelingConfig
from .datasets import ArrayDataset, FoldAssignment
from .models import Checkpoint, ModelSpec, save_checkpoint
from .nn.network import Network


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings for sharpness-aware training."""

    learning_rate: float = 0.1
    momentum: float = 0.9
    sam_radius: float = 0.05
    batch_size: int = 16
    max_epochs: int = 30
    seed: int = 0
    eval_every: int = 10  # steps between TrainRecord emissions
    # Loop plumbing beyond the optimizer itself:
    patience: int = 10  # evaluations without val improvement before stopping
    target_train_loss: float | None = None  # stop once train MSE falls below
    max_steps: int | None = None  # hard step cap, None = epochs decide
    eval_subset_cap: int = 512  # points used for the train-loss record

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.sam_radius < 0:
            raise ValueError("sam_radius must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class TrainRecord:
    step: int
    train_loss: float
    val_loss: float
    wall_time: float  # seconds since training start

    def __post_init__(self) -> None:
        for field_name in ("train_loss", "val_loss"):
            v = getattr(self, field_name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{field_name} must be finite and >= 0, got {v}")


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite; partial records are attached."""

    def __init__(self, message: str, records: list[TrainRecord]):
        super().__init__(message)
        self.records = records


def mse_loss(predictions: Sequence[float], labels: Sequence[float]) -> float:
    """Mean squared difference between two equal-length sequences."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    l = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != l.shape or p.size == 0:
        raise ValueError(
            f"predictions and labels must have equal non-zero length, "
            f"got {p.size} and {l.size}"
        )
    return float(np.mean((p - l) ** 2))


def sam_step(
    params: np.ndarray,
    gradient_fn: Callable[[np.ndarray], np.ndarray],
    cfg: TrainConfig,
    momentum_state: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """One sharpness-aware update.

    g1 at the current point defines the ascent perturbation of norm
    `sam_radius`; the descent gradient g2 is taken at the perturbed point
    and fed to momentum SGD. Zero g1 (or zero radius) degenerates to plain
    momentum descent.
    """
    params = np.asarray(params)
    g1 = np.asarray(gradient_fn(params))
    if not np.all(np.isfinite(g1)):
        raise TrainingDivergedError(
            f"non-finite gradient ({np.sum(~np.isfinite(g1))} entries)", []
        )
    norm = float(np.linalg.norm(g1))
    if cfg.sam_radius > 0 and norm > 0:
        eps_w = (cfg.sam_radius / norm) * g1
        g2 = np.asarray(gradient_fn(params + eps_w))
        if not np.all(np.isfinite(g2)):
            raise TrainingDivergedError(
                f"non-finite perturbed gradient "
                f"({np.sum(~np.isfinite(g2))} entries)", []
            )
    else:
        g2 = g1
    if momentum_state is None:
        v = g2.copy()
    else:
        v = cfg.momentum * momentum_state + g2
    return params - cfg.learning_rate * v, v


def _eval_mse(net: Network, data: ArrayDataset, batch_size: int,
              cap: int | None = None) -> float:
    n = len(data)
    if cap is not None and n > cap:
        n = cap
    preds = np.empty(n, dtype=np.float64)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        out = net.forward(data.left[start:stop], data.right[start:stop])
        preds[start:stop] = out.ravel()
    return mse_loss(preds, data.labels[:n])


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, 2, step))
    ))


def train_single(
    model: ModelSpec,
    train_set: ArrayDataset,
    val_set: ArrayDataset | None,
    cfg: TrainConfig,
) -> tuple[Checkpoint, list[TrainRecord]]:
    """Train one model on one split; returns the best-validation-loss
    checkpoint and the record stream.

    With no (or an empty) validation set, the train set doubles as the
    monitoring set.
    """
    if len(train_set) == 0:
        raise ValueError("train set is empty")
    if val_set is None or len(val_set) == 0:
        val_set = train_set

    init_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((cfg.seed, 0))
    ))
    net = Network(model, rng=init_rng)
    w = net.get_flat_params()
    v: np.ndarray | None = None
    records: list[TrainRecord] = []
    best_loss = np.inf
    best: Checkpoint | None = None
    step = 0
    evals_since_best = 0
    t0 = time.perf_counter()
    n = len(train_set)
    stop = False

    for epoch in range(cfg.max_epochs):
        if stop:
            break
        order = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((cfg.seed, 1, epoch))
        )).permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break
            idx = order[start : start + cfg.batch_size]
            bl = train_set.left[idx]
            br = train_set.right[idx]
            by = train_set.labels[idx].reshape(-1, 1)
            b = len(idx)
            step_seed = cfg.seed
            this_step = step
            calls = {"n": 0}

            def gradient_fn(flat: np.ndarray) -> np.ndarray:
                net.set_flat_params(flat)
                rng = _step_rng(step_seed, this_step)
                pred = net.forward(
                    bl, br, training=True, rng=rng,
                    update_stats=(calls["n"] == 0),
                )
                calls["n"] += 1
                net.zero_grads()
                net.backward((2.0 / b) * (pred - by))
                return net.get_flat_grads()

            try:
                w, v = sam_step(w, gradient_fn, cfg, v)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(
                    f"step {step}: {e}", records
                ) from None
            step += 1

            if step % cfg.eval_every == 0:
                net.set_flat_params(w)
                tr = _eval_mse(net, train_set, cfg.batch_size,
                               cfg.eval_subset_cap)
                va = (tr if val_set is train_set
                      else _eval_mse(net, val_set, cfg.batch_size))
                if not (np.isfinite(tr) and np.isfinite(va)):
                    raise TrainingDivergedError(
                        f"step {step}: non-finite loss (train={tr}, val={va})",
                        records,
                    )
                records.append(TrainRecord(step, tr, va,
                                           time.perf_counter() - t0))
                if va < best_loss:
                    best_loss = va
                    best = Checkpoint.from_network(net, step)
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    stop = True
                if (cfg.target_train_loss is not None
                        and tr < cfg.target_train_loss):
                    stop = True
            if stop:
                break

    net.set_flat_params(w)
    if best is None:
        best = Checkpoint.from_network(net, step)
    return best, records


def fold_seed(seed: int, fold: int) -> int:
    """Deterministic per-fold training seed."""
    return int(np.random.SeedSequence((seed, 3, fold)).generate_state(1)[0])


def cross_validate(
    model_builder: Callable[[], ModelSpec],
    dataset: ArrayDataset,
    folds: FoldAssignment,
    cfg: TrainConfig,
    labeling: LabelingConfig,
    out_dir: Path | str | None = None,
) -> list[tuple[Checkpoint, "EvaluationReport"]]:
    """Train one model per fold (on all other folds) and evaluate it on the
    held-out fold; optionally persist per-fold checkpoints and records."""
    from .evaluation import evaluate_model

    if len(dataset) != len(folds.assignment):
        raise ValueError(
            f"fold assignment covers {len(folds.assignment)} points, "
            f"dataset has {len(dataset)}"
        )
    results = []
    for k in range(folds.n_folds):
        train_idx = folds.train_indices(k)
        val_idx = folds.fold_indices(k)
        cfg_k = replace(cfg, seed=fold_seed(cfg.seed, k))
        try:
            ckpt, records = train_single(
                model_builder(), dataset.take(train_idx),
                dataset.take(val_idx), cfg_k,
            )
        except TrainingDivergedError as e:
            raise TrainingDivergedError(f"fold {k}: {e}", e.records) from None
        report = evaluate_model(ckpt, dataset.take(val_idx), labeling)
        if out_dir is not None:
            fold_dir = Path(out_dir) / f"fold_{k}"
            fold_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt, fold_dir / "checkpoint.npz")
            write_records(fold_dir / "records.ndrec", records)
        results.append((ckpt, report))
    return results


def write_records(path: Path | str, records: Sequence[TrainRecord]) -> None:
    """Line-delimited record stream: step, train_loss, val_loss, wall_time."""
    with open(path, "w") as f:
        for r in records:
            f.write(f"{r.step}\t{r.train_loss:.9g}\t{r.val_loss:.9g}"
                    f"\t{r.wall_time:.9g}\n")


def read_records(path: Path | str) -> list[TrainRecord]:
    records = []
    with open(path) as f:
        for line in f:
            step, tr, va, wt = line.rstrip("\n").split("\t")
            records.append(TrainRecord(int(step), float(tr), float(va),
                                       float(wt)))
    return records

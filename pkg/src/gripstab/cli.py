"""Command-line frontend: simulate, label, split, train, evaluate, report.

Every command takes --config (YAML overriding built-in defaults), --seed and
--out. Run directories archive the resolved config for provenance, and
commands are deterministic given (config, seed); re-runs reproduce metadata
byte for byte apart from wall-clock fields.

Exit status: 0 success, 1 runtime/data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from .config import ConfigError
from .datasets import (
    ArrayDataset,
    DatasetError,
    FoldAssignment,
    load_dataset,
    load_records,
    make_folds,
    relabel,
    save_dataset,
    split_train_validation,
)
from .evaluation import (
    emit_plots,
    evaluate_model,
    pooled_report,
    render_report_rows,
    report_to_dict,
)
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .pullsim import DatasetGenerationError, generate_dataset
from .training import (
    TrainingDivergedError,
    cross_validate,
    train_single,
    write_records,
)

DONE_SENTINEL = "DONE"


def _archive_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfgmod.dump_config(cfg))


def cmd_simulate(cfg: dict, seed: int | None, out: Path | None) -> int:
    """Generate the configured synthetic dataset and save it."""
    target = out if out is not None else cfgmod.dataset_dir(cfg)
    classes = cfgmod.classes_from(cfg)
    grid = cfgmod.grid_from(cfg)
    profile = cfgmod.profile_from(cfg)
    sim = cfgmod.simulator_from(cfg, seed)
    labeling = cfgmod.labeling_from(cfg)
    points = generate_dataset(classes, grid, profile, sim, labeling)
    manifest = save_dataset(points, target, labeling=labeling,
                            creation_seed=sim.rng_seed,
                            name=cfg["dataset"]["name"])
    _archive_config(cfg, target)
    print(f"dataset {manifest.name!r}: {len(manifest)} points, "
          f"{len(manifest.object_classes)} classes "
          f"{list(manifest.object_classes)}, "
          f"resolution {manifest.resolution[0]}x{manifest.resolution[1]} "
          f"-> {target}")
    return 0


def cmd_label(cfg: dict, seed: int | None, out: Path | None) -> int:
    """Recompute labels of a stored dataset from its raw forces."""
    target = out if out is not None else cfgmod.dataset_dir(cfg)
    labeling = cfgmod.labeling_from(cfg)
    manifest = relabel(target, labeling)
    rows = load_records(target)
    clamped = sum(r["clamped"] for r in rows)
    print(f"relabeled {len(manifest)} points in {target} "
          f"(f_min={labeling.f_min}, f_max={labeling.f_max}, "
          f"{clamped} clamped)")
    return 0


def _train_subset_rows(rows: list[dict], held_out: list[str]) -> list[int]:
    present = {r["class_id"] for r in rows}
    missing = sorted(set(held_out) - present)
    if missing:
        raise DatasetError(f"held-out classes not in dataset: {missing}")
    return [i for i, r in enumerate(rows) if r["class_id"] not in held_out]


def cmd_split(cfg: dict, seed: int | None, out: Path | None) -> int:
    """Write split.json: class-level train/validation split plus a fold
    assignment over the training subset."""
    root = cfgmod.dataset_dir(cfg)
    rows = load_records(root)
    held_out = list(cfg["dataset"]["held_out_classes"])
    train_idx = _train_subset_rows(rows, held_out)
    val_idx = [i for i in range(len(rows)) if i not in set(train_idx)]
    n_folds = int(cfg["dataset"]["n_folds"])
    fold_seed = int(cfg["pullsim"]["seed"] if seed is None else seed)
    folds = make_folds(len(train_idx), n_folds, fold_seed)
    doc = {
        "held_out_classes": held_out,
        "train_ids": [rows[i]["point_id"] for i in train_idx],
        "validation_ids": [rows[i]["point_id"] for i in val_idx],
        "folds": {
            "n_folds": n_folds,
            "seed": fold_seed,
            "assignment": list(folds.assignment),
        },
    }
    target = (out if out is not None else root) / "split.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(f"split: {len(train_idx)} train / {len(val_idx)} validation points, "
          f"{n_folds} folds -> {target}")
    return 0


def _load_split(root: Path) -> dict | None:
    p = root / "split.json"
    if not p.is_file():
        return None
    return json.loads(p.read_text())


def _default_run_dir(cfg: dict) -> Path:
    mode = cfgmod.training_mode(cfg)
    return (cfgmod.data_root(cfg) / "runs"
            / f"{cfg['dataset']['name']}_{cfg['model']['kind']}_{mode}")


def cmd_train(cfg: dict, seed: int | None, out: Path | None,
              resume: bool = False) -> int:
    """Train per config: a single train/validation split or K-fold
    cross-validation over the training subset."""
    run_dir = out if out is not None else _default_run_dir(cfg)
    if resume and (run_dir / DONE_SENTINEL).is_file():
        print(f"run {run_dir} already finished; nothing to do")
        return 0
    root = cfgmod.dataset_dir(cfg)
    points, manifest = load_dataset(root)
    labeling = manifest.labeling
    train_cfg = cfgmod.train_config_from(cfg, seed)
    spec = cfgmod.model_spec_from(cfg, manifest.resolution)
    mode = cfgmod.training_mode(cfg)
    _archive_config(cfg, run_dir)

    split = _load_split(root)
    if split is not None:
        by_id = {p.point_id: p for p in points}
        train_points = [by_id[i] for i in split["train_ids"]]
        val_points = [by_id[i] for i in split["validation_ids"]]
    else:
        train_points, val_points = split_train_validation(
            points, cfg["dataset"]["held_out_classes"]
        )

    if mode == "single":
        train_ds = ArrayDataset.from_points(train_points)
        val_ds = (ArrayDataset.from_points(val_points) if val_points else None)
        ckpt, records = train_single(spec, train_ds, val_ds, train_cfg)
        save_checkpoint(ckpt, run_dir / "checkpoint.npz")
        write_records(run_dir / "records.ndrec", records)
        report = (evaluate_model(ckpt, val_ds, labeling)
                  if val_ds is not None else None)
    else:
        train_ds = ArrayDataset.from_points(train_points)
        if split is not None:
            folds = FoldAssignment(split["folds"]["n_folds"],
                                   tuple(split["folds"]["assignment"]))
        else:
            folds = make_folds(len(train_ds),
                               int(cfg["dataset"]["n_folds"]),
                               train_cfg.seed)
        results = cross_validate(lambda: spec, train_ds, folds, train_cfg,
                                 labeling, out_dir=run_dir)
        report = pooled_report([rep for _, rep in results], labeling)

    if report is not None:
        name = cfg["model"]["kind"]
        doc = {"model": name, **report_to_dict(report)}
        (run_dir / "report.json").write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n"
        )
        (run_dir / "report.txt").write_text(
            render_report_rows({name: doc})
        )
    (run_dir / DONE_SENTINEL).write_text("ok\n")
    n_records = (len(records) if mode == "single"
                 else sum(1 for _ in run_dir.glob("fold_*/records.ndrec")))
    print(f"trained {cfg['model']['kind']} ({mode}) -> {run_dir} "
          f"({n_records} record {'streams' if mode != 'single' else 'rows'})")
    return 0


def cmd_evaluate(cfg: dict, seed: int | None, out: Path | None,
                 checkpoint: Path | None = None,
                 data: Path | None = None) -> int:
    """Evaluate a checkpoint on a stored dataset; write report and plots."""
    ev = cfg["evaluation"]
    ck_path = checkpoint or (Path(ev["checkpoint"]) if ev["checkpoint"] else None)
    if ck_path is None:
        raise ConfigError("no checkpoint given (flag --checkpoint or "
                          "config evaluation.checkpoint)")
    data_dir = data or (Path(ev["dataset"]) if ev["dataset"]
                        else cfgmod.dataset_dir(cfg))
    out_dir = out or (Path(ev["out"]) if ev["out"] else ck_path.parent / "eval")
    ckpt = load_checkpoint(ck_path)
    points, manifest = load_dataset(data_dir)
    dataset = ArrayDataset.from_points(points)
    report = evaluate_model(ckpt, dataset, manifest.labeling)
    out_dir.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, out_dir)
    name = cfg["model"]["kind"]
    doc = {"model": name, **report_to_dict(report)}
    (out_dir / "report.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n"
    )
    table = render_report_rows({name: doc})
    (out_dir / "report.txt").write_text(table)
    emit_plots(report, report.residuals, report.predictions, report.labels,
               out_dir)
    print(table, end="")
    print(f"report + plots -> {out_dir}")
    return 0


def cmd_report(paths: list[Path], out: Path | None) -> int:
    """Merge stored report.json files into one model-by-class table."""
    rows: dict[str, dict] = {}
    for p in paths:
        f = p / "report.json" if p.is_dir() else p
        if not f.is_file():
            raise DatasetError(f"no report at {f}")
        doc = json.loads(f.read_text())
        name = doc.get("model", f.parent.name)
        key = name if name not in rows else f"{name} ({f.parent.name})"
        rows[key] = doc
    table = render_report_rows(rows)
    print(table, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table)
        print(f"table -> {out / 'report.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="YAML config overriding built-in defaults")
    common.add_argument("--seed", type=int, default=None,
                        help="override the stage seed from the config")
    common.add_argument("--out", type=Path, default=None,
                        help="output directory (default from config)")

    parser = argparse.ArgumentParser(
        prog="gripstab",
        description="Desk-scale grip-stability pipeline: synthesize pull "
                    "experiments, train force-regression networks, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="generate and save a synthetic dataset")
    sub.add_parser("label", parents=[common],
                   help="recompute labels of a stored dataset")
    sub.add_parser("split", parents=[common],
                   help="write train/validation split and fold assignment")
    p_train = sub.add_parser("train", parents=[common],
                             help="train a model (single split or CV)")
    p_train.add_argument("--resume", action="store_true",
                         help="skip if the run directory is already finished")
    p_eval = sub.add_parser("evaluate", parents=[common],
                            help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", type=Path, default=None)
    p_eval.add_argument("--data", type=Path, default=None)
    p_report = sub.add_parser("report", parents=[common],
                              help="merge stored reports into one table")
    p_report.add_argument("paths", nargs="+", type=Path,
                          help="report.json files or directories holding one")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.paths, args.out)
        cfg = cfgmod.load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.seed, args.out)
        if args.command == "label":
            return cmd_label(cfg, args.seed, args.out)
        if args.command == "split":
            return cmd_split(cfg, args.seed, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.seed, args.out, resume=args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.seed, args.out,
                                checkpoint=args.checkpoint, data=args.data)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, DatasetGenerationError, CheckpointError,
            TrainingDivergedError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

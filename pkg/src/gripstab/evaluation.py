"""Accuracy/precision metrics, force-unit conversion, residual analysis,
and report/plot emission.

Residuals are label minus prediction; accuracy is their signed mean,
precision their Bessel-corrected standard deviation, and both convert to
newtons through the labeling span f_max - f_min.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import LabelingConfig
from .datasets import ArrayDataset
from .models import Checkpoint


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return v


def _residuals(labels, predictions) -> np.ndarray:
    l = _as_vector(labels, "labels")
    p = _as_vector(predictions, "predictions")
    if l.shape != p.shape:
        raise ValueError(
            f"labels and predictions must have equal length, "
            f"got {l.size} and {p.size}"
        )
    return l - p


def accuracy_mean(labels, predictions) -> float:
    """Signed mean residual: mean of label minus prediction."""
    return float(np.mean(_residuals(labels, predictions)))


def precision_rmse(labels, predictions) -> float:
    """Bessel-corrected standard deviation of the residuals (N >= 2)."""
    r = _residuals(labels, predictions)
    if r.size < 2:
        raise ValueError(f"precision needs at least 2 residuals, got {r.size}")
    return float(np.std(r, ddof=1))


def to_force_units(
    a_mean: float, p_rmse: float, cfg: LabelingConfig
) -> tuple[float, float]:
    """Scale a dimensionless (accuracy, precision) pair to newtons by the
    labeling span f_max - f_min."""
    span = cfg.f_max - cfg.f_min
    return a_mean * span, p_rmse * span


def fit_residual_gaussian(residuals) -> tuple[float, float]:
    """Normal fit of a residual sample: (sample mean, Bessel std). N >= 2."""
    r = _as_vector(residuals, "residuals")
    if r.size < 2:
        raise ValueError(f"gaussian fit needs at least 2 residuals, got {r.size}")
    return float(np.mean(r)), float(np.std(r, ddof=1))


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class slice of an evaluation."""

    n: int
    a_mean: float
    p_rmse: float
    f_accuracy: float
    f_precision: float


@dataclass(frozen=True)
class EvaluationReport:
    """Overall and per-class accuracy/precision in both label and force
    units, plus the raw label/prediction vectors for pooling."""

    n: int
    a_mean: float
    p_rmse: float
    f_accuracy: float
    f_precision: float
    per_class: Mapping[str, ClassMetrics]
    gaussian_fit: tuple[float, float]
    force_span: float
    labels: np.ndarray = field(repr=False)
    predictions: np.ndarray = field(repr=False)
    class_ids: tuple[str, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if self.p_rmse < 0:
            raise ValueError("p_rmse must be >= 0")
        for name, dim, frc in (("accuracy", self.a_mean, self.f_accuracy),
                               ("precision", self.p_rmse, self.f_precision)):
            if abs(frc - dim * self.force_span) > 1e-9:
                raise ValueError(
                    f"f_{name} {frc} inconsistent with "
                    f"{dim} * span {self.force_span}"
                )

    @property
    def residuals(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.float64) - np.asarray(
            self.predictions, dtype=np.float64
        )


def _spread_or_zero(residuals: np.ndarray) -> float:
    """Bessel std, with the degenerate single-sample case pinned to 0."""
    return float(np.std(residuals, ddof=1)) if residuals.size >= 2 else 0.0


def build_report(
    labels, predictions, class_ids: Sequence[str], cfg: LabelingConfig
) -> EvaluationReport:
    """Assemble a report from raw label/prediction vectors."""
    l = _as_vector(labels, "labels")
    p = _as_vector(predictions, "predictions")
    if not (l.size == p.size == len(class_ids)):
        raise ValueError(
            f"length mismatch: {l.size} labels, {p.size} predictions, "
            f"{len(class_ids)} class ids"
        )
    r = l - p
    span = cfg.f_max - cfg.f_min
    a = float(np.mean(r))
    s = _spread_or_zero(r)
    per_class = {}
    for cid in sorted(set(class_ids)):
        mask = np.array([c == cid for c in class_ids])
        rc = r[mask]
        ac = float(np.mean(rc))
        sc = _spread_or_zero(rc)
        per_class[cid] = ClassMetrics(
            n=int(mask.sum()), a_mean=ac, p_rmse=sc,
            f_accuracy=ac * span, f_precision=sc * span,
        )
    return EvaluationReport(
        n=l.size, a_mean=a, p_rmse=s,
        f_accuracy=a * span, f_precision=s * span,
        per_class=per_class,
        gaussian_fit=(a, s),
        force_span=span,
        labels=l, predictions=p, class_ids=tuple(class_ids),
    )


def evaluate_model(
    checkpoint: Checkpoint,
    dataset: ArrayDataset,
    cfg: LabelingConfig,
    batch_size: int = 16,
) -> EvaluationReport:
    """Evaluation-mode forward pass over the whole dataset (dropout inert,
    batch norm on running stats), reported overall and per class."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    net = checkpoint.to_network()
    preds = np.empty(len(dataset), dtype=np.float64)
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        out = net.forward(dataset.left[start:stop], dataset.right[start:stop])
        preds[start:stop] = out.ravel()
    return build_report(dataset.labels, preds, dataset.class_ids, cfg)


def pooled_report(
    reports: Sequence[EvaluationReport], cfg: LabelingConfig
) -> EvaluationReport:
    """Pool the raw residual vectors of several reports (e.g. one per fold)
    into a single report; the pooled count is the sum of the parts."""
    if not reports:
        raise ValueError("nothing to pool")
    labels = np.concatenate([r.labels for r in reports])
    preds = np.concatenate([r.predictions for r in reports])
    cids = tuple(c for r in reports for c in r.class_ids)
    return build_report(labels, preds, cids, cfg)


def emit_plots(
    report: EvaluationReport,
    residuals,
    predictions,
    labels,
    path: Path | str,
) -> list[Path]:
    """Write the two standard figures and return their paths:
    residual histogram with the report's Gaussian overlay, and a
    label-vs-prediction scatter with the identity line."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    r = _as_vector(residuals, "residuals")
    p = _as_vector(predictions, "predictions")
    l = _as_vector(labels, "labels")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(r, bins=min(40, max(5, r.size // 5)), density=True,
            alpha=0.6, color="tab:blue", label="residuals")
    mu, sigma = report.gaussian_fit
    if sigma > 0:
        xs = np.linspace(r.min() - 3 * sigma, r.max() + 3 * sigma, 400)
        pdf = np.exp(-0.5 * ((xs - mu) / sigma) ** 2) / (
            sigma * np.sqrt(2 * np.pi)
        )
        ax.plot(xs, pdf, "k-", label=f"N({mu:.3g}, {sigma:.3g}²)")
    ax.set_xlabel("label − prediction")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    hist_path = out / "residual_hist.png"
    fig.savefig(hist_path)
    plt.close(fig)
    written.append(hist_path)

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(l, p, s=12, alpha=0.6, color="tab:orange")
    lo = min(float(l.min()), float(p.min()), 0.0)
    hi = max(float(l.max()), float(p.max()), 1.0)
    ax.plot([lo, hi], [lo, hi], "k--", linewidth=1, label="identity")
    ax.set_xlabel("label")
    ax.set_ylabel("prediction")
    ax.legend()
    fig.tight_layout()
    scatter_path = out / "scatter.png"
    fig.savefig(scatter_path)
    plt.close(fig)
    written.append(scatter_path)
    return written


def report_to_dict(report: EvaluationReport) -> dict:
    """JSON-friendly summary (metrics only, no raw vectors)."""
    return {
        "n": report.n,
        "a_mean": report.a_mean,
        "p_rmse": report.p_rmse,
        "f_accuracy": report.f_accuracy,
        "f_precision": report.f_precision,
        "gaussian_fit": list(report.gaussian_fit),
        "force_span": report.force_span,
        "per_class": {
            cid: {"n": m.n, "a_mean": m.a_mean, "p_rmse": m.p_rmse,
                  "f_accuracy": m.f_accuracy, "f_precision": m.f_precision}
            for cid, m in report.per_class.items()
        },
    }


def render_report_rows(rows: Mapping[str, Mapping]) -> str:
    """Text grid of "F_A ± F_P" in newtons from report summaries keyed by
    model name: one row per model, one column per object class plus an
    overall column."""
    if not rows:
        raise ValueError("no reports to render")
    classes = sorted({c for r in rows.values() for c in r["per_class"]})
    header = ["model"] + classes + ["overall"]
    table = [header]
    for name, rep in rows.items():
        row = [name]
        for cid in classes:
            m = rep["per_class"].get(cid)
            row.append(f"{m['f_accuracy']:+.2f} ± {m['f_precision']:.2f} N"
                       if m else "-")
        row.append(f"{rep['f_accuracy']:+.2f} ± {rep['f_precision']:.2f} N")
        table.append(row)
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_report_table(reports: Mapping[str, EvaluationReport]) -> str:
    """render_report_rows over live EvaluationReport objects."""
    return render_report_rows(
        {name: report_to_dict(r) for name, r in reports.items()}
    )

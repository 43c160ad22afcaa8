"""Pose evaluation metrics. Errors are reported in millimetres.

PCK uses a strict ``error < tau`` boundary. AUC is the mean PCK over the
thresholds ``step, 2*step, ..., tau_max``. Defaults (PCK@100 mm, AUC over
(0, 150] mm in 1 mm steps) are this package's convention; numbers are only
comparable between runs that use the same thresholds.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AlignmentDegenerateError, ConfigurationError, ShapeError, UndefinedMetricError
from .geometry import procrustes_align
from .skeleton import FOOT_JOINTS

PCK_TAU_MM = 100.0
AUC_TAU_MAX_MM = 150.0
AUC_STEP_MM = 1.0
UNCATEGORIZED = "uncategorized"


def _stack(poses):
    arr = np.asarray([getattr(p, "joints", p) for p in poses], dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def _pair(preds, gts):
    p, g = _stack(preds), _stack(gts)
    if p.size == 0 or g.size == 0:
        raise UndefinedMetricError("metric undefined for an empty set of poses")
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, g


def joint_errors_mm(preds, gts):
    """(N, J) Euclidean joint errors in mm."""
    p, g = _pair(preds, gts)
    return np.linalg.norm(p - g, axis=-1) * 1000.0


def mpjpe(preds, gts):
    return float(joint_errors_mm(preds, gts).mean())


def pa_aligned(preds, gts):
    """Procrustes-aligned predictions and a boolean array of skipped frames."""
    p, g = _pair(preds, gts)
    out = p.copy()
    skipped = np.zeros(len(p), dtype=bool)
    for i in range(len(p)):
        try:
            _, out[i] = procrustes_align(p[i], g[i])
        except AlignmentDegenerateError:
            skipped[i] = True
    return out, skipped


def pa_mpjpe(preds, gts, return_skipped=False):
    """MPJPE after per-frame similarity alignment; degenerate frames are skipped."""
    aligned, skipped = pa_aligned(preds, gts)
    g = _stack(gts)
    if skipped.all():
        raise UndefinedMetricError("every frame failed Procrustes alignment")
    if skipped.any():
        warnings.warn(f"pa_mpjpe skipped {int(skipped.sum())} degenerate frame(s)")
    value = float((np.linalg.norm(aligned[~skipped] - g[~skipped], axis=-1) * 1000.0).mean())
    return (value, int(skipped.sum())) if return_skipped else value


def pck(preds, gts, tau=PCK_TAU_MM):
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float((joint_errors_mm(preds, gts) < tau).mean() * 100.0)


def pck_curve(errors_mm, taus):
    e = np.asarray(errors_mm).ravel()
    return np.array([(e < t).mean() * 100.0 for t in taus])


def auc_thresholds(tau_max=AUC_TAU_MAX_MM, step=AUC_STEP_MM):
    if tau_max <= 0 or step <= 0:
        raise ValueError("tau_max and step must be positive")
    n = int(round(tau_max / step))
    return step * np.arange(1, n + 1)


def auc(preds, gts, tau_max=AUC_TAU_MAX_MM, step=AUC_STEP_MM):
    return float(pck_curve(joint_errors_mm(preds, gts), auc_thresholds(tau_max, step)).mean())


def mpe(pred_sequences, floor_height=0.0, foot_joint_indices=FOOT_JOINTS, up_axis=1):
    """Mean penetration of the lowest foot joint below the floor, in mm.

    Poses must be expressed in a frame where ``up_axis`` is the floor normal.
    """
    if floor_height is None:
        raise ConfigurationError("mpe needs a floor height")
    p = _stack(pred_sequences)
    if p.size == 0:
        raise UndefinedMetricError("metric undefined for an empty set of poses")
    lowest = p[:, list(foot_joint_indices), up_axis].min(axis=1)
    return float(np.maximum(0.0, floor_height - lowest).mean() * 1000.0)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

SCALARS = ("mpjpe_mm", "pa_mpjpe_mm", "pck", "auc", "mpe_mm")


@dataclass
class MetricsReport:
    mpjpe_mm: float
    pa_mpjpe_mm: float
    pck: float
    auc: float
    mpe_mm: float | None
    count: int
    per_category: dict = field(default_factory=dict)
    pa_skipped: int = 0
    pck_tau_mm: float = PCK_TAU_MM
    auc_tau_max_mm: float = AUC_TAU_MAX_MM
    auc_step_mm: float = AUC_STEP_MM
    relative: str = "device"

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        head = (
            f"# PCK@{self.pck_tau_mm:g} mm, AUC over (0, {self.auc_tau_max_mm:g}] mm step {self.auc_step_mm:g} mm; "
            f"{self.relative}-relative; thresholds are package conventions\n"
        )
        cols = ("category", "frames") + SCALARS
        rows = [("ALL", self.count) + tuple(getattr(self, k) for k in SCALARS)]
        for name in sorted(self.per_category):
            c = self.per_category[name]
            rows.append((name, c["count"]) + tuple(c.get(k) for k in SCALARS))
        fmt = lambda v: "-" if v is None else (f"{v:.2f}" if isinstance(v, float) else str(v))
        cells = [cols] + [tuple(fmt(v) for v in r) for r in rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(cols))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        return head + "\n".join(lines) + "\n"


def per_frame_metrics(preds, gts, pred_world=None, floor_height=0.0, pck_tau=PCK_TAU_MM, auc_tau_max=AUC_TAU_MAX_MM, auc_step=AUC_STEP_MM):
    """Dict of (N,) arrays of per-frame scalars; ``pa_mpjpe_mm`` is NaN for skipped frames."""
    err = joint_errors_mm(preds, gts)
    aligned, skipped = pa_aligned(preds, gts)
    pa = np.linalg.norm(aligned - _stack(gts), axis=-1).mean(axis=1) * 1000.0
    pa[skipped] = np.nan
    taus = auc_thresholds(auc_tau_max, auc_step)
    out = {
        "mpjpe_mm": err.mean(axis=1),
        "pa_mpjpe_mm": pa,
        "pck": (err < pck_tau).mean(axis=1) * 100.0,
        "auc": np.array([pck_curve(e, taus).mean() for e in err]),
    }
    if pred_world is not None:
        p = _stack(pred_world)
        lowest = p[:, list(FOOT_JOINTS), 1].min(axis=1)
        out["mpe_mm"] = np.maximum(0.0, floor_height - lowest) * 1000.0
    return out


def _summarise(values, idx):
    out = {"count": int(len(idx))}
    for k in SCALARS:
        if k not in values:
            out[k] = None
            continue
        v = np.asarray(values[k])[idx]
        v = v[np.isfinite(v)]
        out[k] = float(v.mean()) if len(v) else None
    return out


def aggregate_by_category(per_frame, labels=None, known_categories=None, relative="device", **thresholds):
    """Global and per-category means of per-frame metrics.

    The global values average all frames, i.e. categories weighted by frame
    count. Labels that are missing or outside ``known_categories`` are grouped
    under ``"uncategorized"``. Without labels only global fields are filled.
    """
    n = len(next(iter(per_frame.values())))
    if n == 0:
        raise UndefinedMetricError("no frames to aggregate")
    everything = _summarise(per_frame, np.arange(n))
    per_category = {}
    if labels is not None and len(labels):
        if len(labels) != n:
            raise ShapeError("one category label per frame is required")
        norm = [
            lab if lab and (known_categories is None or lab in known_categories) else UNCATEGORIZED for lab in labels
        ]
        for name in sorted(set(norm)):
            idx = np.array([i for i, lab in enumerate(norm) if lab == name])
            per_category[name] = _summarise(per_frame, idx)
    pa = np.asarray(per_frame["pa_mpjpe_mm"])
    return MetricsReport(
        mpjpe_mm=everything["mpjpe_mm"],
        pa_mpjpe_mm=everything["pa_mpjpe_mm"],
        pck=everything["pck"],
        auc=everything["auc"],
        mpe_mm=everything["mpe_mm"],
        count=n,
        per_category=per_category,
        pa_skipped=int((~np.isfinite(pa)).sum()),
        relative=relative,
        **thresholds,
    )

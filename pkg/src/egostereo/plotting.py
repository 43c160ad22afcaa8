"""Per-frame MPJPE curves."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigurationError  # noqa: E402


def save_series(path, series):
    """Write one ``{"label", "frame_mpjpe_mm", "sequence_ids"}`` record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(series, sort_keys=True))
    return path


def load_series(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read series {path}: {exc}") from exc
    if "frame_mpjpe_mm" not in d:
        raise ConfigurationError(f"{path} is not a per-frame series file")
    d.setdefault("label", Path(path).stem)
    return d


def plot_curves(series, out_path, title=None):
    """Line plot of per-frame MPJPE, one line per series.

    ``series`` holds dicts or paths to series files. The PNG carries no
    timestamp metadata so identical inputs give identical bytes.
    """
    items = [load_series(s) if isinstance(s, (str, Path)) else s for s in series]
    if not items or any(len(s["frame_mpjpe_mm"]) == 0 for s in items):
        raise ConfigurationError("plot_curves needs at least one non-empty series")
    fig, ax = plt.subplots(figsize=(8, 3.5), dpi=100)
    for s in items:
        ax.plot(range(len(s["frame_mpjpe_mm"])), s["frame_mpjpe_mm"], label=s["label"], linewidth=1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel("MPJPE (mm)")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="png", metadata={"Software": None})
    plt.close(fig)
    return out_path

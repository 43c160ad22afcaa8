"""Training loops, evaluation with the start-of-sequence padding protocol.

Both stages use Adam with a learning rate held constant for the first half
of the schedule and decayed linearly to zero over the second half. The 2D
module is frozen while the 3D module trains, so its heatmaps and features
are computed once per frame and reused by every window.

Runs are deterministic for a given seed: the data order comes from a numpy
generator seeded with ``seed``, weights are initialised under
``torch.manual_seed(seed)`` and torch runs in deterministic mode. Logs carry
no wall-clock fields so repeated runs produce identical files.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import VIEWS, gt_heatmaps_for_frames, sample_windows, window_indices
from .errors import ConfigurationError, DivergenceError
from .heatmap2d import HeatmapNet, heatmap_loss, heatmaps_argmax, images_to_tensor
from .metrics import aggregate_by_category, per_frame_metrics
from .pose3d import ModelConfig, Pose3DModel, pose_loss
from .scene_depth import DiskDepthProvider
from .skeleton import FrameTag, Pose3D, to_pelvis_relative, to_world

log = logging.getLogger(__name__)

STAGE_DEFAULTS = {"2d": {"batch": 16, "lr": 1e-3}, "3d": {"batch": 32, "lr": 2e-4}}
HEATMAP_SECTION = "heatmap2d"
POSE_SECTION = "pose3d"
EMBEDDED_2D_PREFIX = "heatmap2d."


@dataclass
class TrainConfig:
    stage: str
    seed: int
    epochs: int = 10
    batch: int | None = None
    lr: float | None = None
    T: int = 5
    skip: int = 3
    lambda_pose: float = 0.1
    lambda_cos: float = 0.01
    C: int = 512
    decoder_layers: int = 6
    heads: int = 8
    use_depth: bool = True
    use_padding_mask: bool = True
    # Optional cap on optimizer steps; the schedule is then laid out over
    # max_steps instead of epochs * steps_per_epoch.
    max_steps: int | None = None
    heatmap_sigma: float = 1.5
    log_every: int = 50

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ConfigurationError(f"stage must be one of {sorted(STAGE_DEFAULTS)}, got {self.stage!r}")
        if self.seed is None:
            raise ConfigurationError("a seed is required")
        defaults = STAGE_DEFAULTS[self.stage]
        if self.batch is None:
            self.batch = defaults["batch"]
        if self.lr is None:
            self.lr = defaults["lr"]
        positive = {k: getattr(self, k) for k in ("epochs", "batch", "lr", "T", "skip", "C", "decoder_layers", "heads", "heatmap_sigma", "log_every")}
        if self.max_steps is not None:
            positive["max_steps"] = self.max_steps
        bad = [k for k, v in positive.items() if not v > 0]
        if bad or self.lambda_pose < 0 or self.lambda_cos < 0:
            raise ConfigurationError(f"non-positive configuration values: {bad or ['lambda']}")
        if self.C % 16:
            raise ConfigurationError("C must be divisible by 16")

    @property
    def schedule_breakpoint(self):
        return self.epochs / 2

    def model_config(self):
        return ModelConfig(
            C=self.C,
            T=self.T,
            decoder_layers=self.decoder_layers,
            heads=self.heads,
            lambda_pose=self.lambda_pose,
            lambda_cos=self.lambda_cos,
            use_depth=self.use_depth,
            use_padding_mask=self.use_padding_mask,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path, **overrides):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)


def lr_at(epoch, base_lr, epochs):
    """Constant for ``epoch < epochs/2``, then linear decay reaching 0 at ``epochs``."""
    half = epochs / 2
    if epoch < half:
        return base_lr
    return base_lr * max(0.0, 1.0 - (epoch - half) / half)


def set_determinism(seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list
    steps: int
    log_path: Path | None = None


class _StepLog:
    def __init__(self, path):
        self.path = None if path is None else Path(path)
        self.fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(self.path, "w")

    def write(self, **record):
        if self.fh is not None:
            self.fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        if self.fh is not None:
            self.fh.close()


def _schedule(num_samples, config):
    steps_per_epoch = math.ceil(num_samples / config.batch)
    total = config.max_steps or config.epochs * steps_per_epoch
    return steps_per_epoch, total


def _batches(num_samples, batch, total_steps, rng):
    """Yield index arrays; every pass over the data is a fresh permutation."""
    order = np.zeros(0, dtype=np.int64)
    for _ in range(total_steps):
        if len(order) < batch:
            order = np.concatenate([order, rng.permutation(num_samples)])
        idx, order = order[:batch], order[batch:]
        yield idx


def _optimise(model, config, num_samples, loss_fn, log_path, tag):
    """Shared Adam loop; ``loss_fn(idx)`` returns the scalar loss of one batch."""
    steps_per_epoch, total = _schedule(num_samples, config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(config.seed)
    steplog = _StepLog(log_path)
    losses = []
    last_finite = None
    try:
        for step, idx in enumerate(_batches(num_samples, config.batch, total, rng)):
            epoch = step * config.epochs / total
            lr = lr_at(epoch, config.lr, config.epochs)
            for g in opt.param_groups:
                g["lr"] = lr
            loss = loss_fn(idx)
            value = float(loss.detach())
            steplog.write(step=step, epoch=round(epoch, 6), lr=lr, loss=value)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"{tag} loss became {value} at step {step}; last finite step: {last_finite}", last_finite
                )
            last_finite = step
            losses.append(value)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if step % config.log_every == 0 or step == total - 1:
                log.info("%s step %d/%d lr %.3g loss %.6f", tag, step, total, lr, value)
    finally:
        steplog.close()
    return losses, total


# ---------------------------------------------------------------------------
# 2D stage
# ---------------------------------------------------------------------------

def _all_frames(index):
    return [f for seq in index.sequences for f in seq.frames]


def train_2d(config, index, out_path, log_path=None):
    """Fit the heatmap estimator on every stereo pair of ``index``."""
    if config.stage != "2d":
        raise ConfigurationError("train_2d needs a stage '2d' configuration")
    frames = _all_frames(index)
    if not frames:
        raise ConfigurationError("dataset has no frames")
    set_determinism(config.seed)
    model = HeatmapNet(config.C)
    images = np.stack([f.load_images() for f in frames])  # (N, 2, H, W, 3) uint8
    targets = torch.from_numpy(gt_heatmaps_for_frames(frames, config.heatmap_sigma))

    def loss_fn(idx):
        x = images_to_tensor(images[idx].reshape((-1,) + images.shape[2:]))
        pred, _ = model(x)
        return heatmap_loss(pred, targets[idx].flatten(0, 1))

    model.train()
    losses, steps = _optimise(model, config, len(frames), loss_fn, log_path, "2d")
    meta = {"C": config.C, "num_joints": 15, "seed": config.seed, "steps": steps, "train_config": config.to_dict()}
    path = save_checkpoint(out_path, HEATMAP_SECTION, model.state_dict(), meta)
    return TrainResult(Path(path), losses, steps, log_path and Path(log_path))


def load_heatmap_model(path):
    """A frozen :class:`HeatmapNet` from a 2D checkpoint or a 3D one embedding it."""
    header, state = load_checkpoint(path)
    if header["section"] == HEATMAP_SECTION:
        C = header["meta"]["C"]
    elif header["section"] == POSE_SECTION:
        C = header["meta"]["heatmap2d"]["C"]
        state = {k[len(EMBEDDED_2D_PREFIX):]: v for k, v in state.items() if k.startswith(EMBEDDED_2D_PREFIX)}
    else:
        raise ConfigurationError(f"{path} holds no 2D module")
    model = HeatmapNet(C)
    model.load_state_dict(state)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


# ---------------------------------------------------------------------------
# Per-frame tables for the frozen 2D module
# ---------------------------------------------------------------------------

@dataclass
class FrameTables:
    """Per-frame inputs of the 3D module, indexed by global frame number."""

    heatmaps: np.ndarray  # (N, 2, 15, 64, 64) float32
    features: np.ndarray  # (N, 2, C, 8, 8) float32
    depth: np.ndarray  # (N, 2, 2, 64, 64) float32
    available: np.ndarray  # (N, 2) bool
    gt_device: np.ndarray  # (N, J, 3) float64
    offsets: list = field(default_factory=list)  # first global index of every sequence

    def window_batch(self, rows, dtype=torch.float32):
        """(B, T) global indices -> model inputs."""
        as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
        feats = self.features[rows]
        return (
            as_t(self.heatmaps[rows]),
            as_t(feats[:, :, 0]),
            as_t(feats[:, :, 1]),
            as_t(self.depth[rows]),
            torch.from_numpy(self.available[rows]),
        )


@torch.no_grad()
def compute_frame_tables(index, heatmap_model, depth_provider=None, batch=8):
    depth_provider = depth_provider or DiskDepthProvider()
    frames = _all_frames(index)
    heatmap_model.eval()
    hms, feats = [], []
    for start in range(0, len(frames), batch):
        chunk = frames[start : start + batch]
        imgs = np.stack([f.load_images() for f in chunk])
        h, ft = heatmap_model(images_to_tensor(imgs.reshape((-1,) + imgs.shape[2:])))
        hms.append(h.view(len(chunk), 2, *h.shape[1:]).numpy())
        feats.append(ft.view(len(chunk), 2, *ft.shape[1:]).numpy())
    depth = np.empty((len(frames), 2, 2, 64, 64), dtype=np.float32)
    avail = np.zeros((len(frames), 2), dtype=bool)
    for i, f in enumerate(frames):
        for v, view in enumerate(VIEWS):
            obs = depth_provider(f, view)
            depth[i, v] = obs.normalized()
            avail[i, v] = obs.available
    offsets = list(np.cumsum([0] + [len(s) for s in index.sequences])[:-1])
    return FrameTables(
        np.concatenate(hms),
        np.concatenate(feats),
        depth,
        avail,
        np.stack([f.gt_pose_device.joints for f in frames]),
        [int(o) for o in offsets],
    )


def window_rows(index, T, skip):
    """(num_frames, T) global frame indices of every padded window."""
    rows = []
    offset = 0
    for seq in index.sequences:
        rows.append(window_indices(len(seq), T, skip) + offset)
        offset += len(seq)
    return np.concatenate(rows)


# ---------------------------------------------------------------------------
# 3D stage
# ---------------------------------------------------------------------------

def train_3d(config, index, checkpoint_2d, out_path, log_path=None, depth_provider=None, tables=None):
    """Fit the 3D module with the 2D module frozen.

    ``tables`` may be passed to reuse precomputed 2D outputs across runs.
    """
    if config.stage != "3d":
        raise ConfigurationError("train_3d needs a stage '3d' configuration")
    header_2d, state_2d = load_checkpoint(checkpoint_2d, expect_section=HEATMAP_SECTION)
    if header_2d["meta"]["C"] != config.C:
        raise ConfigurationError(f"2D checkpoint has C={header_2d['meta']['C']}, config has C={config.C}")
    heatmap_model = load_heatmap_model(checkpoint_2d)
    if tables is None:
        tables = compute_frame_tables(index, heatmap_model, depth_provider)
    rows = window_rows(index, config.T, config.skip)
    if not len(rows):
        raise ConfigurationError("dataset has no frames")
    set_determinism(config.seed)
    model = Pose3DModel(config.model_config())
    gt = torch.from_numpy(tables.gt_device).float()

    def loss_fn(idx):
        r = rows[idx]
        pred = model(*tables.window_batch(r))
        return pose_loss(pred, gt[r], lambda_pose=config.lambda_pose, lambda_cos=config.lambda_cos)

    model.train()
    losses, steps = _optimise(model, config, len(rows), loss_fn, log_path, "3d")
    state = dict(model.state_dict())
    state.update({EMBEDDED_2D_PREFIX + k: v for k, v in state_2d.items()})
    meta = {
        "model": config.model_config().to_dict(),
        "heatmap2d": header_2d["meta"],
        "seed": config.seed,
        "steps": steps,
        "skip": config.skip,
        "train_config": config.to_dict(),
    }
    path = save_checkpoint(out_path, POSE_SECTION, state, meta)
    return TrainResult(Path(path), losses, steps, log_path and Path(log_path))


def load_pose_model(path):
    """``(pose_model, heatmap_model, header)`` from a 3D checkpoint."""
    header, state = load_checkpoint(path, expect_section=POSE_SECTION)
    model = Pose3DModel(ModelConfig.from_dict(header["meta"]["model"]))
    model.load_state_dict({k: v for k, v in state.items() if not k.startswith(EMBEDDED_2D_PREFIX)})
    model.eval()
    return model, load_heatmap_model(path), header


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    report: object
    predictions: np.ndarray  # (N, J, 3) device-relative, one per original frame
    frame_mpjpe_mm: np.ndarray
    sequence_ids: list
    windows: list

    def series(self, label):
        return {"label": label, "frame_mpjpe_mm": [float(x) for x in self.frame_mpjpe_mm], "sequence_ids": self.sequence_ids}


@torch.no_grad()
def predict_frames(index, pose_model, tables, skip, batch=16):
    """One device-relative prediction per frame via padded windows.

    Returns ``(predictions, windows)`` where ``windows`` holds the global
    frame indices used for every target frame.
    """
    T = pose_model.config.T
    rows = []
    for seq, offset in zip(index.sequences, tables.offsets):
        rows.extend(s.indices + offset for s in sample_windows(seq, T, skip))
    rows = np.asarray(rows).reshape(-1, T)
    pose_model.eval()
    out = []
    for start in range(0, len(rows), batch):
        pred = pose_model(*tables.window_batch(rows[start : start + batch]))
        out.append(pred[:, -1].double().numpy())
    preds = np.concatenate(out) if out else np.zeros((0, pose_model.config.J, 3))
    return preds, rows


def evaluate(index, checkpoint, T=None, skip=None, relative="device", depth_provider=None, tables=None, known_categories=None):
    """Predict every frame and score it. ``T`` must match the checkpoint when given."""
    if relative not in ("device", "pelvis"):
        raise ConfigurationError(f"relative must be 'device' or 'pelvis', got {relative!r}")
    pose_model, heatmap_model, header = load_pose_model(checkpoint)
    if T is not None and T != pose_model.config.T:
        raise ConfigurationError(f"evaluation T={T} differs from checkpoint T={pose_model.config.T}")
    skip = skip or header["meta"].get("skip", 3)
    if tables is None:
        tables = compute_frame_tables(index, heatmap_model, depth_provider)
    preds, rows = predict_frames(index, pose_model, tables, skip)
    gts = tables.gt_device
    frames = _all_frames(index)
    if len(preds) != len(frames):
        raise ConfigurationError("prediction count differs from frame count")
    pred_world = np.stack(
        [to_world(Pose3D(p, FrameTag.DEVICE), f.device_frame).joints for p, f in zip(preds, frames)]
    )
    p_eval, g_eval = preds, gts
    if relative == "pelvis":
        p_eval = np.stack([to_pelvis_relative(Pose3D(p, FrameTag.DEVICE)).joints for p in preds])
        g_eval = np.stack([to_pelvis_relative(Pose3D(g, FrameTag.DEVICE)).joints for g in gts])
    floor = 0.0 if index.room is not None else None
    per_frame = per_frame_metrics(p_eval, g_eval, pred_world if floor is not None else None, floor or 0.0)
    labels = [seq.category for seq in index.sequences for _ in seq.frames]
    if not any(labels):
        labels = None
    report = aggregate_by_category(per_frame, labels, known_categories, relative=relative)
    seq_ids = [seq.id for seq in index.sequences for _ in seq.frames]
    return EvalResult(report, preds, per_frame["mpjpe_mm"], seq_ids, rows)


def gt_report(index, relative="device"):
    """Report for ground truth scored against itself (sanity baseline)."""
    gts = np.stack([f.gt_pose_device.joints for f in _all_frames(index)])
    if relative == "pelvis":
        gts = np.stack([to_pelvis_relative(Pose3D(g, FrameTag.DEVICE)).joints for g in gts])
    return aggregate_by_category(per_frame_metrics(gts, gts), relative=relative)


def with_overrides(config, **kw):
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


@torch.no_grad()
def heatmap_accuracy(index, heatmap_model, tolerance_px=2.0, batch=8):
    """Fraction of visible joints whose heatmap argmax lies within ``tolerance_px``
    of the ground truth on the 64x64 grid, plus the per-joint distances."""
    frames = _all_frames(index)
    heatmap_model.eval()
    dists = []
    for start in range(0, len(frames), batch):
        chunk = frames[start : start + batch]
        imgs = np.stack([f.load_images() for f in chunk])
        h, _ = heatmap_model(images_to_tensor(imgs.reshape((-1,) + imgs.shape[2:])))
        peaks, _ = heatmaps_argmax(h.numpy())
        gt = np.concatenate([f.gt_joints2d for f in chunk]) * (h.shape[-1] / 256.0)
        d = np.linalg.norm(peaks - gt, axis=-1)
        dists.append(d[np.isfinite(gt).all(axis=-1)])
    dists = np.concatenate(dists)
    return float((dists <= tolerance_px).mean()), dists

"""Stereo 2D joint-heatmap estimator.

A strided convolutional encoder (five stride-2 stages, 1/32 resolution at the
deepest stage) is shared by both views; a skip-connected decoder upsamples to
quarter resolution with one channel per heatmap joint. Tensors are NCHW.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError

NUM_JOINTS_2D = 15
INPUT_RES = 256


def conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class HeatmapNet(nn.Module):
    """Outputs ``(heatmaps (B,15,H/4,W/4), features (B,C,H/32,W/32))``."""

    def __init__(self, C=512, num_joints=NUM_JOINTS_2D):
        super().__init__()
        if C % 8:
            raise ValueError("C must be divisible by 8")
        self.C = C
        ch = [C // 8, C // 8, C // 4, C // 2, C]
        self.ch = ch
        self.stem = conv3x3(3, ch[0], 2)
        self.stages = nn.ModuleList(
            [nn.Sequential(conv3x3(ch[i - 1], ch[i], 2), nn.ReLU(inplace=True), conv3x3(ch[i], ch[i]), nn.ReLU(inplace=True)) for i in range(1, 5)]
        )
        self.up4 = conv3x3(ch[4] + ch[3], ch[3])
        self.up3 = conv3x3(ch[3] + ch[2], ch[2])
        self.up2 = conv3x3(ch[2] + ch[1], ch[1])
        self.refine = conv3x3(ch[1], ch[1])
        self.head = nn.Conv2d(ch[1], num_joints, 1)

    def forward(self, x):
        if x.shape[-1] % 32 or x.shape[-2] % 32 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) with H, W divisible by 32, got {tuple(x.shape)}")
        skips = []
        h = F.relu(self.stem(x))
        for stage in self.stages:
            h = stage(h)
            skips.append(h)
        e2, e3, e4, e5 = skips
        d = F.relu(self.up4(torch.cat([F.interpolate(e5, scale_factor=2.0, mode="nearest"), e4], 1)))
        d = F.relu(self.up3(torch.cat([F.interpolate(d, scale_factor=2.0, mode="nearest"), e3], 1)))
        d = F.relu(self.up2(torch.cat([F.interpolate(d, scale_factor=2.0, mode="nearest"), e2], 1)))
        d = F.relu(self.refine(d))
        return self.head(d), e5


def images_to_tensor(images, dtype=torch.float32):
    """uint8 or [0,1] float images (..., H, W, 3) -> (N, 3, H, W) tensor."""
    arr = np.asarray(images)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    t = torch.as_tensor(arr, dtype=dtype)
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


@torch.no_grad()
def estimate_heatmaps(left, right, model):
    """Run the shared-weight estimator on a stereo pair.

    ``left``/``right`` are RGB images ``(H, W, 3)`` (or batches) in [0, 1] or
    uint8. Returns numpy ``(H_L, H_R, F_L, F_R)`` with channel-first layout.
    """
    lt, rt = images_to_tensor(left), images_to_tensor(right)
    if lt.shape != rt.shape or lt.shape[-2:] != (INPUT_RES, INPUT_RES):
        raise ShapeError(f"expected two {INPUT_RES}x{INPUT_RES} views, got {tuple(lt.shape)} and {tuple(rt.shape)}")
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    hm, feat = model(torch.cat([lt, rt]).to(dtype))
    model.train(was_training)
    n = lt.shape[0]
    out = [hm[:n], hm[n:], feat[:n], feat[n:]]
    single = np.asarray(left).ndim == 3
    return tuple((o[0] if single else o).numpy() for o in out)


def heatmap_loss(pred, gt):
    """Mean squared error over views, channels and pixels.

    Accepts tensors or ``(left, right)`` pairs of tensors.
    """
    if isinstance(pred, (tuple, list)):
        pred = torch.stack(list(pred))
    if isinstance(gt, (tuple, list)):
        gt = torch.stack(list(gt))
    if pred.shape != gt.shape:
        raise ShapeError(f"heatmap shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return ((pred - gt) ** 2).mean()


def heatmap_argmax(h):
    """Row-major-first maximum of one channel: ``((u, v), value)``, u = column."""
    h = np.asarray(h)
    flat = int(np.argmax(h))
    row, col = divmod(flat, h.shape[1])
    return (col, row), float(h[row, col])


def heatmaps_argmax(hms):
    """(..., J, h, w) -> (..., J, 2) integer (u, v) and (..., J) peak values."""
    hms = np.asarray(hms)
    h, w = hms.shape[-2:]
    flat = hms.reshape(hms.shape[:-2] + (h * w,))
    idx = flat.argmax(axis=-1)
    conf = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.stack([idx % w, idx // w], axis=-1), conf

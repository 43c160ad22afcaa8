"""Transformer 3D pose module.

Memory tokens come from depth features (8x8 per view-frame) and projected
heatmap features (16x16 per view-frame). Joint queries, one set per time step,
are shifted by a vector computed from the stereo video features, then decoded
by pre-norm layers (self-attention, masked cross-attention, MLP) and regressed
to 3D joints per query.

Depth tokens of view-frames without depth receive an additive ``-inf`` on
their attention logits, so after the softmax they carry exactly zero weight.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError
from .skeleton import CANONICAL_SKELETON, FrameTag, Pose3D, bone_vectors

DEPTH_GRID = 8
HEATMAP_GRID = 16
# stream ids for the learned stream embedding
DEPTH_LEFT, DEPTH_RIGHT, HM_LEFT, HM_RIGHT = range(4)


@dataclass
class ModelConfig:
    C: int = 512
    T: int = 5
    J: int = 16
    decoder_layers: int = 6
    heads: int = 8
    lambda_pose: float = 0.1
    lambda_cos: float = 0.01
    use_depth: bool = True
    use_padding_mask: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError("T must be >= 1")
        if self.C % 16:
            raise ConfigurationError("C must be divisible by 16")
        if self.hidden % self.heads:
            raise ConfigurationError("hidden size must be divisible by the head count")

    @property
    def hidden(self):
        return self.C // 2

    @property
    def mlp_dim(self):
        return 2 * self.C

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# Feature extractors
# ---------------------------------------------------------------------------

class DepthFeatureExtractor(nn.Module):
    """(N, 2, 64, 64) depth + region mask -> (N, C/2, 8, 8).

    Three 4x4 stride-2 convolutions reach 1/8 of the input; two 3x3 stride-1
    layers follow so the output stays at the 8x8 token grid.
    """

    def __init__(self, C):
        super().__init__()
        ch = [2, C // 16, C // 8, C // 4, C // 2, C // 2]
        layers = []
        for i in range(5):
            k, s, p = (4, 2, 1) if i < 3 else (3, 1, 1)
            layers.append(nn.Conv2d(ch[i], ch[i + 1], k, s, p))
            if i < 4:
                layers.append(nn.ReLU(inplace=True))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[-3:] != (2, 64, 64):
            raise ShapeError(f"depth input must be (N, 2, 64, 64), got {tuple(x.shape)}")
        return self.net(x)


class HeatmapFeatureExtractor(nn.Module):
    """(N, 15, 64, 64) -> G (N, C, 16, 16) and projected tokens (N, C/2, 16, 16)."""

    def __init__(self, C, num_joints=15):
        super().__init__()
        ch = [num_joints, C // 8, C // 4, C // 4, C]
        self.net = nn.Sequential(
            nn.Conv2d(ch[0], ch[1], 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch[1], ch[2], 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch[2], ch[3], 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch[3], ch[4], 3, 1, 1),
        )
        self.proj = nn.Conv2d(C, C // 2, 1)

    def forward(self, h):
        if h.shape[-2:] != (64, 64):
            raise ShapeError(f"heatmap input must be (N, 15, 64, 64), got {tuple(h.shape)}")
        g = self.net(h)
        return g, self.proj(g)


def sine_positional_embedding(h, w, dim, temperature=10000.0):
    """Fixed 2D sinusoidal embedding, (h*w, dim): first half rows, second half columns."""
    if dim % 4:
        raise ValueError("positional embedding dim must be divisible by 4")
    quarter = dim // 4
    freqs = temperature ** (-torch.arange(quarter, dtype=torch.float64) / quarter)
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64), indexing="ij")

    def enc(coord):
        a = coord.reshape(-1, 1) * freqs[None]
        return torch.cat([a.sin(), a.cos()], dim=1)

    return torch.cat([enc(ys), enc(xs)], dim=1).float()


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

def explicit_attention(q, k, v, additive_mask=None):
    """softmax(q k^T / sqrt(d) + mask) v, spelled out; reference for the fused kernel."""
    logits = (q * (1.0 / math.sqrt(q.shape[-1]))) @ k.transpose(-1, -2)
    if additive_mask is not None:
        logits = logits + additive_mask
    return logits.softmax(dim=-1) @ v


class Attention(nn.Module):
    """Multi-head attention with an additive per-key logit mask.

    ``fused`` selects torch's ``scaled_dot_product_attention``; both paths add
    the mask to the logits before the softmax.
    """

    fused = True

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x, mem, additive_mask=None):
        b, nq, d = x.shape
        nk = mem.shape[1]
        h = self.heads
        q = self.q(x).view(b, nq, h, d // h).transpose(1, 2)
        k = self.k(mem).view(b, nk, h, d // h).transpose(1, 2)
        v = self.v(mem).view(b, nk, h, d // h).transpose(1, 2)
        mask = None if additive_mask is None else additive_mask[:, None, None, :].to(q.dtype)
        if self.fused:
            out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        else:
            out = explicit_attention(q, k, v, mask)
        return self.o(out.transpose(1, 2).reshape(b, nq, d))


class DecoderLayer(nn.Module):
    def __init__(self, dim, heads, mlp_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.ReLU(inplace=True), nn.Linear(mlp_dim, dim))

    def forward(self, x, memory, additive_mask):
        y = self.norm1(x)
        x = x + self.self_attn(y, y)
        x = x + self.cross_attn(self.norm2(x), memory, additive_mask)
        return x + self.mlp(self.norm3(x))


@dataclass
class MemoryTokens:
    tokens: torch.Tensor  # (B, N, D)
    additive_mask: torch.Tensor  # (B, N), 0 or -inf
    is_depth: torch.Tensor  # (N,) bool

    @property
    def num_tokens(self):
        return self.tokens.shape[1]


class Pose3DModel(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        C, D, T = cfg.C, cfg.hidden, cfg.T
        self.depth_extractor = DepthFeatureExtractor(C)
        self.heatmap_extractor = HeatmapFeatureExtractor(C)
        self.fuse_conv = nn.Conv2d(2 * C, D, 1)
        self.query_fc = nn.Linear(T * D, D)
        self.queries = nn.Parameter(torch.randn(T, cfg.J, D))
        self.frame_embed = nn.Parameter(torch.randn(T, D) * 0.02)
        self.stream_embed = nn.Parameter(torch.randn(4, D) * 0.02)
        self.register_buffer("pos_depth", sine_positional_embedding(DEPTH_GRID, DEPTH_GRID, D), persistent=False)
        self.register_buffer("pos_heatmap", sine_positional_embedding(HEATMAP_GRID, HEATMAP_GRID, D), persistent=False)
        self.layers = nn.ModuleList([DecoderLayer(D, cfg.heads, cfg.mlp_dim) for _ in range(cfg.decoder_layers)])
        self.norm = nn.LayerNorm(D)
        self.head = nn.Sequential(
            nn.Linear(D, C // 4), nn.ReLU(inplace=True), nn.Linear(C // 4, C // 8), nn.ReLU(inplace=True), nn.Linear(C // 8, 3)
        )

    # -- stereo video features -> query shift ------------------------------

    def fuse_stereo_features(self, feat_left, feat_right):
        """(B, T, C, 8, 8) per view -> F_Stereo (B, T*C/2): per-frame 1x1 conv, pool, concat."""
        b, t = feat_left.shape[:2]
        if t != self.config.T or feat_right.shape[:2] != (b, t):
            raise ShapeError(f"expected {self.config.T} frames per view, got {tuple(feat_left.shape[:2])}")
        x = torch.cat([feat_left, feat_right], dim=2).flatten(0, 1)
        pooled = F.adaptive_avg_pool2d(self.fuse_conv(x), 1).flatten(1)
        return pooled.view(b, t * self.config.hidden)

    def augment_queries(self, f_stereo):
        """q_Aug^t = fc(F_Stereo) + q^t, the same shift for every joint and step."""
        shift = self.query_fc(f_stereo)
        return self.queries[None] + shift[:, None, None, :]

    # -- memory --------------------------------------------------------------

    def build_memory(self, heatmaps, depth, available):
        """Assemble decoder memory.

        heatmaps (B, T, 2, 15, 64, 64); depth (B, T, 2, 2, 64, 64);
        available (B, T, 2) bool. Token order per frame and view: 64 depth
        tokens then 256 heatmap tokens.
        """
        cfg = self.config
        b, t = heatmaps.shape[:2]
        d = cfg.hidden
        _, hm_tok = self.heatmap_extractor(heatmaps.flatten(0, 2))
        hm_tok = hm_tok.flatten(2).transpose(1, 2).reshape(b, t, 2, HEATMAP_GRID**2, d)
        frame = self.frame_embed[:t].view(1, t, 1, 1, d)
        hm_stream = self.stream_embed[[HM_LEFT, HM_RIGHT]].view(1, 1, 2, 1, d)
        hm_tok = hm_tok + self.pos_heatmap.view(1, 1, 1, -1, d) + frame + hm_stream
        if not cfg.use_depth:
            tokens = hm_tok.reshape(b, -1, d)
            mask = tokens.new_zeros(b, tokens.shape[1])
            is_depth = torch.zeros(tokens.shape[1], dtype=torch.bool)
            return MemoryTokens(tokens, mask, is_depth)
        u = self.depth_extractor(depth.flatten(0, 2))
        d_tok = u.flatten(2).transpose(1, 2).reshape(b, t, 2, DEPTH_GRID**2, d)
        d_stream = self.stream_embed[[DEPTH_LEFT, DEPTH_RIGHT]].view(1, 1, 2, 1, d)
        d_tok = d_tok + self.pos_depth.view(1, 1, 1, -1, d) + frame + d_stream
        tokens = torch.cat([d_tok, hm_tok], dim=3).reshape(b, -1, d)
        nd, nh = DEPTH_GRID**2, HEATMAP_GRID**2
        mask = tokens.new_zeros(b, t, 2, nd + nh)
        if cfg.use_padding_mask:
            missing = ~available.bool()
            mask[..., :nd] = torch.where(missing[..., None], float("-inf"), 0.0).to(mask.dtype)
        is_depth = torch.zeros(t, 2, nd + nh, dtype=torch.bool)
        is_depth[..., :nd] = True
        return MemoryTokens(tokens, mask.reshape(b, -1), is_depth.reshape(-1))

    # -- decoding ------------------------------------------------------------

    def decode(self, q_aug, memory):
        """(B, T, J, D) queries -> (B, T, J, 3) poses."""
        b, t, j, d = q_aug.shape
        if memory.additive_mask.shape != memory.tokens.shape[:2]:
            raise ShapeError("additive mask does not match the memory token count")
        x = q_aug.reshape(b, t * j, d)
        for layer in self.layers:
            x = layer(x, memory.tokens, memory.additive_mask)
        return self.head(self.norm(x)).view(b, t, j, 3)

    def forward(self, heatmaps, features_left, features_right, depth, available):
        q = self.augment_queries(self.fuse_stereo_features(features_left, features_right))
        return self.decode(q, self.build_memory(heatmaps, depth, available))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def mpjpe_term(pred, gt):
    """Mean Euclidean joint error over every leading axis and joints."""
    return torch.linalg.vector_norm(pred - gt, dim=-1).mean()


def bone_cosine_term(pred, gt, skel=CANONICAL_SKELETON):
    """Negative cosine similarity of bones, summed over bones, averaged over the batch.

    Bones of zero length contribute 0.
    """
    bp = bone_vectors(pred, skel)
    bg = bone_vectors(gt, skel)
    denom = torch.linalg.vector_norm(bp, dim=-1) * torch.linalg.vector_norm(bg, dim=-1)
    ok = denom > 0
    cos = torch.where(ok, (bp * bg).sum(-1) / torch.where(ok, denom, torch.ones_like(denom)), torch.zeros_like(denom))
    batch = int(np.prod(cos.shape[:-1])) if cos.ndim > 1 else 1
    return -cos.sum() / batch


def single_pose_loss(pred, gt, skel=CANONICAL_SKELETON, lambda_pose=0.1, lambda_cos=0.01):
    """L_pose for (N, J, 3) batches."""
    return lambda_pose * (mpjpe_term(pred, gt) + lambda_cos * bone_cosine_term(pred, gt, skel))


def pose_loss(pred, gt, skel=CANONICAL_SKELETON, lambda_pose=0.1, lambda_cos=0.01):
    """L_3D over (N, T, J, 3) sequences: final-step loss plus the mean past-step loss.

    The past-step average is 0 when T == 1.
    """
    pred = torch.as_tensor(pred)
    gt = torch.as_tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    if pred.ndim == 3:
        pred, gt = pred[None], gt[None]
    t = pred.shape[1]
    loss = single_pose_loss(pred[:, -1], gt[:, -1], skel, lambda_pose, lambda_cos)
    if t > 1:
        past = sum(single_pose_loss(pred[:, i], gt[:, i], skel, lambda_pose, lambda_cos) for i in range(t - 1))
        loss = loss + past / (t - 1)
    return loss


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class PoseSequencePrediction:
    poses: list

    @property
    def final(self):
        return self.poses[-1]


def sample_to_tensors(sample, heatmap_model, dtype=torch.float32):
    """Run the 2D module and depth provider over one window.

    Returns batch-of-one tensors ``(heatmaps, feat_l, feat_r, depth, available)``.
    """
    from .heatmap2d import estimate_heatmaps

    imgs = sample.images
    hl, hr, fl, fr = estimate_heatmaps(imgs[:, 0], imgs[:, 1], heatmap_model)
    obs = sample.depth_observations
    depth = np.stack([[o.normalized() for o in pair] for pair in obs])
    avail = np.array([[o.available for o in pair] for pair in obs])
    hm = np.stack([hl, hr], axis=1)
    as_t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)[None]
    return as_t(hm), as_t(fl), as_t(fr), as_t(depth), torch.as_tensor(avail)[None]


@torch.no_grad()
def forward(sample, heatmap_model, pose_model, depth_provider=None):
    """Full inference for one window; returns the device-relative final pose."""
    if depth_provider is not None:
        sample.depth_provider = depth_provider
    if sample.T != pose_model.config.T:
        raise ConfigurationError(f"sample has T={sample.T}, model expects T={pose_model.config.T}")
    pose_model.eval()
    dtype = next(pose_model.parameters()).dtype
    poses = pose_model(*sample_to_tensors(sample, heatmap_model, dtype))[0].double().numpy()
    return PoseSequencePrediction([Pose3D(p, FrameTag.DEVICE) for p in poses]).final

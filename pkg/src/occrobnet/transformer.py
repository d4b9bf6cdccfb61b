"""Keypoint-token encoder/decoder with sigmoid-gated softmax attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .layers import MLP, LayerNorm, Linear, Module
from .synthdata import N_HANDS, N_JOINTS
from .tensor import Parameter, Tensor

TOKEN_DIM = 256
OBJECT_CLASS = N_HANDS * N_JOINTS          # 42
BACKGROUND_CLASS = OBJECT_CLASS + 1        # 43
N_IDENTITY_CLASSES = BACKGROUND_CLASS + 1  # 44
TRANSLATION_SLOT = N_HANDS * N_JOINTS
OBJECT_SLOT = TRANSLATION_SLOT + 1


def identity_label(cls: int) -> tuple[str, int | None]:
    """(hand identity, joint index) for a class id."""
    if cls < N_JOINTS:
        return "left", cls
    if cls < OBJECT_CLASS:
        return "right", cls - N_JOINTS
    return ("object", None) if cls == OBJECT_CLASS else ("background", None)


# ---------------------------------------------------------------------------
# keypoints


def extract_peaks(heatmaps, threshold: float = 0.5, max_peaks: int | None = None) -> np.ndarray:
    """Local maxima above ``threshold`` across all joint maps.

    A pixel is a peak in a map when no 8-neighbour exceeds it.  Positions
    found in several maps are merged; if more than ``max_peaks`` remain the
    strongest are kept.  Returns (m, 2) integer (u, v) in row-major order.
    """
    maps = heatmaps.data if isinstance(heatmaps, Tensor) else np.asarray(heatmaps, dtype=np.float64)
    n, h, w = maps.shape
    padded = np.pad(maps, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    neighbours = np.max(
        [padded[:, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
         for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx],
        axis=0,
    )
    is_peak = (maps >= neighbours) & (maps > threshold)
    strength = np.where(is_peak, maps, -np.inf).max(axis=0)
    rows, cols = np.nonzero(np.isfinite(strength))
    if max_peaks is not None and len(rows) > max_peaks:
        keep = np.argsort(-strength[rows, cols], kind="stable")[:max_peaks]
        keep.sort()
        rows, cols = rows[keep], cols[keep]
    return np.stack([cols, rows], axis=1).astype(np.int64)


def assign_gt_identities(peaks: np.ndarray, gt_joints2d: np.ndarray, gamma: float = 3.0,
                         valid: np.ndarray | None = None) -> np.ndarray:
    """Label each peak with the nearest ground-truth joint within ``gamma``.

    ``gt_joints2d`` is (2, 21, 2) or (42, 2) in grid pixels; ``valid`` masks
    out joints that must not be matched (e.g. absent hands).  Peaks farther
    than ``gamma`` from every valid joint are background; equal distances
    resolve to the smaller class id.
    """
    if gamma <= 0:
        raise ContractError("gamma must be positive")
    peaks = np.asarray(peaks, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_joints2d, dtype=np.float64).reshape(-1, 2)
    valid = np.ones(len(gt), dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(-1)
    labels = np.full(len(peaks), BACKGROUND_CLASS, dtype=np.int64)
    if not valid.any() or not len(peaks):
        return labels
    dist = np.sqrt(((peaks[:, None, :] - gt[None, :, :]) ** 2).sum(axis=-1))
    dist[:, ~valid] = np.inf
    best = dist.min(axis=1)
    for i in np.nonzero(best <= gamma)[0]:
        labels[i] = int(np.nonzero(dist[i] <= best[i] + 1e-12)[0][0])
    return labels


def assign_object_identities(points: np.ndarray, gt_labels: np.ndarray, object_label: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    on_object = gt_labels[points[:, 1], points[:, 0]] == object_label
    return np.where(on_object, OBJECT_CLASS, BACKGROUND_CLASS).astype(np.int64)


def positional_encoding(positions: np.ndarray, dim: int = TOKEN_DIM) -> np.ndarray:
    """Sinusoidal 2D encoding: first half encodes u, second half v."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    quarter = dim // 4
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / quarter))
    parts = []
    for axis in (0, 1):
        angle = positions[:, axis:axis + 1] * freqs[None, :]
        parts += [np.sin(angle), np.cos(angle)]
    return np.concatenate(parts, axis=1)


@dataclass
class KeypointTokens:
    positions: np.ndarray   # (m, 2) integer grid (u, v)
    embeddings: Tensor      # (m, d)


class TokenEmbedding(Module):
    """Linear projection of a feature column plus positional encoding."""

    def __init__(self, rng: np.random.Generator, channels: int, dim: int = TOKEN_DIM):
        self.proj = Linear(rng, channels, dim)
        self.dim = dim

    def __call__(self, columns: Tensor, positions: np.ndarray) -> Tensor:
        return self.proj(columns) + positional_encoding(positions, self.dim)


# ---------------------------------------------------------------------------
# attention


@dataclass
class AttentionMaps:
    soft: np.ndarray
    sig: np.ndarray | None
    combined: np.ndarray


def combined_attention(q: Tensor, k: Tensor, v: Tensor, use_sigmoid: bool = True,
                       return_maps: bool = False):
    """softmax(qk^T/sqrt(d)) gated elementwise by sigmoid(qk^T/sqrt(d)), times v.

    With ``use_sigmoid=False`` this is plain scaled dot-product attention.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2 or q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(q.shape[1]))
    c_soft = T.softmax_rows(scores)
    if use_sigmoid:
        c_sig = T.sigmoid(scores)
        c = c_soft * c_sig
        # a softmax row can round to 1 + ulp; where the gate is ~1 that leaks into C
        over = c.data.sum(axis=1) > 1.0
        if over.any():
            factor = np.ones((c.shape[0], 1))
            while True:
                rows = (c.data * factor).sum(axis=1) > 1.0
                if not rows.any():
                    break
                factor[rows] = np.nextafter(factor[rows], 0.0)
            c = c * factor
    else:
        c_sig, c = None, c_soft
    out = T.matmul(c, v)
    if return_maps:
        return out, AttentionMaps(c_soft.data, None if c_sig is None else c_sig.data, c.data)
    return out


class Attention(Module):
    def __init__(self, rng: np.random.Generator, dim: int, heads: int = 1):
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)
        self.heads = heads

    def __call__(self, x: Tensor, context: Tensor, use_sigmoid: bool = True) -> Tensor:
        q, k, v = self.wq(x), self.wk(context), self.wv(context)
        if self.heads == 1:
            return self.wo(combined_attention(q, k, v, use_sigmoid))
        width = q.shape[1] // self.heads
        outs = [
            combined_attention(q[:, h * width:(h + 1) * width], k[:, h * width:(h + 1) * width],
                               v[:, h * width:(h + 1) * width], use_sigmoid)
            for h in range(self.heads)
        ]
        return self.wo(T.concat(outs, axis=1))


class EncoderLayer(Module):
    def __init__(self, rng, dim: int, ffn_dim: int, heads: int):
        self.attn = Attention(rng, dim, heads)
        self.norm1 = LayerNorm(dim)
        self.ffn = MLP(rng, [dim, ffn_dim, dim])
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor, use_sigmoid: bool = True) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, use_sigmoid)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(Module):
    def __init__(self, rng, dim: int, ffn_dim: int, heads: int):
        self.self_attn = Attention(rng, dim, heads)
        self.norm1 = LayerNorm(dim)
        self.cross_attn = Attention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.ffn = MLP(rng, [dim, ffn_dim, dim])
        self.norm3 = LayerNorm(dim)

    def __call__(self, x: Tensor, memory: Tensor, use_sigmoid: bool = True) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, use_sigmoid)
        x = x + self.cross_attn(self.norm2(x), memory, use_sigmoid)
        return x + self.ffn(self.norm3(x))


# ---------------------------------------------------------------------------
# heads


@dataclass
class PoseOutput:
    joints: Tensor            # (2, 21, 3) root-relative
    rel_translation: Tensor   # (3,) right wrist minus left wrist
    rotation: Tensor          # (3, 3)
    translation: Tensor       # (3,)


_ROT6D_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
_CROSS_A = np.array([1, 2, 0])
_CROSS_B = np.array([2, 0, 1])


def _cross(a: Tensor, b: Tensor) -> Tensor:
    return a[_CROSS_A] * b[_CROSS_B] - a[_CROSS_B] * b[_CROSS_A]


def _normalize(x: Tensor) -> Tensor:
    return x / T.sqrt(T.sum(T.square(x)))


def rot6d_to_matrix(x6: Tensor) -> Tensor:
    """Gram-Schmidt on two 3-vectors; the columns form a proper rotation."""
    b1 = _normalize(x6[0:3])
    a2 = x6[3:6]
    b2 = _normalize(a2 - b1 * T.sum(b1 * a2))
    b3 = _cross(b1, b2)
    return T.transpose(T.reshape(T.concat([b1, b2, b3]), (3, 3)))


class PoseTransformer(Module):
    def __init__(self, rng: np.random.Generator, dim: int = TOKEN_DIM, ffn_dim: int = 256,
                 enc_layers: int = 3, dec_layers: int = 3, heads: int = 1, num_queries: int = 64,
                 pose_scale: float = 100.0, depth_prior: float = 450.0):
        if num_queries <= OBJECT_SLOT:
            raise ContractError(f"need at least {OBJECT_SLOT + 1} queries")
        self.encoder = [EncoderLayer(rng, dim, ffn_dim, heads) for _ in range(enc_layers)]
        self.decoder = [DecoderLayer(rng, dim, ffn_dim, heads) for _ in range(dec_layers)]
        self.encoder_norm = LayerNorm(dim)
        self.decoder_norm = LayerNorm(dim)
        self.queries = Parameter(T.uniform_init(rng, (num_queries, dim), 1))
        self.identity_mlp = MLP(rng, [dim, dim, dim])
        self.identity_proj = Linear(rng, dim, N_IDENTITY_CLASSES)
        self.joint_head = MLP(rng, [dim, ffn_dim, 3])
        self.translation_head = MLP(rng, [dim, ffn_dim, 3])
        self.object_head = MLP(rng, [dim, ffn_dim, 9])
        self.pose_scale = pose_scale
        self.depth_prior = depth_prior

    def encode(self, tokens: Tensor, use_sigmoid: bool = True) -> Tensor:
        if tokens.shape[0] == 0:
            raise ContractError("encoder needs at least one token")
        for layer in self.encoder:
            tokens = layer(tokens, use_sigmoid)
        return self.encoder_norm(tokens)

    def decode(self, memory: Tensor, queries: Tensor | None = None, use_sigmoid: bool = True) -> Tensor:
        x = self.queries if queries is None else queries
        for layer in self.decoder:
            x = layer(x, memory, use_sigmoid)
        return self.decoder_norm(x)

    def identity_logits(self, tokens: Tensor) -> Tensor:
        return self.identity_proj(T.relu(self.identity_mlp(tokens)))

    def predict_identities(self, tokens: Tensor) -> Tensor:
        """(m, 44) class distribution per token."""
        return T.softmax_rows(self.identity_logits(tokens))

    def predict_poses(self, decoded: Tensor) -> PoseOutput:
        n = N_HANDS * N_JOINTS
        joints = T.reshape(self.joint_head(decoded[0:n]) * self.pose_scale, (N_HANDS, N_JOINTS, 3))
        joints = joints - joints[:, 0:1]
        rel = self.translation_head(decoded[TRANSLATION_SLOT:TRANSLATION_SLOT + 1])[0] * self.pose_scale
        obj = self.object_head(decoded[OBJECT_SLOT:OBJECT_SLOT + 1])[0]
        rotation = rot6d_to_matrix(obj[0:6] + _ROT6D_IDENTITY)
        translation = obj[6:9] * self.pose_scale + np.array([0.0, 0.0, self.depth_prior])
        return PoseOutput(joints, rel, rotation, translation)

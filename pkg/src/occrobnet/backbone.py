"""Convolutional backbone: feature map, joint heatmaps, segmentation, object points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .errors import DimensionError
from .layers import Conv2d, Module
from .synthdata import GRID_SIZE, IMAGE_SIZE, N_HANDS, N_JOINTS, N_SEG_CLASSES, OBJECT
from .synthdata import render_gt_heatmaps  # noqa: F401  (re-exported)
from .tensor import Tensor

N_HEATMAPS = N_HANDS * N_JOINTS
N_OBJECT_POINTS = 20
HEATMAP_PRIOR_BIAS = -4.0


class Backbone(Module):
    """Two stride-2 stages, one at 16x16, then upsample with a 32x32 skip.

    Stands in for a ResNet/FPN: the output keeps the heatmap resolution.
    """

    def __init__(self, rng: np.random.Generator, channels: int = 64, stem: int = 32):
        self.conv1 = Conv2d(rng, 3, stem, 3, stride=2)
        self.conv2 = Conv2d(rng, stem, channels, 3, stride=2)
        self.conv3 = Conv2d(rng, channels, channels, 3)
        self.conv4 = Conv2d(rng, channels + stem, channels, 3)
        self.channels = channels

    def extract_features(self, image) -> Tensor:
        image = T.as_tensor(image)
        if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise DimensionError(f"backbone expects a {IMAGE_SIZE}x{IMAGE_SIZE}x3 image, got {image.shape}")
        skip = T.relu(self.conv1(image))
        x = T.relu(self.conv2(skip))
        x = T.relu(self.conv3(x))
        x = T.concat_channels(T.upsample2x(x), skip)
        features = T.relu(self.conv4(x))
        assert features.shape[:2] == (GRID_SIZE, GRID_SIZE)
        return features

    __call__ = extract_features


class HeatmapHead(Module):
    def __init__(self, rng: np.random.Generator, channels: int):
        self.conv = Conv2d(rng, channels, N_HEATMAPS, 1)
        # start from "no joint here" so early peak extraction is quiet
        self.conv.bias.data[...] = HEATMAP_PRIOR_BIAS

    def predict_heatmaps(self, features: Tensor) -> Tensor:
        """(42, 32, 32) maps in [0, 1]; left-hand joints first."""
        return T.permute(T.sigmoid(self.conv(features)), (2, 0, 1))

    __call__ = predict_heatmaps


class SegmentationHead(Module):
    def __init__(self, rng: np.random.Generator, channels: int):
        self.conv = Conv2d(rng, channels, N_SEG_CLASSES, 1)

    def predict_segmentation(self, features: Tensor) -> Tensor:
        """(32, 32, 4) per-pixel class distribution."""
        return T.softmax(self.conv(features), axis=-1)

    __call__ = predict_segmentation


@dataclass
class ObjectPointSet:
    points: np.ndarray          # (20, 2) integer (u, v) grid coordinates
    features: Tensor | None     # (20, C) feature columns at the points
    degenerate: bool = False


def _class_map(mask) -> tuple[np.ndarray, np.ndarray | None]:
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if data.ndim == 3:
        return data.argmax(axis=-1), data[..., OBJECT]
    return data.astype(np.int64), None


def sample_object_points(mask, features: Tensor | None, seed: int,
                         count: int = N_OBJECT_POINTS) -> ObjectPointSet:
    """Draw ``count`` object-class pixels.

    ``mask`` is either a (32, 32, 4) class distribution or a (32, 32) label
    map.  Uniform without replacement when enough object pixels exist, with
    replacement when there are fewer, and ``count`` copies of the centroid
    (flagged degenerate) when there are none.
    """
    labels, scores = _class_map(mask)
    rows, cols = np.nonzero(labels == OBJECT)
    rng = rngmod.stream(seed, rngmod.SAMPLING)
    degenerate = False
    if len(rows) >= count:
        pick = rng.choice(len(rows), size=count, replace=False)
    elif len(rows) > 0:
        pick = rng.choice(len(rows), size=count, replace=True)
    else:
        degenerate = True
        if scores is not None and scores.sum() > 0:
            yy, xx = np.mgrid[0:labels.shape[0], 0:labels.shape[1]]
            cy = (yy * scores).sum() / scores.sum()
            cx = (xx * scores).sum() / scores.sum()
        else:
            cy, cx = (labels.shape[0] - 1) / 2.0, (labels.shape[1] - 1) / 2.0
        rows = np.full(count, int(round(cy)))
        cols = np.full(count, int(round(cx)))
        pick = np.arange(count)
    points = np.stack([cols[pick], rows[pick]], axis=1).astype(np.int64)
    order = np.lexsort((points[:, 0], points[:, 1]))
    points = points[order]
    feats = None if features is None else gather_columns(features, points)
    return ObjectPointSet(points, feats, degenerate)


def gather_columns(features: Tensor, points: np.ndarray) -> Tensor:
    """Feature vectors at integer (u, v) positions of an H x W x C map."""
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    return T.getitem(features, (points[:, 1], points[:, 0]))

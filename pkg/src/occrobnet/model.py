"""End-to-end network: image -> heatmaps, keypoint identities, hand and object pose."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import rng as rngmod
from . import synthdata as sd
from . import tensor as T
from .backbone import Backbone, HeatmapHead, SegmentationHead, gather_columns, sample_object_points
from .ciet import CIET
from .config import RunConfig
from .layers import Module
from .losses import (LossBreakdown, heatmap_loss, hand_pose_loss, identity_loss_from_logits,
                     object_corner_loss, total_loss, translation_loss)
from .tensor import Tensor
from .transformer import (BACKGROUND_CLASS, PoseOutput, PoseTransformer, TokenEmbedding,
                          assign_gt_identities, assign_object_identities, extract_peaks)


class SceneTargets:
    """Everything the losses need from one scene, computed once."""

    def __init__(self, scene: sd.Scene, sigma: float):
        self.scene = scene
        self.sigma = sigma

    @cached_property
    def image(self) -> np.ndarray:
        return sd.render(self.scene)

    @cached_property
    def heatmaps(self) -> np.ndarray:
        return sd.scene_heatmaps(self.scene, self.sigma)

    @cached_property
    def seg_labels(self) -> np.ndarray:
        return sd.segmentation_target(self.scene)

    @cached_property
    def joints_grid(self) -> np.ndarray:
        return self.scene.joints2d_grid().reshape(-1, 2)

    @cached_property
    def joint_valid(self) -> np.ndarray:
        return np.repeat(self.scene.hand_present, sd.N_JOINTS)

    @cached_property
    def visible(self) -> np.ndarray:
        return (self.scene.visibility & self.scene.hand_present[:, None]).reshape(-1)


@dataclass
class TokenPlan:
    """Token positions and their identity targets for one forward pass."""
    hand_positions: np.ndarray
    object_positions: np.ndarray
    labels: np.ndarray

    @property
    def count(self) -> int:
        return len(self.hand_positions) + len(self.object_positions)


@dataclass
class Prediction:
    joints: np.ndarray            # (2, 21, 3) root-relative
    rel_translation: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    heatmaps: np.ndarray          # (42, 32, 32)
    segmentation: np.ndarray      # (32, 32, 4)
    peaks: np.ndarray             # (m, 2)
    object_points: np.ndarray     # (20, 2)
    identity_probs: np.ndarray    # (m + 20, 44)
    detected: bool = True

    @property
    def identities(self) -> np.ndarray:
        return self.identity_probs.argmax(axis=1)


def _unique_rows(points: np.ndarray) -> np.ndarray:
    if not len(points):
        return points.reshape(0, 2).astype(np.int64)
    uniq = np.unique(points.astype(np.int64), axis=0)
    return uniq[np.lexsort((uniq[:, 0], uniq[:, 1]))]


class OccRobNet(Module):
    def __init__(self, config: RunConfig):
        rng = rngmod.stream(config.seed, rngmod.INIT)
        c = config.channels
        self.backbone = Backbone(rng, c)
        self.heatmap_head = HeatmapHead(rng, c)
        self.segmentation_head = SegmentationHead(rng, c)
        self.ciet_hand = CIET(rng, c)
        self.ciet_object = CIET(rng, c)
        self.hand_embed = TokenEmbedding(rng, c, config.d_model)
        self.object_embed = TokenEmbedding(rng, c, config.d_model)
        self.transformer = PoseTransformer(
            rng, config.d_model, config.ffn_dim, config.enc_layers, config.dec_layers, config.heads,
            config.num_queries, config.pose_scale, config.object_depth_prior,
        )
        self.config = config
        for name, p in self.named_parameters():
            p.name = name

    # -- stages ------------------------------------------------------------

    def maps(self, image):
        features = self.backbone(image)
        if self.config.use_ciet:
            hand_feat, obj_feat = self.ciet_hand(features), self.ciet_object(features)
        else:
            hand_feat = obj_feat = features
        return (features, hand_feat, obj_feat, self.heatmap_head(hand_feat),
                self.segmentation_head(features))

    def tokens(self, hand_feat: Tensor, obj_feat: Tensor, plan: TokenPlan) -> Tensor:
        parts = []
        if len(plan.hand_positions):
            parts.append(self.hand_embed(gather_columns(hand_feat, plan.hand_positions), plan.hand_positions))
        if len(plan.object_positions):
            parts.append(self.object_embed(gather_columns(obj_feat, plan.object_positions),
                                           plan.object_positions))
        return T.concat(parts, axis=0)

    def heads(self, tokens: Tensor):
        sig = self.config.use_sigmoid_attention
        encoded = self.transformer.encode(tokens, sig)
        logits = self.transformer.identity_logits(encoded)
        decoded = self.transformer.decode(encoded, use_sigmoid=sig)
        return logits, self.transformer.predict_poses(decoded)

    # -- training ----------------------------------------------------------

    def plan_tokens(self, targets: SceneTargets, heatmaps, seed: int, seg=None) -> TokenPlan:
        """Predicted peaks, topped up with any visible joint no peak found, plus object points.

        False peaks are subsampled to ``max_background_tokens``.  Object points
        come from the predicted mask ``seg`` as at inference (so mask spill is
        seen as background), or from the true mask while the prediction has no
        object pixels.
        """
        cfg = self.config
        peaks = extract_peaks(heatmaps, cfg.peak_threshold, cfg.max_peaks)
        labels = assign_gt_identities(peaks, targets.joints_grid, cfg.gamma, targets.joint_valid)
        hits = peaks[labels != BACKGROUND_CLASS]
        missed = targets.visible.copy()
        missed[labels[labels != BACKGROUND_CLASS]] = False
        extra = np.round(targets.joints_grid[missed]).astype(np.int64)
        extra = extra[np.all((extra >= 0) & (extra < sd.GRID_SIZE), axis=1)]
        false = peaks[labels == BACKGROUND_CLASS]
        if len(false) > cfg.max_background_tokens:
            pick = rngmod.stream(seed, rngmod.SAMPLING, 1).choice(len(false), cfg.max_background_tokens,
                                                                   replace=False)
            false = false[np.sort(pick)]
        hand_positions = _unique_rows(np.concatenate([hits, extra, false]))
        hand_labels = assign_gt_identities(hand_positions, targets.joints_grid, cfg.gamma,
                                           targets.joint_valid)
        mask = targets.seg_labels
        if seg is not None and np.any(np.argmax(seg.data, axis=-1) == sd.OBJECT):
            mask = seg.data
        objects = sample_object_points(mask, None, seed).points
        object_labels = assign_object_identities(objects, targets.seg_labels, sd.OBJECT)
        return TokenPlan(hand_positions, objects, np.concatenate([hand_labels, object_labels]))

    def loss(self, targets: SceneTargets, seed: int, plan: TokenPlan | None = None,
             return_plan: bool = False):
        cfg = self.config
        scene = targets.scene
        _, hand_feat, obj_feat, heatmaps, seg = self.maps(targets.image)
        if plan is None:
            plan = self.plan_tokens(targets, heatmaps, seed, seg)
        logits, pose = self.heads(self.tokens(hand_feat, obj_feat, plan))

        l_heatmap = heatmap_loss(heatmaps, targets.heatmaps)
        l_joints = identity_loss_from_logits(logits, plan.labels)
        if scene.two_hand:
            l_translation = translation_loss(pose.rel_translation, scene.relative_translation())
        else:
            l_translation = Tensor(0.0)
        l_hand = hand_pose_loss(pose.joints, scene.root_relative(), scene.hand_present)
        l_object = object_corner_loss(pose.rotation, pose.translation, scene.rotation,
                                      scene.translation, scene.corners, sd.cuboid_symmetries())
        l_object = l_object + segmentation_loss(seg, targets.seg_labels)
        weights = (cfg.w_heatmap, cfg.w_joints, cfg.w_translation, cfg.w_hand_pose, cfg.w_object_pose)
        total, breakdown = total_loss(l_heatmap, l_joints, l_translation, l_hand, l_object, weights)
        return (total, breakdown, plan) if return_plan else (total, breakdown)

    # -- inference ---------------------------------------------------------

    def predict(self, scene: sd.Scene, image: np.ndarray | None = None) -> Prediction:
        cfg = self.config
        image = sd.render(scene) if image is None else image
        with T.no_grad():
            _, hand_feat, obj_feat, heatmaps, seg = self.maps(image)
            peaks = extract_peaks(heatmaps, cfg.peak_threshold, cfg.max_peaks)
            objects = sample_object_points(seg, None, scene.seed).points
            plan = TokenPlan(peaks, objects, np.zeros(0, dtype=np.int64))
            if plan.count == 0:
                zeros = np.zeros((sd.N_HANDS, sd.N_JOINTS, 3))
                return Prediction(zeros, np.zeros(3), np.eye(3), np.array([0, 0, cfg.object_depth_prior]),
                                  heatmaps.data, seg.data, peaks, objects,
                                  np.zeros((0, 44)), detected=False)
            logits, pose = self.heads(self.tokens(hand_feat, obj_feat, plan))
        return Prediction(pose.joints.data.copy(), pose.rel_translation.data.copy(),
                          pose.rotation.data.copy(), pose.translation.data.copy(), heatmaps.data,
                          seg.data, peaks, objects, T.softmax_rows(logits).data)


def segmentation_loss(seg: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel cross-entropy of the class distribution."""
    h, w = labels.shape
    rows, cols = np.mgrid[0:h, 0:w]
    picked = seg[rows.ravel(), cols.ravel(), labels.ravel()]
    return -T.mean(T.log(picked))


def breakdown_row(iteration: int, b: LossBreakdown) -> list:
    return [iteration, b.l_heatmap, b.l_joints, b.l_translation, b.l_hand_pose, b.l_object_pose, b.total]


__all__ = ["OccRobNet", "SceneTargets", "TokenPlan", "Prediction", "PoseOutput", "segmentation_loss"]

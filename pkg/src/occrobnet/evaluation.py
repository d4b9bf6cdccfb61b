"""Scoring predictions over a dataset."""

from __future__ import annotations

import numpy as np

from . import synthdata as sd
from .backbone import sample_object_points
from .config import RunConfig
from .metrics import (EvalReport, align_scale_translation, auc_joint_error, joint_errors, mrrpe,
                      mssd, procrustes_align)
from .model import OccRobNet, Prediction
from .transformer import N_IDENTITY_CLASSES, assign_gt_identities, assign_object_identities, extract_peaks


def token_labels(pred: Prediction, scene: sd.Scene, gamma: float) -> np.ndarray:
    """Ground-truth identities of the prediction's tokens under the gamma rule."""
    grid = scene.joints2d_grid().reshape(-1, 2)
    valid = np.repeat(scene.hand_present, sd.N_JOINTS)
    hand = assign_gt_identities(pred.peaks, grid, gamma, valid)
    obj = assign_object_identities(pred.object_points, sd.segmentation_target(scene), sd.OBJECT)
    return np.concatenate([hand, obj])


def peak_hits(heatmaps: np.ndarray, scene: sd.Scene, radius: float = 1.0) -> np.ndarray:
    """Per visible joint: is its map's argmax within ``radius`` grid pixels?"""
    grid = scene.joints2d_grid().reshape(-1, 2)
    visible = (scene.visibility & scene.hand_present[:, None]).reshape(-1)
    hits = []
    for j in np.nonzero(visible)[0]:
        v, u = np.unravel_index(np.argmax(heatmaps[j]), heatmaps[j].shape)
        hits.append(np.hypot(u - grid[j, 0], v - grid[j, 1]) <= radius)
    return np.array(hits, dtype=bool)


def oracle_prediction(scene: sd.Scene, config: RunConfig) -> Prediction:
    """Ground truth dressed up as a prediction (for checking the scorer)."""
    heatmaps = sd.scene_heatmaps(scene, config.sigma)
    labels = sd.segmentation_target(scene)
    seg = np.eye(sd.N_SEG_CLASSES)[labels]
    peaks = extract_peaks(heatmaps, config.peak_threshold, config.max_peaks)
    objects = sample_object_points(seg, None, scene.seed).points
    pred = Prediction(scene.root_relative(), scene.relative_translation(), scene.rotation.copy(),
                      scene.translation.copy(), heatmaps, seg, peaks, objects,
                      np.zeros((len(peaks) + len(objects), N_IDENTITY_CLASSES)))
    pred.identity_probs[np.arange(len(pred.identity_probs)), token_labels(pred, scene, config.gamma)] = 1.0
    return pred


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


def evaluate_predictions(preds: list[Prediction], scenes: list[sd.Scene], config: RunConfig) -> EvalReport:
    if len(preds) != len(scenes):
        raise ValueError(f"{len(preds)} predictions for {len(scenes)} scenes")
    single, two, everything, rel_errors, mssds = [], [], [], [], []
    err_st, err_pa = [], []
    id_hits, peak_hit = [], []
    symmetries = sd.cuboid_symmetries()
    for pred, scene in zip(preds, scenes):
        gt = scene.root_relative()
        per_scene = []
        for h in np.nonzero(scene.hand_present)[0]:
            per_scene.append(joint_errors(pred.joints[h], gt[h]))
            err_st.append(joint_errors(align_scale_translation(pred.joints[h], gt[h]), gt[h]))
            err_pa.append(joint_errors(procrustes_align(pred.joints[h], gt[h]), gt[h]))
        scene_mpjpe = float(np.concatenate(per_scene).mean())
        everything.append(scene_mpjpe)
        (two if scene.two_hand else single).append(scene_mpjpe)
        if scene.two_hand:
            rel_errors.append(mrrpe(pred.rel_translation, scene.relative_translation()))
        mssds.append(mssd(pred.rotation, pred.translation, scene.rotation, scene.translation,
                          scene.corners, symmetries))
        if len(pred.identity_probs):
            id_hits.append(pred.identities == token_labels(pred, scene, config.gamma))
        peak_hit.append(peak_hits(pred.heatmaps, scene))
    err_st = np.concatenate(err_st) if err_st else np.zeros(0)
    err_pa = np.concatenate(err_pa) if err_pa else np.zeros(0)
    ids = np.concatenate(id_hits) if id_hits else np.zeros(0, dtype=bool)
    peaks = np.concatenate(peak_hit) if peak_hit else np.zeros(0, dtype=bool)
    return EvalReport(
        mpjpe_single=_mean(single), mpjpe_two=_mean(two), mpjpe_all=float(np.mean(everything)),
        mrrpe=_mean(rel_errors), mssd=float(np.mean(mssds)),
        joint_error_st=float(err_st.mean()), auc_st=auc_joint_error(err_st, config.auc_max, config.auc_steps),
        joint_error_pa=float(err_pa.mean()), auc_pa=auc_joint_error(err_pa, config.auc_max, config.auc_steps),
        identity_accuracy=_mean(ids), heatmap_peak_accuracy=_mean(peaks), n_scenes=len(scenes),
        auc_range=(0.0, config.auc_max, config.auc_steps),
    )


def predict_all(model: OccRobNet, scenes: list[sd.Scene]) -> list[Prediction]:
    return [model.predict(scene) for scene in scenes]


def evaluate_model(model: OccRobNet, scenes: list[sd.Scene]) -> tuple[EvalReport, list[Prediction]]:
    preds = predict_all(model, scenes)
    return evaluate_predictions(preds, scenes, model.config), preds

"""Training objectives and their weighted sum."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

LOSS_FIELDS = ("l_heatmap", "l_joints", "l_translation", "l_hand_pose", "l_object_pose")


@dataclass
class LossBreakdown:
    l_heatmap: float
    l_joints: float
    l_translation: float
    l_hand_pose: float
    l_object_pose: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def heatmap_loss(pred, target) -> Tensor:
    """Sum over joints of the squared L2 distance between maps."""
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"heatmap shapes differ: {pred.shape} vs {target.shape}")
    return T.sum(T.square(pred - target))


def identity_loss(probs, labels) -> Tensor:
    """Mean cross-entropy of per-token class distributions."""
    probs = T.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(labels) != probs.shape[0]:
        raise DimensionError(f"{len(labels)} labels for distributions of shape {probs.shape}")
    picked = probs[np.arange(len(labels)), labels]
    return -T.mean(T.log(picked))


def identity_loss_from_logits(logits: Tensor, labels) -> Tensor:
    """Same value as :func:`identity_loss` on ``softmax(logits)``, computed stably."""
    labels = np.asarray(labels, dtype=np.int64)
    picked = T.log_softmax(logits, axis=1)[np.arange(len(labels)), labels]
    return -T.mean(picked)


def translation_loss(t_pred, t_gt) -> Tensor:
    return T.sum(T.absolute(T.as_tensor(t_pred) - t_gt))


def hand_pose_loss(j_pred, j_gt, present=None) -> Tensor:
    """Mean over joints of the L1 norm of the root-relative 3D error.

    ``present`` (2,) selects which hands contribute.
    """
    j_pred = T.as_tensor(j_pred)
    if j_pred.shape != np.shape(j_gt):
        raise DimensionError(f"joint shapes differ: {j_pred.shape} vs {np.shape(j_gt)}")
    j_gt = np.asarray(j_gt)
    if present is not None:
        present = np.asarray(present, dtype=bool)
        if not present.any():
            return Tensor(0.0)
        (idx,) = np.nonzero(present)
        j_pred, j_gt = j_pred[idx], j_gt[idx]
    joints = int(np.prod(j_gt.shape[:-1]))
    return T.sum(T.absolute(j_pred - j_gt)) * (1.0 / joints)


def _corner_distance(r_pred: Tensor, t_pred: Tensor, target: np.ndarray, corners: np.ndarray) -> Tensor:
    moved = T.matmul(T.as_tensor(corners), T.transpose(r_pred)) + t_pred
    return T.mean(T.norm_rows(moved - target))


def object_corner_loss(r_pred, t_pred, r_gt, t_gt, corners, symmetries) -> Tensor:
    """Mean corner distance, minimised over the object's symmetry rotations."""
    if not len(symmetries):
        raise ContractError("symmetry list must not be empty (include the identity)")
    r_pred, t_pred = T.as_tensor(r_pred), T.as_tensor(t_pred)
    corners = np.asarray(corners, dtype=np.float64)
    target = corners @ np.asarray(r_gt).T + np.asarray(t_gt)
    candidates = [_corner_distance(T.matmul(r_pred, T.as_tensor(s)), t_pred, target, corners)
                  for s in symmetries]
    return min(candidates, key=lambda c: c.item())


def total_loss(l_heatmap, l_joints, l_translation, l_hand_pose, l_object_pose,
               weights=None) -> tuple[Tensor, LossBreakdown]:
    terms = [T.as_tensor(t) for t in (l_heatmap, l_joints, l_translation, l_hand_pose, l_object_pose)]
    weights = (1.0,) * len(terms) if weights is None else tuple(weights)
    total = terms[0] * weights[0]
    for term, w in zip(terms[1:], weights[1:]):
        total = total + term * w
    values = [t.item() for t in terms]
    return total, LossBreakdown(*values, total=total.item())

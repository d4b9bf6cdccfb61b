"""Pose-error metrics and the two alignment protocols used before scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DimensionError


def _as_points(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"{name} must be (n, 3), got {arr.shape}")
    return arr


def _pair(j_pred, j_gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_points(j_pred, "J_pred"), _as_points(j_gt, "J_gt")
    if p.shape != g.shape:
        raise DimensionError(f"joint counts differ: {p.shape} vs {g.shape}")
    return p, g


def joint_errors(j_pred, j_gt) -> np.ndarray:
    p, g = _pair(j_pred, j_gt)
    return np.linalg.norm(p - g, axis=1)


def mpjpe(j_pred, j_gt) -> float:
    """Mean per-joint Euclidean distance."""
    return float(joint_errors(j_pred, j_gt).mean())


def mrrpe(rel_pred, rel_gt) -> float:
    """Error of the right-root-relative-to-left-root vector."""
    return float(np.linalg.norm(np.asarray(rel_pred, dtype=np.float64) - np.asarray(rel_gt, dtype=np.float64)))


def mssd(r_pred, t_pred, r_gt, t_gt, vertices, symmetries) -> float:
    """Maximum vertex distance, minimised over the symmetry set."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if not len(vertices):
        raise ContractError("mssd needs at least one vertex")
    if not len(symmetries):
        raise ContractError("symmetry list must not be empty (include the identity)")
    pred = vertices @ np.asarray(r_pred).T + np.asarray(t_pred)
    best = np.inf
    for s in symmetries:
        gt = vertices @ (np.asarray(r_gt) @ np.asarray(s)).T + np.asarray(t_gt)
        best = min(best, float(np.linalg.norm(pred - gt, axis=1).max()))
    return best


@dataclass
class Alignment:
    aligned: np.ndarray
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool = False


def align_scale_translation(j_pred, j_gt, return_info: bool = False):
    """Least-squares uniform scale + translation taking J_pred onto J_gt."""
    p, g = _pair(j_pred, j_gt)
    if len(p) < 2:
        raise ContractError("scale/translation alignment needs at least 2 joints")
    mp, mg = p.mean(axis=0), g.mean(axis=0)
    pc, gc = p - mp, g - mg
    var = float((pc * pc).sum())
    degenerate = var <= 1e-18
    scale = 1.0 if degenerate else float((pc * gc).sum()) / var
    translation = mg - scale * mp
    result = Alignment(scale * p + translation, scale, np.eye(3), translation, degenerate)
    return result if return_info else result.aligned


def procrustes_align(j_pred, j_gt, return_info: bool = False):
    """Optimal similarity transform (proper rotation, scale, translation).

    Collinear or coincident predictions fall back to scale + translation and
    are flagged degenerate.
    """
    p, g = _pair(j_pred, j_gt)
    if len(p) < 3:
        raise ContractError("Procrustes alignment needs at least 3 joints")
    mp, mg = p.mean(axis=0), g.mean(axis=0)
    pc, gc = p - mp, g - mg
    spread = np.linalg.svd(pc, compute_uv=False)
    if spread[0] <= 1e-12 or spread[1] <= 1e-9 * spread[0]:
        result = align_scale_translation(p, g, return_info=True)
        result.degenerate = True
        return result if return_info else result.aligned
    u, d, vt = np.linalg.svd(gc.T @ pc)
    sign = np.ones(3)
    sign[2] = np.sign(np.linalg.det(u) * np.linalg.det(vt)) or 1.0
    rotation = (u * sign) @ vt
    scale = float((d * sign).sum() / (pc * pc).sum())
    translation = mg - scale * rotation @ mp
    result = Alignment(scale * p @ rotation.T + translation, scale, rotation, translation)
    return result if return_info else result.aligned


def residual(j_pred, j_gt) -> float:
    """Sum of squared joint distances."""
    p, g = _pair(j_pred, j_gt)
    return float(((p - g) ** 2).sum())


def auc_thresholds(max_threshold: float = 50.0, steps: int = 100) -> np.ndarray:
    return np.linspace(0.0, max_threshold, steps)


def pck_curve(errors, thresholds) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if not len(errors):
        return np.zeros(len(thresholds))
    return (errors[None, :] <= np.asarray(thresholds)[:, None]).mean(axis=1)


def auc_joint_error(errors, max_threshold: float = 50.0, steps: int = 100) -> float:
    """Area under the PCK curve on evenly spaced thresholds, scaled to [0, 1]."""
    errors = np.asarray(errors, dtype=np.float64)
    if np.any(errors < 0):
        raise ContractError("joint errors must be non-negative")
    th = auc_thresholds(max_threshold, steps)
    return float(np.trapezoid(pck_curve(errors, th), th) / max_threshold)


@dataclass
class EvalReport:
    """Metrics over a dataset; lengths in synthetic-mm."""

    mpjpe_single: float | None
    mpjpe_two: float | None
    mpjpe_all: float
    mrrpe: float | None
    mssd: float
    joint_error_st: float
    auc_st: float
    joint_error_pa: float
    auc_pa: float
    identity_accuracy: float | None = None
    heatmap_peak_accuracy: float | None = None
    n_scenes: int = 0
    alignment_modes: tuple = ("scale_translation", "procrustes")
    auc_range: tuple = (0.0, 50.0, 100)
    units: str = "synthetic-mm"
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["alignment_modes"] = list(self.alignment_modes)
        out["auc_range"] = list(self.auc_range)
        return out

    def __post_init__(self):
        for name in ("auc_st", "auc_pa"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name} outside [0, 1]: {value}")

"""Ground-truth quality metrics and correlation statistics."""
from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .core import FrameSample, Mesh
from .raster import rasterize_mesh

LOSS_NAMES = ("mask_iou", "mpjpe", "rec", "shape")
# quality metrics improve upwards, error metrics downwards
HIGHER_IS_BETTER = {"mask_iou": True, "mask_accuracy": True, "mpjpe": False, "rec": False, "shape": False}


class UndefinedStatistic(ValueError):
    """A statistic is undefined for the given input (e.g. correlation of a constant)."""


@dataclass(frozen=True)
class LossVector:
    mask_iou: float
    mpjpe: float
    rec: float
    shape: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "LossVector":
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class AlignedPair:
    predicted: np.ndarray
    ground_truth: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    @property
    def aligned(self) -> np.ndarray:
        return self.scale * self.predicted @ self.rotation.T + self.translation


def _pair(a, b, what: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def shape_error(pred_mesh: Mesh | np.ndarray, gt_mesh: Mesh | np.ndarray) -> float:
    """Sum over vertices of the squared distance between corresponding vertices."""
    pv = pred_mesh.vertices if isinstance(pred_mesh, Mesh) else pred_mesh
    gv = gt_mesh.vertices if isinstance(gt_mesh, Mesh) else gt_mesh
    pv, gv = _pair(pv, gv, "shape_error")
    return float(np.sum((gv - pv) ** 2))


def mpjpe(pred, gt) -> float:
    pred, gt = _pair(pred, gt, "mpjpe")
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)))


def procrustes_align(pred, gt, with_scale: bool = True) -> AlignedPair:
    """Similarity transform minimising the squared distance of ``s R pred + t`` to ``gt``."""
    pred, gt = _pair(pred, gt, "procrustes")
    if len(pred) < 3:
        raise ValueError("need at least 3 points to align")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    X = pred - mu_p
    Y = gt - mu_g
    var_x = np.sum(X ** 2)
    if var_x == 0 or np.sum(Y ** 2) == 0:
        raise UndefinedStatistic("degenerate configuration: all points coincide")
    U, S, Vt = np.linalg.svd(X.T @ Y)
    D = np.ones(3)
    if np.linalg.det(U @ Vt) < 0:
        D[-1] = -1.0
    R = (U * D) @ Vt
    R = R.T   # rotation applied to column vectors: aligned = s * R @ p
    scale = float((S * D).sum() / var_x) if with_scale else 1.0
    t = mu_g - scale * R @ mu_p
    return AlignedPair(pred, gt, R, t, scale)


def rec_error(pred, gt, with_scale: bool = True) -> float:
    """MPJPE after Procrustes (similarity) alignment of ``pred`` onto ``gt``."""
    ap = procrustes_align(pred, gt, with_scale)
    return mpjpe(ap.aligned, gt)


def mask_iou(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask_iou: shape mismatch {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def mask_accuracy(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask_accuracy: shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.mean(pred == gt))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"pearson: length mismatch {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise UndefinedStatistic("correlation needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.sum(dx * dx)
    syy = np.sum(dy * dy)
    if sxx == 0 or syy == 0 or not np.isfinite(sxx * syy):
        raise UndefinedStatistic("correlation undefined for a constant input")
    # one square root of the product, so identical inputs give exactly 1
    r = float(np.sum(dx * dy) / np.sqrt(sxx * syy))
    return max(-1.0, min(1.0, r))


def average_ranks(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"spearman: length mismatch {len(x)} vs {len(y)}")
    return pearson(average_ranks(x), average_ranks(y))


def predicted_mask(sample: FrameSample) -> np.ndarray:
    h, w = sample.image.shape
    est = sample.estimate
    return rasterize_mesh(est.mesh, est.camera, w, h)


def compute_targets(sample: FrameSample, raster=None) -> LossVector:
    """The four losses of an estimate against the sample's ground truth."""
    if not sample.has_ground_truth:
        raise ValueError(f"frame {sample.frame_id}: ground truth required")
    mask = predicted_mask(sample) if raster is None else raster(sample)
    est = sample.estimate
    return LossVector(
        mask_iou=mask_iou(mask, sample.gt_mask),
        mpjpe=mpjpe(est.joints, sample.gt_joints),
        rec=rec_error(est.joints, sample.gt_joints),
        shape=shape_error(est.mesh, sample.gt_mesh),
    )

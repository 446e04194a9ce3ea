"""Model-based monitors scoring one pose estimate against its input image.

* :func:`feature_m`  - fraction of mask-contour keypoints matched in the image edges
* :func:`canny_m`    - fraction of the mask contour lying near (dilated) image edges
* :class:`TimeMonitor` - per-subject shape and pose consistency over time
* :func:`external_mask_m` - overlap with an external segmentation mask
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import PoseEstimate
from .imgproc import canny, compute_descriptors, detect_keypoints, dilate, match_two_nearest
from .raster import mask_contour

HIGHER_IS_BETTER = "higher_is_better"
HIGHER_IS_WORSE = "higher_is_worse"

DEFAULT_CANNY_LOW = 20.0
DEFAULT_CANNY_HIGH = 40.0
DEFAULT_HISTORY = 5

# fixed polarity per monitor name; ATOM heads follow the metric they predict
POLARITY = {
    "featurem": HIGHER_IS_BETTER,
    "cannym": HIGHER_IS_BETTER,
    "timem": HIGHER_IS_WORSE,
    "maskm": HIGHER_IS_BETTER,
    "atom:mask_iou": HIGHER_IS_BETTER,
    "atom:mpjpe": HIGHER_IS_WORSE,
    "atom:rec": HIGHER_IS_WORSE,
    "atom:shape": HIGHER_IS_WORSE,
}


@dataclass(frozen=True)
class MonitorScore:
    value: float
    polarity: str
    flags: tuple = ()


def _check_dims(image, mask):
    if np.shape(image) != np.shape(mask):
        raise ValueError(f"image {np.shape(image)} and mask {np.shape(mask)} differ in size")


def mask_edges(mask: np.ndarray, mode: str = "canny", low: float = DEFAULT_CANNY_LOW,
               high: float = DEFAULT_CANNY_HIGH) -> np.ndarray:
    """Edge map of a binary mask: Canny of its 0/255 rendering, or its 4-neighbour contour."""
    if mode == "canny":
        return canny(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, low, high)
    if mode == "contour":
        return mask_contour(mask)
    raise ValueError(f"unknown mask edge mode {mode!r}")


def feature_m(image: np.ndarray, mask: np.ndarray, ratio: float = 0.75, pixel_gate: float = 26.0,
              low: float = DEFAULT_CANNY_LOW, high: float = DEFAULT_CANNY_HIGH,
              max_keypoints: int = 500, mask_mode: str = "canny") -> MonitorScore:
    """ORB-style matching between the mask's edges and the image's Canny edges.

    Both sides go through the same Canny by default, so an image that is the
    mask itself matches perfectly; ``mask_mode="contour"`` uses the mask's
    4-neighbour contour instead.
    """
    _check_dims(image, mask)
    kp_m, d_m = compute_descriptors(*_detect(mask_edges(mask, mask_mode, low, high), max_keypoints))
    if not kp_m:
        return MonitorScore(0.0, HIGHER_IS_BETTER, ("no-keypoints",))
    kp_i, d_i = compute_descriptors(*_detect(canny(image, low, high), max_keypoints))
    if len(kp_i) < 2:
        return MonitorScore(0.0, HIGHER_IS_BETTER, ("too-few-image-keypoints",))
    inliers = 0
    for best, second in match_two_nearest(d_m, d_i, kp_m, kp_i):
        if best.hamming < ratio * second.hamming and best.pixel_distance <= pixel_gate:
            inliers += 1
    return MonitorScore(inliers / len(kp_m), HIGHER_IS_BETTER)


def _detect(edges, max_keypoints):
    return edges, detect_keypoints(edges, max_keypoints)


def contour_overlap(mask: np.ndarray, edges: np.ndarray, kernel: int = 5) -> MonitorScore:
    """Fraction of the mask's contour pixels covered by ``edges`` dilated with a k x k square."""
    _check_dims(edges, mask)
    contour = mask_contour(mask)
    n = np.count_nonzero(contour)
    if n == 0:
        return MonitorScore(0.0, HIGHER_IS_BETTER, ("empty-contour",))
    hit = np.count_nonzero(contour & dilate(edges, kernel))
    return MonitorScore(hit / n, HIGHER_IS_BETTER)


def canny_m(image: np.ndarray, mask: np.ndarray, kernel: int = 5,
            low: float = DEFAULT_CANNY_LOW, high: float = DEFAULT_CANNY_HIGH) -> MonitorScore:
    _check_dims(image, mask)
    return contour_overlap(mask, canny(image, low, high), kernel)


# ------------------------------------------------------------------- TimeM

@dataclass
class SubjectHistory:
    subject_id: str
    beta_avg: np.ndarray
    count: int
    h: int = DEFAULT_HISTORY
    joint_buffer: deque = field(default=None)

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("history length h must be >= 1")
        self.joint_buffer = deque(self.joint_buffer or (), maxlen=self.h)

    def update(self, beta, joints) -> None:
        beta = np.asarray(beta, dtype=np.float64)
        self.beta_avg = (self.beta_avg * self.count + beta) / (self.count + 1)
        self.count += 1
        self.joint_buffer.append(np.array(joints, dtype=np.float64))


def default_joint_weights(depths) -> np.ndarray:
    """``w_k = 1 / (1 + depth_k)``: joints far down the kinematic tree count less."""
    return 1.0 / (1.0 + np.asarray(depths, dtype=np.float64))


def shape_consistency(beta_t, history: SubjectHistory) -> float:
    if history.count < 1:
        raise ValueError("shape consistency needs at least one stored observation")
    beta_t = np.asarray(beta_t, dtype=np.float64)
    if beta_t.shape != np.shape(history.beta_avg):
        raise ValueError(f"beta shape {beta_t.shape} != stored {np.shape(history.beta_avg)}")
    return float(np.sum((beta_t - history.beta_avg) ** 2))


def pose_consistency(j_t, history: SubjectHistory, weights) -> float:
    """Minimum over the buffered joint sets of sum_k w_k * |J_k - J_t,k|^2."""
    if not history.joint_buffer:
        raise ValueError("pose consistency needs a non-empty joint buffer")
    j_t = np.asarray(j_t, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("joint weights must be >= 0 with at least one > 0")
    best = np.inf
    for past in history.joint_buffer:
        if past.shape != j_t.shape or w.shape != (len(j_t),):
            raise ValueError("joint set / weight dimension mismatch")
        best = min(best, float(np.sum(w * np.sum((past - j_t) ** 2, axis=1))))
    return best


class TimeMonitor:
    """Streaming shape + pose consistency, one history per subject id.

    Not thread-safe for a single subject; distinct subjects may be observed
    from different threads.
    """

    def __init__(self, weights, h: int = DEFAULT_HISTORY):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.h = h
        self.histories: dict[str, SubjectHistory] = {}

    def observe(self, estimate: PoseEstimate) -> MonitorScore:
        hist = self.histories.get(estimate.subject_id)
        if hist is None:
            hist = SubjectHistory(estimate.subject_id, np.zeros_like(estimate.beta), 0, self.h)
            self.histories[estimate.subject_id] = hist
            score, flags = 0.0, ("first-encounter",)
        else:
            score = shape_consistency(estimate.beta, hist) + pose_consistency(estimate.joints, hist, self.weights)
            flags = ()
        hist.update(estimate.beta, estimate.joints)
        return MonitorScore(score, HIGHER_IS_WORSE, flags)


def time_m_observe(store: dict, estimate: PoseEstimate, weights, h: int = DEFAULT_HISTORY) -> MonitorScore:
    """Functional form of :meth:`TimeMonitor.observe` over a plain ``{subject_id: history}`` dict."""
    mon = TimeMonitor(weights, h)
    mon.histories = store
    return mon.observe(estimate)


# ------------------------------------------------------------- external mask

def dice_overlap(candidate, predicted) -> float:
    m = np.asarray(candidate, dtype=bool)
    p = np.asarray(predicted, dtype=bool)
    denom = np.count_nonzero(m) + np.count_nonzero(p)
    if denom == 0:
        return 1.0
    return 2.0 * np.count_nonzero(m & p) / denom


def external_mask_m(pseudo_masks, predicted, strict_iou: bool = False) -> MonitorScore:
    """Best overlap between the predicted mask and any externally supplied mask.

    The default is the Dice form ``2 |M_m & M_p| / (|M_m| + |M_p|)``;
    ``strict_iou=True`` uses ``|M_m & M_p| / |M_m | M_p|`` instead.
    """
    if len(pseudo_masks) == 0:
        raise ValueError("external_mask_m needs at least one candidate mask")
    from .metrics import mask_iou

    best = -np.inf
    for m in pseudo_masks:
        _check_dims(m, predicted)
        best = max(best, mask_iou(predicted, m) if strict_iou else dice_overlap(m, predicted))
    return MonitorScore(float(best), HIGHER_IS_BETTER)

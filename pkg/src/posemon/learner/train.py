"""Training loop for the loss predictor: MSE on z-scored targets, Adam, mesh augmentation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..metrics import compute_targets, predicted_mask
from ..synth import SkeletonTemplate, build_estimate, default_template
from .atom import AtomConfig, AtomModel, encode_samples, forward, loss_and_grads

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1


def augment_batch(samples, prob: float, sigma_pose: float, sigma_shape: float, rng: np.random.Generator,
                  template: SkeletonTemplate | None = None):
    """Perturb each estimate's Θ and β with probability ``prob`` and relabel it.

    Returns ``(samples', targets, changed)``: the (possibly) perturbed frames,
    their recomputed ``(N, 4)`` loss targets and a boolean array marking which
    frames were perturbed.
    """
    out, targets, changed, _ = _augment(samples, prob, sigma_pose, sigma_shape, rng, template, True)
    return out, targets, changed


def _augment(samples, prob, sigma_pose, sigma_shape, rng, template, relabel_all):
    # with relabel_all False, untouched frames get NaN targets and no mask
    out, targets, changed, masks = [], [], [], []
    for s in samples:
        if not s.has_ground_truth:
            raise ValueError(f"frame {s.frame_id}: augmentation needs ground truth")
        hit = rng.random() < prob
        d_theta = rng.normal(0.0, 1.0, size=s.estimate.theta.shape) * sigma_pose
        d_beta = rng.normal(0.0, 1.0, size=s.estimate.beta.shape) * sigma_shape
        if hit and (np.any(d_theta) or np.any(d_beta)):
            est = s.estimate
            tpl = template or default_template(len(est.theta), len(est.beta))
            new_est = build_estimate(tpl, est.theta + d_theta, est.beta + d_beta, est.camera,
                                     est.subject_id, est.timestamp)
            s = replace(s, estimate=new_est)
            changed.append(True)
        else:
            changed.append(False)
        out.append(s)
        if changed[-1] or relabel_all:
            mask = predicted_mask(s)
            masks.append(mask)
            targets.append(compute_targets(s, raster=lambda _s, m=mask: m).as_array())
        else:
            masks.append(None)
            targets.append(np.full(4, np.nan))
    return out, np.array(targets).reshape(-1, 4), np.array(changed, dtype=bool), masks


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(params[k].dtype)


def target_matrix(samples) -> np.ndarray:
    return np.array([compute_targets(s).as_array() for s in samples]).reshape(-1, 4)


def _mse(model, x, aux, y_z, batch_size=128) -> float:
    total, n = 0.0, 0
    for i in range(0, len(x), batch_size):
        z = forward(model.config, model.params, x[i:i + batch_size], aux[i:i + batch_size]).data
        total += float(np.sum((z - y_z[i:i + batch_size]) ** 2))
        n += z.size
    return total / max(n, 1)


def train(model: AtomModel, train_set, val_set=(), config: AtomConfig | None = None,
          template: SkeletonTemplate | None = None, train_targets=None, val_targets=None):
    """Fit ``model`` to the ground-truth losses of ``train_set``.

    Returns ``(best_model, history)`` where ``best_model`` holds the parameters
    with the lowest validation MSE (training MSE when no validation set).
    Fails with :class:`TrainingDiverged` on a non-finite loss.
    """
    cfg = config or model.config
    train_set = list(train_set)
    val_set = list(val_set)
    if not train_set:
        raise ValueError("training set is empty")
    model = model.copy()
    model.config = replace(model.config, use_mask=cfg.use_mask, use_joints=cfg.use_joints)

    y_train = target_matrix(train_set) if train_targets is None else np.asarray(train_targets)
    mean = y_train.mean(axis=0)
    std = y_train.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    model.target_mean, model.target_std = mean, std
    dtype = model.config.dtype

    def norm(y):
        return ((y - mean) / std).astype(dtype)

    masks = [predicted_mask(s) for s in train_set]
    x_train, aux_train = encode_samples(model.config, train_set, masks)
    yz_train = norm(y_train)
    if val_set:
        y_val = target_matrix(val_set) if val_targets is None else np.asarray(val_targets)
        x_val, aux_val = encode_samples(model.config, val_set)
        yz_val = norm(y_val)

    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params, lr=cfg.learning_rate)
    history = TrainHistory()
    best_score, best_params = np.inf, {k: v.copy() for k, v in model.params.items()}

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, ab, yb = x_train[idx], aux_train[idx], yz_train[idx]
            if cfg.augment and cfg.augment_prob > 0:
                aug, y_aug, changed, aug_masks = _augment([train_set[i] for i in idx], cfg.augment_prob,
                                                          cfg.augment_sigma_pose, cfg.augment_sigma_shape,
                                                          aug_rng, template, False)
                if changed.any():
                    xb, ab, yb = xb.copy(), ab.copy(), yb.copy()
                    sel = np.nonzero(changed)[0]
                    xc, ac = encode_samples(model.config, [aug[j] for j in sel], [aug_masks[j] for j in sel])
                    xb[sel], ab[sel], yb[sel] = xc, ac, norm(y_aug[sel])
            loss, grads = loss_and_grads(model, xb, ab, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            opt.step(model.params, grads)
            total += loss * len(idx)
            count += len(idx)
        train_mse = total / count
        history.train_mse.append(train_mse)
        val_mse = _mse(model, x_val, aux_val, yz_val) if val_set else train_mse
        history.val_mse.append(val_mse)
        if not np.isfinite(val_mse):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        if val_mse < best_score:
            best_score = val_mse
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
        log.debug("epoch %d train %.4f val %.4f", epoch, train_mse, val_mse)

    model.params = best_params
    return model, history

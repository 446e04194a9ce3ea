"""The loss-predicting monitor: image + mask encoder, joints and camera, four outputs.

Inputs are a 2-channel image (grayscale / 255 and the binary mask of the
predicted mesh), the flattened 3D joints and the 3 camera parameters.  The
encoder is a stack of 3x3 stride-2 convolutions with ReLU followed by global
average pooling; its features are concatenated with joints and camera and fed
through dense ReLU layers into a linear 4-unit head predicting
``(mask_iou, mpjpe, rec, shape)``.

Targets are z-scored per component with training-set statistics kept in the
model, so :func:`atom_forward` returns losses on their natural scale.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..metrics import LossVector, predicted_mask
from . import tensor as T

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AtomConfig:
    input_size: tuple = (128, 128)
    conv_channels: tuple = (8, 16, 32, 64)
    fc_sizes: tuple = (128, 64)
    use_mask: bool = True
    use_joints: bool = True
    augment: bool = True
    augment_prob: float = 0.6
    augment_sigma_pose: float = 0.2
    augment_sigma_shape: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0
    num_joints: int = 16
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "fc_sizes", tuple(int(v) for v in self.fc_sizes))
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValueError("augment_prob must be in [0, 1]")
        if min(self.input_size + self.conv_channels + self.fc_sizes, default=1) <= 0:
            raise ValueError("sizes must be positive")
        if self.batch_size <= 0 or self.epochs < 0 or self.num_joints <= 0:
            raise ValueError("batch_size, num_joints must be positive and epochs >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def aux_size(self) -> int:
        return 3 * self.num_joints + 3

    @classmethod
    def from_dict(cls, d: dict) -> "AtomConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("input_size", "conv_channels", "fc_sizes"):
            d[k] = list(d[k])
        return d


@dataclass
class AtomModel:
    config: AtomConfig
    params: dict
    target_mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    target_std: np.ndarray = field(default_factory=lambda: np.ones(4))

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype: str) -> "AtomModel":
        return AtomModel(replace(self.config, dtype=dtype),
                         {k: v.astype(dtype) for k, v in self.params.items()},
                         self.target_mean.copy(), self.target_std.copy())

    def copy(self) -> "AtomModel":
        return AtomModel(self.config, {k: v.copy() for k, v in self.params.items()},
                         self.target_mean.copy(), self.target_std.copy())


def parameter_shapes(config: AtomConfig) -> dict:
    shapes = {}
    c_in = 2
    for i, c in enumerate(config.conv_channels):
        shapes[f"conv{i}.w"] = (c, c_in, 3, 3)
        shapes[f"conv{i}.b"] = (c,)
        c_in = c
    d_in = (config.conv_channels[-1] if config.conv_channels else 2) + config.aux_size
    for i, d in enumerate(config.fc_sizes):
        shapes[f"fc{i}.w"] = (d_in, d)
        shapes[f"fc{i}.b"] = (d,)
        d_in = d
    shapes["head.w"] = (d_in, 4)
    shapes["head.b"] = (4,)
    return shapes


def init_model(config: AtomConfig) -> AtomModel:
    """He-initialised weights, zero biases, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=config.dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            std = math.sqrt(2.0 / fan_in) if not name.startswith("head") else math.sqrt(1.0 / fan_in)
            params[name] = rng.normal(0.0, std, size=shape).astype(config.dtype)
    return AtomModel(config, params)


# --------------------------------------------------------------------- inputs

def resize_bilinear(img: np.ndarray, size) -> np.ndarray:
    h, w = img.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return img.astype(np.float64)
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = img.astype(np.float64)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_nearest(mask: np.ndarray, size) -> np.ndarray:
    h, w = mask.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return np.asarray(mask)
    ys = np.minimum((np.arange(oh) * h) // oh, h - 1)
    xs = np.minimum((np.arange(ow) * w) // ow, w - 1)
    return np.asarray(mask)[ys][:, xs]


def encode_inputs(config: AtomConfig, image, mask, joints, camera):
    """Single-frame network inputs: ``(2, H, W)`` image tensor and ``(3K + 3,)`` aux vector."""
    img = resize_bilinear(np.asarray(image), config.input_size) / 255.0
    if config.use_mask:
        m = resize_nearest(np.asarray(mask, dtype=bool), config.input_size).astype(np.float64)
    else:
        m = np.zeros(config.input_size)
    joints = np.asarray(joints, dtype=np.float64).reshape(-1)
    if joints.size != 3 * config.num_joints:
        raise ValueError(f"expected {config.num_joints} joints, got {joints.size // 3}")
    if not config.use_joints:
        joints = np.zeros_like(joints)
    cam = camera.as_array() if hasattr(camera, "as_array") else np.asarray(camera, dtype=np.float64)
    x = np.stack([img, m]).astype(config.dtype)
    aux = np.concatenate([joints, cam]).astype(config.dtype)
    return x, aux


def encode_samples(config: AtomConfig, samples, masks=None):
    xs, auxs = [], []
    for i, s in enumerate(samples):
        m = predicted_mask(s) if masks is None else masks[i]
        x, aux = encode_inputs(config, s.image, m, s.estimate.joints, s.estimate.camera)
        xs.append(x)
        auxs.append(aux)
    if not xs:
        h, w = config.input_size
        return np.zeros((0, 2, h, w), config.dtype), np.zeros((0, config.aux_size), config.dtype)
    return np.stack(xs), np.stack(auxs)


# -------------------------------------------------------------------- forward

def forward(config: AtomConfig, params: dict, x, aux) -> T.Tensor:
    """Batched forward pass returning normalized predictions ``(N, 4)``.

    ``params`` maps names to :class:`Tensor` objects (or raw arrays).
    """
    p = {k: v if isinstance(v, T.Tensor) else T.Tensor(v) for k, v in params.items()}
    h = x if isinstance(x, T.Tensor) else T.Tensor(x)
    for i in range(len(config.conv_channels)):
        h = T.relu(T.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=2))
    feat = T.global_avg_pool(h)
    z = T.concat([feat, aux if isinstance(aux, T.Tensor) else T.Tensor(aux)], axis=1)
    for i in range(len(config.fc_sizes)):
        z = T.relu(T.linear(z, p[f"fc{i}.w"], p[f"fc{i}.b"]))
    return T.linear(z, p["head.w"], p["head.b"])


def predict_normalized(model: AtomModel, x, aux) -> np.ndarray:
    return forward(model.config, model.params, x, aux).data


def denormalize(model: AtomModel, z) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * model.target_std + model.target_mean


def atom_forward(model: AtomModel, image, mask, joints, camera) -> LossVector:
    x, aux = encode_inputs(model.config, image, mask, joints, camera)
    z = predict_normalized(model, x[None], aux[None])[0]
    return LossVector.from_array(denormalize(model, z))


def predict_samples(model: AtomModel, samples, batch_size: int = 64) -> np.ndarray:
    """Predicted loss vectors ``(N, 4)`` for a list of frames."""
    out = []
    for i in range(0, len(samples), batch_size):
        x, aux = encode_samples(model.config, samples[i:i + batch_size])
        out.append(denormalize(model, predict_normalized(model, x, aux)))
    return np.concatenate(out) if out else np.zeros((0, 4))


def loss_and_grads(model: AtomModel, x, aux, target_z):
    params = {k: T.Tensor(v, requires_grad=True) for k, v in model.params.items()}
    loss = T.mse_loss(forward(model.config, params, x, aux), target_z)
    loss.backward()
    return float(loss.data), {k: t.grad for k, t in params.items()}


def gradient_check(model: AtomModel, x, aux, target_z, tolerance: float = 1e-3, step: float = 1e-5,
                   max_entries: int | None = None, seed: int = 0):
    """Compare reverse-mode gradients with central finite differences.

    Reverse-mode gradients are taken at the model's own precision; finite
    differences always run in float64.  For each parameter tensor the error is
    ``max |g_rev - g_fd| / max(max |g_rev|, max |g_fd|)``.  Returns
    ``(max_error, per_parameter_errors, failures)`` where ``failures`` lists
    the parameters above ``tolerance``.
    """
    _, grads = loss_and_grads(model, x, aux, target_z)
    m64 = model.astype("float64")
    x64 = np.asarray(x, dtype=np.float64)
    a64 = np.asarray(aux, dtype=np.float64)
    t64 = np.asarray(target_z, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def loss_at():
        return float(T.mse_loss(forward(m64.config, m64.params, x64, a64), t64).data)

    errors = {}
    for name, p in m64.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        g_rev = grads[name].reshape(-1)[idx].astype(np.float64)
        g_fd = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            h = step * max(abs(orig), 1.0)
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            g_fd[j] = (up - down) / (2 * h)
        scale = max(np.abs(g_rev).max(initial=0.0), np.abs(g_fd).max(initial=0.0))
        errors[name] = 0.0 if scale == 0 else float(np.abs(g_rev - g_fd).max() / scale)
    failures = [k for k, e in errors.items() if e > tolerance]
    return max(errors.values(), default=0.0), errors, failures


# -------------------------------------------------------------------- storage

def save_model(model: AtomModel, path) -> None:
    shapes = {k: list(v.shape) for k, v in model.params.items()}
    doc = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "shapes": shapes,
        "target_mean": [float(v) for v in model.target_mean],
        "target_std": [float(v) for v in model.target_std],
        # float32 -> float64 is exact, and repr() of a float64 round-trips
        "params": {k: np.asarray(v, dtype=np.float64).reshape(-1).tolist() for k, v in model.params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> AtomModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: cannot parse model file: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: model file must hold a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: model format version {doc.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        config = AtomConfig.from_dict(doc["config"])
        shapes, stored = doc["shapes"], doc["params"]
        target_mean, target_std = np.asarray(doc["target_mean"]), np.asarray(doc["target_std"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model header: {exc}") from exc
    expected = parameter_shapes(config)
    params = {}
    for name, shape in expected.items():
        if name not in stored or list(shape) != shapes.get(name):
            raise ModelFormatError(f"{path}: parameter {name} missing or has wrong shape")
        arr = np.asarray(stored[name], dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise ModelFormatError(f"{path}: parameter {name} has {arr.size} values, expected {int(np.prod(shape))}")
        params[name] = arr.reshape(shape).astype(config.dtype)
    return AtomModel(config, params, target_mean, target_std)


def bench_forward(model: AtomModel, n_frames: int = 20, warmup: int = 3, seed: int = 0) -> float:
    """Mean wall-clock seconds per single-frame forward pass (warm-up excluded)."""
    if n_frames < 10:
        raise ValueError("n_frames must be >= 10")
    cfg = model.config
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, size=cfg.input_size, dtype=np.uint8)
    mask = rng.random(cfg.input_size) < 0.3
    joints = rng.normal(size=(cfg.num_joints, 3))
    camera = np.array([0.9, 0.0, 0.0])
    for _ in range(warmup):
        atom_forward(model, image, mask, joints, camera)
    t0 = time.perf_counter()
    for _ in range(n_frames):
        atom_forward(model, image, mask, joints, camera)
    return (time.perf_counter() - t0) / n_frames

"""Synthetic articulated-human scenes with controllably corrupted estimates.

A capsule skeleton stands in for a parametric body model: pose parameters are
per-joint axis-angle rotations, shape parameters scale bone lengths through a
linear basis, and each bone is skinned as a capsule with a fixed vertex layout
so vertex ``v`` means the same thing in every frame.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import Camera, FrameSample, Mesh, PoseEstimate
from .raster import project_points, rasterize_mesh, triangle_coverage

BACKGROUND_LEVEL = 32
FPS = 10.0

# 16-joint layout: pelvis, spine, neck, head, left arm (3), right arm (3), left leg (3), right leg (3)
_PARENTS = (-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14)
_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.0, -0.22, 0.0),
    (0.0, -0.24, 0.0),
    (0.0, -0.20, 0.0),
    (0.17, 0.03, 0.0),
    (0.08, 0.25, 0.0),
    (0.05, 0.23, 0.0),
    (-0.17, 0.03, 0.0),
    (-0.08, 0.25, 0.0),
    (-0.05, 0.23, 0.0),
    (0.09, 0.05, 0.0),
    (0.02, 0.38, 0.0),
    (0.0, 0.37, 0.0),
    (-0.09, 0.05, 0.0),
    (-0.02, 0.38, 0.0),
    (0.0, 0.37, 0.0),
)
_RADII = (0.12, 0.11, 0.10, 0.09, 0.06, 0.045, 0.04, 0.06, 0.045, 0.04, 0.07, 0.065, 0.05, 0.07, 0.065, 0.05)
# per-joint amplitude (radians) of the generated motion
_MOTION_AMPLITUDE = (0.35, 0.15, 0.1, 0.2, 0.2, 0.6, 0.5, 0.2, 0.6, 0.5, 0.15, 0.5, 0.4, 0.15, 0.5, 0.4)


@dataclass(frozen=True, eq=False)
class SkeletonTemplate:
    parents: tuple
    rest_offsets: np.ndarray
    bone_radii: np.ndarray
    shape_basis: np.ndarray
    segments: int = 8

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        for name in ("rest_offsets", "bone_radii", "shape_basis"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k = len(self.parents)
        if self.parents[0] != -1 or any(not 0 <= p < i for i, p in enumerate(self.parents) if i):
            raise ValueError("parents must form a tree rooted at joint 0 with parent index < child index")
        if self.rest_offsets.shape != (k, 3) or self.bone_radii.shape != (k,):
            raise ValueError("rest_offsets must be (K, 3) and bone_radii (K,)")
        if np.any(self.bone_radii <= 0):
            raise ValueError("bone radii must be > 0")
        if self.shape_basis.ndim != 2 or self.shape_basis.shape[1] != k:
            raise ValueError("shape_basis must be (B, K)")

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_betas(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def verts_per_bone(self) -> int:
        return 2 * self.segments + 2

    @property
    def num_vertices(self) -> int:
        return self.num_joints * self.verts_per_bone

    def depths(self) -> np.ndarray:
        d = np.zeros(self.num_joints, dtype=np.int64)
        for k in range(1, self.num_joints):
            d[k] = d[self.parents[k]] + 1
        return d

    def children(self, k: int) -> list[int]:
        return [i for i, p in enumerate(self.parents) if p == k]


@lru_cache(maxsize=None)
def default_template(num_joints: int = 16, num_betas: int = 10) -> SkeletonTemplate:
    """The stock 16-joint human; other joint counts get a simple vertical chain."""
    rng = np.random.default_rng(7)
    basis = rng.normal(0.0, 0.06, size=(num_betas, num_joints))
    if num_joints == 16:
        return SkeletonTemplate(_PARENTS, _OFFSETS, _RADII, basis)
    parents = [-1] + list(range(num_joints - 1))
    offsets = [(0.0, 0.0, 0.0)] + [(0.0, 0.1, 0.0)] * (num_joints - 1)
    return SkeletonTemplate(parents, offsets, [0.05] * num_joints, basis)


@dataclass(frozen=True)
class SceneConfig:
    width: int = 128
    height: int = 128
    clutter_density: float = 0.0
    clutter_seed: int = 0
    light_dir: tuple = (-0.3, -0.4, -0.866)

    def __post_init__(self):
        if not 0.0 <= self.clutter_density <= 1.0:
            raise ValueError("clutter_density must be in [0, 1]")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class CorruptionSpec:
    epsilon_pose: float = 0.1
    epsilon_shape: float = 0.5
    epsilon_camera: float = 0.05
    probability: float = 1.0

    def __post_init__(self):
        if min(self.epsilon_pose, self.epsilon_shape, self.epsilon_camera) < 0:
            raise ValueError("corruption std-devs must be >= 0")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")


# ------------------------------------------------------------------ kinematics

def rodrigues(v) -> np.ndarray:
    """Rotation matrices for axis-angle vectors ``(..., 3)``."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(theta > 0, theta, 1.0)
    k = v / safe
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([zero, -kz, ky, kz, zero, -kx, -ky, kx, zero], axis=-1).reshape(v.shape[:-1] + (3, 3))
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + (1 - c) * (K @ K)


def canonical_axis_angle(theta) -> np.ndarray:
    """Wrap rotation angles into [0, pi] without changing the rotation."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    n = np.linalg.norm(theta, axis=1)
    wrapped = np.mod(n + math.pi, 2 * math.pi) - math.pi
    scale = np.where(n > math.pi, wrapped / np.where(n > 0, n, 1.0), 1.0)
    return theta * scale[:, None]


def bone_multipliers(template: SkeletonTemplate, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape != (template.num_betas,):
        raise ValueError(f"beta has {beta.size} entries, template expects {template.num_betas}")
    return np.maximum(1.0 + beta @ template.shape_basis, 0.0)


def global_rotations(template: SkeletonTemplate, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    local = rodrigues(theta)
    G = np.empty_like(local)
    for k, p in enumerate(template.parents):
        G[k] = local[k] if p < 0 else G[p] @ local[k]
    return G


def forward_kinematics(template: SkeletonTemplate, theta, beta) -> np.ndarray:
    """Joint positions ``(K, 3)`` for pose ``theta`` (K x 3 axis-angle) and shape ``beta``."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    if len(theta) != template.num_joints:
        raise ValueError(f"theta has {len(theta)} joints, template expects {template.num_joints}")
    offsets = template.rest_offsets * bone_multipliers(template, beta)[:, None]
    G = global_rotations(template, theta)
    J = np.empty((template.num_joints, 3))
    for k, p in enumerate(template.parents):
        J[k] = offsets[k] if p < 0 else J[p] + G[p] @ offsets[k]
    return J


@lru_cache(maxsize=None)
def _capsule_faces(num_bones: int, segments: int) -> np.ndarray:
    S = segments
    per = 2 * S + 2
    i = np.arange(S)
    j = (i + 1) % S
    r0, r1 = i, S + i
    r0n, r1n = j, S + j
    cap0, cap1 = 2 * S, 2 * S + 1
    side = np.concatenate([np.stack([r0, r0n, r1], 1), np.stack([r0n, r1n, r1], 1)])
    # caps wound so normals point away from the capsule
    c0 = np.stack([np.full(S, cap0), r0n, r0], 1)
    c1 = np.stack([np.full(S, cap1), r1, r1n], 1)
    one = np.concatenate([side, c0, c1])
    faces = (one[None] + per * np.arange(num_bones)[:, None, None]).reshape(-1, 3)
    faces.setflags(write=False)
    return faces


def _bone_frame(axis: np.ndarray):
    ref = np.where(np.abs(axis[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(axis, u)
    return u, v


def skin_mesh(template: SkeletonTemplate, joints, radius_scale: float = 1.0) -> Mesh:
    """Capsule mesh around every bone ``parent(k) -> k`` (the root bone starts at the origin).

    Per bone the vertices are: ring at the parent end (S), ring at the child end (S),
    parent-end cap apex, child-end cap apex.
    """
    J = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    if len(J) != template.num_joints:
        raise ValueError(f"got {len(J)} joints, template expects {template.num_joints}")
    S = template.segments
    starts = np.array([np.zeros(3) if p < 0 else J[p] for p in template.parents])
    ends = J
    d = ends - starts
    length = np.linalg.norm(d, axis=1, keepdims=True)
    axis = np.where(length > 1e-12, d / np.where(length > 1e-12, length, 1.0), [[0.0, 1.0, 0.0]])
    u, v = _bone_frame(axis)
    r = (template.bone_radii * radius_scale)[:, None]
    phi = 2 * np.pi * np.arange(S) / S
    ring = np.cos(phi)[None, :, None] * u[:, None, :] + np.sin(phi)[None, :, None] * v[:, None, :]
    ring = ring * r[:, :, None]
    verts = np.concatenate([
        starts[:, None, :] + ring,
        ends[:, None, :] + ring,
        (starts - r * axis)[:, None, :],
        (ends + r * axis)[:, None, :],
    ], axis=1)
    return Mesh(verts.reshape(-1, 3), _capsule_faces(template.num_joints, S))


def _regressor_for(parents: tuple, segments: int) -> np.ndarray:
    K = len(parents)
    S = segments
    per = 2 * S + 2
    R = np.zeros((K, K * per))
    for k in range(K):
        cols = [k * per + S + i for i in range(S)]            # child-end ring of bone k
        kids = [c for c, p in enumerate(parents) if p == k]
        if kids:
            cols += [kids[0] * per + i for i in range(S)]     # parent-end ring of the first child bone
        R[k, cols] = 1.0 / len(cols)
    R.setflags(write=False)
    return R


_REGRESSORS: dict = {}


def regressor_matrix(template: SkeletonTemplate) -> np.ndarray:
    """Fixed row-stochastic K x V matrix: each row averages the two rings meeting at joint k."""
    key = (template.parents, template.segments)
    if key not in _REGRESSORS:
        _REGRESSORS[key] = _regressor_for(*key)
    return _REGRESSORS[key]


def joint_regressor(mesh: Mesh, template: SkeletonTemplate, regressor: np.ndarray | None = None) -> np.ndarray:
    R = regressor_matrix(template) if regressor is None else np.asarray(regressor)
    if R.shape[1] != mesh.num_vertices:
        raise ValueError(f"regressor expects {R.shape[1]} vertices, mesh has {mesh.num_vertices}")
    return R @ mesh.vertices


def build_estimate(template, theta, beta, camera, subject_id="subject0", timestamp=0.0) -> PoseEstimate:
    """Run FK -> skinning -> joint regression so the estimate is self-consistent."""
    theta = canonical_axis_angle(theta)
    joints_fk = forward_kinematics(template, theta, beta)
    mesh = skin_mesh(template, joints_fk)
    joints = joint_regressor(mesh, template)
    return PoseEstimate(subject_id, float(timestamp), theta, np.asarray(beta, dtype=np.float64), camera, mesh, joints)


# ------------------------------------------------------------------- rendering

def clutter_background(config: SceneConfig) -> np.ndarray:
    """Procedural background: value-noise blobs plus line segments around level 32."""
    h, w = config.height, config.width
    bg = np.full((h, w), float(BACKGROUND_LEVEL))
    d = config.clutter_density
    if d == 0:
        return bg
    rng = np.random.default_rng([config.clutter_seed, 0xC1])
    grid = rng.uniform(-1.0, 1.0, size=(9, 9))
    gy = np.linspace(0, 8, h)
    gx = np.linspace(0, 8, w)
    iy = np.minimum(gy.astype(int), 7)
    ix = np.minimum(gx.astype(int), 7)
    fy = (gy - iy)[:, None]
    fx = (gx - ix)[None, :]
    top = grid[iy][:, ix] * (1 - fx) + grid[iy][:, ix + 1] * fx
    bot = grid[iy + 1][:, ix] * (1 - fx) + grid[iy + 1][:, ix + 1] * fx
    noise = top * (1 - fy) + bot * fy
    bg += d * 48.0 * noise + d * 24.0

    n_lines = int(round(40 * d))
    for _ in range(n_lines):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        ang = rng.uniform(0, np.pi)
        length = rng.uniform(0.1, 0.5) * max(w, h)
        delta = rng.choice([-1.0, 1.0]) * rng.uniform(40, 140) * d
        t = np.linspace(0, 1, int(length * 2) + 2)
        xs = np.clip(np.round(x0 + np.cos(ang) * length * t).astype(int), 0, w - 1)
        ys = np.clip(np.round(y0 + np.sin(ang) * length * t).astype(int), 0, h - 1)
        bg[ys, xs] += delta
    return bg


def render_scene(mesh: Mesh, camera: Camera, config: SceneConfig, background: np.ndarray | None = None) -> np.ndarray:
    """Flat Lambertian shading of ``mesh`` over the procedural background.

    Faces are composited far-to-near (viewer on the -z side) so the nearest face
    colours each pixel; the foreground pixel set is exactly ``rasterize_mesh``.
    """
    img = clutter_background(config) if background is None else np.array(background, dtype=np.float64)
    if len(mesh.faces):
        tri3 = mesh.vertices[mesh.faces]
        n = np.cross(tri3[:, 1] - tri3[:, 0], tri3[:, 2] - tri3[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0)
        light = np.asarray(config.light_dir, dtype=np.float64)
        light = light / np.linalg.norm(light)
        shade = 64.0 + 160.0 * np.maximum(0.0, n @ light)

        uv = project_points(mesh.vertices, camera, config.width, config.height)
        f, ys, xs = triangle_coverage(uv[mesh.faces], config.width, config.height)
        if len(f):
            depth = tri3[:, :, 2].mean(axis=1)
            order = np.lexsort((np.arange(len(depth)), -depth))   # far first, stable by face index
            rank = np.empty(len(order), dtype=np.int64)
            rank[order] = np.arange(len(order))
            winner = np.full((config.height, config.width), -1, dtype=np.int64)
            np.maximum.at(winner, (ys, xs), rank[f])
            fg = winner >= 0
            img[fg] = shade[order[winner[fg]]]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


# ------------------------------------------------------------------ corruption

def corrupt_estimate(estimate: PoseEstimate, spec: CorruptionSpec, rng_seed, template: SkeletonTemplate | None = None):
    """Perturb Θ, β and the camera with Gaussian noise; returns ``(estimate, magnitude)``."""
    template = template or default_template(len(estimate.theta), len(estimate.beta))
    rng = np.random.default_rng(rng_seed)
    hit = rng.random() < spec.probability
    d_theta = rng.normal(0.0, 1.0, size=estimate.theta.shape) * spec.epsilon_pose
    d_beta = rng.normal(0.0, 1.0, size=estimate.beta.shape) * spec.epsilon_shape
    d_cam = rng.normal(0.0, 1.0, size=3) * spec.epsilon_camera
    if not hit or not (np.any(d_theta) or np.any(d_beta) or np.any(d_cam)):
        return estimate, 0.0
    cam = estimate.camera
    new_cam = Camera(max(cam.scale + d_cam[0], 1e-3), cam.tx + d_cam[1], cam.ty + d_cam[2])
    applied_cam = new_cam.as_array() - cam.as_array()
    out = build_estimate(template, estimate.theta + d_theta, estimate.beta + d_beta, new_cam,
                         estimate.subject_id, estimate.timestamp)
    magnitude = float(np.sqrt(np.sum(d_theta ** 2) + np.sum(d_beta ** 2) + np.sum(applied_cam ** 2)))
    return out, magnitude


def perturb_mask(mask: np.ndarray, rng: np.random.Generator, flip_prob: float = 0.4) -> np.ndarray:
    """Jitter a mask's boundary: randomly grow into the outer ring and eat into the inner ring."""
    from .imgproc import dilate

    m = np.asarray(mask, dtype=bool)
    outer = dilate(m, 3) & ~m
    inner = m & dilate(~m, 3)
    grow = outer & (rng.random(m.shape) < flip_prob)
    shrink = inner & (rng.random(m.shape) < flip_prob)
    return (m | grow) & ~shrink


# ------------------------------------------------------------------- sequences

def _subject_frames(template, config, subject_idx, n_frames, specs, seed, background):
    rng = np.random.default_rng([seed, subject_idx])
    K, B = template.num_joints, template.num_betas
    beta = np.clip(rng.normal(size=B), -2.0, 2.0)
    camera = Camera(rng.uniform(0.8, 0.92), rng.uniform(-0.08, 0.08), rng.uniform(-0.12, -0.02))
    amp = np.asarray(_MOTION_AMPLITUDE if K == 16 else [0.3] * K)[:, None] * rng.uniform(0.5, 1.0, size=(K, 3))
    freq = rng.uniform(0.05, 0.5, size=(K, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(K, 3))
    subject_id = f"subject{subject_idx}"
    frames = []
    for i in range(n_frames):
        t = i / FPS
        theta = amp * np.sin(2 * np.pi * freq * t + phase)
        gt = build_estimate(template, theta, beta, camera, subject_id, round(t, 10))
        gt_mask = rasterize_mesh(gt.mesh, camera, config.width, config.height)
        image = render_scene(gt.mesh, camera, config, background)
        spec_idx = int(rng.integers(len(specs)))
        spec = specs[spec_idx]
        frame_seed = int(rng.integers(2 ** 63))
        est, magnitude = corrupt_estimate(gt, spec, frame_seed, template)
        pseudo = perturb_mask(gt_mask, rng)
        frames.append(FrameSample(
            frame_id=f"s{subject_idx:02d}_f{i:04d}",
            estimate=est,
            image=image,
            gt_mesh=gt.mesh,
            gt_joints=gt.joints,
            gt_mask=gt_mask,
            pseudo_masks=(pseudo,),
            corruption=magnitude,
            corruption_level=float(spec.epsilon_pose),
        ))
    return frames


def generate_sequences(template: SkeletonTemplate | None, config: SceneConfig, n_subjects: int,
                       frames_per_subject: int, spec: CorruptionSpec | Sequence[CorruptionSpec],
                       seed: int = 0, threads: int = 1) -> list[FrameSample]:
    """Generate ``n_subjects`` contiguous sequences of ``frames_per_subject`` frames.

    ``spec`` may be a list of corruption specs; each frame then draws one of them
    uniformly and records its ``epsilon_pose`` as ``corruption_level``.
    """
    if n_subjects <= 0 or frames_per_subject <= 0:
        raise ValueError("subject and frame counts must be positive")
    template = template or default_template()
    specs = [spec] if isinstance(spec, CorruptionSpec) else list(spec)
    if not specs:
        raise ValueError("need at least one corruption spec")
    background = clutter_background(config)

    def one(idx):
        return _subject_frames(template, config, idx, frames_per_subject, specs, seed, background)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_subject = list(pool.map(one, range(n_subjects)))
    else:
        per_subject = [one(i) for i in range(n_subjects)]
    return [f for frames in per_subject for f in frames]


def mixed_specs(levels: Sequence[float], shape_ratio: float = 1.0, camera_ratio: float = 0.1,
                probability: float = 1.0) -> list[CorruptionSpec]:
    """One spec per pose-noise level, with shape/camera noise proportional to it."""
    return [CorruptionSpec(e, e * shape_ratio, e * camera_ratio, probability) for e in levels]

"""Data model and dataset I/O.

Images are 2D ``uint8`` arrays (rows = y, cols = x) and masks are 2D ``bool``
arrays of the same layout.  Joint sets and pose parameters are ``(K, 3)``
float arrays, shape parameters a ``(B,)`` array.

A dataset is a JSON-lines file with one frame per line.  Images and masks are
binary PGM files referenced by paths relative to the JSONL file.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NUM_JOINTS = 16
NUM_BETAS = 10


class DatasetError(ValueError):
    """Malformed dataset file or record."""


def _freeze(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class _ArrayEq:
    # dataclass(eq=True) compares arrays elementwise and then fails on bool()
    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None:
                    return False
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif isinstance(a, (list, tuple)):
                if len(a) != len(b) or any(
                    not np.array_equal(x, y) if isinstance(x, np.ndarray) else x != y
                    for x, y in zip(a, b)
                ):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class Camera:
    """Weak-perspective camera: scale and normalized image-plane translation."""

    scale: float
    tx: float = 0.0
    ty: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.scale, self.tx, self.ty], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Mesh(_ArrayEq):
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(self.vertices, np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", _freeze(self.faces, np.int64).reshape(-1, 3))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True, eq=False)
class PoseEstimate(_ArrayEq):
    """One network output for one person in one frame."""

    subject_id: str
    timestamp: float
    theta: np.ndarray
    beta: np.ndarray
    camera: Camera
    mesh: Mesh
    joints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _freeze(self.theta, np.float64).reshape(-1, 3))
        object.__setattr__(self, "beta", _freeze(self.beta, np.float64).reshape(-1))
        object.__setattr__(self, "joints", _freeze(self.joints, np.float64).reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class FrameSample(_ArrayEq):
    """A pose estimate bundled with its input image and optional ground truth."""

    frame_id: str
    estimate: PoseEstimate
    image: np.ndarray
    gt_mesh: Mesh | None = None
    gt_joints: np.ndarray | None = None
    gt_mask: np.ndarray | None = None
    pseudo_masks: tuple = field(default_factory=tuple)
    corruption: float | None = None
    corruption_level: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "image", _freeze(self.image, np.uint8))
        if self.gt_joints is not None:
            object.__setattr__(self, "gt_joints", _freeze(self.gt_joints, np.float64).reshape(-1, 3))
        if self.gt_mask is not None:
            object.__setattr__(self, "gt_mask", _freeze(self.gt_mask, bool))
        object.__setattr__(self, "pseudo_masks", tuple(_freeze(m, bool) for m in self.pseudo_masks))

    @property
    def subject_id(self) -> str:
        return self.estimate.subject_id

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_mesh is not None and self.gt_joints is not None and self.gt_mask is not None


# --------------------------------------------------------------------------- PGM

def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype == bool:
        image = image.astype(np.uint8) * 255
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DatasetError(f"{path}: maxval {maxval} unsupported (need 255)")
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise DatasetError(f"{path}: expected {w * h} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 127


# ----------------------------------------------------------------------- validation

def validate_sample(sample: FrameSample, regressor: np.ndarray | None = None) -> list[str]:
    """Return a list of invariant violations (empty when the sample is valid).

    When ``regressor`` (a K x V matrix) is given, or the mesh matches the default
    template topology, the estimate's joints are checked against ``R @ V``.
    """
    out = []
    est = sample.estimate
    cam = est.camera
    for name in ("scale", "tx", "ty"):
        if not math.isfinite(getattr(cam, name)):
            out.append(f"camera.{name} must be finite")
    if math.isfinite(cam.scale) and not cam.scale > 0:
        out.append("camera.scale must be > 0")

    theta = est.theta
    if not np.all(np.isfinite(theta)):
        out.append("theta must be finite")
    elif np.any(np.linalg.norm(theta, axis=1) > 2 * math.pi + 1e-12):
        out.append("theta rotation angles must be <= 2*pi")
    if not np.all(np.isfinite(est.beta)):
        out.append("beta must be finite")
    if not np.all(np.isfinite(est.joints)):
        out.append("joints must be finite")
    if len(est.joints) != len(theta):
        out.append(f"joints has {len(est.joints)} entries but theta has {len(theta)}")

    for label, mesh in (("", est.mesh), ("gt_", sample.gt_mesh)):
        if mesh is None:
            continue
        out.extend(_mesh_violations(mesh, label))

    if regressor is None and len(theta) and est.mesh.num_vertices:
        from .synth import default_template, regressor_matrix

        tpl = default_template(len(theta), len(est.beta))
        if tpl.num_vertices == est.mesh.num_vertices:
            regressor = regressor_matrix(tpl)
    if regressor is not None and not out:
        if regressor.shape != (len(est.joints), est.mesh.num_vertices):
            out.append(f"regressor shape {regressor.shape} does not match joints/vertices")
        elif not np.allclose(regressor @ est.mesh.vertices, est.joints, rtol=0, atol=1e-9):
            out.append("joints inconsistent with mesh via the joint regressor")

    if sample.gt_joints is not None and sample.gt_joints.shape != est.joints.shape:
        out.append(f"gt_joints shape {sample.gt_joints.shape} != joints shape {est.joints.shape}")
    if sample.image.ndim != 2 or sample.image.size == 0:
        out.append("image must be a non-empty 2D grid")
    h, w = sample.image.shape[:2]
    masks = [("gt_mask", sample.gt_mask)] + [(f"pseudo_masks[{i}]", m) for i, m in enumerate(sample.pseudo_masks)]
    for name, m in masks:
        if m is not None and m.shape != (h, w):
            out.append(f"{name} is {m.shape[1]}x{m.shape[0]} but image is {w}x{h}")
    if sample.corruption is not None and not sample.corruption >= 0:
        out.append("corruption must be >= 0")
    return out


def _mesh_violations(mesh: Mesh, label: str) -> list[str]:
    out = []
    nv = mesh.num_vertices
    if not np.all(np.isfinite(mesh.vertices)):
        out.append(f"{label}vertices must be finite")
    f = mesh.faces
    if len(f):
        if f.min() < 0 or f.max() >= nv:
            out.append(f"{label}faces index out of range [0, {nv})")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degenerate.any():
            out.append(f"{label}faces has {int(degenerate.sum())} degenerate index triples")
    return out


# --------------------------------------------------------------------------- JSONL

def _floats(a: np.ndarray):
    return np.asarray(a, dtype=np.float64).tolist()


def _sample_record(s: FrameSample, paths: dict) -> dict:
    est = s.estimate
    rec = {
        "frame_id": s.frame_id,
        "subject_id": est.subject_id,
        "timestamp": float(est.timestamp),
        "camera": {"s": float(est.camera.scale), "tx": float(est.camera.tx), "ty": float(est.camera.ty)},
        "theta": _floats(est.theta),
        "beta": _floats(est.beta),
        "vertices": _floats(est.mesh.vertices),
        "faces": est.mesh.faces.tolist(),
        "joints": _floats(est.joints),
        "image": paths["image"],
    }
    if s.gt_mask is not None:
        rec["gt_mask"] = paths["gt_mask"]
    if s.pseudo_masks:
        rec["pseudo_masks"] = paths["pseudo_masks"]
    if s.gt_joints is not None:
        rec["gt_joints"] = _floats(s.gt_joints)
    if s.gt_mesh is not None:
        rec["gt_vertices"] = _floats(s.gt_mesh.vertices)
    if s.corruption is not None:
        rec["corruption"] = float(s.corruption)
    if s.corruption_level is not None:
        rec["corruption_level"] = float(s.corruption_level)
    return rec


def save_dataset(samples: Sequence[FrameSample], path) -> None:
    """Write samples as JSONL plus PGM files under ``images/`` and ``masks/``."""
    path = Path(path)
    root = path.parent
    ids = [s.frame_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError("frame_id values must be unique")
    if samples:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        paths = {
            "image": f"images/{s.frame_id}.pgm",
            "gt_mask": f"masks/{s.frame_id}_gt.pgm",
            "pseudo_masks": [f"masks/{s.frame_id}_pm{i}.pgm" for i in range(len(s.pseudo_masks))],
        }
        write_pgm(root / paths["image"], s.image)
        if s.gt_mask is not None:
            write_pgm(root / paths["gt_mask"], s.gt_mask)
        for m, p in zip(s.pseudo_masks, paths["pseudo_masks"]):
            write_pgm(root / p, m)
        lines.append(json.dumps(_sample_record(s, paths), separators=(",", ":")))
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def _parse_record(rec: dict, root: Path) -> FrameSample:
    def need(key):
        if key not in rec:
            raise DatasetError(f"missing field {key!r}")
        return rec[key]

    try:
        cam = need("camera")
        camera = Camera(float(cam["s"]), float(cam["tx"]), float(cam["ty"]))
        vertices = np.asarray(need("vertices"), dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(need("faces"), dtype=np.int64).reshape(-1, 3)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"bad camera/mesh field: {exc}") from exc
    mesh = Mesh(vertices, faces)
    bad = _mesh_violations(mesh, "")
    if bad:
        raise DatasetError("; ".join(bad))
    estimate = PoseEstimate(
        subject_id=str(need("subject_id")),
        timestamp=float(need("timestamp")),
        theta=np.asarray(need("theta"), dtype=np.float64).reshape(-1, 3),
        beta=np.asarray(need("beta"), dtype=np.float64).reshape(-1),
        camera=camera,
        mesh=mesh,
        joints=np.asarray(need("joints"), dtype=np.float64).reshape(-1, 3),
    )

    def load(rel, reader):
        p = root / rel
        if not p.exists():
            raise DatasetError(f"referenced file not found: {rel}")
        return reader(p)

    image = load(need("image"), read_pgm)
    gt_mask = load(rec["gt_mask"], read_mask) if "gt_mask" in rec else None
    pseudo = tuple(load(p, read_mask) for p in rec.get("pseudo_masks", []))
    gt_mesh = Mesh(np.asarray(rec["gt_vertices"], dtype=np.float64), faces) if "gt_vertices" in rec else None
    gt_joints = np.asarray(rec["gt_joints"], dtype=np.float64) if "gt_joints" in rec else None
    sample = FrameSample(
        frame_id=str(need("frame_id")),
        estimate=estimate,
        image=image,
        gt_mesh=gt_mesh,
        gt_joints=gt_joints,
        gt_mask=gt_mask,
        pseudo_masks=pseudo,
        corruption=float(rec["corruption"]) if "corruption" in rec else None,
        corruption_level=float(rec["corruption_level"]) if "corruption_level" in rec else None,
    )
    problems = validate_sample(sample)
    if problems:
        raise DatasetError("; ".join(problems))
    return sample


def load_dataset(path) -> list[FrameSample]:
    """Load a JSONL dataset; ``path`` may be the file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: JSON parse error: {exc.msg}") from exc
            try:
                samples.append(_parse_record(rec, path.parent))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return samples


def split_dataset(samples: Sequence, train_frac: float = 0.5, val_frac: float = 0.1):
    """Contiguous, order-preserving train/val/test split (no shuffling)."""
    if not (0 <= train_frac and 0 <= val_frac and train_frac + val_frac <= 1):
        raise ValueError(f"invalid split fractions ({train_frac}, {val_frac})")
    n = len(samples)
    n_train = math.floor(train_frac * n)
    n_val = math.floor(val_frac * n)
    samples = list(samples)
    return samples[:n_train], samples[n_train:n_train + n_val], samples[n_train + n_val:]


def subjects_in_order(samples: Iterable[FrameSample]) -> list[str]:
    seen = {}
    for s in samples:
        seen.setdefault(s.subject_id, None)
    return list(seen)

"""Weak-perspective projection and silhouette rasterization of triangle meshes.

Pixel ``(x, y)`` covers the unit square with its center at ``(x + 0.5, y + 0.5)``;
origin is the top-left corner, +x right, +y down.  Coverage is decided by edge
functions with a top-left fill rule, so triangles sharing an edge never both
claim (or both miss) a pixel whose center lies exactly on it.
"""
from __future__ import annotations

import numpy as np

from .core import Camera, Mesh

# faces whose pixel bounding box fits in this many pixels per side are
# rasterized together in one vectorized batch
_BATCH_TILE = 32


def project_points(points, camera: Camera, width: int, height: int) -> np.ndarray:
    """Project ``(N, 3)`` points to ``(N, 2)`` pixel coordinates; z is dropped."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u = (camera.scale * (p[:, 0] + camera.tx) + 1.0) / 2.0 * width
    v = (camera.scale * (p[:, 1] + camera.ty) + 1.0) / 2.0 * height
    return np.stack([u, v], axis=1)


def _canonical(a, b):
    """Order each edge's endpoints lexicographically; returns (p, q, flipped)."""
    swap = (a[..., 0] > b[..., 0]) | ((a[..., 0] == b[..., 0]) & (a[..., 1] > b[..., 1]))
    p = np.where(swap[..., None], b, a)
    q = np.where(swap[..., None], a, b)
    return p, q, swap


def _edge(p, q, x, y):
    return (q[..., 0] - p[..., 0]) * (y - p[..., 1]) - (q[..., 1] - p[..., 1]) * (x - p[..., 0])


def _edge_setup(tri):
    """Per-face, per-edge data for the inside test.

    ``tri`` is ``(F, 3, 2)``.  Returns canonical endpoints ``P, Q`` (F, 3, 2),
    the interior sign (F, 3) and whether each edge is top-left (F, 3).
    """
    a = tri
    b = np.roll(tri, -1, axis=1)   # edge i runs vertex i -> i+1
    c = np.roll(tri, -2, axis=1)   # opposite vertex
    P, Q, _ = _canonical(a, b)
    ec = _edge(P, Q, c[..., 0], c[..., 1])
    dy = Q[..., 1] - P[..., 1]
    top = (dy == 0) & (c[..., 1] > P[..., 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        left = (dy != 0) & (ec / np.where(dy == 0, 1.0, dy) < 0)
    return P, Q, np.sign(ec), top | left


def _inside(P, Q, sign, topleft, x, y):
    """Inside test of faces (F, 3, 2) against sample grids broadcastable to (F, h, w)."""
    ok = None
    for i in range(3):
        p = P[:, i, :, None, None]
        q = Q[:, i, :, None, None]
        e = ((q[:, 0] - p[:, 0]) * (y - p[:, 1]) - (q[:, 1] - p[:, 1]) * (x - p[:, 0]))
        e = e * sign[:, i, None, None]
        t = (e > 0) | ((e == 0) & topleft[:, i, None, None])
        ok = t if ok is None else ok & t
    return ok


def triangle_coverage(tri2d: np.ndarray, width: int, height: int):
    """Covered pixels of every projected triangle.

    Returns ``(face_index, ys, xs)`` integer arrays listing each (face, pixel)
    pair whose pixel center lies inside the face.  Zero-area and off-screen
    triangles contribute nothing.
    """
    tri = np.asarray(tri2d, dtype=np.float64).reshape(-1, 3, 2)
    empty = (np.zeros(0, np.int64),) * 3
    if len(tri) == 0:
        return empty
    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    x0 = np.maximum(np.ceil(lo[:, 0] - 0.5), 0).astype(np.int64)
    y0 = np.maximum(np.ceil(lo[:, 1] - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(hi[:, 0] - 0.5), width - 1).astype(np.int64)
    y1 = np.minimum(np.floor(hi[:, 1] - 0.5), height - 1).astype(np.int64)
    twice_area = (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1]) - (
        tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0])
    live = (x1 >= x0) & (y1 >= y0) & (twice_area != 0) & np.all(np.isfinite(tri), axis=(1, 2))
    if not live.any():
        return empty
    idx = np.nonzero(live)[0]
    bw = x1[idx] - x0[idx] + 1
    bh = y1[idx] - y0[idx] + 1
    small = (bw <= _BATCH_TILE) & (bh <= _BATCH_TILE)

    P, Q, sign, topleft = _edge_setup(tri[idx])
    out_f, out_y, out_x = [], [], []

    # bucket the small faces by power-of-two tile so thin slivers don't pay for big ones
    side = np.maximum(bw, bh)
    bucket = np.where(side <= 4, 4, np.where(side <= 8, 8, np.where(side <= 16, 16, _BATCH_TILE)))
    for tile in (4, 8, 16, _BATCH_TILE):
        s_idx = np.nonzero(small & (bucket == tile))[0]
        if not len(s_idx):
            continue
        fi = idx[s_idx]
        off = np.arange(tile)
        xs = x0[fi][:, None, None] + off[None, None, :]
        ys = y0[fi][:, None, None] + off[None, :, None]
        ins = _inside(P[s_idx], Q[s_idx], sign[s_idx], topleft[s_idx], xs + 0.5, ys + 0.5)
        ins &= (xs <= x1[fi][:, None, None]) & (ys <= y1[fi][:, None, None])
        f, r, c = np.nonzero(ins)
        out_f.append(fi[f])
        out_y.append(y0[fi][f] + r)
        out_x.append(x0[fi][f] + c)

    for j in np.nonzero(~small)[0]:
        fi = idx[j]
        xs = np.arange(x0[fi], x1[fi] + 1)[None, None, :]
        ys = np.arange(y0[fi], y1[fi] + 1)[None, :, None]
        ins = _inside(P[j:j + 1], Q[j:j + 1], sign[j:j + 1], topleft[j:j + 1], xs + 0.5, ys + 0.5)
        r, c = np.nonzero(ins[0])
        out_f.append(np.full(len(r), fi, dtype=np.int64))
        out_y.append(y0[fi] + r)
        out_x.append(x0[fi] + c)

    return np.concatenate(out_f), np.concatenate(out_y), np.concatenate(out_x)


def rasterize_triangles(tri2d, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    _, ys, xs = triangle_coverage(tri2d, width, height)
    mask[ys, xs] = True
    return mask


def rasterize_mesh(mesh: Mesh, camera: Camera, width: int, height: int) -> np.ndarray:
    """Binary silhouette of ``mesh`` seen through ``camera`` (no depth test)."""
    if len(mesh.faces) == 0:
        return np.zeros((height, width), dtype=bool)
    uv = project_points(mesh.vertices, camera, width, height)
    return rasterize_triangles(uv[mesh.faces], width, height)


def mask_contour(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour that is background or off-grid."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior

"""Z-buffer depth rasterization of part meshes, plus a brute-force ray-cast oracle.

Sampling is at pixel centers ``(i + 0.5, j + 0.5)`` with the top-left fill
rule. Depth is interpolated perspective-correctly (linear in 1/z) and
triangles are clipped against a near plane; nothing is back-face culled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .assets import ArticulatedMesh
from .geometry import CameraIntrinsics, PartMotion, RigidPose, articulate_points

NEAR_PLANE = 1e-4
INVALID_DEPTH = 0.0


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray       # (H, W) camera-space z, INVALID_DEPTH where not valid
    valid: np.ndarray       # (H, W) bool
    triangle: np.ndarray    # (H, W) index of the nearest triangle, -1 where not valid

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(np.full((height, width), INVALID_DEPTH), np.zeros((height, width), bool),
                   np.full((height, width), -1, np.int64))

    def masked(self, mask: np.ndarray) -> "DepthMap":
        keep = self.valid & mask
        return DepthMap(np.where(keep, self.depth, INVALID_DEPTH), keep,
                        np.where(keep, self.triangle, -1))


@numba.njit(cache=True, inline="always")
def _is_top_left(ax, ay, bx, by):
    dy = by - ay
    return dy < 0.0 or (dy == 0.0 and bx - ax > 0.0)


@numba.njit(cache=True)
def _fill_triangle(v, tri_id, fx, fy, cx, cy, zbuf, idbuf):
    h, w = zbuf.shape
    x0 = fx * v[0, 0] / v[0, 2] + cx
    y0 = fy * v[0, 1] / v[0, 2] + cy
    x1 = fx * v[1, 0] / v[1, 2] + cx
    y1 = fy * v[1, 1] / v[1, 2] + cy
    x2 = fx * v[2, 0] / v[2, 2] + cx
    y2 = fy * v[2, 1] / v[2, 2] + cy
    iz0 = 1.0 / v[0, 2]
    iz1 = 1.0 / v[1, 2]
    iz2 = 1.0 / v[2, 2]
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area == 0.0 or not np.isfinite(area):
        return
    if area < 0.0:
        x1, y1, x2, y2 = x2, y2, x1, y1
        iz1, iz2 = iz2, iz1
        area = -area
    i_lo = max(0, int(np.ceil(min(x0, x1, x2) - 0.5)))
    i_hi = min(w - 1, int(np.floor(max(x0, x1, x2) - 0.5)))
    j_lo = max(0, int(np.ceil(min(y0, y1, y2) - 0.5)))
    j_hi = min(h - 1, int(np.floor(max(y0, y1, y2) - 0.5)))
    tl0 = _is_top_left(x1, y1, x2, y2)
    tl1 = _is_top_left(x2, y2, x0, y0)
    tl2 = _is_top_left(x0, y0, x1, y1)
    for j in range(j_lo, j_hi + 1):
        py = j + 0.5
        for i in range(i_lo, i_hi + 1):
            px = i + 0.5
            w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            if w0 < 0.0 or (w0 == 0.0 and not tl0):
                continue
            w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
            if w1 < 0.0 or (w1 == 0.0 and not tl1):
                continue
            w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
            if w2 < 0.0 or (w2 == 0.0 and not tl2):
                continue
            iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area
            z = 1.0 / iz
            if z < zbuf[j, i]:
                zbuf[j, i] = z
                idbuf[j, i] = tri_id


@numba.njit(cache=True)
def _raster_kernel(corners, tri_ids, fx, fy, cx, cy, near, zbuf, idbuf):
    poly = np.empty((4, 3))
    sub = np.empty((3, 3))
    for t in range(corners.shape[0]):
        # Sutherland-Hodgman against z >= near; a triangle yields at most 4 vertices
        n = 0
        for a in range(3):
            b = (a + 1) % 3
            za = corners[t, a, 2]
            zb = corners[t, b, 2]
            if za >= near:
                poly[n] = corners[t, a]
                n += 1
            if (za >= near) != (zb >= near):
                s = (near - za) / (zb - za)
                poly[n] = corners[t, a] + s * (corners[t, b] - corners[t, a])
                poly[n, 2] = near
                n += 1
        for f in range(1, n - 1):
            sub[0] = poly[0]
            sub[1] = poly[f]
            sub[2] = poly[f + 1]
            _fill_triangle(sub, tri_ids[t], fx, fy, cx, cy, zbuf, idbuf)


def camera_corners(mesh: ArticulatedMesh, pose: RigidPose,
                   motions: Optional[dict] = None) -> np.ndarray:
    """Camera-space triangle soup (T, 3, 3) with per-part hinge motions applied in model space."""
    corners = mesh.corners()
    if motions:
        corners = corners.copy()
        for part_id, motion in motions.items():
            sel = mesh.triangle_part == part_id
            if sel.any():
                corners[sel] = articulate_points(corners[sel], motion)
    return pose.apply(corners)


def _selected(mesh: ArticulatedMesh, part_filter) -> np.ndarray:
    if part_filter is None:
        return np.arange(mesh.n_triangles)
    keep = set(part_filter)
    return np.flatnonzero([lab in keep for lab in mesh.triangle_part])


def rasterize_depth(mesh: ArticulatedMesh, part_filter, pose: RigidPose, k: CameraIntrinsics,
                    width: int, height: int, motions: Optional[dict] = None) -> DepthMap:
    """Nearest camera-space depth per pixel over the triangles whose part is in `part_filter`.

    ``part_filter=None`` renders every triangle. ``motions`` maps part ids to
    a `PartMotion` applied before the rigid pose.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    idx = _selected(mesh, part_filter)
    if idx.size == 0:
        return DepthMap.empty(width, height)
    corners = np.ascontiguousarray(camera_corners(mesh, pose, motions)[idx])
    zbuf = np.full((height, width), np.inf)
    idbuf = np.full((height, width), -1, np.int64)
    _raster_kernel(corners, idx.astype(np.int64), float(k.fx), float(k.fy), float(k.cx),
                   float(k.cy), NEAR_PLANE, zbuf, idbuf)
    valid = idbuf >= 0
    return DepthMap(np.where(valid, zbuf, INVALID_DEPTH), valid, idbuf)


def silhouette_mask(d: DepthMap) -> np.ndarray:
    return d.valid.copy()


def triangle_facing(mesh: ArticulatedMesh, pose: RigidPose,
                    motions: Optional[dict] = None) -> np.ndarray:
    """True for triangles whose wound normal points toward the camera."""
    c = camera_corners(mesh, pose, motions)
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    return np.einsum("ij,ij->i", n, c.mean(axis=1)) < 0.0


def _pixel_rays(pixels, k: CameraIntrinsics) -> np.ndarray:
    p = np.asarray(pixels, dtype=np.float64).reshape(-1, 2) + 0.5
    return np.stack([(p[:, 0] - k.cx) / k.fx, (p[:, 1] - k.cy) / k.fy, np.ones(len(p))], axis=1)


def raycast_depth_many(mesh: ArticulatedMesh, part_filter, pose: RigidPose, k: CameraIntrinsics,
                       pixels, motions: Optional[dict] = None, chunk: int = 4096) -> np.ndarray:
    """Exhaustive ray/triangle intersection through pixel centers; NaN where nothing is hit."""
    rays = _pixel_rays(pixels, k)
    out = np.full(len(rays), np.nan)
    idx = _selected(mesh, part_filter)
    if idx.size == 0:
        return out
    c = camera_corners(mesh, pose, motions)[idx]
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    tv = -c[:, 0]                                   # ray origin is the camera center
    qv = np.cross(tv, e1)
    qe2 = np.einsum("tk,tk->t", qv, e2)
    for s in range(0, len(rays), chunk):
        d = rays[s:s + chunk]
        pv = np.cross(d[:, None, :], e2[None])
        det = np.einsum("rtk,tk->rt", pv, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = np.einsum("rtk,tk->rt", pv, tv) * inv
            v = np.einsum("tk,rk->rt", qv, d) * inv
            t = qe2[None] * inv
        hit = (det != 0) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= NEAR_PLANE)
        z = np.where(hit, t, np.inf).min(axis=1)
        out[s:s + chunk] = np.where(np.isfinite(z), z, np.nan)
    return out


def raycast_depth_oracle(mesh: ArticulatedMesh, part_filter, pose: RigidPose, k: CameraIntrinsics,
                         pixel, motions: Optional[dict] = None) -> Optional[float]:
    z = raycast_depth_many(mesh, part_filter, pose, k, [pixel], motions)[0]
    return None if np.isnan(z) else float(z)

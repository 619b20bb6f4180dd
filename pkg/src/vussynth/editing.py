"""Pixel-level synthesis of an articulated part.

Images are float64 arrays of shape (H, W, 3) holding linear values in [0, 1];
masks are (H, W) bool arrays. Pixel coordinates handed around as arrays are
``(u, v)`` = (column, row).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraIntrinsics, PartMotion, RigidPose, forward_map_pixels
from .raster import DepthMap, camera_corners, rasterize_depth, triangle_facing

log = logging.getLogger(__name__)

DEFAULT_GRAY = 128 / 255
DEFAULT_ALPHA = 0.7
DEFAULT_NEIGHBORS = 8
DEFAULT_SIGMA_S = 3.0
DEFAULT_SIGMA_R = 0.1


class UnfillableRegionError(RuntimeError):
    pass


def check_same_size(*arrays):
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


@dataclass(frozen=True, eq=False)
class SplatBuffer:
    color: np.ndarray   # (H, W, 3)
    depth: np.ndarray   # (H, W), articulated camera-space z where valid, 0 elsewhere
    valid: np.ndarray   # (H, W) bool

    @classmethod
    def empty(cls, width: int, height: int) -> "SplatBuffer":
        return cls(np.zeros((height, width, 3)), np.zeros((height, width)),
                   np.zeros((height, width), bool))

    def restricted(self, mask: np.ndarray) -> "SplatBuffer":
        keep = self.valid & mask
        return SplatBuffer(np.where(keep[..., None], self.color, 0.0),
                           np.where(keep, self.depth, 0.0), keep)


def warp_part(src: np.ndarray, part_depth: DepthMap, k: CameraIntrinsics, pose: RigidPose,
              motion: PartMotion, rounding: str = "floor") -> SplatBuffer:
    """Forward-splat every valid pixel of `part_depth` to where the moved part puts it.

    Collisions keep the splat with the smallest articulated depth; ties go to
    the lower source index, so the result does not depend on visiting order.
    """
    check_same_size(src, part_depth.depth)
    h, w = part_depth.depth.shape
    buf = SplatBuffer.empty(w, h)
    vs, us = np.nonzero(part_depth.valid)
    if us.size == 0:
        return buf
    centers = np.stack([us + 0.5, vs + 0.5], axis=1)
    target, z, ok = forward_map_pixels(centers, part_depth.depth[vs, us], k, pose, motion, rounding)
    tu, tv = target[:, 0], target[:, 1]
    ok &= (tu >= 0) & (tu < w) & (tv >= 0) & (tv < h)
    src_idx = np.flatnonzero(ok)
    if src_idx.size == 0:
        return buf
    lin = tv[src_idx] * w + tu[src_idx]
    order = np.lexsort((src_idx, z[src_idx], lin))
    lin_sorted = lin[order]
    first = np.ones(len(order), bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    win = src_idx[order[first]]
    ty, tx = tv[win], tu[win]
    buf.color[ty, tx] = src[vs[win], us[win]]
    buf.depth[ty, tx] = z[win]
    buf.valid[ty, tx] = True
    return buf


def find_holes(new_silhouette: np.ndarray, buf: SplatBuffer) -> np.ndarray:
    """(N, 2) array of (u, v) silhouette pixels that received no splat, in row-major order."""
    check_same_size(new_silhouette, buf.valid)
    vs, us = np.nonzero(new_silhouette & ~buf.valid)
    return np.stack([us, vs], axis=1).astype(np.int64)


def _nearest_valid(tree, pts, holes, n_keep):
    """Indices (H, n_keep) of the nearest valid pixels, ordered by (squared distance, index)."""
    n_valid = len(pts)
    q = min(n_valid, n_keep + 8)
    _, cand = tree.query(holes, k=q)
    cand = np.asarray(cand, dtype=np.int64).reshape(len(holes), q)
    diff = pts[cand] - holes[:, None, :]
    sq = (diff * diff).sum(axis=2)
    key = sq * (n_valid + 1) + cand
    order = np.argsort(key, axis=1, kind="stable")
    cand = np.take_along_axis(cand, order, axis=1)
    sq = np.take_along_axis(sq, order, axis=1)
    if q < n_valid:
        # rows whose tie group at the cut may extend past the returned candidates
        redo = np.flatnonzero(sq[:, q - 1] <= sq[:, n_keep - 1])
        for r in redo:
            radius = np.sqrt(float(sq[r, n_keep - 1])) + 1e-9
            ids = np.asarray(tree.query_ball_point(holes[r], radius), dtype=np.int64)
            d = pts[ids] - holes[r]
            s = (d * d).sum(axis=1)
            ids = ids[np.argsort(s * (n_valid + 1) + ids, kind="stable")][:n_keep]
            cand[r, :n_keep] = ids
    return cand[:, :n_keep]


def blend_weights(sq_dist: np.ndarray, sq_dmax: np.ndarray, variant: str = "squared") -> np.ndarray:
    """Normalized hole-fill weights (1 - dist/d_max)^2 for (H, K) neighbor distances.

    ``variant="squared"`` measures dist and d_max as squared pixel distances,
    ``"plain"`` as Euclidean distances. Rows whose weights all vanish (every
    neighbor tied with d_max) fall back to uniform weights.
    """
    sq_dmax = np.asarray(sq_dmax, dtype=np.float64)[:, None]
    if variant not in ("squared", "plain"):
        raise ValueError(f"unknown hole-fill variant {variant!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        if variant == "squared":
            w = (1.0 - sq_dist / sq_dmax) ** 2
        else:
            w = (1.0 - np.sqrt(sq_dist) / np.sqrt(sq_dmax)) ** 2
        w = np.where(np.isfinite(w), w, 0.0)
        total = w.sum(axis=1, keepdims=True)
        uniform = np.full_like(w, 1.0 / w.shape[1])
        return np.where(total > 0, w / total, uniform)


def fill_holes(buf: SplatBuffer, holes: np.ndarray, neighbor_count: int = DEFAULT_NEIGHBORS,
               variant: str = "squared") -> SplatBuffer:
    """Blend each hole from its K nearest originally-valid pixels.

    d_max is the distance to the (K+1)-th nearest valid pixel. Holes never
    feed other holes, so the result is independent of fill order.
    """
    holes = np.asarray(holes, dtype=np.int64).reshape(-1, 2)
    if len(holes) == 0:
        return buf
    vs, us = np.nonzero(buf.valid)
    n_valid = us.size
    if n_valid == 0:
        raise UnfillableRegionError(f"{len(holes)} holes but no valid pixel to fill from")
    if buf.valid[holes[:, 1], holes[:, 0]].any():
        raise ValueError("holes must not overlap valid pixels")
    kk = int(neighbor_count)
    if n_valid < kk + 1:
        kk = max(1, n_valid - 1)
        log.warning("only %d valid pixels; hole fill uses K=%d", n_valid, kk)
    pts = np.stack([us, vs], axis=1)
    colors = buf.color[vs, us]
    depths = buf.depth[vs, us]
    if n_valid == 1:
        idx = np.zeros((len(holes), 1), np.int64)
        w = np.ones((len(holes), 1))
    else:
        idx = _nearest_valid(cKDTree(pts), pts, holes, kk + 1)
        d = (pts[idx] - holes[:, None, :]).astype(np.float64)
        sq = (d * d).sum(axis=2)
        w = blend_weights(sq[:, :kk], sq[:, kk], variant)
        idx = idx[:, :kk]
    color = buf.color.copy()
    depth = buf.depth.copy()
    valid = buf.valid.copy()
    hu, hv = holes[:, 0], holes[:, 1]
    color[hv, hu] = np.einsum("hk,hkc->hc", w, colors[idx])
    depth[hv, hu] = (w * depths[idx]).sum(axis=1)
    valid[hv, hu] = True
    return SplatBuffer(color, depth, valid)


@numba.njit(cache=True)
def _bilateral_kernel(img, rows, cols, radius, inv2ss, inv2sr, out):
    h, w, nc = img.shape
    acc = np.empty(nc)
    lo = np.empty(nc)
    hi = np.empty(nc)
    for n in range(rows.size):
        j = rows[n]
        i = cols[n]
        wsum = 0.0
        for c in range(nc):
            acc[c] = 0.0
            lo[c] = img[j, i, c]
            hi[c] = img[j, i, c]
        for dj in range(-radius, radius + 1):
            jj = j + dj
            if jj < 0 or jj >= h:
                continue
            for di in range(-radius, radius + 1):
                ii = i + di
                if ii < 0 or ii >= w:
                    continue
                dr = 0.0
                for c in range(nc):
                    t = img[jj, ii, c] - img[j, i, c]
                    dr += t * t
                wt = np.exp(-(di * di + dj * dj) * inv2ss - dr * inv2sr)
                wsum += wt
                for c in range(nc):
                    v = img[jj, ii, c]
                    acc[c] += wt * (v - img[j, i, c])
                    if v < lo[c]:
                        lo[c] = v
                    if v > hi[c]:
                        hi[c] = v
        for c in range(nc):
            # offset form keeps constant windows exact; clamp absorbs rounding
            v = img[j, i, c] + acc[c] / wsum
            out[j, i, c] = min(max(v, lo[c]), hi[c])


def bilateral_smooth(img: np.ndarray, region: np.ndarray, sigma_s: float = DEFAULT_SIGMA_S,
                     sigma_r: float = DEFAULT_SIGMA_R) -> np.ndarray:
    """Bilateral filter evaluated only at `region` pixels.

    Weights are exp(-|p-q|^2 / 2 sigma_s^2) * exp(-|I_p-I_q|^2 / 2 sigma_r^2)
    over a square window of radius ceil(3 sigma_s); neighbors outside the
    region still contribute.
    """
    if sigma_s <= 0 or sigma_r <= 0:
        raise ValueError("sigma_s and sigma_r must be positive")
    check_same_size(img, region)
    img = np.ascontiguousarray(img, dtype=np.float64)
    out = img.copy()
    rows, cols = np.nonzero(region)
    if rows.size:
        _bilateral_kernel(img, rows.astype(np.int64), cols.astype(np.int64),
                          int(np.ceil(3.0 * sigma_s)), 1.0 / (2.0 * sigma_s ** 2),
                          1.0 / (2.0 * sigma_r ** 2), out)
    return out


def fill_interior(img: np.ndarray, vacated_region: np.ndarray, gray: float = DEFAULT_GRAY) -> np.ndarray:
    check_same_size(img, vacated_region)
    out = img.copy()
    out[vacated_region] = gray
    return out


def recolor_semantic(img: np.ndarray, region: np.ndarray, color, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    check_same_size(img, region)
    out = img.copy()
    out[region] = (1.0 - alpha) * img[region] + alpha * np.asarray(color, dtype=np.float64)
    return out


def composite(src: np.ndarray, layers) -> np.ndarray:
    """Paint (layer, mask) pairs over `src` in order."""
    out = src.copy()
    for layer, mask in layers:
        check_same_size(src, layer, mask)
        out[mask] = layer[mask]
    return out


class EnvironmentMap:
    """Equirectangular radiance map expressed in camera space.

    Row v maps to polar angle theta = pi (v + 0.5) / H measured from "up"
    (camera -y); column u maps to azimuth phi = 2 pi (u + 0.5) / W with phi = 0
    looking along +z and phi = pi/2 along +x.
    """

    max_irradiance_height = 64

    def __init__(self, radiance):
        r = np.asarray(radiance, dtype=np.float64)
        if r.ndim == 2:
            r = np.repeat(r[..., None], 3, axis=2)
        if r.ndim != 3 or r.shape[2] != 3:
            raise ValueError("environment map must be (H, W) or (H, W, 3)")
        if not np.all(np.isfinite(r)) or r.min() < 0:
            raise ValueError("environment radiance must be finite and non-negative")
        self.radiance = r

    @classmethod
    def constant(cls, value=1.0, height: int = 32, width: int = 64) -> "EnvironmentMap":
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy())

    @property
    def shape(self):
        return self.radiance.shape[:2]

    @staticmethod
    def texel_directions(height: int, width: int) -> np.ndarray:
        theta = np.pi * (np.arange(height) + 0.5) / height
        phi = 2 * np.pi * (np.arange(width) + 0.5) / width
        th, ph = np.meshgrid(theta, phi, indexing="ij")
        return np.stack([np.sin(th) * np.sin(ph), -np.cos(th), np.sin(th) * np.cos(ph)], axis=-1)

    @staticmethod
    def texel_solid_angles(height: int, width: int) -> np.ndarray:
        edges = np.cos(np.pi * np.arange(height + 1) / height)
        band = (edges[:-1] - edges[1:]) * (2 * np.pi / width)
        return np.repeat(band[:, None], width, axis=1)

    def lookup(self, directions) -> np.ndarray:
        """Nearest-texel radiance for unit directions (..., 3)."""
        d = np.asarray(directions, dtype=np.float64)
        h, w = self.shape
        theta = np.arccos(np.clip(-d[..., 1], -1.0, 1.0))
        phi = np.mod(np.arctan2(d[..., 0], d[..., 2]), 2 * np.pi)
        v = np.clip((theta / np.pi * h).astype(np.int64), 0, h - 1)
        u = np.clip((phi / (2 * np.pi) * w).astype(np.int64), 0, w - 1)
        return self.radiance[v, u]

    @cached_property
    def _quadrature(self):
        h, w = self.shape
        hs = min(h, self.max_irradiance_height)
        ws = min(w, 2 * hs)
        rad = self.radiance
        if (hs, ws) != (h, w):
            # solid-angle weighted block average onto a coarser grid
            omega = self.texel_solid_angles(h, w)
            rows = np.linspace(0, h, hs + 1).astype(np.int64)[:-1]
            cols = np.linspace(0, w, ws + 1).astype(np.int64)[:-1]
            num = np.add.reduceat(np.add.reduceat(rad * omega[..., None], rows, 0), cols, 1)
            den = np.add.reduceat(np.add.reduceat(omega, rows, 0), cols, 1)
            rad = num / den[..., None]
            # texel directions of the coarse grid follow the block extents
            th = np.pi * (rows + np.r_[rows[1:], h]) / 2 / h
            ph = 2 * np.pi * (cols + np.r_[cols[1:], w]) / 2 / w
            t, p = np.meshgrid(th, ph, indexing="ij")
            dirs = np.stack([np.sin(t) * np.sin(p), -np.cos(t), np.sin(t) * np.cos(p)], axis=-1)
            omega = den
        else:
            dirs = self.texel_directions(h, w)
            omega = self.texel_solid_angles(h, w)
        return dirs.reshape(-1, 3), omega.reshape(-1), rad.reshape(-1, 3)

    def irradiance(self, normals) -> np.ndarray:
        """Diffuse irradiance E(n) = sum L(w) max(0, n.w) dw, shape (N, 3) for unit normals (N, 3).

        The discrete cosine lobe is rescaled to its analytic integral pi, so a
        constant map gives exactly pi L and E never exceeds pi max(L).
        """
        n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        dirs, omega, rad = self._quadrature
        lobe = np.clip(dirs @ n.T, 0.0, None) * omega[:, None]        # (texels, N)
        total = lobe.sum(axis=0)
        scale = np.where(total > 0, np.pi / np.where(total > 0, total, 1.0), 0.0)
        return (lobe.T @ rad) * scale[:, None]


def shade_reverse_side(mesh, part_filter, motion: PartMotion, pose: RigidPose, k: CameraIntrinsics,
                       env: EnvironmentMap, albedo, width: int, height: int):
    """Diffuse-shaded layer and mask of the moved part's back faces.

    Back faces are triangles whose wound normal points away from the camera;
    they are lit with the flipped normal, color = albedo * E(n) / pi.
    """
    motions = {pid: motion for pid in part_filter}
    d = rasterize_depth(mesh, part_filter, pose, k, width, height, motions)
    layer = np.zeros((height, width, 3))
    if not d.valid.any():
        return layer, np.zeros((height, width), bool)
    front = triangle_facing(mesh, pose, motions)
    tri = d.triangle
    mask = d.valid & ~front[np.where(d.valid, tri, 0)]
    if not mask.any():
        return layer, mask
    used = np.unique(tri[mask])
    c = camera_corners(mesh, pose, motions)[used]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    n = -n / np.linalg.norm(n, axis=1, keepdims=True)
    shade = np.clip(np.asarray(albedo, dtype=np.float64) * env.irradiance(n) / np.pi, 0.0, 1.0)
    lut = np.zeros((mesh.n_triangles, 3))
    lut[used] = shade
    layer[mask] = lut[tri[mask]]
    return layer, mask

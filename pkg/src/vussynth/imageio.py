"""PNG / float-image reading and writing at the 8-bit / 16-bit boundary."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .editing import EnvironmentMap
from .raster import DepthMap


def to_float(img_u8: np.ndarray) -> np.ndarray:
    return np.asarray(img_u8, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return to_float(np.asarray(im.convert("RGB")))


def write_rgb(path, img: np.ndarray):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def write_mask(path, mask: np.ndarray):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def depth_to_u16(d: DepthMap) -> np.ndarray:
    """Linear map of valid depths over [0, max valid] onto 1..65535; invalid pixels are 0."""
    out = np.zeros(d.depth.shape, np.uint16)
    if d.valid.any():
        zmax = d.depth[d.valid].max()
        out[d.valid] = np.maximum(1, np.floor(d.depth[d.valid] / zmax * 65535 + 0.5)).astype(np.uint16)
    return out


def write_depth16(path, d: DepthMap):
    Image.fromarray(depth_to_u16(d)).save(path, format="PNG")


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a PFM file")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h, scale = int(m.group(2)), int(m.group(3)), float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=m.end())
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return np.flipud(arr).astype(np.float64)        # PFM rows run bottom to top


def write_pfm(path, img: np.ndarray):
    img = np.asarray(img, dtype="<f4")
    tag = b"PF" if img.ndim == 3 else b"Pf"
    h, w = img.shape[:2]
    Path(path).write_bytes(tag + b"\n%d %d\n-1.0\n" % (w, h) + np.flipud(img).tobytes())


def read_environment(path) -> EnvironmentMap:
    """PNG (values taken as linear), .npy or .pfm radiance."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        return EnvironmentMap(np.load(path))
    if suffix == ".pfm":
        return EnvironmentMap(read_pfm(path))
    return EnvironmentMap(read_rgb(path))

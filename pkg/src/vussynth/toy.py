"""A box-shaped toy car with a hinged door, trunk and lights, plus a scene writer.

Model frame: x points to the car's front, y down, z to the car's left.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .assets import ArticulatedMesh, VehicleInstance, VehicleModel, parse_part_spec, write_obj
from .geometry import CameraIntrinsics, RigidPose, back_project_pixels
from .raster import rasterize_depth

X0, X1 = -2.0, 2.0        # rear, front
Y0, Y1 = -1.4, 0.0        # roof, floor
Z0, Z1 = -0.9, 0.9        # right side, left side
DOOR_X = (0.0, 1.2)
DOOR_Y = (-1.1, -0.3)
TRUNK_X = -1.2

TOY_PARTS = {
    "parts": [
        {"id": "front_left_door", "kind": "movable", "axis_point": [DOOR_X[1], 0.0, Z1],
         "axis_dir": [0.0, 1.0, 0.0], "angle_range": [0.0, 1.22],
         "reverse_albedo": [0.55, 0.55, 0.6]},
        {"id": "trunk", "kind": "movable", "axis_point": [TRUNK_X, Y0, 0.0],
         "axis_dir": [0.0, 0.0, 1.0], "angle_range": [0.0, 0.96],
         "reverse_albedo": [0.5, 0.5, 0.5]},
        {"id": "taillight_left", "kind": "semantic"},
        {"id": "taillight_right", "kind": "semantic"},
        {"id": "headlight_left", "kind": "semantic"},
        {"id": "headlight_right", "kind": "semantic"},
    ]
}


class _Builder:
    def __init__(self):
        self.vertices = []
        self.triangles = []
        self.labels = []

    def quad(self, corners, label, outward):
        """Two triangles over 4 corners in cyclic order, wound so their normal follows `outward`."""
        base = len(self.vertices)
        self.vertices.extend(corners)
        c = np.asarray(corners, dtype=np.float64)
        n = np.cross(c[1] - c[0], c[2] - c[0])
        tris = [(0, 1, 2), (0, 2, 3)]
        if np.dot(n, outward) < 0:
            tris = [(0, 2, 1), (0, 3, 2)]
        for a, b, d in tris:
            self.triangles.append((base + a, base + b, base + d))
            self.labels.append(label)

    def rect(self, axis, value, lo_a, hi_a, lo_b, hi_b, label, outward):
        pts = []
        for a, b in ((lo_a, lo_b), (hi_a, lo_b), (hi_a, hi_b), (lo_a, hi_b)):
            p = [0.0, 0.0, 0.0]
            others = [i for i in range(3) if i != axis]
            p[axis], p[others[0]], p[others[1]] = value, a, b
            pts.append(p)
        out = np.zeros(3)
        out[axis] = outward
        self.quad(pts, label, out)


def toy_car_mesh() -> ArticulatedMesh:
    b = _Builder()
    # left side (z = Z1) with the door cut out; rect args on the other axes are (x, y)
    b.rect(2, Z1, X0, DOOR_X[0], Y0, Y1, "body", 1)
    b.rect(2, Z1, DOOR_X[1], X1, Y0, Y1, "body", 1)
    b.rect(2, Z1, DOOR_X[0], DOOR_X[1], Y0, DOOR_Y[0], "body", 1)
    b.rect(2, Z1, DOOR_X[0], DOOR_X[1], DOOR_Y[1], Y1, "body", 1)
    b.rect(2, Z1, DOOR_X[0], DOOR_X[1], DOOR_Y[0], DOOR_Y[1], "front_left_door", 1)
    b.rect(2, Z0, X0, X1, Y0, Y1, "body", -1)
    b.rect(0, X1, Y0, Y1, Z0, Z1, "body", 1)             # front, (y, z)
    b.rect(0, X0, Y0, Y1, Z0, Z1, "body", -1)            # rear
    b.rect(1, Y1, X0, X1, Z0, Z1, "body", 1)             # floor, (x, z)
    b.rect(1, Y0, TRUNK_X, X1, Z0, Z1, "body", -1)       # roof
    b.rect(1, Y0, X0, TRUNK_X, Z0, Z1, "trunk", -1)
    for label, z in (("taillight_left", 0.6), ("taillight_right", -0.6)):
        b.rect(0, X0 - 0.01, -0.9, -0.7, z - 0.15, z + 0.15, label, -1)
    for label, z in (("headlight_left", 0.6), ("headlight_right", -0.6)):
        b.rect(0, X1 + 0.01, -0.9, -0.7, z - 0.15, z + 0.15, label, 1)
    return ArticulatedMesh(np.array(b.vertices), np.array(b.triangles), np.array(b.labels, dtype=object))


def toy_car_model() -> VehicleModel:
    return VehicleModel("toycar", toy_car_mesh(), parse_part_spec(TOY_PARTS))


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> RigidPose:
    """Pose of a camera at model-space `eye` looking at `target`; `up` is model-space up."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return RigidPose(r, -r @ eye)


def toy_pose(yaw: float = 0.35, distance: float = 8.0, height: float = 2.6) -> RigidPose:
    """Camera on the car's left, swung toward the rear by `yaw`, looking slightly down."""
    eye = [-distance * np.sin(yaw), -height, distance * np.cos(yaw)]
    return look_at(eye, [0.0, -0.7, 0.0])


def toy_intrinsics(width: int = 640, height: int = 480, focal: float = 420.0) -> CameraIntrinsics:
    return CameraIntrinsics(focal, focal, width / 2.0, height / 2.0)


def paint_toy_image(model: VehicleModel, pose: RigidPose, k: CameraIntrinsics, width: int,
                    height: int, background=None, seed: int = 0) -> np.ndarray:
    """Photo stand-in: paints a model-space texture on the car over `background`."""
    rng = np.random.default_rng(seed)
    if background is None:
        yy, xx = np.mgrid[0:height, 0:width] / max(width, height)
        background = np.stack([0.35 + 0.3 * yy, 0.45 + 0.2 * xx, 0.55 + 0.1 * yy], axis=-1)
        background = np.clip(background + rng.normal(0, 0.02, background.shape), 0, 1)
    img = np.array(background, dtype=np.float64, copy=True)
    d = rasterize_depth(model.mesh, None, pose, k, width, height)
    vs, us = np.nonzero(d.valid)
    p = back_project_pixels(np.stack([us + 0.5, vs + 0.5], 1), d.depth[vs, us], k, pose)
    labels = model.mesh.triangle_part[d.triangle[vs, us]]
    stripes = 0.5 + 0.5 * np.sin(p[:, 0] * 9.0) * np.cos(p[:, 1] * 7.0 + p[:, 2] * 3.0)
    base = {"body": (0.15, 0.2, 0.6), "front_left_door": (0.6, 0.15, 0.15),
            "trunk": (0.15, 0.5, 0.2)}
    col = np.array([base.get(lab, (0.9, 0.9, 0.85)) for lab in labels])
    img[vs, us] = np.clip(col * (0.6 + 0.4 * stripes[:, None]), 0, 1)
    return img


def write_toy_scene(out_dir, width: int = 640, height: int = 480, background=None,
                    yaw: float = 0.35) -> Path:
    """Write mesh, part spec, instance manifest, source image, env map and a config; return the config path."""
    from .imageio import write_rgb

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = toy_car_model()
    pose = toy_pose(yaw)
    k = toy_intrinsics(width, height, focal=420.0 * width / 640)
    (out / "toycar.obj").write_text(write_obj(model.mesh))
    parts_doc = dict(TOY_PARTS, mesh_id="toycar", triangle_labels=list(model.mesh.triangle_part))
    (out / "toycar_parts.json").write_text(json.dumps(parts_doc, indent=2))
    write_rgb(out / "toy_image.png", paint_toy_image(model, pose, k, width, height, background))
    inst = VehicleInstance("toy0", "toycar", pose, k, out / "toy_image.png", (width, height))
    (out / "instances.json").write_text(json.dumps({"instances": [inst.to_dict(out)]}, indent=2))
    theta = (np.arange(16) + 0.5) / 16 * np.pi
    sky = np.clip(0.3 + 0.7 * np.cos(theta), 0.05, None)[:, None, None] * np.ones((16, 32, 3))
    write_rgb(out / "env.png", sky)
    config = {"assets": {"toycar": {"mesh": "toycar.obj", "parts": "toycar_parts.json"}},
              "instances": "instances.json", "env_map": "env.png", "out": "dataset"}
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2))
    return path

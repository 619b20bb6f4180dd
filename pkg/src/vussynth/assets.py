"""Mesh, part catalog and vehicle-instance parsing plus asset validation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import CameraIntrinsics, GeometryError, PartMotion, RigidPose, project_points

log = logging.getLogger(__name__)

BODY = "body"

# Applied when a movable part omits "angle_range"; matched by substring of the part id.
DEFAULT_ANGLE_RANGES = {
    "door": (0.0, 1.22),
    "trunk": (0.0, 0.96),
    "bonnet": (0.0, 0.96),
}

AXIS_NORMALIZE_TOL = 1e-3


class AssetError(ValueError):
    pass


class ObjParseError(AssetError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PartSpecError(AssetError):
    pass


@dataclass(frozen=True, eq=False)
class ArticulatedMesh:
    vertices: np.ndarray                   # (N, 3) float64, model space
    triangles: np.ndarray                  # (T, 3) int64
    triangle_part: np.ndarray = None       # (T,) object array of part ids

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise AssetError("triangle index out of range")
        labels = self.triangle_part
        if labels is None:
            labels = np.full(len(t), BODY, dtype=object)
        labels = np.asarray(labels, dtype=object)
        if labels.shape != (len(t),):
            raise AssetError(f"{labels.shape[0]} triangle labels for {len(t)} triangles")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "triangle_part", labels)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_labels(self, labels) -> "ArticulatedMesh":
        return ArticulatedMesh(self.vertices, self.triangles, labels)

    def corners(self) -> np.ndarray:
        """Triangle soup (T, 3, 3); lets parts move without dragging shared vertices."""
        return self.vertices[self.triangles]

    def part_ids(self) -> set:
        return set(self.triangle_part.tolist())

    def triangle_areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def _parse_index(tok: str, n_vertices: int, line_no: int) -> int:
    head = tok.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(line_no, f"bad face index {tok!r}") from None
    if idx < 0:
        idx = n_vertices + idx + 1
    if idx < 1 or idx > n_vertices:
        raise ObjParseError(line_no, f"face index {head} out of range (1..{n_vertices})")
    return idx - 1


def parse_obj(text: str) -> ArticulatedMesh:
    """Parse the ``v`` / ``f`` subset of Wavefront OBJ.

    Polygons are fan-triangulated around their first vertex. Every other
    statement (vt, vn, g, usemtl, ...) is ignored. Face indices must refer to
    vertices declared above the face; negative indices count backwards.
    """
    vertices = []
    triangles = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0] == "v":
            if len(toks) < 4:
                raise ObjParseError(line_no, "vertex needs 3 coordinates")
            try:
                xyz = [float(x) for x in toks[1:4]]
            except ValueError:
                raise ObjParseError(line_no, "vertex coordinate is not a number") from None
            if not all(math.isfinite(x) for x in xyz):
                raise ObjParseError(line_no, "vertex coordinate is not finite")
            vertices.append(xyz)
        elif toks[0] == "f":
            if len(toks) < 4:
                raise ObjParseError(line_no, f"face has {len(toks) - 1} vertices, need at least 3")
            idx = [_parse_index(t, len(vertices), line_no) for t in toks[1:]]
            for i in range(1, len(idx) - 1):
                triangles.append((idx[0], idx[i], idx[i + 1]))
    return ArticulatedMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                           np.array(triangles, dtype=np.int64).reshape(-1, 3))


def load_obj(path) -> ArticulatedMesh:
    return parse_obj(Path(path).read_text())


def write_obj(mesh: ArticulatedMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class PartSpec:
    id: str
    kind: str                               # "movable" | "semantic"
    axis_point: Optional[np.ndarray] = None
    axis_dir: Optional[np.ndarray] = None
    angle_range: Optional[tuple] = None
    reverse_albedo: Optional[tuple] = None

    @property
    def movable(self) -> bool:
        return self.kind == "movable"

    def motion(self, angle: float) -> PartMotion:
        if not self.movable:
            raise PartSpecError(f"part {self.id!r} is not movable")
        lo, hi = self.angle_range
        if not lo - 1e-12 <= angle <= hi + 1e-12:
            raise PartSpecError(f"angle {angle} outside [{lo}, {hi}] for part {self.id!r}")
        return PartMotion(self.axis_point, self.axis_dir, angle)

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind}
        if self.movable:
            d.update(axis_point=self.axis_point.tolist(), axis_dir=self.axis_dir.tolist(),
                     angle_range=list(self.angle_range), reverse_albedo=list(self.reverse_albedo))
        return d


def _vec(doc: dict, key: str, part_id: str, n: int = 3) -> np.ndarray:
    try:
        v = np.asarray(doc[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise PartSpecError(f"part {part_id!r}: {key} must be {n} numbers") from None
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise PartSpecError(f"part {part_id!r}: {key} must be {n} finite numbers")
    return v


def _default_range(part_id: str) -> tuple:
    for key, rng in DEFAULT_ANGLE_RANGES.items():
        if key in part_id:
            return rng
    raise PartSpecError(f"part {part_id!r}: no angle_range and no default applies")


def _parse_part(d: dict) -> PartSpec:
    if not isinstance(d, dict) or "id" not in d or "kind" not in d:
        raise PartSpecError(f"part entry needs 'id' and 'kind': {d!r}")
    pid, kind = str(d["id"]), d["kind"]
    if pid == BODY:
        raise PartSpecError(f"part id {BODY!r} is reserved")
    if kind == "semantic":
        if "axis_dir" in d or "axis_point" in d or "angle_range" in d:
            raise PartSpecError(f"semantic part {pid!r} must not declare a motion")
        return PartSpec(pid, kind)
    if kind != "movable":
        raise PartSpecError(f"part {pid!r}: unknown kind {kind!r}")
    if "axis_dir" not in d or "axis_point" not in d:
        raise PartSpecError(f"movable part {pid!r} has no motion axis")
    axis_point = _vec(d, "axis_point", pid)
    axis_dir = _vec(d, "axis_dir", pid)
    norm = float(np.linalg.norm(axis_dir))
    if abs(norm - 1.0) > AXIS_NORMALIZE_TOL:
        raise PartSpecError(f"part {pid!r}: axis_dir has norm {norm:.6g}, expected 1")
    if norm != 1.0:
        if abs(norm - 1.0) > 1e-12:
            log.warning("part %r: axis_dir norm %.6g normalized to 1", pid, norm)
        axis_dir = axis_dir / norm
    if "angle_range" in d:
        lo, hi = (float(x) for x in _vec(d, "angle_range", pid, 2))
    else:
        lo, hi = _default_range(pid)
    if not lo <= 0.0 <= hi:
        raise PartSpecError(f"part {pid!r}: angle_range [{lo}, {hi}] must contain 0")
    if "reverse_albedo" not in d:
        raise PartSpecError(f"movable part {pid!r} has no reverse_albedo")
    albedo = _vec(d, "reverse_albedo", pid)
    if albedo.min() < 0.0 or albedo.max() > 1.0:
        raise PartSpecError(f"part {pid!r}: reverse_albedo must lie in [0, 1]")
    return PartSpec(pid, kind, axis_point, axis_dir, (lo, hi), tuple(albedo.tolist()))


def parse_part_spec(document: dict) -> list:
    """Validate the ``parts`` list of a part-spec document."""
    entries = document.get("parts") if isinstance(document, dict) else None
    if not isinstance(entries, list):
        raise PartSpecError("part spec document needs a 'parts' list")
    parts = [_parse_part(d) for d in entries]
    seen = set()
    for p in parts:
        if p.id in seen:
            raise PartSpecError(f"duplicate part id {p.id!r}")
        seen.add(p.id)
    return parts


def parse_triangle_labels(document: dict, n_triangles: int) -> np.ndarray:
    """Per-triangle part ids from the sidecar; missing entries become None."""
    raw = document.get("triangle_labels", [])
    if not isinstance(raw, list):
        raise PartSpecError("'triangle_labels' must be a list")
    if len(raw) > n_triangles:
        raise PartSpecError(f"{len(raw)} triangle labels for {n_triangles} triangles")
    labels = np.full(n_triangles, None, dtype=object)
    for i, lab in enumerate(raw):
        labels[i] = None if lab is None else str(lab)
    return labels


@dataclass(frozen=True, eq=False)
class VehicleModel:
    mesh_id: str
    mesh: ArticulatedMesh
    parts: list

    def part(self, part_id: str) -> PartSpec:
        for p in self.parts:
            if p.id == part_id:
                return p
        raise KeyError(part_id)

    @property
    def part_map(self) -> dict:
        return {p.id: p for p in self.parts}


def load_vehicle_model(mesh_path, parts_path, mesh_id: Optional[str] = None) -> VehicleModel:
    mesh = load_obj(mesh_path)
    doc = json.loads(Path(parts_path).read_text())
    parts = parse_part_spec(doc)
    labels = parse_triangle_labels(doc, mesh.n_triangles)
    mid = mesh_id or doc.get("mesh_id") or Path(mesh_path).stem
    return VehicleModel(str(mid), mesh.with_labels(labels), parts)


@dataclass(frozen=True, eq=False)
class VehicleInstance:
    id: str
    mesh_id: str
    pose: RigidPose
    intrinsics: CameraIntrinsics
    image_path: Path
    image_size: tuple                        # (width, height)

    def to_dict(self, relative_to: Optional[Path] = None) -> dict:
        img = Path(self.image_path)
        if relative_to is not None:
            try:
                img = img.relative_to(relative_to)
            except ValueError:
                pass
        k = self.intrinsics
        return {"id": self.id, "mesh_id": self.mesh_id,
                "pose_rotation": self.pose.rotation.reshape(-1).tolist(),
                "pose_translation": self.pose.translation.tolist(),
                "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                "image_path": str(img), "image_size": list(self.image_size)}


def parse_instance(d: dict, base_dir: Path = Path(".")) -> VehicleInstance:
    try:
        rot = np.asarray(d["pose_rotation"], dtype=np.float64)
        if rot.shape != (9,):
            raise AssetError("pose_rotation must hold 9 row-major reals")
        pose = RigidPose(rot.reshape(3, 3), d["pose_translation"])
        k = CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))
        w, h = (int(x) for x in d["image_size"])
        inst_id = str(d.get("id", Path(d["image_path"]).stem))
        return VehicleInstance(inst_id, str(d["mesh_id"]), pose, k,
                               base_dir / d["image_path"], (w, h))
    except KeyError as e:
        raise AssetError(f"instance is missing field {e.args[0]!r}") from None
    except (TypeError, ValueError, GeometryError) as e:
        raise AssetError(f"invalid instance: {e}") from None


def load_instances(path) -> list:
    path = Path(path)
    doc = json.loads(path.read_text())
    entries = doc.get("instances") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise AssetError("instance manifest needs an 'instances' list")
    insts = [parse_instance(d, path.parent) for d in entries]
    ids = [i.id for i in insts]
    if len(set(ids)) != len(ids):
        raise AssetError("duplicate instance ids")
    return insts


@dataclass(frozen=True)
class Finding:
    code: str
    message: str


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    def add(self, code: str, message: str):
        self.findings.append(Finding(code, message))

    @property
    def ok(self) -> bool:
        return not self.findings

    def codes(self) -> set:
        return {f.code for f in self.findings}

    def format(self) -> str:
        if self.ok:
            return "no findings"
        return "\n".join(f"{f.code}: {f.message}" for f in self.findings)


def validate_assets(mesh: ArticulatedMesh, parts: list,
                    instance: Optional[VehicleInstance] = None) -> ValidationReport:
    report = ValidationReport()
    declared = {p.id for p in parts}
    labels = mesh.triangle_part
    unlabeled = [i for i, lab in enumerate(labels) if lab is None]
    if unlabeled:
        report.add("unlabeled-triangle", f"{len(unlabeled)} triangles without a part label "
                                         f"(first: {unlabeled[0]})")
    used = {lab for lab in labels if lab is not None}
    for lab in sorted(used - declared - {BODY}):
        n = int(sum(1 for x in labels if x == lab))
        report.add("unknown-label", f"label {lab!r} on {n} triangles is not a declared part")
    for pid in sorted(declared - used):
        report.add("unreferenced-part", f"part {pid!r} labels no triangles")
    degenerate = np.flatnonzero(mesh.triangle_areas() <= 1e-12)
    if degenerate.size:
        report.add("degenerate-triangle", f"{degenerate.size} zero-area triangles "
                                          f"(first: {int(degenerate[0])})")
    if instance is not None:
        _check_instance(mesh, instance, report)
    return report


def _check_instance(mesh: ArticulatedMesh, inst: VehicleInstance, report: ValidationReport):
    img = Path(inst.image_path)
    if not img.is_file():
        report.add("missing-image", f"{img} does not exist")
    else:
        from PIL import Image
        with Image.open(img) as im:
            if tuple(im.size) != tuple(inst.image_size):
                report.add("image-size-mismatch",
                           f"{img} is {im.size[0]}x{im.size[1]}, declared "
                           f"{inst.image_size[0]}x{inst.image_size[1]}")
    if not len(mesh.vertices):
        return
    cam = inst.pose.apply(mesh.vertices)
    if (cam[:, 2] <= 1e-4).any():
        report.add("out-of-frustum", f"{int((cam[:, 2] <= 1e-4).sum())} vertices at or behind "
                                     "the near plane")
        return
    uv = project_points(cam, inst.intrinsics)
    w, h = inst.image_size
    if uv[:, 0].max() < 0 or uv[:, 0].min() > w or uv[:, 1].max() < 0 or uv[:, 1].min() > h:
        report.add("out-of-frustum", "mesh projects entirely outside the image")

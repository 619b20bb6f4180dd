"""Per-instance augmentation plans, sample synthesis and dataset emission."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .assets import PartSpecError, VehicleInstance, VehicleModel
from .editing import (DEFAULT_ALPHA, DEFAULT_GRAY, DEFAULT_NEIGHBORS, DEFAULT_SIGMA_R,
                      DEFAULT_SIGMA_S, EnvironmentMap, UnfillableRegionError, bilateral_smooth,
                      composite, fill_holes, fill_interior, find_holes, recolor_semantic,
                      shade_reverse_side, warp_part)
from .imageio import read_rgb, write_mask, write_rgb
from .raster import rasterize_depth, triangle_facing
from .taxonomy import VUS_TAXONOMY, Taxonomy, encode_state

log = logging.getLogger(__name__)

POLICIES = ("one-part", "random")


class PlanError(ValueError):
    pass


class SampleRejected(RuntimeError):
    pass


@dataclass(frozen=True)
class Edit:
    state: str
    part: Optional[str] = None      # movable part id for "open" states
    angle: Optional[float] = None   # radians, for "open" states


@dataclass(frozen=True)
class AugmentationPlan:
    instance_id: str
    index: int
    seed: int
    edits: tuple = ()

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "index": self.index, "seed": self.seed,
                "edits": [asdict(e) for e in self.edits]}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPlan":
        return cls(d["instance_id"], int(d["index"]), int(d["seed"]),
                   tuple(Edit(**e) for e in d["edits"]))

    @property
    def sample_id(self) -> str:
        return f"{self.instance_id}_{self.index:04d}"


@dataclass(frozen=True)
class Policy:
    kind: str = "one-part"
    samples: int = 1

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise PlanError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")
        if self.samples < 0:
            raise PlanError("sample count must be non-negative")


def sample_seed(master_seed: int, *index: int) -> int:
    """Order-independent 64-bit seed for one work unit."""
    return int(np.random.SeedSequence([int(master_seed) & (2**64 - 1), *index]).generate_state(1, np.uint64)[0])


def available_states(parts: list, taxonomy: Taxonomy = VUS_TAXONOMY) -> list:
    by_id = {p.id: p for p in parts}
    out = []
    for s in taxonomy.states:
        if s.effect == "open":
            p = by_id.get(s.parts[0])
            if p is not None and p.movable:
                out.append(s)
        elif all(pid in by_id and not by_id[pid].movable for pid in s.parts):
            out.append(s)
    return out


def _edit_for(state, by_id, rng) -> Edit:
    if state.effect == "open":
        lo, hi = by_id[state.parts[0]].angle_range
        return Edit(state.name, state.parts[0], float(rng.uniform(lo, hi)))
    return Edit(state.name)


def visible_parts(instance: VehicleInstance, model: VehicleModel) -> set:
    """Part ids owning at least one pixel of the unedited rendering."""
    w, h = instance.image_size
    d = rasterize_depth(model.mesh, None, instance.pose, instance.intrinsics, w, h)
    return set(model.mesh.triangle_part[np.unique(d.triangle[d.valid])].tolist())


def plan_augmentations(instance: VehicleInstance, parts: list, policy: Policy, seed: int,
                       taxonomy: Taxonomy = VUS_TAXONOMY, instance_index: int = 0,
                       visible: Optional[set] = None) -> list:
    """Draw `policy.samples` plans for one instance, deterministically from `seed`.

    ``one-part`` edits exactly one state per plan. ``random`` includes each
    available state with probability 1/2 (at least one), skipping states whose
    parts another chosen state already drives. When `visible` is given, states
    touching a part outside it are never drawn.
    """
    states = available_states(parts, taxonomy)
    if visible is not None:
        states = [s for s in states if all(p in visible for p in s.parts)]
    if not states:
        log.warning("instance %s: no movable or semantic parts to edit", instance.id)
        return []
    by_id = {p.id: p for p in parts}
    plans = []
    for i in range(policy.samples):
        s = sample_seed(seed, instance_index, i)
        rng = np.random.default_rng(s)
        if policy.kind == "one-part":
            chosen = [states[int(rng.integers(len(states)))]]
        else:
            order = rng.permutation(len(states))
            take = rng.random(len(states)) < 0.5
            if not take.any():
                take[int(rng.integers(len(states)))] = True
            chosen, used = [], set()
            for j in order:
                st = states[j]
                if take[j] and not used.intersection(st.parts):
                    chosen.append(st)
                    used.update(st.parts)
            chosen.sort(key=lambda st: taxonomy.index(st.name))
        edits = tuple(_edit_for(st, by_id, rng) for st in chosen)
        plans.append(AugmentationPlan(instance.id, i, s, edits))
    return plans


def check_plan(plan: AugmentationPlan, model: VehicleModel, taxonomy: Taxonomy = VUS_TAXONOMY):
    by_id = model.part_map
    moved = set()
    for e in plan.edits:
        st = taxonomy.get(e.state)
        if st.effect == "open":
            if e.part != st.parts[0]:
                raise PlanError(f"state {e.state!r} drives part {st.parts[0]!r}, not {e.part!r}")
            if e.part not in by_id or not by_id[e.part].movable:
                raise PlanError(f"part {e.part!r} is not a movable part of {model.mesh_id}")
            if e.part in moved:
                raise PlanError(f"part {e.part!r} moved twice")
            moved.add(e.part)
            try:
                by_id[e.part].motion(e.angle)
            except PartSpecError as err:
                raise PlanError(str(err)) from None
        else:
            missing = [p for p in st.parts if p not in by_id]
            if missing:
                raise PlanError(f"state {e.state!r} needs parts {missing}")


@dataclass(frozen=True)
class AugmentConfig:
    bilateral: bool = True
    sigma_s: float = DEFAULT_SIGMA_S
    sigma_r: float = DEFAULT_SIGMA_R
    neighbor_count: int = DEFAULT_NEIGHBORS
    holefill_variant: str = "squared"
    gray: float = DEFAULT_GRAY
    recolor_alpha: float = DEFAULT_ALPHA
    rounding: str = "floor"


@dataclass(eq=False)
class AugmentedSample:
    id: str
    image: np.ndarray
    instance_mask: np.ndarray
    part_mask: np.ndarray
    part_masks: dict
    bbox: tuple
    state: tuple
    provenance: dict


def tight_bbox(mask: np.ndarray) -> Optional[tuple]:
    """(x, y, w, h) of the smallest box holding every set pixel, or None for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def augment_instance(instance: VehicleInstance, model: VehicleModel, plan: AugmentationPlan,
                     env: Optional[EnvironmentMap] = None, config: AugmentConfig = AugmentConfig(),
                     image: Optional[np.ndarray] = None,
                     taxonomy: Taxonomy = VUS_TAXONOMY) -> AugmentedSample:
    check_plan(plan, model, taxonomy)
    src = read_rgb(instance.image_path) if image is None else np.asarray(image, dtype=np.float64)
    w, h = instance.image_size
    if src.shape[:2] != (h, w):
        raise SampleRejected(f"image is {src.shape[1]}x{src.shape[0]}, instance declares {w}x{h}")
    env = env if env is not None else EnvironmentMap.constant(1.0)
    mesh, pose, k = model.mesh, instance.pose, instance.intrinsics
    parts = model.part_map
    open_edits = [e for e in plan.edits if taxonomy.get(e.state).effect == "open"]
    recolor_edits = [e for e in plan.edits if taxonomy.get(e.state).effect == "recolor"]
    motions = {e.part: parts[e.part].motion(e.angle) for e in open_edits}

    before = rasterize_depth(mesh, None, pose, k, w, h)
    after = rasterize_depth(mesh, None, pose, k, w, h, motions)
    if not after.valid.any():
        raise SampleRejected("mesh projects entirely out of frame")
    names = sorted({str(x) for x in mesh.triangle_part})
    code = {n: i for i, n in enumerate(names)}
    tri_code = np.array([code[str(x)] for x in mesh.triangle_part], dtype=np.int64)
    label0 = np.where(before.valid, tri_code[np.maximum(before.triangle, 0)], -1)
    label1 = np.where(after.valid, tri_code[np.maximum(after.triangle, 0)], -1)
    facing = triangle_facing(mesh, pose, motions)
    front_after = after.valid & facing[np.maximum(after.triangle, 0)]

    part_layers, reverse_layers = [], []
    vacated = np.zeros((h, w), bool)
    covered = np.zeros((h, w), bool)
    part_masks = {}
    for e in open_edits:
        pid, motion = e.part, motions[e.part]
        seen = label0 == code.get(pid, -2)
        now = label1 == code.get(pid, -2)
        if e.angle != 0 and not now.any():
            raise SampleRejected(f"part {pid!r} is not visible after the edit")
        front = now & front_after
        buf = warp_part(src, before.masked(seen), k, pose, motion, config.rounding).restricted(front)
        holes = find_holes(front, buf)
        if len(holes):
            try:
                buf = fill_holes(buf, holes, config.neighbor_count, config.holefill_variant)
            except UnfillableRegionError as err:
                raise SampleRejected(f"part {pid!r}: {err}") from None
        layer = composite(src, [(buf.color, front)])
        if config.bilateral and front.any():
            layer = bilateral_smooth(layer, front, config.sigma_s, config.sigma_r)
        part_layers.append((layer, front))
        rev, rev_mask = shade_reverse_side(mesh, {pid}, motion, pose, k, env,
                                           parts[pid].reverse_albedo, w, h)
        reverse_layers.append((rev, rev_mask & now & ~front))
        vacated |= seen
        covered |= now
        if e.angle != 0:
            part_masks[pid] = now
    vacated &= ~covered

    out = fill_interior(src, vacated, config.gray)
    out = composite(out, part_layers + reverse_layers)
    for e in recolor_edits:
        st = taxonomy.get(e.state)
        regions = {pid: label1 == code.get(pid, -2) for pid in st.parts}
        region = np.logical_or.reduce(list(regions.values()))
        if not region.any():
            raise SampleRejected(f"state {e.state!r}: no visible pixels of {list(st.parts)}")
        out = recolor_semantic(out, region, st.color, config.recolor_alpha)
        for pid, m in regions.items():
            part_masks[pid] = part_masks.get(pid, np.zeros((h, w), bool)) | m

    instance_mask = after.valid.copy()
    part_mask = np.zeros((h, w), bool)
    for m in part_masks.values():
        part_mask |= m
    active = [e.state for e in recolor_edits] + [e.state for e in open_edits if e.angle != 0]
    return AugmentedSample(
        id=plan.sample_id, image=out, instance_mask=instance_mask, part_mask=part_mask,
        part_masks=part_masks, bbox=tight_bbox(instance_mask),
        state=encode_state(active, taxonomy),
        provenance={"source_image": str(instance.image_path), "instance_id": instance.id,
                    "mesh_id": model.mesh_id, "seed": plan.seed, "plan": plan.to_dict()})


@dataclass
class SampleRecord:
    id: str
    image: str
    bbox: list
    state: list
    instance_mask: Optional[str] = None
    part_mask: Optional[str] = None
    part_masks: dict = field(default_factory=dict)
    states: list = field(default_factory=list)
    category: str = "vehicle"
    confidence: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sample fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class DatasetManifest:
    taxonomy_version: str
    generator_version: str
    taxonomy: list
    samples: list = field(default_factory=list)
    rejections: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"taxonomy_version": self.taxonomy_version,
                "generator_version": self.generator_version,
                "taxonomy": list(self.taxonomy),
                "samples": [asdict(s) for s in self.samples],
                "rejection_count": len(self.rejections),
                "rejections": list(self.rejections)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            m = cls(d["taxonomy_version"], d["generator_version"], list(d["taxonomy"]),
                    [SampleRecord.from_dict(s) for s in d["samples"]], list(d.get("rejections", [])))
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed manifest: {e}") from None
        ids = [s.id for s in m.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest sample ids are not unique")
        n = len(m.taxonomy)
        for s in m.samples:
            if len(s.state) != n:
                raise ValueError(f"sample {s.id}: state has {len(s.state)} items, taxonomy {n}")
        return m

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


MANIFEST_NAME = "manifest.json"


def write_sample(sample: AugmentedSample, out_dir, taxonomy: Taxonomy = VUS_TAXONOMY) -> SampleRecord:
    """Write the sample's PNGs under `out_dir` and return its manifest record (paths relative)."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rec = SampleRecord(
        id=sample.id, image=f"images/{sample.id}.png", bbox=list(sample.bbox),
        state=[bool(b) for b in sample.state],
        instance_mask=f"masks/{sample.id}_instance.png", part_mask=f"masks/{sample.id}_part.png",
        part_masks={pid: f"masks/{sample.id}_part_{pid}.png" for pid in sorted(sample.part_masks)},
        states=[n for n, b in zip(taxonomy.names, sample.state) if b],
        provenance=sample.provenance)
    try:
        write_rgb(out / rec.image, sample.image)
        write_mask(out / rec.instance_mask, sample.instance_mask)
        write_mask(out / rec.part_mask, sample.part_mask)
        for pid, path in rec.part_masks.items():
            write_mask(out / path, sample.part_masks[pid])
    except OSError as e:
        raise OSError(f"writing sample {sample.id} under {out}: {e}") from e
    return rec


def new_manifest(taxonomy: Taxonomy = VUS_TAXONOMY) -> DatasetManifest:
    return DatasetManifest(taxonomy.version, __version__, list(taxonomy.names))


def emit_dataset(samples, out_dir, rejections=(), taxonomy: Taxonomy = VUS_TAXONOMY) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(taxonomy)
    manifest.samples = [write_sample(s, out, taxonomy) for s in samples]
    manifest.rejections = list(rejections)
    manifest.save(out / MANIFEST_NAME)
    return manifest

"""Acceptance checks, one marked group per numbered criterion.

The terminal summary prints one PASS/FAIL line per criterion (see conftest.py).
"""

import json
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import binary_erosion, maximum_filter, minimum_filter
from scipy.spatial.transform import Rotation

from oracles import (ap_from_definition, bilateral_direct, box_iou_fraction, fill_holes_direct,
                     mc_irradiance, random_convex_mesh)
from test_editing import random_fill_case, sky, square_mesh
from test_metrics import derived_ap_scenario, random_scenario, to_records
from vussynth.assets import VehicleInstance, load_instances
from vussynth.batch import generate_dataset, load_models
from vussynth.editing import EnvironmentMap, SplatBuffer, bilateral_smooth, fill_holes, shade_reverse_side
from vussynth.geometry import CameraIntrinsics, PartMotion, RigidPose, back_project, project
from vussynth.imageio import read_mask, read_rgb, to_uint8
from vussynth.metrics import average_precision, box_iou, state_match_rate
from vussynth.pipeline import (AugmentConfig, AugmentationPlan, DatasetManifest, Edit, Policy,
                               augment_instance, emit_dataset, tight_bbox, write_sample)
from vussynth.raster import rasterize_depth, raycast_depth_many
from vussynth.toy import toy_car_model, toy_intrinsics, toy_pose, write_toy_scene

FIXTURES = Path(__file__).parent / "fixtures"
DOOR = "front_left_door"


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def scene_inputs(config_path):
    cfg = json.loads(Path(config_path).read_text())
    root = Path(config_path).parent
    models = load_models({m: {k: root / v for k, v in e.items()} for m, e in cfg["assets"].items()})
    return load_instances(root / cfg["instances"]), models


# 1 ----------------------------------------------------------------------------------

@criterion(1, "geometry round-trip, 10,000 cases, 1e-9 relative, < 1 s")
def test_geometry_round_trip(record_property):
    rng = np.random.default_rng(2024)
    cases = []
    for _ in range(10_000):
        pose = RigidPose(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-5, 5, 3))
        w, h = rng.integers(64, 2000, 2)
        k = CameraIntrinsics(rng.uniform(50, 3000), rng.uniform(50, 3000), rng.uniform(0, w),
                             rng.uniform(0, h))
        cases.append((pose, k, rng.uniform((1, 1), (w, h)), rng.uniform(0.1, 100)))
    start = time.perf_counter()
    worst = 0.0
    for pose, k, u, d in cases:
        u2 = project(pose.apply(back_project(u, d, k, pose)), k)
        worst = max(worst, np.linalg.norm(u2 - u) / np.linalg.norm(u))
    elapsed = time.perf_counter() - start
    record_property("worst_relative_error", f"{worst:.3g}")
    record_property("seconds", f"{elapsed:.3f}")
    assert worst <= 1e-9
    assert elapsed < 1.0


# 2 ----------------------------------------------------------------------------------

IDENTITY = AugmentConfig(bilateral=False)


def zero_angle_plans(instance_id):
    return [AugmentationPlan(instance_id, 0, 1, (Edit("front-left-door-open", DOOR, 0.0),)),
            AugmentationPlan(instance_id, 1, 2, (Edit("trunk-lifted", "trunk", 0.0),)),
            AugmentationPlan(instance_id, 2, 3, (Edit("front-left-door-open", DOOR, 0.0),
                                                 Edit("trunk-lifted", "trunk", 0.0)))]


def assert_identity(instance, model, out_dir):
    src = read_rgb(instance.image_path)
    for p in zero_angle_plans(instance.id):
        s = augment_instance(instance, model, p, config=IDENTITY)
        assert np.array_equal(s.image, src)
        rec = write_sample(s, out_dir)
        assert np.array_equal(to_uint8(read_rgb(out_dir / rec.image)), to_uint8(src))
        assert not any(s.state)


@criterion(2, "zero-angle edit with filters off is bit-exact (toy scene and real photo)")
def test_identity_toy_scene(toy_scene, tmp_path):
    (inst,), models = scene_inputs(toy_scene)
    assert_identity(inst, models[inst.mesh_id], tmp_path)


@criterion(2, "zero-angle edit with filters off is bit-exact (toy scene and real photo)")
def test_identity_real_photo(tmp_path):
    photo = FIXTURES / "rocket.png"
    w, h = 640, 427
    inst = VehicleInstance("photo", "toycar", toy_pose(-0.5), toy_intrinsics(w, h), photo, (w, h))
    model = toy_car_model()
    assert rasterize_depth(model.mesh, {DOOR}, inst.pose, inst.intrinsics, w, h).valid.sum() > 1000
    assert_identity(inst, model, tmp_path)


# 3 ----------------------------------------------------------------------------------

@criterion(3, "hole fill equals direct summation (1,000 configs, 1e-12); 11400/89 case exact")
def test_fill_holes_hand_case():
    pts = [(1, 0), (0, 2), (0, 3)]
    cols = [[100 / 255] * 3, [200 / 255] * 3, [0.0] * 3]
    buf = SplatBuffer.empty(4, 4)
    for (u, v), c in zip(pts, cols):
        buf.color[v, u], buf.depth[v, u], buf.valid[v, u] = c, 1.0, True
    out = fill_holes(buf, np.array([[0, 0]]), neighbor_count=2)
    assert Fraction(64 * 100 + 25 * 200, 89) == Fraction(11400, 89)
    assert np.all(out.color[0, 0] == 11400 / 89 / 255)
    assert np.all(fill_holes_direct(pts, cols, [(0, 0)], 2) == 11400 / 89 / 255)


@criterion(3, "hole fill equals direct summation (1,000 configs, 1e-12); 11400/89 case exact")
def test_fill_holes_oracle_1000(record_property):
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(1000):
        buf, holes, k = random_fill_case(rng)
        vs, us = np.nonzero(buf.valid)
        pts = list(zip(us.tolist(), vs.tolist()))
        out = fill_holes(buf, holes, k)
        ref = fill_holes_direct(pts, [buf.color[v, u] for u, v in pts], holes.tolist(), k)
        worst = max(worst, float(np.max(np.abs(out.color[holes[:, 1], holes[:, 0]] - ref))))
    record_property("worst_abs_error", f"{worst:.3g}")
    assert worst <= 1e-12


# 4 ----------------------------------------------------------------------------------

@criterion(4, "rasterizer vs ray-cast oracle on 20 convex meshes, >= 99.9% within 1e-6, < 30 s")
def test_raster_vs_raycast(record_property):
    rng = np.random.default_rng(4)
    k = CameraIntrinsics(110, 110, 64, 64)
    pose = RigidPose.identity()
    start = time.perf_counter()
    rates, flag_mismatch = [], 0
    for _ in range(20):
        mesh = random_convex_mesh(rng)
        assert 8 <= mesh.n_triangles <= 64
        d = rasterize_depth(mesh, None, pose, k, 128, 128)
        inner, outer = binary_erosion(d.valid), binary_erosion(~d.valid)
        vs, us = np.nonzero(inner | outer)
        ref = raycast_depth_many(mesh, None, pose, k, np.stack([us, vs], 1))
        hit = np.isfinite(ref)
        flag_mismatch += int(np.sum(hit != inner[vs, us]))
        z = d.depth[vs, us]
        agree = hit & inner[vs, us] & (np.abs(z - np.where(hit, ref, 0)) <= 1e-6 * np.where(hit, ref, 1))
        rates.append(agree.sum() / inner.sum())
    elapsed = time.perf_counter() - start
    record_property("min_agreement", f"{min(rates):.6f}")
    record_property("validity_mismatches", flag_mismatch)
    record_property("seconds", f"{elapsed:.2f}")
    assert min(rates) >= 0.999
    assert flag_mismatch == 0
    assert elapsed < 30


# 5 ----------------------------------------------------------------------------------

@criterion(5, "bilateral: constant fixed point, 3x3 oracle within 1e-12, range preservation")
def test_bilateral_constant_fixed_point():
    rng = np.random.default_rng(5)
    for _ in range(20):
        img = np.broadcast_to(rng.random(3), (17, 23, 3)).copy()
        region = rng.random((17, 23)) < 0.5
        out = bilateral_smooth(img, region, float(rng.uniform(0.5, 4)), float(rng.uniform(0.01, 1)))
        assert np.array_equal(out, img)


@criterion(5, "bilateral: constant fixed point, 3x3 oracle within 1e-12, range preservation")
def test_bilateral_3x3_oracle(record_property):
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(200):
        img = rng.random((3, 3, 3))
        out = bilateral_smooth(img, np.ones((3, 3), bool), 1.0, 0.5)
        worst = max(worst, float(np.max(np.abs(out[1, 1] - bilateral_direct(img, 1, 1, 1.0, 0.5)))))
    record_property("worst_abs_error", f"{worst:.3g}")
    assert worst <= 1e-12


@criterion(5, "bilateral: constant fixed point, 3x3 oracle within 1e-12, range preservation")
def test_bilateral_range_preservation():
    rng = np.random.default_rng(555)
    for _ in range(100):
        h, w = rng.integers(4, 40, 2)
        img = rng.random((h, w, 3)) ** rng.uniform(0.3, 3)
        sigma_s = float(rng.uniform(0.5, 3))
        out = bilateral_smooth(img, np.ones((h, w), bool), sigma_s, float(rng.uniform(0.02, 1)))
        size = 2 * int(np.ceil(3 * sigma_s)) + 1
        lo = minimum_filter(img, size=(size, size, 1), mode="nearest")
        hi = maximum_filter(img, size=(size, size, 1), mode="nearest")
        assert np.all(out >= lo) and np.all(out <= hi)


# 6 ----------------------------------------------------------------------------------

@criterion(6, "diffuse shading: constant env gives albedo*L0 within 1%; Monte Carlo within 2%")
def test_shading_constant_environment(record_property):
    albedo = np.array([0.55, 0.55, 0.6])
    worst = 0.0
    for l0 in (0.25, 0.8, 1.0):
        for shape in ((8, 16), (32, 64), (200, 400)):
            for angle in (0.0, 0.7, -1.1):
                layer, mask = shade_reverse_side(square_mesh(), {"door"},
                                                 PartMotion((0, 0, 2), (0, 1, 0), angle),
                                                 RigidPose.identity(), CameraIntrinsics(100, 100, 64, 64),
                                                 EnvironmentMap.constant(l0, *shape), albedo, 128, 128)
                assert mask.any()
                worst = max(worst, float(np.max(np.abs(layer[mask] / (albedo * l0) - 1))))
    record_property("worst_relative_error", f"{worst:.3g}")
    assert worst <= 0.01


@criterion(6, "diffuse shading: constant env gives albedo*L0 within 1%; Monte Carlo within 2%")
def test_shading_hemisphere_monte_carlo(record_property):
    env = sky(64, 128, bright=3.0)
    up, down = env.irradiance(np.array([[0.0, -1, 0], [0.0, 1, 0]]))[:, 0]
    mc_up = mc_irradiance(env, (0, -1, 0), 100_000, seed=1)[0]
    mc_down = mc_irradiance(env, (0, 1, 0), 100_000, seed=2)[0]
    ratio_err = abs((up / down) / (mc_up / mc_down) - 1)
    record_property("ratio", f"{up / down:.4f} vs mc {mc_up / mc_down:.4f}")
    assert ratio_err <= 0.02
    assert abs(up / mc_up - 1) <= 0.02 and abs(down / mc_down - 1) <= 0.02


# 7 ----------------------------------------------------------------------------------

@criterion(7, "metrics: IoU 25/175, AP 5/6, state match 9/12, AP oracle on 200 scenarios")
def test_metric_derived_values():
    assert box_iou_fraction((0, 0, 10, 10), (5, 5, 10, 10)) == Fraction(25, 175)
    assert box_iou((0, 0, 10, 10), (5, 5, 10, 10)) == float(Fraction(25, 175))
    gts, dets = derived_ap_scenario()
    assert abs(average_precision(gts, dets) - 5 / 6) <= 1e-9
    a = (False,) * 12
    b = (True, True, True) + (False,) * 9
    assert Fraction(state_match_rate([a], [b])).limit_denominator(12) == Fraction(9, 12)
    assert state_match_rate([a], [b]) == 9 / 12


@criterion(7, "metrics: IoU 25/175, AP 5/6, state match 9/12, AP oracle on 200 scenarios")
def test_ap_oracle_200(record_property):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        gts, dets = random_scenario(rng)
        got = average_precision(*to_records(gts, dets), 0.5)
        ref = ap_from_definition(gts, dets, 0.5)
        if ref is None:
            assert got is None
            continue
        worst = max(worst, abs(got - ref))
    record_property("worst_abs_error", f"{worst:.3g}")
    assert worst <= 1e-9


# 8 ----------------------------------------------------------------------------------

def door_oracle_mask(model, inst, angle):
    """Visible opened-door pixels found by exhaustive ray casting, without the rasterizer."""
    w, h = inst.image_size
    motion = {DOOR: model.part(DOOR).motion(angle)}
    vs, us = np.mgrid[0:h, 0:w]
    px = np.stack([us.ravel(), vs.ravel()], 1)
    z_door = raycast_depth_many(model.mesh, {DOOR}, inst.pose, inst.intrinsics, px, motion)
    z_all = raycast_depth_many(model.mesh, None, inst.pose, inst.intrinsics, px, motion)
    return (np.isfinite(z_door) & (z_door <= z_all * (1 + 1e-9))).reshape(h, w)


@criterion(8, "toy scene door at 60 deg: part mask IoU >= 0.98, tight bbox, lossless manifest, "
              "byte-identical rerun")
def test_end_to_end_toy_door(tmp_path, record_property):
    cfg = write_toy_scene(tmp_path / "scene", yaw=-0.5)
    (inst,), models = scene_inputs(cfg)
    model = models["toycar"]
    theta = np.pi / 3
    plan = AugmentationPlan(inst.id, 0, 60, (Edit("front-left-door-open", DOOR, theta),))

    def emit(out):
        s = augment_instance(inst, model, plan, config=AugmentConfig())
        return emit_dataset([s], out)

    m = emit(tmp_path / "a")
    rec = m.samples[0]
    part = read_mask(tmp_path / "a" / rec.part_mask)
    inst_mask = read_mask(tmp_path / "a" / rec.instance_mask)
    oracle = door_oracle_mask(model, inst, theta)
    iou = (part & oracle).sum() / (part | oracle).sum()
    record_property("part_mask_iou", f"{iou:.5f}")
    assert iou >= 0.98
    assert tuple(rec.bbox) == tight_bbox(inst_mask)
    assert rec.states == ["front-left-door-open"]

    text = (tmp_path / "a" / "manifest.json").read_text()
    loaded = DatasetManifest.load(tmp_path / "a" / "manifest.json")
    assert loaded == m and loaded.dumps() == text
    assert DatasetManifest.from_dict(json.loads(text)).to_dict() == json.loads(text)

    emit(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                           if p.is_file())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@criterion(8, "toy scene door at 60 deg: part mask IoU >= 0.98, tight bbox, lossless manifest, "
              "byte-identical rerun")
def test_seeded_batch_rerun_identical(toy_scene, tmp_path):
    insts, models = scene_inputs(toy_scene)
    trees = []
    for name in ("a", "b"):
        generate_dataset(insts, models, Policy("one-part", 8), 77, tmp_path / name)
        trees.append({p.relative_to(tmp_path / name): p.read_bytes()
                      for p in sorted((tmp_path / name).rglob("*")) if p.is_file()})
    assert trees[0] == trees[1]
    m = DatasetManifest.load(tmp_path / "a" / "manifest.json")
    for rec in m.samples:
        assert tuple(rec.bbox) == tight_bbox(read_mask(tmp_path / "a" / rec.instance_mask))


# 9 ----------------------------------------------------------------------------------

@criterion(9, "throughput: 1920x1080 door sample <= 3.0 s on one core; 4 workers >= 3x on 100 samples")
def test_single_sample_throughput(tmp_path, record_property):
    small = write_toy_scene(tmp_path / "warm", 320, 240, yaw=-0.5)
    (warm,), models = scene_inputs(small)
    augment_instance(warm, models["toycar"],
                     AugmentationPlan(warm.id, 0, 0, (Edit("front-left-door-open", DOOR, 0.5),)))
    cfg = write_toy_scene(tmp_path / "hd", 1920, 1080, yaw=-0.5)
    (inst,), models = scene_inputs(cfg)
    plan = AugmentationPlan(inst.id, 0, 0, (Edit("front-left-door-open", DOOR, 1.0),))
    start = time.perf_counter()
    s = augment_instance(inst, models["toycar"], plan)
    write_sample(s, tmp_path / "out")
    elapsed = time.perf_counter() - start
    record_property("seconds_1920x1080", f"{elapsed:.3f}")
    record_property("door_pixels", int(s.part_mask.sum()))
    assert elapsed <= 3.0


@criterion(9, "throughput: 1920x1080 door sample <= 3.0 s on one core; 4 workers >= 3x on 100 samples")
def test_batch_scaling_four_workers(toy_scene, tmp_path, record_property):
    insts, models = scene_inputs(toy_scene)
    policy = Policy("one-part", 100)
    generate_dataset(insts, models, Policy("one-part", 2), 9, tmp_path / "warm")
    times = {}
    for jobs in (1, 4):
        start = time.perf_counter()
        generate_dataset(insts, models, policy, 9, tmp_path / f"j{jobs}", jobs=jobs)
        times[jobs] = time.perf_counter() - start
    speedup = times[1] / times[4]
    record_property("cpus", os.cpu_count())
    record_property("seconds", f"jobs=1 {times[1]:.2f}, jobs=4 {times[4]:.2f}")
    record_property("speedup", f"{speedup:.2f}")
    assert speedup >= 3.0

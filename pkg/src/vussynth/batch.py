"""Parallel dataset generation: independent samples, one manifest written at the end."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Optional

from .pipeline import (MANIFEST_NAME, AugmentConfig, DatasetManifest, PlanError, SampleRejected,
                       augment_instance, new_manifest, plan_augmentations, visible_parts,
                       write_sample)
from .imageio import read_rgb
from .taxonomy import VUS_TAXONOMY

log = logging.getLogger(__name__)

_shared = {}


def _init_worker(models, env, config, out_dir, taxonomy):
    _shared.update(models=models, env=env, config=config, out_dir=out_dir, taxonomy=taxonomy)
    _source.cache_clear()


@lru_cache(maxsize=4)
def _source(path: str):
    return read_rgb(path)


def _run_one(job):
    instance, plan = job
    s = _shared
    try:
        sample = augment_instance(instance, s["models"][instance.mesh_id], plan, s["env"],
                                  s["config"], _source(str(instance.image_path)), s["taxonomy"])
    except (SampleRejected, PlanError) as e:
        return plan.sample_id, None, str(e)
    return plan.sample_id, write_sample(sample, s["out_dir"], s["taxonomy"]), None


def generate_dataset(instances, models: dict, policy, seed: int, out_dir, env=None,
                     config: AugmentConfig = AugmentConfig(), jobs: int = 1,
                     taxonomy=VUS_TAXONOMY) -> DatasetManifest:
    """Plan, synthesize and write every sample for `instances`; returns the saved manifest.

    Output bytes depend only on the inputs, never on `jobs` or scheduling.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = []
    for idx, inst in enumerate(instances):
        if inst.mesh_id not in models:
            raise PlanError(f"instance {inst.id}: no asset entry for mesh {inst.mesh_id!r}")
        model = models[inst.mesh_id]
        plans = plan_augmentations(inst, model.parts, policy, seed, taxonomy, idx,
                                   visible_parts(inst, model))
        work.extend((inst, p) for p in plans)
    shared = (models, env, config, out, taxonomy)
    if jobs <= 1:
        _init_worker(*shared)
        results = [_run_one(w) for w in work]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=shared) as pool:
            results = list(pool.map(_run_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    manifest = new_manifest(taxonomy)
    for sample_id, record, reason in results:
        if record is None:
            log.warning("sample=%s status=rejected reason=%s", sample_id, reason)
            manifest.rejections.append({"id": sample_id, "reason": reason})
        else:
            log.info("sample=%s status=ok states=%s", sample_id, ",".join(record.states) or "-")
            manifest.samples.append(record)
    manifest.save(out / MANIFEST_NAME)
    return manifest


def load_models(assets: dict, mesh_ids: Optional[set] = None) -> dict:
    from .assets import load_vehicle_model

    return {mid: load_vehicle_model(e["mesh"], e["parts"], mid) for mid, e in assets.items()
            if mesh_ids is None or mid in mesh_ids}

"""Run configuration: one defaults table, JSON file overrides, flag overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .editing import DEFAULT_ALPHA, DEFAULT_GRAY, DEFAULT_NEIGHBORS, DEFAULT_SIGMA_R, DEFAULT_SIGMA_S
from .pipeline import POLICIES, AugmentConfig, Policy


class ConfigError(ValueError):
    pass


# name: (default, description). Every knob the pipeline exposes lives here.
DEFAULTS = {
    "assets": ({}, "mesh_id -> {'mesh': OBJ path, 'parts': part-spec JSON path}"),
    "instances": (None, "instance manifest JSON path"),
    "env_map": (None, "environment map (PNG taken as linear, .npy or .pfm); none = constant 1.0"),
    "out": (None, "output directory"),
    "seed": (0, "master seed, 0 <= seed < 2**64"),
    "samples": (1, "plans per instance"),
    "policy": ("one-part", f"plan policy, one of {POLICIES}"),
    "bilateral": (True, "bilateral smoothing of the moved part"),
    "sigma_s": (DEFAULT_SIGMA_S, "bilateral spatial sigma, pixels"),
    "sigma_r": (DEFAULT_SIGMA_R, "bilateral range sigma, [0,1] color units"),
    "neighbor_count": (DEFAULT_NEIGHBORS, "K nearest valid pixels per hole"),
    "holefill_variant": ("squared", "distance measure in the hole-fill weights: squared or plain"),
    "gray": (DEFAULT_GRAY, "vacated-interior gray level in [0,1]"),
    "recolor_alpha": (DEFAULT_ALPHA, "light recolor blend factor in [0,1]"),
    "rounding": ("floor", "warp target rounding: floor or nearest"),
    "map_threshold": (0.5, "IoU threshold for AP matching, in (0,1]"),
    "jobs": (1, "worker processes"),
}

PATH_FIELDS = ("instances", "env_map", "out")


@dataclass(frozen=True)
class RunConfig:
    assets: dict
    instances: Optional[Path]
    env_map: Optional[Path]
    out: Optional[Path]
    seed: int
    samples: int
    policy: str
    bilateral: bool
    sigma_s: float
    sigma_r: float
    neighbor_count: int
    holefill_variant: str
    gray: float
    recolor_alpha: float
    rounding: str
    map_threshold: float
    jobs: int

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(bilateral=self.bilateral, sigma_s=self.sigma_s, sigma_r=self.sigma_r,
                             neighbor_count=self.neighbor_count,
                             holefill_variant=self.holefill_variant, gray=self.gray,
                             recolor_alpha=self.recolor_alpha, rounding=self.rounding)

    def plan_policy(self) -> Policy:
        return Policy(self.policy, self.samples)

    def require(self, *names):
        for name in names:
            v = getattr(self, name)
            if v is None or v == {}:
                raise ConfigError(f"{name}: required but not set")

    def check_files(self):
        """Raise ConfigError naming the first input path that is not a readable file."""
        for mesh_id, entry in self.assets.items():
            for key in ("mesh", "parts"):
                if not Path(entry[key]).is_file():
                    raise ConfigError(f"assets.{mesh_id}.{key}: file not found: {entry[key]}")
        for name in ("instances", "env_map"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name}: file not found: {p}")


def _check(cfg: RunConfig) -> RunConfig:
    def bad(name, why):
        raise ConfigError(f"{name}: {why} (got {getattr(cfg, name)!r})")

    def is_num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    for name in ("seed", "samples", "neighbor_count", "jobs"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or isinstance(v, bool):
            bad(name, "must be an integer")
    if not 0 <= cfg.seed < 2**64:
        bad("seed", "must lie in [0, 2**64)")
    if cfg.samples < 0:
        bad("samples", "must be >= 0")
    if cfg.neighbor_count < 1:
        bad("neighbor_count", "must be >= 1")
    if cfg.jobs < 1:
        bad("jobs", "must be >= 1")
    for name in ("sigma_s", "sigma_r", "gray", "recolor_alpha", "map_threshold"):
        if not is_num(getattr(cfg, name)):
            bad(name, "must be a number")
    if cfg.sigma_s <= 0 or cfg.sigma_r <= 0:
        bad("sigma_s" if cfg.sigma_s <= 0 else "sigma_r", "must be > 0")
    if not 0 <= cfg.gray <= 1:
        bad("gray", "must lie in [0, 1]")
    if not 0 <= cfg.recolor_alpha <= 1:
        bad("recolor_alpha", "must lie in [0, 1]")
    if not 0 < cfg.map_threshold <= 1:
        bad("map_threshold", "must lie in (0, 1]")
    if not isinstance(cfg.bilateral, bool):
        bad("bilateral", "must be true or false")
    if cfg.policy not in POLICIES:
        bad("policy", f"must be one of {POLICIES}")
    if cfg.holefill_variant not in ("squared", "plain"):
        bad("holefill_variant", "must be 'squared' or 'plain'")
    if cfg.rounding not in ("floor", "nearest"):
        bad("rounding", "must be 'floor' or 'nearest'")
    if not isinstance(cfg.assets, dict):
        bad("assets", "must map mesh ids to {'mesh', 'parts'}")
    for mesh_id, entry in cfg.assets.items():
        if not isinstance(entry, dict) or set(entry) != {"mesh", "parts"}:
            raise ConfigError(f"assets.{mesh_id}: needs exactly 'mesh' and 'parts' paths")
    return cfg


def _resolve(values: dict, base: Path) -> dict:
    out = dict(values)
    for name in PATH_FIELDS:
        if out.get(name) is not None:
            out[name] = base / out[name]
    if isinstance(out.get("assets"), dict):
        out["assets"] = {mid: ({k: base / v for k, v in e.items()} if isinstance(e, dict) else e)
                         for mid, e in out["assets"].items()}
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the JSON file at `path` (paths relative to it), then `overrides` (paths relative to cwd)."""
    values = {name: default for name, (default, _) in DEFAULTS.items()}
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"config: cannot read {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be an object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        values.update(_resolve(doc, path.parent))
    if overrides:
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        values.update(_resolve({k: v for k, v in overrides.items() if v is not None}, Path(".")))
    for name in PATH_FIELDS:
        if values[name] is not None:
            values[name] = Path(values[name])
    return _check(RunConfig(**values))


def describe_defaults() -> str:
    width = max(len(n) for n in DEFAULTS)
    return "\n".join(f"{n:<{width}}  {d!r:<12}  {desc}" for n, (d, desc) in DEFAULTS.items())


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return _check(replace(cfg, **kw))


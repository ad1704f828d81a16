"""Pipeline configuration: one YAML file with a section per stage.

Example::

    seed: 0
    output_root: runs/demo
    threads: 1
    synth:
      pixel_size_mm: 0.2
      resected: true
    segment:
      snake: {alpha: 0.6, beta: 0.5}
    augment:
      variant_count: 20

Unknown keys and badly typed values raise :class:`ConfigInvalid` naming the
offending field. ``pixel_size_mm`` has no default: it is required in the
``synth`` or ``ingest`` section whenever that stage runs.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .augment import AugmentConfig
from .errors import ConfigInvalid
from .ingest import MACHINE_PROFILES, CaptureConfig
from .segment.morph import ChanVeseParams
from .segment.pipeline import SegmentConfig
from .segment.snake import SnakeParams

STAGES = ("synth", "ingest", "segment", "eval", "metrics", "reconstruct", "augment")

SYNTH_DEFAULTS = {"resected": True, "slice_count": 85, "size_px": 256, "scan_length_mm": 60.0,
                  "speckle_sigma": 0.05}
INGEST_KEYS = {"frames", "profile"} | {f.name for f in dataclasses.fields(CaptureConfig)}
EVAL_DEFAULTS = {"reference": None}
METRICS_DEFAULTS = {"harmonics": 10, "channel_radius_mm": 1.5, "angular_bins": 360}
RECONSTRUCT_DEFAULTS = {"formats": ["stl"]}
AUGMENT_EXTRA = {"export_format": "stl", "import": []}
TOP_KEYS = {"seed", "output_root", "threads", "inputs"} | set(STAGES)
INPUT_KEYS = {"stack", "labels"}


@dataclass
class PipelineConfig:
    seed: int = 0
    output_root: Optional[str] = None
    threads: int = 1
    inputs: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.sections.get(name) or {}

    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _fail(path: str, msg: str):
    raise ConfigInvalid(f"{path}: {msg}")


def _check_keys(d: Any, allowed, where: str):
    if d is None:
        return {}
    if not isinstance(d, dict):
        _fail(where, f"expected a mapping, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            _fail(f"{where}.{k}" if where else str(k), f"unknown field (allowed: {', '.join(sorted(allowed))})")
    return d


def _build(cls, values: dict, where: str, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(values, names - set(extra), where)
    kwargs = dict(values)
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc
    except Exception as exc:  # domain validation errors from the dataclasses
        raise ConfigInvalid(f"{where}: {exc}") from exc


def set_key(raw: dict, dotted: str, value) -> None:
    """Set ``a.b.c`` in a nested dict, creating sections as needed."""
    parts = dotted.split(".")
    d = raw
    for p in parts[:-1]:
        if d.get(p) is None:
            d[p] = {}
        if not isinstance(d[p], dict):
            _fail(".".join(parts[:-1]), "is not a section")
        d = d[p]
    d[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigInvalid(f"override {text!r} must look like section.key=value")
    key, val = text.split("=", 1)
    return key.strip(), yaml.safe_load(val)


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Read and validate a config file; ``overrides`` are ``(dotted_key, value)``."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"config {path}: top level must be a mapping")
    raw = copy.deepcopy(raw)
    for key, value in overrides:
        set_key(raw, key, value)
    return validate(raw)


def validate(raw: dict) -> PipelineConfig:
    _check_keys(raw, TOP_KEYS, "")
    for name in STAGES:
        _check_keys(raw.get(name), _section_keys(name), name)
    _check_keys(raw.get("inputs"), INPUT_KEYS, "inputs")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        _fail("seed", f"must be a non-negative integer, got {seed!r}")
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
        _fail("threads", f"must be a positive integer, got {threads!r}")
    cfg = PipelineConfig(seed=seed, output_root=raw.get("output_root"), threads=threads,
                         inputs=dict(raw.get("inputs") or {}),
                         sections={n: dict(raw.get(n) or {}) for n in STAGES}, raw=raw)
    # build eagerly so type errors surface before any stage runs
    segment_config(cfg)
    augment_config(cfg)
    return cfg


def _section_keys(name: str) -> set:
    if name == "synth":
        return set(SYNTH_DEFAULTS) | {"pixel_size_mm", "seed"}
    if name == "ingest":
        return INGEST_KEYS
    if name == "segment":
        return {f.name for f in dataclasses.fields(SegmentConfig)}
    if name == "eval":
        return set(EVAL_DEFAULTS)
    if name == "metrics":
        return set(METRICS_DEFAULTS)
    if name == "reconstruct":
        return set(RECONSTRUCT_DEFAULTS)
    return {f.name for f in dataclasses.fields(AugmentConfig)} - {"seed"} | set(AUGMENT_EXTRA)


def _require(sec: dict, key: str, where: str):
    if sec.get(key) is None:
        _fail(f"{where}.{key}", "required field missing")
    return sec[key]


def synth_settings(cfg: PipelineConfig) -> dict:
    sec = cfg.section("synth")
    out = dict(SYNTH_DEFAULTS)
    out.update(sec)
    px = _require(sec, "pixel_size_mm", "synth")
    if not isinstance(px, (int, float)) or px <= 0:
        _fail("synth.pixel_size_mm", f"must be a positive number, got {px!r}")
    out.setdefault("seed", cfg.seed)
    return out


def capture_config(cfg: PipelineConfig) -> tuple[CaptureConfig, Optional[str]]:
    sec = dict(cfg.section("ingest"))
    frames = sec.pop("frames", None)
    profile = sec.pop("profile", None)
    _require(sec, "pixel_size_mm", "ingest")
    base = {}
    if profile is not None:
        if profile not in MACHINE_PROFILES:
            _fail("ingest.profile", f"unknown machine profile {profile!r}; known: {sorted(MACHINE_PROFILES)}")
        base = dict(MACHINE_PROFILES[profile])
        base["source_id"] = profile
    base.update(sec)
    for k in ("gray_threshold", "roi"):
        _require(base, k, "ingest")
    return _build(CaptureConfig, base, "ingest"), frames


def segment_config(cfg: PipelineConfig) -> SegmentConfig:
    sec = dict(cfg.section("segment"))
    snake = _build(SnakeParams, sec.pop("snake", None) or {}, "segment.snake")
    cv = _build(ChanVeseParams, sec.pop("chanvese", None) or {}, "segment.chanvese")
    return _build(SegmentConfig, sec, "segment", snake=snake, chanvese=cv)


def augment_config(cfg: PipelineConfig) -> AugmentConfig:
    sec = {k: v for k, v in cfg.section("augment").items() if k not in AUGMENT_EXTRA}
    return _build(AugmentConfig, sec, "augment", seed=cfg.seed)


def augment_extra(cfg: PipelineConfig) -> dict:
    out = dict(AUGMENT_EXTRA)
    out.update({k: v for k, v in cfg.section("augment").items() if k in AUGMENT_EXTRA})
    return out


def stage_settings(cfg: PipelineConfig, name: str) -> dict:
    defaults = {"eval": EVAL_DEFAULTS, "metrics": METRICS_DEFAULTS, "reconstruct": RECONSTRUCT_DEFAULTS}[name]
    out = dict(defaults)
    out.update(cfg.section(name))
    return out

"""Simulated capture: find where the probe sweep starts in a frame sequence,
crop each retained frame and assemble an :class:`ImageStack`."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import InsufficientFrames, NoScanDetected, RoiOutOfBounds
from .volume import ImageStack, ScanManifest


@dataclass(frozen=True)
class CaptureConfig:
    gray_threshold: float
    roi: tuple[int, int, int, int]  # x, y, w, h
    pixel_size_mm: float
    fps: float = 30.0
    scan_length_mm: float = 60.0
    retain_count: int = 85
    frame_stride: int = 1
    source_id: str = ""
    dynamic_range_db: Optional[float] = None
    warmup_frames: int = 0  # leading frames ignored by scan-start detection

    def __post_init__(self):
        if not 0 < self.gray_threshold < 255:
            raise ValueError(f"gray_threshold must lie in (0, 255), got {self.gray_threshold}")
        x, y, w, h = self.roi
        if x < 0 or y < 0 or w <= 0 or h <= 0:
            raise RoiOutOfBounds(f"invalid roi {self.roi}")
        if self.retain_count < 1 or self.frame_stride < 1:
            raise ValueError("retain_count and frame_stride must be >= 1")
        if self.warmup_frames < 0:
            raise ValueError("warmup_frames must be >= 0")
        if self.fps <= 0 or self.scan_length_mm <= 0 or self.pixel_size_mm <= 0:
            raise ValueError("fps, scan_length_mm and pixel_size_mm must be positive")


# ROI/threshold defaults per ultrasound machine for a 1280x720 capture. Pixel
# size is machine- and depth-setting specific and must come from the config.
MACHINE_PROFILES = {
    "sonoscape-e1": {"gray_threshold": 20.0, "roi": (165, 60, 950, 600), "fps": 30.0,
                     "scan_length_mm": 60.0, "retain_count": 85, "frame_stride": 1},
    "ge-logiq-p6": {"gray_threshold": 20.0, "roi": (262, 50, 755, 620), "fps": 30.0,
                    "scan_length_mm": 60.0, "retain_count": 130, "frame_stride": 1},
}


def capture_config_for(profile: str, **overrides) -> CaptureConfig:
    try:
        base = dict(MACHINE_PROFILES[profile])
    except KeyError:
        raise ValueError(f"unknown machine profile {profile!r}; known: {sorted(MACHINE_PROFILES)}")
    base.update(overrides)
    base.setdefault("source_id", profile)
    return CaptureConfig(**base)


def to_gray8(frame) -> np.ndarray:
    """Convert a frame to 8-bit grayscale; wider integer types are rescaled."""
    arr = np.asarray(frame)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(np.float64).mean(axis=2)
        return np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"frame must be 2D gray or 3D color, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr
    if arr.dtype.kind in "ui":
        bits = arr.dtype.itemsize * 8
        return (arr.astype(np.uint64) >> (bits - 8)).astype(np.uint8)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def frame_means(frames: Sequence) -> np.ndarray:
    return np.array([float(to_gray8(f).mean()) for f in frames])


def detect_scan_start(frames: Sequence, cfg: CaptureConfig) -> int:
    """Index of the first frame whose mean gray value exceeds the threshold.

    The first ``cfg.warmup_frames`` frames are never candidates.
    """
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    skip = min(cfg.warmup_frames, len(frames))
    above = skip + np.flatnonzero(frame_means(frames[skip:]) > cfg.gray_threshold)
    if above.size == 0:
        raise NoScanDetected(f"no frame mean exceeds gray threshold {cfg.gray_threshold}")
    return int(above[0])


def assemble_stack(frames: Sequence, start: int, cfg: CaptureConfig) -> ImageStack:
    n = len(frames)
    if start < 0 or start + cfg.retain_count * cfg.frame_stride > n:
        raise InsufficientFrames(
            f"need {cfg.retain_count} frames at stride {cfg.frame_stride} from index {start}, "
            f"have {n}")
    x, y, w, h = cfg.roi
    slices = []
    for i in range(start, start + cfg.retain_count * cfg.frame_stride, cfg.frame_stride):
        img = to_gray8(frames[i])
        if y + h > img.shape[0] or x + w > img.shape[1]:
            raise RoiOutOfBounds(f"roi {cfg.roi} exceeds frame size {img.shape[::-1]}")
        slices.append(img[y:y + h, x:x + w])
    manifest = ScanManifest.create(cfg.retain_count, w, h, cfg.pixel_size_mm, cfg.scan_length_mm,
                                   cfg.source_id, cfg.dynamic_range_db)
    return ImageStack(manifest, np.stack(slices))


def ingest(frames: Sequence, cfg: CaptureConfig) -> ImageStack:
    return assemble_stack(frames, detect_scan_start(frames, cfg), cfg)


def load_frames(path) -> list:
    """Frames from a ``.npy`` array ``(n, h, w)`` or a directory of image files
    (sorted by name)."""
    path = Path(path)
    if path.suffix == ".npy":
        return list(np.load(path))
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"))
    frames = []
    for p in files:
        with Image.open(p) as im:
            frames.append(np.asarray(im))
    return frames


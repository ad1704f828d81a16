"""Shared data model: scan manifests, image/label stacks, contours, voxel grids
and triangle meshes.

Geometry conventions
--------------------
* Slice arrays are indexed ``[slice, row, col]``; a pixel at ``(row, col)`` has
  in-plane position ``x = col * pixel_size_mm``, ``y = row * pixel_size_mm`` and
  slice ``k`` sits at ``z = k * slice_spacing_mm``.
* Contour points are ``(x, y)`` in pixel units, i.e. ``(col, row)``.
* Voxel grids store occupancy as ``[z, y, x]`` and report ``dims`` as
  ``(nx, ny, nz)`` with ``spacing_mm = (sx, sy, sz)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from shapely.geometry import LinearRing

from .errors import InvalidContour, ManifestError

BACKGROUND = 0
PERIPHERAL = 1
CENTRAL = 2
RESECTION = 3
CLASS_CODES = (BACKGROUND, PERIPHERAL, CENTRAL, RESECTION)
CLASS_NAMES = {
    BACKGROUND: "background",
    PERIPHERAL: "peripheral",
    CENTRAL: "central",
    RESECTION: "resection",
}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScanManifest:
    slice_count: int
    pixel_width: int
    pixel_height: int
    pixel_size_mm: float
    scan_length_mm: float
    slice_spacing_mm: float
    source_id: str = ""
    dynamic_range_db: Optional[float] = None

    def __post_init__(self):
        for name in ("slice_count", "pixel_width", "pixel_height"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
                raise ManifestError(f"{name} must be a positive integer, got {value!r}")
        for name in ("pixel_size_mm", "scan_length_mm", "slice_spacing_mm"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ManifestError(f"{name} must be a positive real, got {value!r}")
        expected = self.scan_length_mm / self.slice_count
        if abs(self.slice_spacing_mm - expected) > 1e-9 * expected:
            raise ManifestError(
                f"slice_spacing_mm {self.slice_spacing_mm} != scan_length_mm / slice_count ({expected})"
            )

    @classmethod
    def create(cls, slice_count: int, pixel_width: int, pixel_height: int,
               pixel_size_mm: float, scan_length_mm: float, source_id: str = "",
               dynamic_range_db: Optional[float] = None) -> "ScanManifest":
        """Build a manifest, deriving the slice spacing from the scan length."""
        if not (isinstance(slice_count, (int, np.integer)) and slice_count > 0):
            raise ManifestError(f"slice_count must be a positive integer, got {slice_count!r}")
        return cls(int(slice_count), int(pixel_width), int(pixel_height), float(pixel_size_mm),
                   float(scan_length_mm), float(scan_length_mm) / int(slice_count), source_id,
                   None if dynamic_range_db is None else float(dynamic_range_db))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.slice_count, self.pixel_height, self.pixel_width)

    @property
    def voxel_spacing_mm(self) -> tuple[float, float, float]:
        """Spacing as ``(sx, sy, sz)``."""
        return (self.pixel_size_mm, self.pixel_size_mm, self.slice_spacing_mm)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ScanManifest":
        names = {f.name for f in fields(cls)}
        missing = names - set(data) - {"source_id", "dynamic_range_db"}
        if missing:
            raise ManifestError(f"manifest missing fields: {sorted(missing)}")
        unknown = set(data) - names
        if unknown:
            raise ManifestError(f"manifest has unknown fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ImageStack:
    manifest: ScanManifest
    slices: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.slices)
        if arr.dtype != np.uint8:
            raise ManifestError(f"slices must be 8-bit, got {arr.dtype}")
        if arr.shape != self.manifest.shape:
            raise ManifestError(f"slice array shape {arr.shape} != manifest shape {self.manifest.shape}")
        object.__setattr__(self, "slices", _frozen(arr))

    def __len__(self) -> int:
        return self.manifest.slice_count

    def __getitem__(self, k: int) -> np.ndarray:
        return self.slices[k]


@dataclass(frozen=True)
class LabelVolume:
    manifest: ScanManifest
    labels: np.ndarray
    converged: Optional[tuple] = None

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.shape != self.manifest.shape:
            raise ManifestError(f"label array shape {arr.shape} != manifest shape {self.manifest.shape}")
        if arr.size and int(arr.max()) > RESECTION or (arr.dtype.kind in "if" and arr.size and arr.min() < 0):
            raise ManifestError("labels must hold class codes 0..3")
        object.__setattr__(self, "labels", _frozen(arr.astype(np.uint8)))
        if self.converged is not None:
            object.__setattr__(self, "converged", tuple(bool(c) for c in self.converged))

    def __len__(self) -> int:
        return self.manifest.slice_count


def class_masks(vol, cls: int) -> np.ndarray:
    """Boolean mask of voxels equal to ``cls``.

    ``vol`` may be a :class:`LabelVolume` or a bare 2D/3D label array.
    """
    if cls not in CLASS_CODES:
        raise ValueError(f"class code must be one of {CLASS_CODES}, got {cls!r}")
    labels = vol.labels if isinstance(vol, LabelVolume) else np.asarray(vol)
    return labels == cls


@dataclass(frozen=True)
class Contour:
    """Closed simple polygon in pixel coordinates ``(x, y)``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise InvalidContour(f"contour needs >= 4 (x, y) points, got shape {pts.shape}")
        if len(pts) > 4 and np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        if not np.all(np.isfinite(pts)):
            raise InvalidContour("contour has non-finite coordinates")
        if _signed_area(pts) == 0:
            raise InvalidContour("contour has zero area")
        if not LinearRing(pts).is_simple:
            raise InvalidContour("contour self-intersects")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def signed_area(self) -> float:
        return _signed_area(self.points)

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def perimeter(self) -> float:
        d = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    @property
    def centroid(self) -> tuple[float, float]:
        x, y = self.points[:, 0], self.points[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = cross.sum() / 2.0
        return (float(((x + xn) * cross).sum() / (6 * a)), float(((y + yn) * cross).sum() / (6 * a)))

    def rasterize(self, shape: Sequence[int]) -> np.ndarray:
        """Pixels whose centers fall inside the polygon."""
        from skimage.draw import polygon

        mask = np.zeros(shape, dtype=bool)
        rr, cc = polygon(self.points[:, 1], self.points[:, 0], shape=shape)
        mask[rr, cc] = True
        return mask

    def scaled(self, factor: float, center: Optional[tuple[float, float]] = None) -> "Contour":
        c = np.asarray(self.centroid if center is None else center)
        return Contour(c + (self.points - c) * factor)


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return float(0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


@dataclass(frozen=True)
class VoxelGrid:
    occupancy: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        occ = np.asarray(self.occupancy).astype(bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise ValueError(f"occupancy must be a non-empty 3D array, got shape {occ.shape}")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive reals, got {self.spacing_mm}")
        object.__setattr__(self, "occupancy", _frozen(occ))
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.occupancy.shape
        return (nx, ny, nz)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing_mm
        return sx * sy * sz

    def count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def with_occupancy(self, occupancy: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(occupancy, self.spacing_mm, self.origin_mm)

    def same_frame(self, other: "VoxelGrid") -> bool:
        return (self.occupancy.shape == other.occupancy.shape
                and np.allclose(self.spacing_mm, other.spacing_mm)
                and np.allclose(self.origin_mm, other.origin_mm))


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle surface, vertices in mm, counterclockwise seen from outside."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    def __len__(self) -> int:
        return len(self.triangles)

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def without_degenerate(self, eps: float = 0.0) -> "TriMesh":
        p = self.vertices[self.triangles]
        area2 = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
        t = self.triangles
        keep = (area2 > eps) & (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        return TriMesh(self.vertices, t[keep])


@dataclass(frozen=True)
class FrameMetrics:
    slice_index: int
    circularity: float
    smoothness: float
    perforation_area_mm2: float
    perforation_sites: int


METRIC_FIELDS = ("circularity", "smoothness", "perforation_area_mm2", "perforation_sites")


@dataclass(frozen=True)
class MetricsReport:
    per_frame: tuple
    skipped_frames: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> dict:
        """``{metric: {mean, std, min, max}}``; NaN when the series is empty."""
        out = {}
        for name in METRIC_FIELDS:
            values = np.array([getattr(f, name) for f in self.per_frame], dtype=float)
            if values.size:
                out[name] = {"mean": float(values.mean()), "std": float(values.std()),
                             "min": float(values.min()), "max": float(values.max())}
            else:
                out[name] = {k: math.nan for k in ("mean", "std", "min", "max")}
        return out

    @property
    def total_perforation_area_mm2(self) -> float:
        return float(sum(f.perforation_area_mm2 for f in self.per_frame))

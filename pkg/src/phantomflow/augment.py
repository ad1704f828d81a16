"""Procedural variants of the resection volume on a voxel pyramid.

The resection occupancy ``R`` is cropped to the region it may occupy,
resampled to a cubic working grid and reduced to a pyramid of ``scales``
levels. Generation runs coarse to fine: at each level the occupancy is
perturbed (seeded value noise added to a smoothed copy and re-thresholded,
then a random dilation or erosion), and the resulting additions/removals
relative to the unperturbed pyramid are carried up to the next level. The
finest-level edits are mapped back onto the original grid and the result is
clipped to the allowed region. With zero noise and zero jitter no edits are
made, so the variant equals ``R``.

Subtracting a variant from the filled organ ``F`` happens in voxel space,
followed by a single surface extraction.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage as ndi
from skimage.transform import resize

from .errors import ConstraintCollapse, DimensionMismatch, EmptyResection, NoVariants
from .evaluation import iou
from .reconstruct import marching_cubes, mesh_stats
from .stackio import read_voxel_grid
from .volume import TriMesh, VoxelGrid


@dataclass(frozen=True)
class AugmentConfig:
    """Pyramid and noise settings for resection variants.

    Level ``k`` (coarsest first) has edge ``base_resolution * scale_factor**(scales-1-k)``.
    The default amplitudes assume a working grid near 128; on much coarser
    grids the smallest levels hold only a few voxels, blur and threshold
    wipe thin parts of the resection there and variants shrink or vanish.
    """
    scales: int = 6
    base_resolution: int = 128
    scale_factor: float = 0.75
    noise_amplitude: tuple = (0.4, 0.35, 0.3, 0.25, 0.2, 0.1)
    morph_jitter_radius: tuple = (0, 0, 0, 1, 1, 0)
    noise_cell_voxels: float = 4.0
    allowed_region_margin_mm: float = 0.0
    variant_count: int = 20
    seed: int = 0
    iou_bounds: tuple = (0.60, 0.97)

    def __post_init__(self):
        if self.scales < 1 or self.base_resolution < 2 or self.variant_count < 1:
            raise ValueError("scales, variant_count must be >= 1 and base_resolution >= 2")
        if not 0 < self.scale_factor <= 1:
            raise ValueError("scale_factor must lie in (0, 1]")
        if len(self.noise_amplitude) != self.scales or len(self.morph_jitter_radius) != self.scales:
            raise ValueError(f"noise_amplitude and morph_jitter_radius need {self.scales} entries")
        if min(self.noise_amplitude) < 0 or min(self.morph_jitter_radius) < 0:
            raise ValueError("noise amplitudes and jitter radii must be >= 0")
        if self.allowed_region_margin_mm < 0 or self.noise_cell_voxels <= 0:
            raise ValueError("margin must be >= 0 and noise_cell_voxels > 0")
        lo, hi = self.iou_bounds
        if not 0 < lo < hi <= 1:
            raise ValueError(f"iou_bounds must satisfy 0 < lo < hi <= 1, got {self.iou_bounds}")

    def level_shapes(self) -> list:
        """Working-grid edge length per level, coarsest first."""
        return [max(2, int(round(self.base_resolution * self.scale_factor ** (self.scales - 1 - k))))
                for k in range(self.scales)]


def _check_frames(*grids: VoxelGrid):
    for g in grids[1:]:
        if not grids[0].same_frame(g):
            raise DimensionMismatch("voxel grids differ in shape, spacing or origin")


def _ball(radius_vox: np.ndarray) -> np.ndarray:
    r = np.maximum(np.asarray(radius_vox, dtype=float), 0)
    half = np.floor(r).astype(int)
    zz, yy, xx = np.ogrid[-half[0]:half[0] + 1, -half[1]:half[1] + 1, -half[2]:half[2] + 1]
    safe = np.where(r > 0, r, 1.0)
    return (zz / safe[0]) ** 2 + (yy / safe[1]) ** 2 + (xx / safe[2]) ** 2 <= 1.0


def allowed_region(F: VoxelGrid, central: VoxelGrid, margin_mm: float) -> np.ndarray:
    """``dilate(central, margin) & F``; the dilation is an ellipsoid in voxels."""
    _check_frames(F, central)
    occ = central.occupancy
    if margin_mm > 0:
        sx, sy, sz = central.spacing_mm
        occ = ndi.binary_dilation(occ, _ball(np.array([margin_mm / sz, margin_mm / sy, margin_mm / sx])))
    return occ & F.occupancy


def axis_voxels(F: VoxelGrid) -> np.ndarray:
    """One voxel per slice at the in-plane centroid of the filled organ."""
    occ = F.occupancy
    out = np.zeros(occ.shape, dtype=bool)
    for k, s in enumerate(occ):
        if s.any():
            cy, cx = ndi.center_of_mass(s)
            out[k, int(round(cy)), int(round(cx))] = True
    return out


def _resample_nearest(arr: np.ndarray, shape) -> np.ndarray:
    idx = [np.minimum(((np.arange(n) + 0.5) * s / n).astype(int), s - 1) for n, s in zip(shape, arr.shape)]
    return arr[np.ix_(*idx)]


def _downsample(arr: np.ndarray, shape) -> np.ndarray:
    if arr.shape == tuple(shape):
        return arr.copy()
    return resize(arr.astype(np.float32), shape, order=1, anti_aliasing=True, preserve_range=True) > 0.5


def _value_noise(rng: np.random.Generator, shape, cell: float) -> np.ndarray:
    lattice = [max(2, int(np.ceil(n / cell)) + 1) for n in shape]
    coarse = rng.uniform(-1.0, 1.0, lattice)
    return resize(coarse, shape, order=1, mode="edge", anti_aliasing=False)


def _perturb(occ: np.ndarray, amp: float, jitter: int, rng: np.random.Generator, cell: float) -> np.ndarray:
    out = occ
    if amp > 0:
        field_ = ndi.gaussian_filter(occ.astype(np.float32), 1.0) + amp * _value_noise(rng, occ.shape, cell)
        out = field_ > 0.5
    if jitter > 0:
        r = int(rng.integers(0, jitter + 1))
        if r > 0:
            op = ndi.binary_dilation if rng.random() < 0.5 else ndi.binary_erosion
            out = op(out, _ball(np.full(3, r)))
    return out


@dataclass(frozen=True)
class _Workspace:
    box: tuple
    allowed: np.ndarray
    anchor: np.ndarray
    pyramid: list


def _workspace(R: VoxelGrid, F: VoxelGrid, central: VoxelGrid, cfg: AugmentConfig) -> _Workspace:
    _check_frames(R, F, central)
    if not R.occupancy.any():
        raise EmptyResection("resection grid has no occupied voxels")
    allowed = allowed_region(F, central, cfg.allowed_region_margin_mm)
    region = allowed | R.occupancy
    box = ndi.find_objects(region.astype(np.uint8))[0]
    crop = R.occupancy[box]
    base = (cfg.base_resolution,) * 3
    finest = _resample_nearest(crop, base) if crop.shape != base else crop.copy()
    pyramid = [_downsample(finest, (n,) * 3) for n in cfg.level_shapes()[:-1]] + [finest]
    anchor = axis_voxels(F) | R.occupancy
    return _Workspace(box, allowed, anchor, pyramid)


def generate_resection_variant(R: VoxelGrid, F: VoxelGrid, central: VoxelGrid, cfg: AugmentConfig,
                               variant_index: int, _ws: Optional[_Workspace] = None) -> VoxelGrid:
    """One perturbed resection volume ``R'`` with ``R' ⊆ allowed ⊆ F``.

    ``central`` is the central zone's extent before resection; ``R'`` is
    confined to it, dilated by ``cfg.allowed_region_margin_mm`` and clipped
    to ``F``. Components of ``R'`` touching neither the urethral axis nor
    the original resection are dropped.

    Raises
    ------
    EmptyResection, ConstraintCollapse, DimensionMismatch
    """
    ws = _ws or _workspace(R, F, central, cfg)
    add = rem = None
    for level, orig in enumerate(ws.pyramid):
        rng = np.random.default_rng([cfg.seed, variant_index, level])
        cur = orig
        if add is not None:
            cur = (orig | _resample_nearest(add, orig.shape)) & ~_resample_nearest(rem, orig.shape)
        cur = _perturb(cur, cfg.noise_amplitude[level], cfg.morph_jitter_radius[level], rng,
                       cfg.noise_cell_voxels)
        add, rem = cur & ~orig, orig & ~cur

    crop_shape = tuple(s.stop - s.start for s in ws.box)
    occ = R.occupancy.copy()
    occ[ws.box] |= _resample_nearest(add, crop_shape)
    occ[ws.box] &= ~_resample_nearest(rem, crop_shape)
    occ &= ws.allowed | R.occupancy
    occ &= F.occupancy
    lab, n = ndi.label(occ)
    if n > 1:
        keep = np.unique(lab[ws.anchor & occ])
        occ = np.isin(lab, keep[keep > 0])
    if not occ.any():
        raise ConstraintCollapse(f"variant {variant_index} is empty after applying constraints")
    return R.with_occupancy(occ)


def generate_variants(R: VoxelGrid, F: VoxelGrid, central: VoxelGrid, cfg: AugmentConfig,
                      threads: int = 1) -> list:
    """``cfg.variant_count`` variants; identical output for any ``threads``."""
    ws = _workspace(R, F, central, cfg)
    work = lambda i: generate_resection_variant(R, F, central, cfg, i, ws)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(work, range(cfg.variant_count)))
    return [work(i) for i in range(cfg.variant_count)]


@dataclass(frozen=True)
class AppliedVariant:
    grid: VoxelGrid
    mesh: TriMesh


def apply_variant(F: VoxelGrid, R_prime: VoxelGrid) -> AppliedVariant:
    """``F AND NOT R'`` and its surface."""
    _check_frames(F, R_prime)
    grid = F.with_occupancy(F.occupancy & ~R_prime.occupancy)
    return AppliedVariant(grid, marching_cubes(grid))


def import_variant(path, F: VoxelGrid) -> VoxelGrid:
    """Load an externally generated resection volume, confined to ``F``."""
    g = read_voxel_grid(path)
    _check_frames(F, g)
    return g.with_occupancy(g.occupancy & F.occupancy)


@dataclass(frozen=True)
class DiversityReport:
    iou_vs_original: tuple
    pairwise: np.ndarray
    iou_bounds: tuple
    watertight: tuple = ()
    boundary_preserved: tuple = ()
    flags: tuple = field(default=())

    @property
    def within_bounds(self) -> tuple:
        lo, hi = self.iou_bounds
        return tuple(lo <= v <= hi for v in self.iou_vs_original)

    @property
    def max_pairwise(self) -> float:
        n = len(self.iou_vs_original)
        if n < 2:
            return float("nan")
        return float(self.pairwise[np.triu_indices(n, 1)].max())

    @property
    def passed(self) -> bool:
        n = len(self.iou_vs_original)
        pair_ok = n < 2 or self.max_pairwise < self.iou_bounds[1]
        return (all(self.within_bounds) and pair_ok and all(self.watertight)
                and all(self.boundary_preserved))

    def as_keyvalue(self) -> str:
        lines = [f"variants={len(self.iou_vs_original)}",
                 f"iou_bounds={self.iou_bounds[0]:g},{self.iou_bounds[1]:g}",
                 f"max_pairwise_iou={self.max_pairwise:.12g}", f"passed={str(self.passed).lower()}"]
        for i, v in enumerate(self.iou_vs_original):
            lines.append(f"variant.{i:03d}.iou={v:.12g}")
            lines.append(f"variant.{i:03d}.within_bounds={str(self.within_bounds[i]).lower()}")
            if self.watertight:
                lines.append(f"variant.{i:03d}.watertight={str(self.watertight[i]).lower()}")
            if self.boundary_preserved:
                lines.append(f"variant.{i:03d}.boundary_preserved={str(self.boundary_preserved[i]).lower()}")
        return "\n".join(lines) + "\n"


def diversity_report(variants: Sequence[VoxelGrid], R: VoxelGrid, cfg: AugmentConfig,
                     meshes: Optional[Sequence[TriMesh]] = None,
                     allowed: Optional[np.ndarray] = None) -> DiversityReport:
    """IoU of every variant against ``R`` and against each other.

    ``meshes`` adds a watertightness check per variant, ``allowed`` a check
    that no variant leaves the allowed region.
    """
    variants = list(variants)
    if not variants:
        raise NoVariants("no variants to report on")
    n = len(variants)
    vs = [iou(v.occupancy, R.occupancy) for v in variants]
    pair = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            pair[i, j] = pair[j, i] = iou(variants[i].occupancy, variants[j].occupancy)
    tight = tuple(mesh_stats(m).watertight for m in meshes) if meshes is not None else ()
    kept = tuple(not np.any(v.occupancy & ~allowed) for v in variants) if allowed is not None else ()
    return DiversityReport(tuple(vs), pair, tuple(cfg.iou_bounds), tight, kept)

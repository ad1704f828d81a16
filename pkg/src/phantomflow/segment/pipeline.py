"""Classical segmentation cascade: outer contour, inner (peripheral/central)
contour, then the resection space, composed into one 4-class mask per slice."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage as ndi
from shapely.geometry import Polygon, box
from skimage.measure import find_contours

from ..errors import (ContainmentViolation, ContourCollapsed, FatalSegmentation, InvalidContour,
                      NoContrast, SegmentationError)
from ..volume import CENTRAL, PERIPHERAL, RESECTION, Contour, ImageStack, LabelVolume
from .morph import ChanVeseParams, flood_fill, morph_chan_vese, morph_contrast_enhance
from .snake import SnakeParams, edge_force_field, evolve_snake, resample_closed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentConfig:
    gauss_sigma: float = 2.0
    snake: SnakeParams = field(default_factory=SnakeParams)
    # (x, y, w, h) first-slice rectangle; None = whole image inset by 4 px
    init_rect: Optional[tuple[float, float, float, float]] = None
    chanvese: ChanVeseParams = field(default_factory=ChanVeseParams)
    tophat_radius_px: int = 15
    flood_tolerance: float = 10.0
    inner_init_scale: float = 0.8
    prior_expand_px: float = 8.0
    perforation_margin_px: int = 15
    seed_radius_px: int = 3
    min_central_rim_px: float = 2.0
    min_zone_contrast: float = 25.0
    empty_gray_level: float = 20.0
    max_failed_fraction: float = 0.2

    def __post_init__(self):
        if self.gauss_sigma < 0 or self.flood_tolerance < 0:
            raise ValueError("gauss_sigma and flood_tolerance must be >= 0")
        if self.tophat_radius_px < 1:
            raise ValueError("tophat_radius_px must be a positive integer")
        if not 0 < self.inner_init_scale < 1:
            raise ValueError("inner_init_scale must lie in (0, 1)")


@dataclass(frozen=True)
class FrameSegmentation:
    """``outer`` is None for a slice without tissue (all background)."""
    outer: Optional[Contour]
    inner: Optional[Contour]
    resection: tuple
    mask: np.ndarray
    converged: bool = True


@dataclass(frozen=True)
class SliceStatus:
    index: int
    ok: bool
    converged: bool
    message: str = ""

    def line(self) -> str:
        state = "ok" if self.ok else "FAILED"
        conv = "converged" if self.converged else "not-converged"
        return f"slice {self.index:04d} {state} {conv} {self.message}".rstrip()


def rect_contour(rect, n: int = 200) -> np.ndarray:
    x, y, w, h = rect
    corners = np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]], dtype=float)
    return resample_closed(corners, n)


def _polygon_to_points(geom, n: int) -> Optional[np.ndarray]:
    polys = [g for g in getattr(geom, "geoms", [geom]) if g.geom_type == "Polygon" and g.area > 0]
    if not polys:
        return None
    best = max(polys, key=lambda g: g.area)
    return resample_closed(np.asarray(best.exterior.coords)[:-1], n)


def _grow(contour: Contour, px: float, clip, n: int) -> Optional[np.ndarray]:
    """Contour offset outward by ``px`` and intersected with ``clip``."""
    return _polygon_to_points(Polygon(contour.points).buffer(px).intersection(clip), n)


def compose_mask(shape, outer: Contour, inner: Optional[Contour], resection: np.ndarray) -> np.ndarray:
    """Rasterize contours with precedence resection > central > peripheral."""
    if inner is not None and not Polygon(outer.points).buffer(0.5).contains(Polygon(inner.points)):
        raise ContainmentViolation("inner contour extends outside the outer contour")
    mask = np.zeros(shape, dtype=np.uint8)
    outer_px = outer.rasterize(shape)
    mask[outer_px] = PERIPHERAL
    if inner is not None:
        mask[inner.rasterize(shape) & outer_px] = CENTRAL
    mask[resection & outer_px] = RESECTION
    return mask


def region_contours(region: np.ndarray) -> tuple:
    """Boundary contours of a binary region, largest first."""
    padded = np.pad(region.astype(float), 1)
    out = []
    for c in find_contours(padded, 0.5):
        pts = c[:, ::-1] - 1.0
        try:
            out.append(Contour(pts))
        except InvalidContour:
            continue
    return tuple(sorted(out, key=lambda c: -c.area))


def _extract_resection(image: np.ndarray, roi: np.ndarray, seed: tuple[int, int],
                       cfg: SegmentConfig) -> tuple[np.ndarray, bool]:
    rows, cols = np.nonzero(roi)
    pad = cfg.tophat_radius_px
    r0, r1 = max(rows.min() - pad, 0), min(rows.max() + pad + 1, image.shape[0])
    c0, c1 = max(cols.min() - pad, 0), min(cols.max() + pad + 1, image.shape[1])
    crop = morph_contrast_enhance(image[r0:r1, c0:c1], cfg.tophat_radius_px)
    region = roi[r0:r1, c0:c1]
    sx, sy = seed[0] - c0, seed[1] - r0
    yy, xx = np.ogrid[:crop.shape[0], :crop.shape[1]]
    init = ((xx - sx) ** 2 + (yy - sy) ** 2 <= cfg.seed_radius_px ** 2) & region
    try:
        cv = morph_chan_vese(crop, init, cfg.chanvese, region=region)
    except NoContrast:
        return np.zeros(image.shape, dtype=bool), True
    inside = crop[cv.mask].mean() if cv.mask.any() else np.inf
    outside = crop[region & ~cv.mask].mean() if (region & ~cv.mask).any() else np.inf
    out = np.zeros(image.shape, dtype=bool)
    if not cv.mask[sy, sx] or inside >= outside:
        # seed sits in the brighter phase: no resection space at the urethral axis
        return out, cv.converged
    phases = np.where(cv.mask, 0, 255).astype(np.uint8)
    out[r0:r1, c0:c1] = flood_fill(phases, (sx, sy), cfg.flood_tolerance) & cv.mask
    return out, cv.converged


def segment_frame(image, prior: Optional[FrameSegmentation] = None,
                  cfg: Optional[SegmentConfig] = None) -> FrameSegmentation:
    """Segment one slice into background / peripheral / central / resection.

    ``prior`` is the previous slice's result; its contours, grown by
    ``prior_expand_px``, seed the snakes instead of the fixed rectangle.
    A featureless slice darker than ``empty_gray_level`` holds no tissue and
    comes back all background; a featureless brighter one raises NoContrast.
    An inner contour whose core differs from the surrounding ring by less
    than ``min_zone_contrast`` gray levels is discarded (no central zone).
    """
    cfg = cfg or SegmentConfig()
    img = np.asarray(image)
    shape = img.shape
    smooth = ndi.gaussian_filter(img.astype(float), cfg.gauss_sigma) if cfg.gauss_sigma > 0 else img.astype(float)
    if smooth.max() - smooth.min() < 1.0:
        if smooth.mean() < cfg.empty_gray_level:
            return FrameSegmentation(None, None, (), np.zeros(shape, dtype=np.uint8), True)
        raise NoContrast("slice has no gray-level contrast")
    force = edge_force_field(smooth / 255.0, cfg.snake.edge_sigma)
    n = cfg.snake.n_points
    frame = box(0, 0, shape[1] - 1, shape[0] - 1)

    outer_init = None
    if prior is not None and prior.outer is not None:
        outer_init = _grow(prior.outer, cfg.prior_expand_px, frame, n)
    if outer_init is None:
        rect = cfg.init_rect or (4, 4, shape[1] - 9, shape[0] - 9)
        outer_init = rect_contour(rect, n)
    outer_res = evolve_snake(smooth, outer_init, cfg.snake, force_field=force)
    outer = outer_res.contour
    converged = outer_res.converged

    inner = None
    shrunk = outer.scaled(cfg.inner_init_scale)
    inner_init = shrunk.points
    if prior is not None and prior.inner is not None:
        grown = _grow(prior.inner, cfg.prior_expand_px, Polygon(shrunk.points), n)
        if grown is not None:
            inner_init = grown
    try:
        inner_res = evolve_snake(smooth, inner_init, cfg.snake, force_field=force)
        inner, converged = inner_res.contour, converged and inner_res.converged
    except ContourCollapsed:
        inner = None

    outer_px = outer.rasterize(shape)
    if inner is not None:
        roi = ndi.binary_dilation(inner.rasterize(shape), iterations=cfg.perforation_margin_px) & outer_px
        cx, cy = inner.centroid
    else:
        roi = outer_px
        cx, cy = outer.centroid
    seed = (int(round(cx)), int(round(cy)))
    resection = np.zeros(shape, dtype=bool)
    if roi.any() and roi[seed[1], seed[0]]:
        resection, cv_ok = _extract_resection(img, roi, seed, cfg)
        converged = converged and cv_ok

    if inner is not None:
        inner_px = inner.rasterize(shape)
        rim = np.count_nonzero(inner_px & ~resection)
        core = ndi.binary_erosion(inner_px, iterations=2) & ~ndi.binary_dilation(resection, iterations=2)
        ring = outer_px & ~ndi.binary_dilation(inner_px, iterations=2)
        ring = ndi.binary_erosion(ring, iterations=2)
        if rim < cfg.min_central_rim_px * inner.perimeter:
            inner = None  # contour hugs the resection space; no central tissue left
        elif (core.sum() < 20 or ring.sum() < 20
              or abs(smooth[core].mean() - smooth[ring].mean()) < cfg.min_zone_contrast):
            inner = None  # no edge between two distinct zones

    mask = compose_mask(shape, outer, inner, resection)
    return FrameSegmentation(outer, inner, region_contours(mask == RESECTION), mask, converged)


def segment_stack_with_log(stack: ImageStack, cfg: Optional[SegmentConfig] = None
                           ) -> tuple[LabelVolume, list]:
    cfg = cfg or SegmentConfig()
    n = len(stack)
    if n == 0:
        raise ValueError("empty stack")
    masks: list = [None] * n
    statuses = []
    prior = None
    for k in range(n):
        try:
            seg = segment_frame(stack[k], prior, cfg)
        except SegmentationError as exc:
            statuses.append(SliceStatus(k, False, False, f"{type(exc).__name__}: {exc}"))
            log.debug("slice %d failed: %s", k, exc)
            continue
        masks[k] = seg.mask
        prior = seg
        statuses.append(SliceStatus(k, True, seg.converged))

    failed = [s.index for s in statuses if not s.ok]
    if len(failed) > cfg.max_failed_fraction * n:
        raise FatalSegmentation(f"{len(failed)} of {n} slices failed segmentation")
    good = np.array([k for k in range(n) if masks[k] is not None])
    for k in failed:
        src = int(good[np.argmin(np.abs(good - k))])
        masks[k] = masks[src]
        statuses[k] = SliceStatus(k, False, False, statuses[k].message + f" (filled from slice {src})")
    vol = LabelVolume(stack.manifest, np.stack(masks), converged=[s.ok and s.converged for s in statuses])
    return vol, statuses


def segment_stack(stack: ImageStack, cfg: Optional[SegmentConfig] = None) -> LabelVolume:
    return segment_stack_with_log(stack, cfg)[0]

"""Morphological building blocks of the resection extraction: top-hat contrast
enhancement, morphological Chan-Vese and tolerance flood fill."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import cycle

import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import black_tophat, disk, white_tophat
from skimage.segmentation import flood

from ..errors import BadRadius, DegenerateInit, NoContrast, SeedOutOfBounds


def morph_contrast_enhance(image, radius_px: int) -> np.ndarray:
    """``clamp(image + white_tophat - black_tophat)`` with a disk of ``radius_px``.

    Bright details smaller than the disk get brighter and dark ones darker.
    Returns uint8.
    """
    if radius_px < 1:
        raise BadRadius(f"top-hat radius must be >= 1, got {radius_px}")
    img = np.asarray(image)
    fp = disk(int(radius_px), decomposition="sequence") if radius_px > 3 else disk(int(radius_px))
    work = img.astype(np.int32)
    out = work + white_tophat(work, fp) - black_tophat(work, fp)
    return np.clip(out, 0, 255).astype(np.uint8)


# Line structuring elements for the curvature operators (2D).
_LINES = [np.eye(3, dtype=bool),
          np.array([[0, 1, 0]] * 3, dtype=bool),
          np.flipud(np.eye(3, dtype=bool)),
          np.rot90(np.array([[0, 1, 0]] * 3, dtype=bool))]


def sup_inf(u: np.ndarray) -> np.ndarray:
    out = ndi.binary_erosion(u, _LINES[0])
    for se in _LINES[1:]:
        out |= ndi.binary_erosion(u, se)
    return out


def inf_sup(u: np.ndarray) -> np.ndarray:
    out = ndi.binary_dilation(u, _LINES[0])
    for se in _LINES[1:]:
        out &= ndi.binary_dilation(u, se)
    return out


def _curvature_ops():
    return cycle([lambda u: sup_inf(inf_sup(u)), lambda u: inf_sup(sup_inf(u))])


@dataclass(frozen=True)
class ChanVeseParams:
    lambda1: float = 1.0
    lambda2: float = 1.0
    smoothing_passes: int = 1
    max_iters: int = 200

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambda1 and lambda2 must be > 0")
        if self.smoothing_passes < 0 or self.max_iters < 1:
            raise ValueError("smoothing_passes must be >= 0 and max_iters >= 1")


@dataclass
class ChanVeseResult:
    mask: np.ndarray
    converged: bool
    iterations: int
    energy: list = field(default_factory=list)


def region_energy(image: np.ndarray, mask: np.ndarray) -> float:
    """Sum of squared deviations from each region's own mean."""
    inside, outside = image[mask], image[~mask]
    e = 0.0
    if inside.size:
        e += float(((inside - inside.mean()) ** 2).sum())
    if outside.size:
        e += float(((outside - outside.mean()) ** 2).sum())
    return e


def morph_chan_vese(image, init_mask, params: ChanVeseParams | None = None,
                    region=None) -> ChanVeseResult:
    """Two-phase region segmentation with morphological curvature smoothing.

    Each iteration moves boundary pixels to whichever region mean they fit
    better (weighted by ``lambda1`` inside, ``lambda2`` outside), then applies
    the alternating SI/IS curvature operator ``smoothing_passes`` times.
    Stops at a fixpoint, or at a period-2 cycle of the alternating smoother,
    in which case the lower-energy member of the cycle is returned.
    ``energy`` records the within-region squared deviation of each accepted
    iterate.

    If ``region`` is given, region means, energies and the mask itself are
    confined to it; pixels outside never join the inside phase.
    """
    p = params or ChanVeseParams()
    img = np.asarray(image, dtype=float)
    u = np.asarray(init_mask, dtype=bool).copy()
    if img.shape != u.shape:
        raise ValueError(f"image {img.shape} and init mask {u.shape} differ in shape")
    roi = np.ones(u.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    u &= roi
    if not u.any() or np.array_equal(u, roi):
        raise DegenerateInit("initial mask must be neither empty nor full")
    if abs(img[u].mean() - img[roi & ~u].mean()) < 1.0:
        raise NoContrast("inside and outside means differ by less than one gray level")

    smooth = _curvature_ops()
    history = [u.copy()]
    energy = [region_energy(img[roi], u[roi])]
    converged = False
    it = 0
    for it in range(1, p.max_iters + 1):
        if not u.any() or np.array_equal(u, roi):
            break
        c1, c2 = img[u].mean(), img[roi & ~u].mean()
        gy, gx = np.gradient(u.astype(np.int8))
        boundary = (gx != 0) | (gy != 0)
        aux = p.lambda1 * (img - c1) ** 2 - p.lambda2 * (img - c2) ** 2
        u[boundary & (aux < 0)] = True
        u[boundary & (aux > 0)] = False
        for _ in range(p.smoothing_passes):
            u = next(smooth)(u)
        u &= roi
        e = region_energy(img[roi], u[roi])
        if np.array_equal(u, history[-1]):
            converged = True
            break
        if len(history) > 1 and np.array_equal(u, history[-2]):
            # period-2 cycle of the alternating smoother: settle on the
            # lower-energy member and drop the excursion from the trajectory
            converged = True
            if energy[-1] < e:
                u = history[-1]
            else:
                energy.pop()
            break
        energy.append(e)
        history = [history[-1], u.copy()]
    return ChanVeseResult(u, converged, it, energy)


def flood_fill(image, seed: tuple[int, int], tolerance: float = 0) -> np.ndarray:
    """4-connected region around ``seed = (x, y)`` whose values lie within
    ``tolerance`` of the seed value."""
    img = np.asarray(image)
    x, y = int(seed[0]), int(seed[1])
    h, w = img.shape
    if not (0 <= x < w and 0 <= y < h):
        raise SeedOutOfBounds(f"seed {(x, y)} outside image of size {(w, h)}")
    if img.dtype == bool:
        img = img.astype(np.uint8)
    return flood(img, (y, x), connectivity=1, tolerance=tolerance)

"""Closed active contour (snake) driven by image-gradient attraction.

The internal energy ``alpha * |x'|^2 + beta * |x''|^2`` on a periodic point
chain gives a circulant pentadiagonal matrix ``A``; each semi-implicit step
``(I + gamma * A) x_new = x + gamma * w_edge * f(x)`` is solved exactly in
Fourier space, and per-point motion is capped at ``max_px_move``. Only the normal component
of the edge force is applied (tangential pull just slides points along the
curve), and points are resampled to equal arc length after every step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage as ndi
from shapely.geometry import Polygon
from shapely.validation import make_valid

from ..errors import ContourCollapsed, InvalidContour, NonFiniteEnergy, TooFewPoints
from ..volume import Contour


@dataclass(frozen=True)
class SnakeParams:
    alpha: float = 0.6
    beta: float = 0.5
    gamma: float = 5.0  # implicit step size
    max_iters: int = 2500
    convergence_tol: float = 0.05
    n_points: int = 200
    max_px_move: float = 1.0
    w_edge: float = 1.5
    edge_sigma: float = 2.0
    min_area_px: float = 20.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.n_points < 4:
            raise TooFewPoints(f"n_points must be >= 4, got {self.n_points}")


def resample_closed(points: np.ndarray, n: int) -> np.ndarray:
    """Resample a closed polyline to ``n`` points equally spaced in arc length."""
    pts = np.asarray(points, dtype=float)
    closed = np.vstack([pts, pts[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return np.repeat(pts[:1], n, axis=0)
    t = np.arange(n) * (s[-1] / n)
    return np.column_stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])])


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _normals(pts: np.ndarray) -> np.ndarray:
    tangent = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    norm = np.hypot(tangent[:, 0], tangent[:, 1])
    norm[norm == 0] = 1.0
    return np.column_stack([tangent[:, 1], -tangent[:, 0]]) / norm[:, None]


def internal_eigenvalues(n: int, alpha: float, beta: float) -> np.ndarray:
    """Eigenvalues of the circulant internal-energy matrix for an n-point chain."""
    d2 = 2.0 - 2.0 * np.cos(2 * np.pi * np.arange(n) / n)
    return alpha * d2 + beta * d2 ** 2


def edge_force_field(image: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """``(fx, fy)`` = gradient of the smoothed gradient magnitude (minus the
    gradient of the image energy). The magnitude is scaled to a peak of 1 so
    edge weights do not depend on image contrast."""
    img = np.asarray(image)
    img = img.astype(float) / np.iinfo(img.dtype).max if img.dtype.kind in "ui" else img.astype(float)
    if sigma > 0:
        img = ndi.gaussian_filter(img, sigma, mode="nearest")
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag /= peak
    fy, fx = np.gradient(mag)
    return fx, fy


def repair_polygon(points: np.ndarray, n: int) -> np.ndarray:
    """Replace a self-intersecting ring by the exterior of its largest valid piece."""
    geom = make_valid(Polygon(points))
    polys = [g for g in getattr(geom, "geoms", [geom]) if g.geom_type == "Polygon" and g.area > 0]
    if not polys:
        raise InvalidContour("contour degenerated to zero area")
    best = max(polys, key=lambda g: g.area)
    return resample_closed(np.asarray(best.exterior.coords)[:-1], n)


@dataclass(frozen=True)
class SnakeResult:
    contour: Contour
    converged: bool
    iterations: int


def active_contour(image, init: Contour | np.ndarray, params: Optional[SnakeParams] = None,
                   callback: Optional[Callable[[int, np.ndarray], None]] = None,
                   force_field: Optional[tuple[np.ndarray, np.ndarray]] = None) -> Contour:
    """Evolve ``init`` toward image edges; see :func:`evolve_snake`."""
    return evolve_snake(image, init, params, callback, force_field).contour


def evolve_snake(image, init: Contour | np.ndarray, params: Optional[SnakeParams] = None,
                 callback: Optional[Callable[[int, np.ndarray], None]] = None,
                 force_field: Optional[tuple[np.ndarray, np.ndarray]] = None) -> SnakeResult:
    """Evolve ``init`` toward image edges.

    Parameters
    ----------
    image : (H, W) array
        Grayscale image; integer images are scaled to [0, 1].
    init : Contour or (n, 2) array of (x, y)
        Initial closed contour, at least 4 points.
    params : SnakeParams
    callback : callable, optional
        Called as ``callback(iteration, points)`` after each step.
    force_field : (fx, fy), optional
        Precomputed output of :func:`edge_force_field`, reused across calls on
        the same image.

    Returns
    -------
    SnakeResult
        Final contour with ``params.n_points`` points, whether the normal
        displacement fell below ``convergence_tol``, and the iteration count.

    Raises
    ------
    TooFewPoints, NonFiniteEnergy, ContourCollapsed
    """
    p = params or SnakeParams()
    pts = np.asarray(init.points if isinstance(init, Contour) else init, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise TooFewPoints(f"initial contour needs >= 4 points, got {len(pts)}")
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("image must be a non-empty 2D array")
    h, w = img.shape
    fx, fy = force_field if force_field is not None else edge_force_field(img, p.edge_sigma)

    n = p.n_points
    eig = 1.0 + p.gamma * internal_eigenvalues(n, p.alpha, p.beta)
    pts = resample_closed(pts, n)
    converged = False
    it = -1
    for it in range(p.max_iters):
        coords = [pts[:, 1], pts[:, 0]]
        ex = ndi.map_coordinates(fx, coords, order=1, mode="nearest")
        ey = ndi.map_coordinates(fy, coords, order=1, mode="nearest")
        normals = _normals(pts)
        fn = ex * normals[:, 0] + ey * normals[:, 1]
        rhs = pts + p.gamma * p.w_edge * fn[:, None] * normals
        target = np.real(np.fft.ifft(np.fft.fft(rhs, axis=0) / eig[:, None], axis=0))
        if not np.all(np.isfinite(target)):
            raise NonFiniteEnergy(f"snake diverged at iteration {it}")
        step = target - pts
        length = np.hypot(step[:, 0], step[:, 1])
        over = length > p.max_px_move
        step[over] *= (p.max_px_move / length[over])[:, None]
        moved = pts + step
        moved[:, 0] = np.clip(moved[:, 0], 0, w - 1)
        moved[:, 1] = np.clip(moved[:, 1], 0, h - 1)
        disp = float(np.max(np.abs(np.sum((moved - pts) * normals, axis=1))))
        pts = resample_closed(moved, n)
        if callback is not None:
            callback(it, pts)
        if _polygon_area(pts) < p.min_area_px:
            raise ContourCollapsed(f"contour collapsed after {it + 1} iterations")
        if disp < p.convergence_tol:
            converged = True
            break
    try:
        contour = Contour(pts)
    except InvalidContour:
        contour = Contour(repair_polygon(pts, n))
    return SnakeResult(contour, converged, it + 1)

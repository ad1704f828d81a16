"""Synthetic two-zone phantom scans with exact ground-truth labels.

The organ is an outer ellipsoid (peripheral zone) holding a concentric central
ellipsoid. A urethral channel runs along the scan axis through the organ
center. A resected phantom additionally carries a cavity built as a tube with
a per-slice radius profile and angular jaggedness, plus optional perforation
patches where the cavity breaks through into the peripheral shell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GeometryInvalid
from .volume import BACKGROUND, CENTRAL, PERIPHERAL, RESECTION, ImageStack, LabelVolume, ScanManifest

DEFAULT_INTENSITIES = {"background": 10.0, "peripheral": 140.0, "central": 200.0, "resection": 40.0}


@dataclass(frozen=True)
class PerforationPatch:
    z_range_mm: tuple[float, float]
    angle_range_deg: tuple[float, float]
    depth_mm: float

    def covers_angle(self, theta_deg: np.ndarray) -> np.ndarray:
        lo, hi = self.angle_range_deg
        span = (hi - lo) % 360.0
        return ((theta_deg - lo) % 360.0) <= span


@dataclass(frozen=True)
class ResectionSpec:
    radius_profile: tuple = ()  # ((z_mm, radius_mm), ...) linear knots, 0 outside
    jaggedness_mm: float = 0.0
    jag_harmonics: int = 5
    perforations: tuple = ()

    def radius_at(self, z_mm) -> np.ndarray:
        if not self.radius_profile:
            return np.zeros_like(np.asarray(z_mm, dtype=float))
        zs, rs = np.array(self.radius_profile, dtype=float).T
        return np.interp(z_mm, zs, rs, left=0.0, right=0.0)


@dataclass(frozen=True)
class PhantomSpec:
    outer_radii_mm: tuple[float, float, float] = (20.0, 16.0, 28.0)
    central_radii_mm: tuple[float, float, float] = (12.0, 9.5, 20.0)
    center_mm: Optional[tuple[float, float, float]] = None  # default: volume center
    urethra_radius_mm: float = 1.5
    resection: Optional[ResectionSpec] = None
    intensities: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITIES))
    speckle_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        outer, central = np.array(self.outer_radii_mm, float), np.array(self.central_radii_mm, float)
        if outer.shape != (3,) or central.shape != (3,) or outer.min() <= 0 or central.min() <= 0:
            raise GeometryInvalid("ellipsoid radii must be three positive reals")
        if np.any(central >= outer):
            raise GeometryInvalid(
                f"central zone {tuple(central)} must lie strictly inside outer zone {tuple(outer)}")
        if self.urethra_radius_mm < 0 or self.speckle_sigma < 0:
            raise GeometryInvalid("urethra radius and speckle sigma must be non-negative")
        missing = {"background", "peripheral", "central", "resection"} - set(self.intensities)
        if missing:
            raise GeometryInvalid(f"intensities missing classes {sorted(missing)}")
        vals = sorted(float(v) for v in self.intensities.values())
        if min(np.diff(vals)) < 20:
            raise GeometryInvalid(f"class intensities must differ pairwise by >= 20 gray levels: {vals}")

    def center_for(self, manifest: ScanManifest) -> tuple[float, float, float]:
        if self.center_mm is not None:
            return tuple(float(c) for c in self.center_mm)
        return ((manifest.pixel_width - 1) / 2 * manifest.pixel_size_mm,
                (manifest.pixel_height - 1) / 2 * manifest.pixel_size_mm,
                (manifest.slice_count - 1) / 2 * manifest.slice_spacing_mm)


def default_manifest(slice_count: int = 85, size_px: int = 256, pixel_size_mm: float = 0.2,
                     scan_length_mm: float = 60.0) -> ScanManifest:
    return ScanManifest.create(slice_count, size_px, size_px, pixel_size_mm, scan_length_mm,
                               source_id="synthetic")


def default_resection(perforated: bool = True) -> ResectionSpec:
    perforations = ()
    if perforated:
        perforations = (PerforationPatch((24.0, 31.0), (40.0, 75.0), 2.0),
                        PerforationPatch((36.0, 40.0), (200.0, 230.0), 1.5))
    return ResectionSpec(radius_profile=((8.0, 0.0), (13.0, 5.0), (30.0, 7.5), (45.0, 5.5), (51.0, 0.0)),
                         jaggedness_mm=0.8, perforations=perforations)


def default_phantom(resected: bool, seed: int = 0, speckle_sigma: float = 0.05) -> PhantomSpec:
    return PhantomSpec(resection=default_resection() if resected else None,
                       speckle_sigma=speckle_sigma, seed=seed)


def _ellipse_radius(theta, a, b):
    """Radius of an axis-aligned ellipse along direction ``theta`` (radians)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 1.0 / np.sqrt((np.cos(theta) / a) ** 2 + (np.sin(theta) / b) ** 2)
    return np.where((a > 0) & (b > 0), r, 0.0)


def slice_semi_axes(radii, z_offset):
    """In-plane semi-axes of an ellipsoid cut at ``z_offset`` from its center."""
    a, b, c = radii
    s = 1.0 - (np.asarray(z_offset, float) / c) ** 2
    f = np.sqrt(np.clip(s, 0.0, None))
    return a * f, b * f


def _jag_params(spec: PhantomSpec):
    rng = np.random.default_rng([spec.seed, 7919])
    h = spec.resection.jag_harmonics
    harmonics = np.arange(2, 2 + h)
    weights = rng.uniform(0.3, 1.0, h)
    weights /= weights.sum()
    phases = rng.uniform(0, 2 * np.pi, h)
    drift = rng.uniform(-0.15, 0.15, h)  # rad per mm along the scan axis
    return harmonics, weights, phases, drift


def rasterize_labels(spec: PhantomSpec, manifest: ScanManifest) -> np.ndarray:
    """Exact label rasterization of the phantom geometry at pixel centers."""
    n, h, w = manifest.shape
    px, dz = manifest.pixel_size_mm, manifest.slice_spacing_mm
    cx, cy, cz = spec.center_for(manifest)
    x = np.arange(w) * px - cx
    y = np.arange(h) * px - cy
    xx, yy = np.meshgrid(x, y)
    rr = np.hypot(xx, yy)
    theta = np.arctan2(yy, xx)
    theta_deg = np.degrees(theta) % 360.0

    ao, bo, co = spec.outer_radii_mm
    ac, bc, cc = spec.central_radii_mm
    jag = _jag_params(spec) if spec.resection is not None and spec.resection.jaggedness_mm > 0 else None

    labels = np.zeros((n, h, w), dtype=np.uint8)
    for k in range(n):
        z = k * dz
        dzc = z - cz
        outer = (xx / ao) ** 2 + (yy / bo) ** 2 + (dzc / co) ** 2 <= 1.0
        central = (xx / ac) ** 2 + (yy / bc) ** 2 + (dzc / cc) ** 2 <= 1.0
        lab = labels[k]
        lab[outer] = PERIPHERAL
        lab[central] = CENTRAL
        cavity = outer & (rr <= spec.urethra_radius_mm) if spec.urethra_radius_mm > 0 else np.zeros_like(outer)
        res = spec.resection
        if res is not None:
            radius = float(res.radius_at(z))
            if radius > 0:
                if jag is not None:
                    harm, wts, ph, drift = jag
                    wobble = (wts[:, None, None] * np.cos(harm[:, None, None] * theta
                                                          + (ph + drift * z)[:, None, None])).sum(0)
                    radius = radius + res.jaggedness_mm * wobble
                cavity |= central & (rr <= radius)
            a_k, b_k = slice_semi_axes(spec.central_radii_mm, dzc)
            rc = _ellipse_radius(theta, a_k, b_k)
            for patch in res.perforations:
                z0, z1 = patch.z_range_mm
                if z0 <= z <= z1:
                    cavity |= outer & patch.covers_angle(theta_deg) & (rr <= rc + patch.depth_mm)
        lab[cavity] = RESECTION
    return labels


def render_image(labels: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    lut = np.array([spec.intensities[k] for k in ("background", "peripheral", "central", "resection")],
                   dtype=np.float64)
    out = np.empty(labels.shape, dtype=np.uint8)
    for k in range(labels.shape[0]):
        base = lut[labels[k]]
        if spec.speckle_sigma > 0:
            rng = np.random.default_rng([spec.seed, k])
            base = base * np.exp(spec.speckle_sigma * rng.standard_normal(base.shape))
        out[k] = np.clip(np.rint(base), 0, 255).astype(np.uint8)
    return out


def synth_phantom(spec: PhantomSpec, manifest: ScanManifest) -> tuple[ImageStack, LabelVolume]:
    labels = rasterize_labels(spec, manifest)
    return ImageStack(manifest, render_image(labels, spec)), LabelVolume(manifest, labels)


def analytic_perforation_area_mm2(spec: PhantomSpec, manifest: ScanManifest, samples: int = 2048) -> float:
    """Sum over slices of the in-ring patch area, by angular quadrature.

    Independent of the rasterizer: per slice, integrates
    ``(min(rc + d, ro)^2 - rc^2) / 2`` over each patch's angular range.
    """
    if spec.resection is None:
        return 0.0
    cz = spec.center_for(manifest)[2]
    total = 0.0
    for k in range(manifest.slice_count):
        z = k * manifest.slice_spacing_mm
        ao, bo = slice_semi_axes(spec.outer_radii_mm, z - cz)
        ac, bc = slice_semi_axes(spec.central_radii_mm, z - cz)
        for patch in spec.resection.perforations:
            if not patch.z_range_mm[0] <= z <= patch.z_range_mm[1]:
                continue
            lo, hi = patch.angle_range_deg
            span = np.radians((hi - lo) % 360.0)
            t = np.radians(lo) + (np.arange(samples) + 0.5) * span / samples
            ro = _ellipse_radius(t, ao, bo)
            rc = np.minimum(_ellipse_radius(t, ac, bc), ro)
            rp = np.minimum(rc + patch.depth_mm, ro)
            total += float(np.sum(np.clip(rp ** 2 - rc ** 2, 0, None) / 2) * span / samples)
    return total

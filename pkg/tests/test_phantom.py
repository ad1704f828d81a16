import numpy as np
import pytest

from phantomflow.errors import GeometryInvalid
from phantomflow.phantom import (DEFAULT_INTENSITIES, PhantomSpec, default_manifest, default_phantom,
                                 rasterize_labels, render_image, synth_phantom)
from phantomflow.volume import CENTRAL, PERIPHERAL, RESECTION

from conftest import small_manifest


def test_geometry_validation():
    with pytest.raises(GeometryInvalid):
        PhantomSpec(outer_radii_mm=(10, 10, 10), central_radii_mm=(12, 5, 5))
    with pytest.raises(GeometryInvalid):
        PhantomSpec(intensities={"background": 10, "peripheral": 140, "central": 150, "resection": 40})
    with pytest.raises(GeometryInvalid):
        PhantomSpec(intensities={"background": 10})


def test_unresected_class3_is_urethral_channel():
    m = small_manifest()
    spec = default_phantom(False)
    lab = rasterize_labels(spec, m)
    cx, cy, cz = spec.center_for(m)
    k, r, c = np.indices(m.shape)
    x, y, z = c * m.pixel_size_mm - cx, r * m.pixel_size_mm - cy, k * m.slice_spacing_mm - cz
    a, b, cc = spec.outer_radii_mm
    inside = (x / a) ** 2 + (y / b) ** 2 + (z / cc) ** 2 <= 1
    channel = inside & (np.hypot(x, y) <= spec.urethra_radius_mm)
    assert np.array_equal(lab == RESECTION, channel)


def test_zones_nested_and_present(resected_phantom):
    _, truth = resected_phantom
    lab = truth.labels
    assert {0, 1, 2, 3} <= set(np.unique(lab).tolist())
    # central voxels never sit outside the outer ellipsoid footprint
    organ = lab > 0
    assert np.all(organ[lab == CENTRAL])
    mid = lab[len(lab) // 2]
    assert mid[mid.shape[0] // 2, mid.shape[1] // 2] == RESECTION
    assert np.count_nonzero(lab == PERIPHERAL) > np.count_nonzero(lab == CENTRAL)


def test_render_noiseless_and_deterministic():
    m = small_manifest(n=3)
    spec = default_phantom(True, speckle_sigma=0.0)
    stack, truth = synth_phantom(spec, m)
    lut = np.array([DEFAULT_INTENSITIES[k] for k in ("background", "peripheral", "central", "resection")])
    assert np.array_equal(stack.slices, lut[truth.labels].astype(np.uint8))
    noisy = default_phantom(True, seed=5)
    a = render_image(truth.labels, noisy)
    assert np.array_equal(a, render_image(truth.labels, noisy))
    assert not np.array_equal(a, render_image(truth.labels, default_phantom(True, seed=6)))


def test_default_manifest_matches_scan_geometry():
    m = default_manifest()
    assert m.shape == (85, 256, 256)
    assert m.slice_spacing_mm == pytest.approx(60 / 85)


def test_class_volumes_match_analytic(unresected_phantom):
    # channel treated as a straight cylinder; its end caps are negligible at r=1.5 mm
    _, gt = unresected_phantom
    spec = default_phantom(False)
    assert gt.labels.shape == (85, 256, 256)
    sx, sy, sz = gt.manifest.voxel_spacing_mm
    vox = sx * sy * sz
    ao, bo, co = spec.outer_radii_mm
    ac, bc, cc = spec.central_radii_mm
    r = spec.urethra_radius_mm
    outer = 4 / 3 * np.pi * ao * bo * co
    central = 4 / 3 * np.pi * ac * bc * cc
    expected = {
        1: outer - central - np.pi * r * r * 2 * (co - cc),
        2: central - np.pi * r * r * 2 * cc,
    }
    for c in (1, 2):
        assert abs((gt.labels == c).sum() * vox / expected[c] - 1) < 0.02, c
    total = (gt.labels > 0).sum() * vox
    for c in (1, 2):
        assert abs((gt.labels == c).sum() * vox / total - expected[c] / outer) < 0.02 * expected[c] / outer

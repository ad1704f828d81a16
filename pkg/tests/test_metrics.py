import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage as ndi
from shapely.geometry import Polygon

from phantomflow.errors import DegenerateContour, EmptyStack, TooFewPoints
from phantomflow.metrics import (circularity, largest_component_contour, metrics_stack, perforation,
                                 smoothness)
from phantomflow.phantom import analytic_perforation_area_mm2, default_manifest, default_phantom
from phantomflow.segment.snake import resample_closed

from conftest import label_volume


def circle(r=50.0, n=400):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def star(r=50.0, spikes=12, amp=0.3, n=720):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    rad = r * (1 + amp * np.cos(spikes * t))
    return np.column_stack([rad * np.cos(t), rad * np.sin(t)])


def test_circularity_circle_and_square():
    assert circularity(circle()) == pytest.approx(1.0, abs=0.05)
    sq = np.array([[0, 0], [10, 0], [10, 10], [0, 10.0]])
    assert circularity(sq) == pytest.approx(math.pi / 4, abs=0.01)


def test_circularity_of_rasterized_disk():
    yy, xx = np.indices((140, 140))
    mask = (yy - 70) ** 2 + (xx - 70) ** 2 <= 50 ** 2
    c = largest_component_contour(mask)
    assert circularity(c) == pytest.approx(1.0, abs=0.05)


def test_circularity_degenerate():
    with pytest.raises(DegenerateContour):
        circularity(np.array([[0, 0], [1, 0], [2, 0], [3, 0.0]]))


def random_polygon(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.2, 1.0, n)
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)]) * rng.uniform(0.1, 100) + rng.uniform(-50, 50, 2)
    return pts


def test_circularity_bounded_and_scale_invariant_1000_polygons():
    rng = np.random.default_rng(11)
    checked, seed = 0, 0
    while checked < 1000:
        pts = random_polygon(seed)
        seed += 1
        if not Polygon(pts).is_valid or Polygon(pts).area <= 0:
            continue
        c = circularity(pts)
        assert 0 < c <= 1.0
        s = rng.uniform(0.01, 100)
        assert abs(circularity(pts * s) - c) < 1e-9
        checked += 1


def test_smoothness_circle_and_too_few_points():
    assert smoothness(circle()) == pytest.approx(1.0, abs=0.02)
    with pytest.raises(TooFewPoints):
        smoothness(circle(n=5), harmonics=10)


def dft_smoothness(pts, k, n=256):
    """Direct O(n^2) DFT low-pass, independent of numpy.fft."""
    z = resample_closed(pts, n) @ np.array([1.0, 1j])
    idx = np.arange(n)
    coeff = np.array([np.sum(z * np.exp(-2j * np.pi * f * idx / n)) / n for f in range(-k, k + 1)])
    rec = np.array([np.sum(coeff * np.exp(2j * np.pi * np.arange(-k, k + 1) * j / n)) for j in range(n)])
    per = lambda w: np.abs(np.diff(np.append(w, w[0]))).sum()  # noqa: E731
    return min(per(rec) / per(z), 1.0)


def test_star_smoothness_matches_dft_oracle():
    pts = star()
    got = smoothness(pts)
    assert got == pytest.approx(dft_smoothness(pts, 10), abs=1e-9)
    assert got < 0.8


@settings(max_examples=30)
@given(st.floats(0, 2 * np.pi), st.floats(0.05, 50))
def test_smoothness_rotation_scale_invariant(theta, s):
    pts = star(spikes=7, amp=0.15)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert abs(smoothness(pts @ rot.T * s) - smoothness(pts)) < 1e-6


def ring_mask(size=80, rc=20, ro=32):
    yy, xx = np.indices((size, size))
    r = np.hypot(yy - size / 2 + 0.5, xx - size / 2 + 0.5)
    lab = np.zeros((size, size), np.uint8)
    lab[r <= ro] = 1
    lab[r <= rc] = 2
    return lab, r


def test_perforation_resection_inside_central():
    lab, r = ring_mask()
    lab[r <= 8] = 3
    assert perforation(lab, 0.1) == (0.0, 0)


def test_perforation_single_patch():
    lab, r = ring_mask()
    lab[r <= 8] = 3
    lab[38:42, 64:69] = 3  # 20 px wholly in the peripheral ring
    area, sites = perforation(lab, math.sqrt(0.1))
    assert area == pytest.approx(2.0) and sites == 1


def test_perforation_patch_touching_central_and_resection():
    lab, r = ring_mask()
    # cavity reaching out of the central zone through a wedge
    wedge = (np.abs(np.indices(lab.shape)[0] - 39.5) <= 2) & (np.indices(lab.shape)[1] >= 40) & (r <= 26)
    lab[(r <= 8) | wedge] = 3
    expected = np.count_nonzero(wedge & (r > 20))
    area, sites = perforation(lab, 1.0)
    assert area == expected and sites == 1


def test_perforation_two_sites_additive():
    lab, r = ring_mask()
    one, two = lab.copy(), lab.copy()
    one[10:12, 38:43] = 3
    two[68:70, 38:43] = 3
    both = lab.copy()
    both[10:12, 38:43] = 3
    both[68:70, 38:43] = 3
    a1, _ = perforation(one, 0.2)
    a2, _ = perforation(two, 0.2)
    ab, sites = perforation(both, 0.2)
    assert sites == 2 and ab == pytest.approx(a1 + a2) and a1 == pytest.approx(10 * 0.04)


def test_perforation_no_resection():
    lab, _ = ring_mask()
    assert perforation(lab, 1.0) == (0.0, 0)


def test_metrics_stack_identical_frames():
    lab, r = ring_mask()
    lab[r <= 12] = 3
    lab[10:12, 38:43] = 3
    rep = metrics_stack(label_volume(np.stack([lab] * 4)))
    assert len(rep.per_frame) == 4 and rep.skipped_frames == 0
    assert all(v["std"] == 0 for v in rep.aggregates.values())
    assert rep.metadata["definitions"] == "substitute"


def test_metrics_stack_unresected_phantom(unresected_phantom):
    _, truth = unresected_phantom
    rep = metrics_stack(truth)
    assert rep.per_frame == () and rep.skipped_frames == truth.manifest.slice_count


def test_metrics_stack_perforation_vs_analytic(resected_phantom):
    _, truth = resected_phantom
    rep = metrics_stack(truth)
    expected = analytic_perforation_area_mm2(default_phantom(True), default_manifest())
    assert rep.total_perforation_area_mm2 == pytest.approx(expected, rel=0.10)
    assert all(0 < f.circularity <= 1 and 0 < f.smoothness <= 1 for f in rep.per_frame)


def test_metrics_stack_empty():
    with pytest.raises(EmptyStack):
        metrics_stack(np.zeros((0, 3, 3), np.uint8))


def test_tiny_component_contour_falls_back_to_raw_boundary():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    c = largest_component_contour(m)
    assert c is not None and c.centroid == pytest.approx((2, 2))

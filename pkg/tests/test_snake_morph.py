from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.draw import disk as draw_disk

from phantomflow.errors import (BadRadius, DegenerateInit, NoContrast, SeedOutOfBounds, TooFewPoints)
from phantomflow.segment.morph import (ChanVeseParams, flood_fill, morph_chan_vese, morph_contrast_enhance,
                                       region_energy)
from phantomflow.segment.pipeline import rect_contour
from phantomflow.segment.snake import SnakeParams, active_contour, evolve_snake, internal_eigenvalues
from phantomflow.volume import Contour


def disk_image(shape=(128, 128), center=(64, 64), r=30, fg=200, bg=30):
    img = np.full(shape, bg, np.uint8)
    rr, cc = draw_disk(center, r, shape=shape)
    img[rr, cc] = fg
    return img


def analytic_disk(shape, center, r):
    yy, xx = np.indices(shape)
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= r ** 2


def test_snake_finds_disk():
    img = disk_image()
    c = active_contour(img, rect_contour((8, 8, 111, 111)))
    got = c.rasterize(img.shape)
    truth = analytic_disk(img.shape, (64, 64), 30)
    assert np.count_nonzero(got & truth) / np.count_nonzero(got | truth) >= 0.98


def test_snake_pure_shrink_on_uniform_image():
    areas = []
    p = SnakeParams(max_iters=40, min_area_px=1.0)
    evolve_snake(np.full((100, 100), 80, np.uint8), rect_contour((10, 10, 80, 80)), p,
                       callback=lambda it, pts: areas.append(Contour(pts).area))
    assert len(areas) > 5 and np.all(np.diff(areas) < 0)


def test_snake_rejects_few_points():
    with pytest.raises(TooFewPoints):
        active_contour(np.zeros((10, 10)), np.array([[1, 1], [5, 1], [5, 5.0]]))
    with pytest.raises(TooFewPoints):
        SnakeParams(n_points=3)


def test_internal_eigenvalues_match_matrix():
    n, a, b = 12, 0.3, 0.7
    d2 = np.roll(np.eye(n), 1, 0) + np.roll(np.eye(n), -1, 0) - 2 * np.eye(n)
    A = -a * d2 + b * d2 @ d2
    assert np.allclose(np.sort(np.linalg.eigvalsh(A)), np.sort(internal_eigenvalues(n, a, b)))


def test_contrast_enhance_uniform_unchanged():
    img = np.full((20, 20), 77, np.uint8)
    assert np.array_equal(morph_contrast_enhance(img, 3), img)


def test_contrast_enhance_single_bright_pixel():
    img = np.zeros((7, 7), np.uint8)
    img[3, 3] = 200
    out = morph_contrast_enhance(img, 2)
    # white top-hat of an isolated peak is the peak itself: 200 + 200 clamps
    expected = np.zeros((7, 7), np.uint8)
    expected[3, 3] = 255
    assert np.array_equal(out, expected)
    with pytest.raises(BadRadius):
        morph_contrast_enhance(img, 0)


def two_level(shape=(96, 96), center=(48, 44), axes=(25, 18)):
    yy, xx = np.indices(shape)
    truth = ((yy - center[0]) / axes[0]) ** 2 + ((xx - center[1]) / axes[1]) ** 2 <= 1
    return np.where(truth, 200, 50).astype(np.uint8), truth


def test_chan_vese_two_level():
    img, truth = two_level()
    init = analytic_disk(img.shape, (40, 50), 12)
    res = morph_chan_vese(img, init, ChanVeseParams(max_iters=300))
    oracle = img > 125
    assert res.converged
    assert np.count_nonzero(res.mask & oracle) / np.count_nonzero(res.mask | oracle) >= 0.99


def test_chan_vese_energy_non_increasing():
    img, _ = two_level()
    res = morph_chan_vese(img, analytic_disk(img.shape, (40, 50), 8), ChanVeseParams(max_iters=300))
    e = np.array(res.energy)
    assert np.all(np.diff(e) <= 1e-9)
    assert e[-1] == pytest.approx(region_energy(img.astype(float), res.mask))


def test_chan_vese_errors():
    img, _ = two_level()
    with pytest.raises(NoContrast):
        morph_chan_vese(np.full((20, 20), 9), analytic_disk((20, 20), (10, 10), 4))
    with pytest.raises(DegenerateInit):
        morph_chan_vese(img, np.zeros(img.shape, bool))
    with pytest.raises(DegenerateInit):
        morph_chan_vese(img, np.ones(img.shape, bool))


def test_chan_vese_mirror_symmetry():
    img, _ = two_level(center=(48, 48))
    img = np.maximum(img, img[:, ::-1])
    init = analytic_disk(img.shape, (48, 48), 10)
    res = morph_chan_vese(img, init)
    assert np.array_equal(res.mask, res.mask[:, ::-1])


def bfs_fill(img, seed, tol):
    x, y = seed
    h, w = img.shape
    ref = int(img[y, x])
    out = np.zeros(img.shape, bool)
    out[y, x] = True
    q = deque([(y, x)])
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and not out[rr, cc] and abs(int(img[rr, cc]) - ref) <= tol:
                out[rr, cc] = True
                q.append((rr, cc))
    return out


def test_flood_fill_ring_interior():
    img = np.zeros((11, 11), np.uint8)
    img[2, 2:9] = img[8, 2:9] = img[2:9, 2] = img[2:9, 8] = 255
    got = flood_fill(img, (5, 5), 0)
    interior = np.zeros_like(got)
    interior[3:8, 3:8] = True
    assert np.array_equal(got, interior)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 60))
def test_flood_fill_matches_bfs(seed, tol):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 4, (15, 17)).astype(np.uint8) * 40
    s = (int(rng.integers(0, 17)), int(rng.integers(0, 15)))
    assert np.array_equal(flood_fill(img, s, tol), bfs_fill(img, s, tol))


def test_flood_fill_uniform_and_bounds():
    assert flood_fill(np.full((5, 6), 3, np.uint8), (2, 2), 0).all()
    with pytest.raises(SeedOutOfBounds):
        flood_fill(np.zeros((5, 5)), (-1, 0), 0)

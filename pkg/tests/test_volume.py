import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phantomflow.errors import InvalidContour, ManifestError
from phantomflow.volume import (CLASS_CODES, Contour, ImageStack, LabelVolume, MetricsReport, FrameMetrics,
                                ScanManifest, TriMesh, VoxelGrid, class_masks)


def test_manifest_spacing_derived():
    m = ScanManifest.create(85, 256, 256, 0.2, 60.0)
    assert m.slice_spacing_mm == pytest.approx(60 / 85, rel=1e-12)
    assert m.shape == (85, 256, 256)
    assert m.voxel_spacing_mm == (0.2, 0.2, 60 / 85)


def test_manifest_rejects_inconsistent_spacing():
    with pytest.raises(ManifestError):
        ScanManifest(85, 10, 10, 0.2, 60.0, 0.7)
    with pytest.raises(ManifestError):
        ScanManifest.create(0, 10, 10, 0.2, 60.0)
    with pytest.raises(ManifestError):
        ScanManifest.create(5, 10, 10, -0.2, 60.0)


@given(n=st.integers(1, 500), w=st.integers(1, 2000), h=st.integers(1, 2000),
       px=st.floats(1e-3, 10), length=st.floats(1e-2, 1e3))
def test_manifest_json_round_trip_exact(n, w, h, px, length):
    m = ScanManifest.create(n, w, h, px, length, "src", 60.0)
    back = ScanManifest.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back == m


def test_manifest_from_dict_rejects_unknown_and_missing():
    d = ScanManifest.create(3, 4, 4, 1.0, 3.0).to_dict()
    with pytest.raises(ManifestError):
        ScanManifest.from_dict({**d, "bogus": 1})
    d.pop("pixel_size_mm")
    with pytest.raises(ManifestError):
        ScanManifest.from_dict(d)


def test_class_masks_uniform_volume():
    m = ScanManifest.create(2, 3, 3, 1.0, 2.0)
    vol = LabelVolume(m, np.full((2, 3, 3), 2))
    assert class_masks(vol, 2).all()
    assert not class_masks(vol, 3).any()
    with pytest.raises(ValueError):
        class_masks(vol, 4)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_class_masks_partition(seed):
    rng = np.random.default_rng(seed)
    m = ScanManifest.create(3, 5, 4, 1.0, 3.0)
    vol = LabelVolume(m, rng.integers(0, 4, m.shape))
    total = sum(class_masks(vol, c).astype(int) for c in CLASS_CODES)
    assert np.all(total == 1)


def test_label_volume_rejects_bad_codes_and_shapes():
    m = ScanManifest.create(1, 2, 2, 1.0, 1.0)
    with pytest.raises(ManifestError):
        LabelVolume(m, np.full((1, 2, 2), 4))
    with pytest.raises(ManifestError):
        ImageStack(m, np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(ManifestError):
        ImageStack(m, np.zeros((1, 2, 2), np.uint16))


def test_types_are_immutable():
    m = ScanManifest.create(1, 2, 2, 1.0, 1.0)
    s = ImageStack(m, np.zeros((1, 2, 2), np.uint8))
    with pytest.raises(ValueError):
        s.slices[0, 0, 0] = 1


def test_contour_validation():
    with pytest.raises(InvalidContour):
        Contour([[0, 0], [1, 0], [1, 1]])
    with pytest.raises(InvalidContour):  # bow tie
        Contour([[0, 0], [1, 1], [1, 0], [0, 1]])
    with pytest.raises(InvalidContour):
        Contour([[0, 0], [1, 0], [2, 0], [3, 0]])
    sq = Contour([[0, 0], [4, 0], [4, 4], [0, 4], [0, 0]])
    assert len(sq) == 4  # duplicated closing point dropped
    assert sq.area == 16 and sq.perimeter == 16
    assert sq.centroid == pytest.approx((2, 2))


def test_contour_rasterize_and_scale():
    sq = Contour([[2, 2], [6, 2], [6, 6], [2, 6]])
    mask = sq.rasterize((10, 10))
    assert mask[4, 4] and not mask[0, 0]
    half = sq.scaled(0.5)
    assert half.area == pytest.approx(4.0)
    assert half.centroid == pytest.approx(sq.centroid)


def test_voxel_grid_dims_and_frame():
    g = VoxelGrid(np.zeros((4, 3, 2), bool), (0.5, 0.5, 2.0))
    assert g.dims == (2, 3, 4)
    assert g.voxel_volume_mm3 == 0.5
    assert g.same_frame(g.with_occupancy(np.ones((4, 3, 2), bool)))
    assert not g.same_frame(VoxelGrid(np.zeros((4, 3, 2), bool)))
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros((2, 2, 2), bool), (1, 0, 1))


def test_trimesh_index_check_and_cleanup():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2], [0, 0, 1]])
    assert len(m.without_degenerate()) == 1
    assert np.array_equal(m.flipped().triangles[0], [2, 1, 0])


def test_metrics_report_aggregates_recomputable():
    frames = tuple(FrameMetrics(i, 0.5 + 0.1 * i, 0.9, float(i), i) for i in range(3))
    rep = MetricsReport(frames)
    agg = rep.aggregates
    assert agg["circularity"]["mean"] == pytest.approx(0.6)
    assert agg["perforation_sites"]["max"] == 2
    assert rep.total_perforation_area_mm2 == 3.0
    assert np.isnan(MetricsReport(()).aggregates["smoothness"]["mean"])

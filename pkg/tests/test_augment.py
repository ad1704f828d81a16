import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phantomflow.augment import (AugmentConfig, allowed_region, apply_variant, axis_voxels, diversity_report,
                                 generate_resection_variant, generate_variants, import_variant)
from phantomflow.errors import ConstraintCollapse, DimensionMismatch, EmptyResection, NoVariants
from phantomflow.evaluation import iou
from phantomflow.reconstruct import derive_component_grids, marching_cubes, mesh_stats, signed_volume
from phantomflow.stackio import write_voxel_grid
from phantomflow.volume import CENTRAL, PERIPHERAL, VoxelGrid

SPACING = (0.5, 0.5, 0.8)


def toy_grids(n=40):
    """Ellipsoidal organ, inner zone, axial channel widened into a bowl."""
    z, y, x = np.mgrid[:n, :n, :n] - (n - 1) / 2
    F = (x / 16) ** 2 + (y / 14) ** 2 + (z / 18) ** 2 <= 1
    C = (x / 10) ** 2 + (y / 9) ** 2 + (z / 12) ** 2 <= 1
    r = np.hypot(x, y)
    R = F & ((r <= 1.5) | ((r <= 7) & (np.abs(z) <= 6)))
    mk = lambda a: VoxelGrid(a, SPACING)  # noqa: E731
    return mk(F), mk(R), mk(C)


def small_cfg(**kw):
    base = dict(variant_count=3)
    base.update(kw)
    return AugmentConfig(**base)


ZERO = dict(noise_amplitude=(0,) * 6, morph_jitter_radius=(0,) * 6)


def test_zero_noise_is_identity():
    F, R, C = toy_grids()
    v = generate_resection_variant(R, F, C, small_cfg(**ZERO), 0)
    assert np.array_equal(v.occupancy, R.occupancy)


def test_identity_on_phantom(resected_phantom):
    _, gt = resected_phantom
    g = derive_component_grids(gt)
    v = generate_resection_variant(g.resection, g.filled, g.central, AugmentConfig(**ZERO, variant_count=1), 0)
    assert np.array_equal(v.occupancy, g.resection.occupancy)
    applied = apply_variant(g.filled, v)
    direct = (gt.labels == PERIPHERAL) | (gt.labels == CENTRAL)
    assert iou(applied.grid.occupancy, direct) == 1.0


def test_variants_deterministic_and_thread_independent():
    F, R, C = toy_grids()
    cfg = small_cfg(seed=7)
    a = generate_variants(R, F, C, cfg)
    b = generate_variants(R, F, C, cfg, threads=3)
    assert all(np.array_equal(x.occupancy, y.occupancy) for x, y in zip(a, b))


def test_seed_changes_output():
    F, R, C = toy_grids()
    a = generate_resection_variant(R, F, C, small_cfg(seed=1), 0)
    b = generate_resection_variant(R, F, C, small_cfg(seed=2), 0)
    assert not np.array_equal(a.occupancy, b.occupancy)


@pytest.mark.parametrize("margin", [0.0, 1.0])
def test_variants_respect_constraints(margin):
    F, R, C = toy_grids()
    cfg = small_cfg(variant_count=4, allowed_region_margin_mm=margin)
    allowed = allowed_region(F, C, margin)
    anchor = axis_voxels(F) | R.occupancy
    from scipy import ndimage as ndi
    for v in generate_variants(R, F, C, cfg):
        occ = v.occupancy
        assert not np.any(occ & ~F.occupancy)
        assert not np.any(occ & ~(allowed | R.occupancy))
        lab, n = ndi.label(occ)
        touched = set(np.unique(lab[anchor & occ])) - {0}
        assert touched == set(range(1, n + 1))


def test_allowed_region_margin_grows_monotonically():
    F, _, C = toy_grids()
    a0, a1, a2 = (allowed_region(F, C, m) for m in (0.0, 1.0, 2.0))
    assert np.array_equal(a0, C.occupancy & F.occupancy)
    assert not np.any(a0 & ~a1) and not np.any(a1 & ~a2)
    assert not np.any(a2 & ~F.occupancy)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_boolean_voxel_identity(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(2, 12, 3))
    F = VoxelGrid(rng.random(shape) < rng.uniform(0.2, 0.9), SPACING)
    Rp = VoxelGrid(rng.random(shape) < rng.uniform(0.0, 0.8), SPACING)
    out = F.occupancy.copy()
    for idx in np.argwhere(Rp.occupancy):  # voxel-by-voxel removal oracle
        out[tuple(idx)] = False
    if not out.any():
        return
    res = apply_variant(F, Rp)
    n_f, n_int = int(F.occupancy.sum()), int((F.occupancy & Rp.occupancy).sum())
    assert int(res.grid.occupancy.sum()) == n_f - n_int
    assert np.array_equal(res.grid.occupancy, out)


def test_empty_variant_mesh_equals_organ_mesh():
    F, R, _ = toy_grids()
    res = apply_variant(F, R.with_occupancy(np.zeros_like(R.occupancy)))
    assert signed_volume(res.mesh) == pytest.approx(signed_volume(marching_cubes(F)), rel=1e-12)


def test_applied_variant_mesh_watertight():
    F, R, C = toy_grids()
    for v in generate_variants(R, F, C, small_cfg()):
        assert mesh_stats(apply_variant(F, v).mesh).watertight


def test_frame_mismatch_rejected():
    F, R, _ = toy_grids()
    other = VoxelGrid(R.occupancy, (1.0, 1.0, 1.0))
    with pytest.raises(DimensionMismatch):
        apply_variant(F, other)


def test_empty_resection_raises():
    F, R, C = toy_grids()
    with pytest.raises(EmptyResection):
        generate_resection_variant(R.with_occupancy(np.zeros_like(R.occupancy)), F, C, small_cfg(), 0)


def test_constraint_collapse_raises():
    F, R, C = toy_grids()
    # R sits outside the organ entirely, so clipping to F leaves nothing
    occ = np.zeros_like(R.occupancy)
    occ[0, 0, 0] = True
    with pytest.raises(ConstraintCollapse):
        generate_resection_variant(R.with_occupancy(occ), F, C, small_cfg(**ZERO), 0)


def test_no_variants_raises():
    _, R, _ = toy_grids()
    with pytest.raises(NoVariants):
        diversity_report([], R, small_cfg())


def test_original_is_flagged_above_upper_bound():
    _, R, _ = toy_grids()
    rep = diversity_report([R, R], R, small_cfg())
    assert rep.iou_vs_original == (1.0, 1.0)
    assert rep.within_bounds == (False, False)
    assert not rep.passed
    assert "passed=false" in rep.as_keyvalue()


def test_diversity_report_pairwise_symmetric():
    F, R, C = toy_grids()
    vs = generate_variants(R, F, C, small_cfg(variant_count=4))
    rep = diversity_report(vs, R, small_cfg())
    assert np.allclose(rep.pairwise, rep.pairwise.T)
    assert np.allclose(np.diag(rep.pairwise), 1.0)
    for i, v in enumerate(vs):
        assert rep.iou_vs_original[i] == pytest.approx(iou(v.occupancy, R.occupancy))


def test_import_variant_clips_to_organ(tmp_path):
    F, R, _ = toy_grids()
    occ = R.occupancy.copy()
    occ[0] = True  # outside the organ
    write_voxel_grid(tmp_path / "v.vxg", R.with_occupancy(occ))
    g = import_variant(tmp_path / "v.vxg", F)
    assert np.array_equal(g.occupancy, occ & F.occupancy)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(noise_amplitude=(0.1,))
    with pytest.raises(ValueError):
        AugmentConfig(iou_bounds=(0.9, 0.5))
    assert AugmentConfig().level_shapes() == [30, 40, 54, 72, 96, 128]

"""Voxel grids derived from a label volume."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from ..volume import CENTRAL, PERIPHERAL, RESECTION, LabelVolume, VoxelGrid


@dataclass(frozen=True)
class ComponentGrids:
    """``filled`` (F): organ with per-slice holes filled; ``resection`` (R):
    class 3; ``central`` (C): F minus the peripheral class, i.e. the central
    zone's extent before resection; ``classes``: one grid per class code."""
    filled: VoxelGrid
    resection: VoxelGrid
    central: VoxelGrid
    classes: dict


def grid_from_mask(mask: np.ndarray, vol: LabelVolume) -> VoxelGrid:
    sx, sy, sz = vol.manifest.voxel_spacing_mm
    return VoxelGrid(mask, (sx, sy, sz))


def filled_organ(labels: np.ndarray) -> np.ndarray:
    fg = np.asarray(labels) > 0
    return np.stack([ndi.binary_fill_holes(s) for s in fg])


def derive_component_grids(vol: LabelVolume) -> ComponentGrids:
    lab = vol.labels
    f = filled_organ(lab)
    classes = {c: grid_from_mask(lab == c, vol) for c in (PERIPHERAL, CENTRAL, RESECTION)}
    return ComponentGrids(filled=grid_from_mask(f, vol),
                          resection=grid_from_mask(lab == RESECTION, vol),
                          central=grid_from_mask(f & (lab != PERIPHERAL), vol),
                          classes=classes)

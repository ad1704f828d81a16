"""Voxel grids and surface meshes from label volumes."""
from .grids import ComponentGrids, derive_component_grids, filled_organ
from .mcubes import marching_cubes
from .mesh import (MESH_FORMATS, MeshStats, export_mesh, import_mesh, is_watertight, mesh_stats,
                   shell_count, signed_volume, surface_area, unit_cube)

__all__ = ["ComponentGrids", "derive_component_grids", "filled_organ", "marching_cubes", "MESH_FORMATS",
           "MeshStats", "export_mesh", "import_mesh", "is_watertight", "mesh_stats", "shell_count",
           "signed_volume", "surface_area", "unit_cube"]

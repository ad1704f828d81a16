"""On-disk layout for image stacks, label volumes and voxel grids.

Stack directory::

    manifest.json          every ScanManifest field
    slice_0000.png         8-bit grayscale, one file per slice
    slice_0001.png
    ...

Label directories use the same layout with files named
``slice_0000_labels.png`` holding class codes 0..3.

Voxel grid file (``.vxg``), all little-endian::

    offset  size  content
    0       4     magic b"VXG1"
    4       12    nx, ny, nz as uint32
    16      24    sx, sy, sz spacing in mm as float64
    40      24    ox, oy, oz origin in mm as float64
    64      ...   occupancy bits, C order over [z, y, x],
                  packed with numpy.packbits(bitorder="little"), ceil(n/8) bytes
"""
from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorruptImage, MalformedManifest, ManifestError, SliceCountMismatch
from .volume import ImageStack, LabelVolume, ScanManifest, VoxelGrid

MANIFEST_NAME = "manifest.json"
_SLICE_RE = re.compile(r"^slice_(\d{4,})\.png$")
_LABEL_RE = re.compile(r"^slice_(\d{4,})_labels\.png$")
_VXG_MAGIC = b"VXG1"
_VXG_HEADER = struct.Struct("<4s3I3d3d")


def _write_manifest(path: Path, manifest: ScanManifest) -> None:
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
    (path / MANIFEST_NAME).write_text(text + "\n", encoding="utf-8")


def read_manifest(path) -> ScanManifest:
    mpath = Path(path) / MANIFEST_NAME
    if not mpath.is_file():
        raise MalformedManifest(f"missing {mpath}")
    try:
        data = json.loads(mpath.read_text(encoding="utf-8"))
        return ScanManifest.from_dict(data)
    except (json.JSONDecodeError, TypeError, ManifestError) as exc:
        raise MalformedManifest(f"{mpath}: {exc}") from exc


def _write_slices(path: Path, arr: np.ndarray, suffix: str) -> None:
    path.mkdir(parents=True, exist_ok=True)
    for old in path.glob("slice_*.png"):
        old.unlink()
    for k, img in enumerate(arr):
        # PNG metadata left empty so identical arrays give identical bytes
        Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode="L").save(
            path / f"slice_{k:04d}{suffix}.png", optimize=False)


def _read_slices(path: Path, manifest: ScanManifest, pattern: re.Pattern) -> np.ndarray:
    files = sorted((int(m.group(1)), p) for p in path.iterdir()
                   if (m := pattern.match(p.name)))
    if len(files) != manifest.slice_count:
        raise SliceCountMismatch(
            f"{path}: manifest says {manifest.slice_count} slices, found {len(files)} files")
    if [i for i, _ in files] != list(range(manifest.slice_count)):
        raise SliceCountMismatch(f"{path}: slice numbering is not contiguous from 0")
    out = np.empty(manifest.shape, dtype=np.uint8)
    for k, p in files:
        try:
            with Image.open(p) as im:
                img = np.asarray(im)
        except Exception as exc:  # Pillow raises a zoo of types on bad data
            raise CorruptImage(f"{p}: {exc}") from exc
        if img.ndim != 2 or img.dtype != np.uint8:
            raise CorruptImage(f"{p}: expected 8-bit grayscale, got {img.dtype} {img.shape}")
        if img.shape != manifest.shape[1:]:
            raise CorruptImage(f"{p}: size {img.shape} does not match manifest {manifest.shape[1:]}")
        out[k] = img
    return out


def write_stack(path, stack: ImageStack) -> Path:
    path = Path(path)
    _write_slices(path, stack.slices, "")
    _write_manifest(path, stack.manifest)
    return path


def read_stack(path) -> ImageStack:
    path = Path(path)
    manifest = read_manifest(path)
    return ImageStack(manifest, _read_slices(path, manifest, _SLICE_RE))


def write_labels(path, vol: LabelVolume) -> Path:
    path = Path(path)
    _write_slices(path, vol.labels, "_labels")
    _write_manifest(path, vol.manifest)
    return path


def read_labels(path) -> LabelVolume:
    path = Path(path)
    manifest = read_manifest(path)
    labels = _read_slices(path, manifest, _LABEL_RE)
    if labels.max(initial=0) > 3:
        raise CorruptImage(f"{path}: label files contain codes outside 0..3")
    return LabelVolume(manifest, labels)


def write_voxel_grid(path, grid: VoxelGrid) -> Path:
    path = Path(path)
    nx, ny, nz = grid.dims
    header = _VXG_HEADER.pack(_VXG_MAGIC, nx, ny, nz, *grid.spacing_mm, *grid.origin_mm)
    bits = np.packbits(grid.occupancy.ravel(order="C"), bitorder="little")
    path.write_bytes(header + bits.tobytes())
    return path


def read_voxel_grid(path) -> VoxelGrid:
    data = Path(path).read_bytes()
    if len(data) < _VXG_HEADER.size:
        raise CorruptImage(f"{path}: truncated voxel grid header")
    magic, nx, ny, nz, sx, sy, sz, ox, oy, oz = _VXG_HEADER.unpack_from(data)
    if magic != _VXG_MAGIC:
        raise CorruptImage(f"{path}: bad magic {magic!r}")
    n = nx * ny * nz
    payload = np.frombuffer(data, dtype=np.uint8, offset=_VXG_HEADER.size)
    if payload.size != (n + 7) // 8:
        raise CorruptImage(f"{path}: expected {(n + 7) // 8} payload bytes, got {payload.size}")
    occ = np.unpackbits(payload, count=n, bitorder="little").astype(bool).reshape(nz, ny, nx)
    return VoxelGrid(occ, (sx, sy, sz), (ox, oy, oz))

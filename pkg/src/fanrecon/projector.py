"""Line integrals, forward projection, and the forced-zero cell machinery.

A cell is *forced zero* when at least one ray with a zero sinogram value
crosses it: the measurement proves the cell holds no material.  Filtered
ray paths drop those cells so the iterative correction never touches them
and line integrals skip them outright.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .geometry import RayPath, RaySystem


def line_integral(image: np.ndarray, path: RayPath) -> float:
    """Weighted sum of image values along one ray path.

    Weights are the per-cell chord lengths; an empty path integrates to 0.
    """
    if path.cells.size == 0:
        return 0.0
    flat = np.asarray(image, dtype=np.float64).ravel()
    if path.cells.size and int(path.cells.max()) >= flat.size:
        raise ValueError("path cell indices exceed image size")
    return float(np.dot(path.segments_mm, flat[path.cells]))


@njit(cache=True)
def _forward(indptr, cells, segs, mu, out):
    for ray in range(out.size):
        acc = 0.0
        for k in range(indptr[ray], indptr[ray + 1]):
            acc += segs[k] * mu[cells[k]]
        out[ray] = acc


def forward_project(image: np.ndarray, system: RaySystem, filtered: bool = False) -> np.ndarray:
    """Line integrals of the image along every ray, as a (nd, nv) sinogram."""
    geom = system.geometry
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (geom.image_rows, geom.image_cols):
        raise ValueError(
            f"image shape {image.shape} does not match geometry "
            f"{(geom.image_rows, geom.image_cols)}")
    if filtered:
        if not system.has_filtered:
            raise ValueError("filtered paths not populated; call filter_ray_paths first")
        indptr, cells, segs = (system.filtered_indptr, system.filtered_cells,
                               system.filtered_segments_mm)
    else:
        indptr, cells, segs = system.indptr, system.cells, system.segments_mm
    out = np.empty(geom.n_rays, np.float64)
    _forward(indptr, cells, segs, np.ascontiguousarray(image.ravel()), out)
    return out.reshape(geom.detector_count, geom.view_count)


@njit(cache=True)
def _mark_zero_cells(indptr, cells, sino_flat, eps, mask_flat):
    for ray in range(sino_flat.size):
        if sino_flat[ray] <= eps:
            for k in range(indptr[ray], indptr[ray + 1]):
                mask_flat[cells[k]] = True


def build_zero_mask(sinogram: np.ndarray, system: RaySystem,
                    zero_threshold: float = 0.0) -> np.ndarray:
    """Boolean image marking cells crossed by at least one zero-valued ray.

    ``zero_threshold`` is an absolute tolerance for externally supplied
    sinograms; the default 0.0 tests exact equality, matching noiseless
    simulated data.
    """
    geom = system.geometry
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if sinogram.shape != (geom.detector_count, geom.view_count):
        raise ValueError(
            f"sinogram shape {sinogram.shape} does not match geometry "
            f"{(geom.detector_count, geom.view_count)}")
    mask = np.zeros(geom.image_rows * geom.image_cols, np.bool_)
    _mark_zero_cells(system.indptr, system.cells,
                     np.ascontiguousarray(sinogram.ravel()), zero_threshold, mask)
    return mask.reshape(geom.image_rows, geom.image_cols)


@njit(cache=True)
def _filter_paths(indptr, cells, segs, keep_flat, f_indptr, f_cells, f_segs):
    pos = 0
    nrays = indptr.size - 1
    for ray in range(nrays):
        f_indptr[ray] = pos
        for k in range(indptr[ray], indptr[ray + 1]):
            c = cells[k]
            if keep_flat[c]:
                f_cells[pos] = c
                f_segs[pos] = segs[k]
                pos += 1
    f_indptr[nrays] = pos
    return pos


def filter_ray_paths(system: RaySystem, mask: np.ndarray) -> RaySystem:
    """Return a RaySystem whose filtered paths exclude forced-zero cells.

    Order of the surviving cells within each path is preserved; full paths
    are shared with the input system.
    """
    geom = system.geometry
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (geom.image_rows, geom.image_cols):
        raise ValueError("mask shape does not match geometry")
    keep = np.ascontiguousarray(~mask.ravel())
    f_indptr = np.empty(system.indptr.size, np.int64)
    f_cells = np.empty(system.cells.size, np.int64)
    f_segs = np.empty(system.segments_mm.size, np.float64)
    used = _filter_paths(system.indptr, system.cells, system.segments_mm,
                         keep, f_indptr, f_cells, f_segs)
    return system.with_filtered(f_indptr, f_cells[:used].copy(), f_segs[:used].copy())


def apply_zero_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy of the image with every forced-zero cell set to exactly 0."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError(f"image shape {image.shape} does not match mask {mask.shape}")
    out = image.copy()
    out[mask] = 0.0
    return out

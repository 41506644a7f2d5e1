"""Fan-beam scan geometry and exact ray / pixel-grid intersection.

The scanner is a rotating point source with a flat line of equally spaced
detectors.  For every (detector, view) ray we compute the exact list of
pixels crossed and the chord length inside each pixel, by intersecting the
source-detector segment with all grid lines, sorting the crossing points,
and resolving each interval's pixel through its midpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# Crossing points closer than this (pixel units) are treated as a single
# corner hit; the resulting zero-length interval is dropped.
_CORNER_TOL = 1e-12


@dataclass(frozen=True)
class ScanGeometry:
    """Fan-beam scanning setup.

    Distances are in millimetres.  Internally all tracing happens in pixel
    units (distances divided by ``pixel_pitch_mm``); segment lengths are
    converted back to millimetres at the API boundary.
    """

    source_to_origin_mm: float = 800.0
    source_to_detectors_mm: float = 1500.0
    detector_count: int = 359
    view_count: int = 270
    image_rows: int = 250
    image_cols: int = 250
    pixel_pitch_mm: float = 1.0

    def __post_init__(self) -> None:
        if self.source_to_origin_mm <= 0.0:
            raise ValueError("source_to_origin_mm must be positive")
        if self.source_to_detectors_mm <= self.source_to_origin_mm:
            raise ValueError("source_to_detectors_mm must exceed source_to_origin_mm")
        for name in ("detector_count", "view_count", "image_rows", "image_cols"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.pixel_pitch_mm <= 0.0:
            raise ValueError("pixel_pitch_mm must be positive")

    # -- derived quantities -------------------------------------------------

    @property
    def origin_to_detectors_mm(self) -> float:
        return self.source_to_detectors_mm - self.source_to_origin_mm

    @property
    def detector_pitch(self) -> float:
        """Detector coordinate spacing in pixel units, (a + d) / d."""
        return self.source_to_detectors_mm / self.source_to_origin_mm

    @property
    def detector_pitch_mm(self) -> float:
        return self.detector_pitch * self.pixel_pitch_mm

    @property
    def virtual_detector_pitch_mm(self) -> float:
        """Detector spacing rescaled to the parallel line through the origin.

        Equals ``detector_pitch_mm * d / (a + d)``, which collapses to the
        pixel pitch: the detector spacing is chosen so that neighbouring rays
        are exactly one pixel apart where they pass the rotation centre.
        """
        return self.pixel_pitch_mm

    @property
    def n_rays(self) -> int:
        return self.detector_count * self.view_count

    @property
    def view_angle_step(self) -> float:
        return 2.0 * math.pi / self.view_count

    # -- index helpers ------------------------------------------------------

    def view_angle(self, view: int) -> float:
        if not 0 <= view < self.view_count:
            raise IndexError(f"view {view} out of range [0, {self.view_count})")
        return view * self.view_angle_step

    def ray_index(self, detector: int, view: int) -> int:
        """Flat ray index, detector * view_count + view."""
        if not 0 <= detector < self.detector_count:
            raise IndexError(f"detector {detector} out of range [0, {self.detector_count})")
        if not 0 <= view < self.view_count:
            raise IndexError(f"view {view} out of range [0, {self.view_count})")
        return detector * self.view_count + view

    def detector_view(self, ray_index: int) -> tuple[int, int]:
        if not 0 <= ray_index < self.n_rays:
            raise IndexError(f"ray index {ray_index} out of range [0, {self.n_rays})")
        return divmod(ray_index, self.view_count)

    def detector_coordinate_mm(self, detector: int) -> float:
        """Signed coordinate of a detector along the detector line."""
        if not 0 <= detector < self.detector_count:
            raise IndexError(f"detector {detector} out of range [0, {self.detector_count})")
        return (detector - (self.detector_count - 1) / 2.0) * self.detector_pitch_mm

    def fingerprint(self) -> str:
        """Short id used to match cached artifacts (pair pools, ray systems)."""
        return (
            f"d{self.source_to_origin_mm:g}-sdd{self.source_to_detectors_mm:g}"
            f"-nd{self.detector_count}-nv{self.view_count}"
            f"-{self.image_rows}x{self.image_cols}-p{self.pixel_pitch_mm:g}"
        )


@dataclass(frozen=True)
class RayPath:
    """Pixels crossed by one ray, with per-pixel chord lengths."""

    ray_index: int
    cells: np.ndarray         # flat pixel indices row * image_cols + col, int64
    segments_mm: np.ndarray   # chord length inside each pixel, float64
    sum_of_segments_mm: float

    def __len__(self) -> int:
        return self.cells.size


def source_position(geometry: ScanGeometry, view: int) -> tuple[float, float]:
    """Source location (x_mm, y_mm) for one view.

    The source starts at (0, -d) and rotates counter-clockwise by the view
    angle: (d sin(phi), -d cos(phi)).
    """
    phi = geometry.view_angle(view)
    d = geometry.source_to_origin_mm
    return (d * math.sin(phi), -d * math.cos(phi))


def detector_position(geometry: ScanGeometry, detector: int, view: int) -> tuple[float, float]:
    """Location (x_mm, y_mm) of one detector for one view."""
    dc = geometry.detector_coordinate_mm(detector)
    phi = geometry.view_angle(view)
    a = geometry.origin_to_detectors_mm
    sinf, cosf = math.sin(phi), math.cos(phi)
    return (cosf * dc - sinf * a, sinf * dc + cosf * a)


@njit(cache=True)
def _trace_one(x1, y1, x2, y2, nx, ny, cells, segs):
    """Trace one ray through the [-ny/2, ny/2] x [-nx/2, nx/2] pixel grid.

    Writes flat cell indices and segment lengths (pixel units) into the
    provided buffers and returns the number of crossed pixels.
    """
    xlo = -0.5 * ny
    xup = 0.5 * ny
    ylo = -0.5 * nx
    yup = 0.5 * nx

    if x1 == x2:
        # perfectly vertical ray: one pixel per row, unit segments
        if x1 < xlo or x1 > xup:
            return 0
        col = int(math.floor(x1 + 0.5 * ny))
        if col > ny - 1:
            col -= 1
        for k in range(1, nx + 1):
            ycm = ylo + k - 0.5
            lin = int(math.floor(0.5 * nx - ycm))
            if lin > nx - 1:
                lin -= 1
            cells[k - 1] = lin * ny + col
            segs[k - 1] = 1.0
        return nx

    if y1 == y2:
        # perfectly horizontal ray: one pixel per column, unit segments
        if y1 < ylo or y1 > yup:
            return 0
        lin = int(math.floor(0.5 * nx - y1))
        if lin > nx - 1:
            lin -= 1
        for k in range(1, ny + 1):
            xcm = xlo + k - 0.5
            col = int(math.floor(xcm + 0.5 * ny))
            if col > ny - 1:
                col -= 1
            cells[k - 1] = lin * ny + col
            segs[k - 1] = 1.0
        return ny

    m = (y2 - y1) / (x2 - x1)
    b = y1 - m * x1

    nmax = nx + ny + 2
    xs = np.empty(nmax, np.float64)
    ys = np.empty(nmax, np.float64)
    n = 0
    for k in range(nx + 1):            # horizontal grid lines y = ylo + k
        yh = ylo + k
        xh = (yh - b) / m
        if xlo <= xh and xh <= xup:
            xs[n] = xh
            ys[n] = yh
            n += 1
    for k in range(ny + 1):            # vertical grid lines x = xlo + k
        xv = xlo + k
        yv = m * xv + b
        if ylo <= yv and yv <= yup:
            xs[n] = xv
            ys[n] = yv
            n += 1
    if n < 2:
        return 0

    order = np.argsort(xs[:n])

    count = 0
    px = xs[order[0]]
    py = ys[order[0]]
    for t in range(1, n):
        cx = xs[order[t]]
        cy = ys[order[t]]
        dx = cx - px
        dy = cy - py
        seg = math.sqrt(dx * dx + dy * dy)
        if seg <= _CORNER_TOL:
            continue
        xcm = 0.5 * (px + cx)
        ycm = 0.5 * (py + cy)
        col = int(math.floor(xcm + 0.5 * ny))
        if col > ny - 1:
            col -= 1
        lin = int(math.floor(0.5 * nx - ycm))
        if lin > nx - 1:
            lin -= 1
        cells[count] = lin * ny + col
        segs[count] = seg
        count += 1
        px = cx
        py = cy
    return count


@njit(cache=True)
def _ray_endpoints(d, a, dc0, dstep, detector, view, c1):
    phi = view * c1
    sinf = math.sin(phi)
    cosf = math.cos(phi)
    x1 = d * sinf
    y1 = -d * cosf
    dc = dc0 + detector * dstep
    x2 = cosf * dc - sinf * a
    y2 = sinf * dc + cosf * a
    return x1, y1, x2, y2


@njit(cache=True)
def _count_all(d, a, nd, nv, nx, ny, dc0, dstep, c1, counts):
    cbuf = np.empty(nx + ny + 4, np.int64)
    sbuf = np.empty(nx + ny + 4, np.float64)
    for v in range(nv):
        for i in range(nd):
            x1, y1, x2, y2 = _ray_endpoints(d, a, dc0, dstep, i, v, c1)
            counts[i * nv + v] = _trace_one(x1, y1, x2, y2, nx, ny, cbuf, sbuf)


@njit(cache=True)
def _fill_all(d, a, nd, nv, nx, ny, dc0, dstep, c1, indptr, cells, segs, sums, mu, sino):
    for v in range(nv):
        for i in range(nd):
            ray = i * nv + v
            x1, y1, x2, y2 = _ray_endpoints(d, a, dc0, dstep, i, v, c1)
            lo = indptr[ray]
            n = _trace_one(x1, y1, x2, y2, nx, ny, cells[lo:], segs[lo:])
            total = 0.0
            acc = 0.0
            for k in range(lo, lo + n):
                total += segs[k]
                acc += segs[k] * mu[cells[k]]
            sums[ray] = total
            sino[ray] = acc


class RaySystem:
    """All ray paths of one geometry, stored in compressed sparse row form.

    ``indptr``/``cells``/``segments_mm`` describe the full paths; the
    ``filtered_*`` triplet (populated by ``projector.filter_ray_paths``)
    holds the same paths restricted to cells not forced to zero.
    """

    def __init__(self, geometry, indptr, cells, segments_mm, sums_mm,
                 filtered_indptr=None, filtered_cells=None, filtered_segments_mm=None):
        self.geometry = geometry
        self.indptr = indptr
        self.cells = cells
        self.segments_mm = segments_mm
        self.sums_mm = sums_mm
        self.filtered_indptr = filtered_indptr
        self.filtered_cells = filtered_cells
        self.filtered_segments_mm = filtered_segments_mm

    @property
    def n_rays(self) -> int:
        return self.geometry.n_rays

    @property
    def has_filtered(self) -> bool:
        return self.filtered_indptr is not None

    def path_by_index(self, ray_index: int, filtered: bool = False) -> RayPath:
        if not 0 <= ray_index < self.n_rays:
            raise IndexError(f"ray index {ray_index} out of range [0, {self.n_rays})")
        if filtered:
            if not self.has_filtered:
                raise ValueError("filtered paths not populated; call filter_ray_paths first")
            indptr, cells, segs = self.filtered_indptr, self.filtered_cells, self.filtered_segments_mm
        else:
            indptr, cells, segs = self.indptr, self.cells, self.segments_mm
        lo, hi = indptr[ray_index], indptr[ray_index + 1]
        c = cells[lo:hi]
        s = segs[lo:hi]
        total = float(self.sums_mm[ray_index]) if not filtered else float(np.sum(s))
        return RayPath(ray_index, c, s, total)

    def path(self, detector: int, view: int, filtered: bool = False) -> RayPath:
        return self.path_by_index(self.geometry.ray_index(detector, view), filtered)

    def with_filtered(self, indptr, cells, segments_mm) -> "RaySystem":
        return RaySystem(self.geometry, self.indptr, self.cells, self.segments_mm,
                         self.sums_mm, indptr, cells, segments_mm)

    # -- caching ------------------------------------------------------------

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            fingerprint=np.array(self.geometry.fingerprint()),
            params=np.array([
                self.geometry.source_to_origin_mm,
                self.geometry.source_to_detectors_mm,
                float(self.geometry.detector_count),
                float(self.geometry.view_count),
                float(self.geometry.image_rows),
                float(self.geometry.image_cols),
                self.geometry.pixel_pitch_mm,
            ]),
            indptr=self.indptr, cells=self.cells,
            segments_mm=self.segments_mm, sums_mm=self.sums_mm,
        )

    @staticmethod
    def load(path) -> "RaySystem":
        with np.load(path) as data:
            p = data["params"]
            geometry = ScanGeometry(
                source_to_origin_mm=float(p[0]),
                source_to_detectors_mm=float(p[1]),
                detector_count=int(p[2]),
                view_count=int(p[3]),
                image_rows=int(p[4]),
                image_cols=int(p[5]),
                pixel_pitch_mm=float(p[6]),
            )
            return RaySystem(geometry, data["indptr"], data["cells"],
                             data["segments_mm"], data["sums_mm"])


def _kernel_args(geometry: ScanGeometry):
    pitch = geometry.pixel_pitch_mm
    d = geometry.source_to_origin_mm / pitch
    a = geometry.origin_to_detectors_mm / pitch
    nd = geometry.detector_count
    dstep = (a + d) / d
    dc0 = -0.5 * (nd - 1.0) * dstep
    c1 = 2.0 * math.pi / geometry.view_count
    return d, a, nd, geometry.view_count, geometry.image_rows, geometry.image_cols, dc0, dstep, c1


def trace_ray(geometry: ScanGeometry, detector: int, view: int) -> RayPath:
    """Exact path of one ray through the pixel grid.

    Rays that miss the grid bounding box produce an empty path.
    """
    ray = geometry.ray_index(detector, view)   # validates both indices
    d, a, nd, nv, nx, ny, dc0, dstep, c1 = _kernel_args(geometry)
    x1, y1, x2, y2 = _ray_endpoints(d, a, dc0, dstep, detector, view, c1)
    cells = np.empty(nx + ny + 4, np.int64)
    segs = np.empty(nx + ny + 4, np.float64)
    n = _trace_one(x1, y1, x2, y2, nx, ny, cells, segs)
    segs_mm = segs[:n].copy() * geometry.pixel_pitch_mm
    return RayPath(ray, cells[:n].copy(), segs_mm, float(np.sum(segs_mm)))


def trace_system(geometry: ScanGeometry) -> RaySystem:
    """Trace every (detector, view) ray of the geometry."""
    system, _ = build_ray_system(
        geometry, np.zeros((geometry.image_rows, geometry.image_cols)))
    return system


def build_ray_system(geometry: ScanGeometry, ground_truth: np.ndarray):
    """Trace all rays and simulate the sinogram of a ground-truth image.

    Returns ``(RaySystem, sinogram)`` where ``sinogram[d, v]`` is the line
    integral of ``ground_truth`` along ray (d, v), in value * mm units.
    """
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if ground_truth.shape != (geometry.image_rows, geometry.image_cols):
        raise ValueError(
            f"image shape {ground_truth.shape} does not match geometry "
            f"{(geometry.image_rows, geometry.image_cols)}")
    d, a, nd, nv, nx, ny, dc0, dstep, c1 = _kernel_args(geometry)
    nrays = nd * nv

    counts = np.zeros(nrays, np.int64)
    _count_all(d, a, nd, nv, nx, ny, dc0, dstep, c1, counts)
    indptr = np.zeros(nrays + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])

    total = int(indptr[-1])
    cells = np.empty(total, np.int64)
    segs = np.empty(total, np.float64)
    sums = np.empty(nrays, np.float64)
    sino = np.empty(nrays, np.float64)
    mu = np.ascontiguousarray(ground_truth.ravel())
    _fill_all(d, a, nd, nv, nx, ny, dc0, dstep, c1, indptr, cells, segs, sums, mu, sino)

    pitch = geometry.pixel_pitch_mm
    if pitch != 1.0:
        segs *= pitch
        sums *= pitch
        sino *= pitch
    system = RaySystem(geometry, indptr, cells, segs, sums)
    return system, sino.reshape(nd, nv)

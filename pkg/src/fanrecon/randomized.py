"""Randomized iterative correction of an analytical reconstruction.

Two algorithms operate on an initial image and a measured sinogram.  The
single-ray variant rescales all cells of one random ray so its line
integral matches the measurement; it is fragile when the initial solution
is far off and ships behind an explicit flag.  The pair variant draws two
cell-disjoint rays and transfers a computed amount ``x`` between their line
integrals so that their ratio matches the ratio of the measurements:

    x = (r * li2 - li1) / (1 + r),   r = s1 / s2,

with each cell on ray 1 updated as e -> e + x * e / li1 and each cell on
ray 2 as e -> e - x * e / li2.  Pairs where either measurement is zero are
not counted against the iteration budget (the forced-zero mask already
handles those cells); the pair pool is precomputed, seeded, and consumed
strictly in order so runs are reproducible.
"""

from __future__ import annotations

import enum
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import RayPath, RaySystem
from .projector import (apply_zero_mask, build_zero_mask, filter_ray_paths,
                        forward_project, line_integral)

_POOL_MAGIC = b"FPRP"


class PoolExhaustedError(RuntimeError):
    """Pair pool ran out before the iteration budget was met.

    Carries the image and report for the progress made so far.
    """

    def __init__(self, message, image=None, report=None):
        super().__init__(message)
        self.image = image
        self.report = report


class PairOutcome(enum.Enum):
    UPDATED = "updated"
    CONSISTENT = "consistent"
    REJECTED_CASE_B = "rejected_case_B"
    SKIPPED_ZERO_INTEGRAL = "skipped_zero_integral"


class SingleRayOutcome(enum.Enum):
    UPDATED = "updated"
    CONSISTENT = "consistent"
    ZEROED = "zeroed"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class PairPool:
    """Precomputed cell-disjoint ray pairs, consumed sequentially."""

    ray1: np.ndarray
    ray2: np.ndarray
    seed: int | None = None
    geometry_fingerprint: str = ""

    def __post_init__(self):
        if self.ray1.size != self.ray2.size:
            raise ValueError("ray index arrays must have equal length")

    def __len__(self) -> int:
        return int(self.ray1.size)

    # -- file formats -------------------------------------------------------

    def save_text(self, path) -> None:
        """Two whitespace-separated flat ray indices per line."""
        with open(path, "w") as fh:
            for r1, r2 in zip(self.ray1, self.ray2):
                fh.write(f"{int(r1)} {int(r2)}\n")

    @staticmethod
    def load_text(path) -> "PairPool":
        data = np.loadtxt(path, dtype=np.int64, ndmin=2)
        if data.size == 0:
            return PairPool(np.empty(0, np.int64), np.empty(0, np.int64))
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two ray indices per pair")
        return PairPool(np.ascontiguousarray(data[:, 0]), np.ascontiguousarray(data[:, 1]))

    def save_binary(self, path) -> None:
        """16-byte header (magic, count, seed) followed by uint32 pairs."""
        seed = 0 if self.seed is None else int(self.seed)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIQ", _POOL_MAGIC, len(self), seed))
            interleaved = np.empty(2 * len(self), np.uint32)
            interleaved[0::2] = self.ray1
            interleaved[1::2] = self.ray2
            fh.write(interleaved.tobytes())

    @staticmethod
    def load_binary(path) -> "PairPool":
        with open(path, "rb") as fh:
            header = fh.read(16)
            if len(header) != 16:
                raise ValueError(f"{path}: truncated pair-pool header")
            magic, count, seed = struct.unpack("<4sIQ", header)
            if magic != _POOL_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}")
            body = np.frombuffer(fh.read(8 * count), dtype=np.uint32)
            if body.size != 2 * count:
                raise ValueError(f"{path}: truncated pair data")
        return PairPool(body[0::2].astype(np.int64), body[1::2].astype(np.int64), seed=seed)

    def save(self, path) -> None:
        if str(path).endswith(".bin"):
            self.save_binary(path)
        else:
            self.save_text(path)

    @staticmethod
    def load(path) -> "PairPool":
        if str(path).endswith(".bin"):
            return PairPool.load_binary(path)
        return PairPool.load_text(path)


@dataclass
class CorrectionConfig:
    iteration_budget: int = 125_000
    seed: int = 0
    algorithm: str = "pair"
    residual_log_stride: int = 0
    stop_residual: float | None = None
    # |x| below this fraction of max(li1, li2) counts as already consistent
    x_tol_factor: float = 1e-12

    def __post_init__(self):
        if self.iteration_budget < 0:
            raise ValueError("iteration_budget must be nonnegative")
        if self.algorithm not in ("pair", "single_ray"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class RunReport:
    usable_iterations: int = 0
    consistent_updates: int = 0
    case_b_rejections: int = 0
    zero_integral_skips: int = 0
    sign_violations: int = 0
    pairs_consumed: int = 0
    wall_seconds: float = 0.0
    residual_trace: list = field(default_factory=list)
    stopped_early: bool = False


# ---------------------------------------------------------------------------
# Pair update primitives
# ---------------------------------------------------------------------------

def pair_update_solve_x(li1: float, li2: float, s1: float, s2: float) -> float:
    """Transfer amount x with (li1 + x) / (li2 - x) = s1 / s2."""
    if li1 <= 0.0 or li2 <= 0.0 or s1 <= 0.0 or s2 <= 0.0:
        raise ValueError("pair_update_solve_x requires strictly positive inputs")
    ratio = s1 / s2
    return (ratio * li2 - li1) / (1.0 + ratio)


def apply_pair_update(image: np.ndarray, path1: RayPath, path2: RayPath,
                      li1: float, li2: float, x: float) -> None:
    """In-place multiplicative transfer between two disjoint ray paths.

    Afterwards the line integrals are li1 + x and li2 - x (to rounding);
    cells on neither path are untouched.
    """
    if not image.flags.c_contiguous:
        raise ValueError("image must be C-contiguous for in-place updates")
    if np.intersect1d(path1.cells, path2.cells).size:
        raise ValueError("ray paths share cells; pairs must be screened for disjointness")
    flat = image.reshape(-1)
    flat[path1.cells] = flat[path1.cells] + (x / li1) * flat[path1.cells]
    flat[path2.cells] = flat[path2.cells] - (x / li2) * flat[path2.cells]


def pair_iteration(image: np.ndarray, sinogram: np.ndarray, system: RaySystem,
                   pair: tuple[int, int], x_tol_factor: float = 1e-12) -> PairOutcome:
    """One iteration of the pair algorithm, on an already zero-masked image.

    Case (A), both measurements positive: solve for x and update (or report
    the pair as consistent when x is negligible).  Case (B): do nothing;
    the caller must not count the iteration.  Pairs whose current filtered
    line integral vanishes cannot be updated multiplicatively and are
    skipped.
    """
    if not system.has_filtered:
        raise ValueError("system needs filtered paths; call filter_ray_paths first")
    r1, r2 = pair
    sino_flat = np.asarray(sinogram, dtype=np.float64).ravel()
    s1 = sino_flat[r1]
    s2 = sino_flat[r2]
    if s1 <= 0.0 or s2 <= 0.0:
        return PairOutcome.REJECTED_CASE_B
    path1 = system.path_by_index(r1, filtered=True)
    path2 = system.path_by_index(r2, filtered=True)
    li1 = line_integral(image, path1)
    li2 = line_integral(image, path2)
    if li1 <= 0.0 or li2 <= 0.0:
        return PairOutcome.SKIPPED_ZERO_INTEGRAL
    x = pair_update_solve_x(li1, li2, s1, s2)
    if abs(x) <= x_tol_factor * max(li1, li2):
        return PairOutcome.CONSISTENT
    apply_pair_update(image, path1, path2, li1, li2, x)
    return PairOutcome.UPDATED


@njit(cache=True)
def _pair_loop(img, sino, fptr, fcells, fsegs, ray1, ray2, start, budget, xtol):
    used = 0
    consistent = 0
    rejected = 0
    skipped = 0
    violations = 0
    i = start
    n = ray1.size
    while used < budget and i < n:
        r1 = ray1[i]
        r2 = ray2[i]
        i += 1
        s1 = sino[r1]
        s2 = sino[r2]
        if s1 > 0.0 and s2 > 0.0:
            li1 = 0.0
            for k in range(fptr[r1], fptr[r1 + 1]):
                li1 += fsegs[k] * img[fcells[k]]
            li2 = 0.0
            for k in range(fptr[r2], fptr[r2 + 1]):
                li2 += fsegs[k] * img[fcells[k]]
            if li1 <= 0.0 or li2 <= 0.0:
                skipped += 1
                continue
            ratio = s1 / s2
            x = (ratio * li2 - li1) / (1.0 + ratio)
            used += 1
            m = li1 if li1 > li2 else li2
            if abs(x) <= xtol * m:
                consistent += 1
                continue
            if x <= -li1 or x >= li2:
                violations += 1
            c1 = x / li1
            c2 = x / li2
            for k in range(fptr[r1], fptr[r1 + 1]):
                img[fcells[k]] += c1 * img[fcells[k]]
            for k in range(fptr[r2], fptr[r2 + 1]):
                img[fcells[k]] -= c2 * img[fcells[k]]
        else:
            rejected += 1
    return used, consistent, rejected, skipped, violations, i


def run_correction(initial: np.ndarray, sinogram: np.ndarray, system: RaySystem,
                   pool: PairPool, config: CorrectionConfig | None = None):
    """Drive the pair algorithm for a fixed budget of usable iterations.

    Applies the forced-zero mask to the initial image, then consumes the
    pool strictly in order; only case-(A) pairs count against the budget.
    Returns ``(image, RunReport)``.  Wall time covers the correction loop
    only, not mask construction or path filtering.
    """
    config = config or CorrectionConfig()
    geom = system.geometry
    initial = np.asarray(initial, dtype=np.float64)
    if initial.shape != (geom.image_rows, geom.image_cols):
        raise ValueError(
            f"initial image shape {initial.shape} does not match geometry "
            f"{(geom.image_rows, geom.image_cols)}")
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if sinogram.shape != (geom.detector_count, geom.view_count):
        raise ValueError("sinogram shape does not match geometry")
    if pool.geometry_fingerprint and pool.geometry_fingerprint != geom.fingerprint():
        raise ValueError("pair pool was generated for a different geometry")

    mask = build_zero_mask(sinogram, system)
    if not system.has_filtered:
        system = filter_ray_paths(system, mask)
    image = np.ascontiguousarray(apply_zero_mask(initial, mask))
    flat = image.reshape(-1)
    sino_flat = np.ascontiguousarray(sinogram.ravel())
    ray1 = np.ascontiguousarray(pool.ray1)
    ray2 = np.ascontiguousarray(pool.ray2)

    report = RunReport()
    # trigger JIT compilation outside the timed loop
    _pair_loop(flat, sino_flat, system.filtered_indptr, system.filtered_cells,
               system.filtered_segments_mm, ray1, ray2, 0, 0, config.x_tol_factor)

    stride = config.residual_log_stride
    remaining = config.iteration_budget
    position = 0
    start = time.perf_counter()
    while remaining > 0:
        chunk = min(stride, remaining) if stride > 0 else remaining
        used, consistent, rejected, skipped, violations, position = _pair_loop(
            flat, sino_flat, system.filtered_indptr, system.filtered_cells,
            system.filtered_segments_mm, ray1, ray2, position, chunk,
            config.x_tol_factor)
        report.usable_iterations += used
        report.consistent_updates += consistent
        report.case_b_rejections += rejected
        report.zero_integral_skips += skipped
        report.sign_violations += violations
        report.pairs_consumed = position
        remaining -= used
        if used < chunk:
            report.wall_seconds = time.perf_counter() - start
            raise PoolExhaustedError(
                f"pair pool exhausted after {report.usable_iterations} of "
                f"{config.iteration_budget} usable iterations "
                f"({position} pairs consumed)",
                image=image, report=report)
        if stride > 0:
            residual = float(np.linalg.norm(forward_project(image, system) - sinogram)
                             / max(np.linalg.norm(sinogram), np.finfo(float).tiny))
            report.residual_trace.append((report.usable_iterations, residual))
            if config.stop_residual is not None and residual <= config.stop_residual:
                report.stopped_early = True
                break
    report.wall_seconds = time.perf_counter() - start
    return image, report


# ---------------------------------------------------------------------------
# Single-ray algorithm (fragile; needs a well-scaled initial solution)
# ---------------------------------------------------------------------------

def sinogram_scale_factor(image: np.ndarray, sinogram: np.ndarray,
                          system: RaySystem) -> float:
    """Global factor sum(S) / sum(forward(image))."""
    total_s = float(np.sum(sinogram))
    total_p = float(np.sum(forward_project(image, system)))
    if total_p <= 0.0:
        if total_s == 0.0:
            return 1.0
        raise ValueError("cannot scale: forward projection is zero but sinogram is not")
    return total_s / total_p


def initial_scale(image: np.ndarray, sinogram: np.ndarray,
                  system: RaySystem) -> np.ndarray:
    """Rescale the image so total projection mass matches the sinogram."""
    return np.asarray(image, dtype=np.float64) * sinogram_scale_factor(image, sinogram, system)


def single_ray_update(image: np.ndarray, sinogram: np.ndarray, system: RaySystem,
                      ray: int, rel_tol: float = 1e-12) -> SingleRayOutcome:
    """Multiply all cells of one ray by S / li so the integral matches S.

    A zero measurement zeroes the cells instead; a positive measurement
    with a vanishing line integral cannot be rescaled and is skipped.
    """
    if not image.flags.c_contiguous:
        raise ValueError("image must be C-contiguous for in-place updates")
    path = system.path_by_index(ray)
    if path.cells.size == 0:
        return SingleRayOutcome.SKIPPED
    flat = image.reshape(-1)
    s = float(np.asarray(sinogram).ravel()[ray])
    if s <= 0.0:
        flat[path.cells] = 0.0
        return SingleRayOutcome.ZEROED
    li = line_integral(image, path)
    if li <= 0.0:
        return SingleRayOutcome.SKIPPED
    if abs(li - s) <= rel_tol * s:
        return SingleRayOutcome.CONSISTENT
    flat[path.cells] = flat[path.cells] * (s / li)
    return SingleRayOutcome.UPDATED


def run_single_ray_correction(initial: np.ndarray, sinogram: np.ndarray,
                              system: RaySystem, config: CorrectionConfig | None = None):
    """Drive the single-ray algorithm with a seeded uniform ray stream.

    The initial image is globally rescaled first so line integrals start
    in the right range.  Returns ``(image, RunReport)``.
    """
    config = config or CorrectionConfig(algorithm="single_ray")
    image = np.ascontiguousarray(initial_scale(initial, sinogram, system))
    rng = np.random.default_rng(config.seed)
    report = RunReport()
    start = time.perf_counter()
    remaining = config.iteration_budget
    while remaining > 0:
        ray = int(rng.integers(system.n_rays))
        outcome = single_ray_update(image, sinogram, system, ray)
        report.pairs_consumed += 1
        if outcome is SingleRayOutcome.SKIPPED:
            report.zero_integral_skips += 1
            continue
        report.usable_iterations += 1
        if outcome is SingleRayOutcome.CONSISTENT:
            report.consistent_updates += 1
        remaining -= 1
    report.wall_seconds = time.perf_counter() - start
    return image, report


# ---------------------------------------------------------------------------
# Pair pool generation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _accept_disjoint(cand1, cand2, indptr, cells, stamp, tag0, out1, out2, have, needed):
    """Filter candidate pairs, keeping those with non-empty disjoint paths."""
    tag = tag0
    accepted = have
    consumed = 0
    for t in range(cand1.size):
        consumed += 1
        r1 = cand1[t]
        r2 = cand2[t]
        if indptr[r1 + 1] == indptr[r1] or indptr[r2 + 1] == indptr[r2]:
            continue
        tag += 1
        for k in range(indptr[r1], indptr[r1 + 1]):
            stamp[cells[k]] = tag
        ok = True
        for k in range(indptr[r2], indptr[r2 + 1]):
            if stamp[cells[k]] == tag:
                ok = False
                break
        if ok:
            out1[accepted] = r1
            out2[accepted] = r2
            accepted += 1
            if accepted == needed:
                break
    return accepted, tag, consumed


def generate_pair_pool(system: RaySystem, count: int, seed: int = 0,
                       max_attempts: int | None = None) -> PairPool:
    """Draw uniform ray pairs, keeping the cell-disjoint ones, until
    ``count`` pairs are accepted.

    Deterministic for a given seed: candidates are drawn in a fixed stream
    and accepted in draw order.  Raises after ``max_attempts`` candidate
    draws (default 10000 + 500 per requested pair) if disjoint pairs are
    too rare in the geometry.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if max_attempts is None:
        max_attempts = 10_000 + 500 * count
    rng = np.random.default_rng(seed)
    geom = system.geometry
    stamp = np.zeros(geom.image_rows * geom.image_cols, np.int64)
    out1 = np.empty(count, np.int64)
    out2 = np.empty(count, np.int64)
    accepted = 0
    tag = 0
    attempts = 0
    chunk = max(4096, min(count, 1 << 18))
    while accepted < count:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"pair pool generation gave up after {attempts} attempts "
                f"({accepted}/{count} pairs accepted)")
        draw = min(chunk, max_attempts - attempts)
        cand = rng.integers(0, geom.n_rays, size=(draw, 2), dtype=np.int64)
        accepted, tag, consumed = _accept_disjoint(
            np.ascontiguousarray(cand[:, 0]), np.ascontiguousarray(cand[:, 1]),
            system.indptr, system.cells, stamp, tag, out1, out2, accepted, count)
        attempts += consumed
    return PairPool(out1, out2, seed=seed, geometry_fingerprint=geom.fingerprint())

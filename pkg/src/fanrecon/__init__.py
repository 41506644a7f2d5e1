"""Fan-beam CT reconstruction with randomized pairwise correction."""

from .geometry import (RayPath, RaySystem, ScanGeometry, build_ray_system,
                       detector_position, source_position, trace_ray, trace_system)
from .projector import (apply_zero_mask, build_zero_mask, filter_ray_paths,
                        forward_project, line_integral)
from .analytic import (InverseRadonParams, direct_integration_reconstruct,
                       fbp_reconstruct, radial_derivative)
from .randomized import (CorrectionConfig, PairOutcome, PairPool,
                         PoolExhaustedError, RunReport, SingleRayOutcome,
                         apply_pair_update, generate_pair_pool, initial_scale,
                         pair_iteration, pair_update_solve_x, run_correction,
                         run_single_ray_correction, single_ray_update,
                         sinogram_scale_factor)
from .phantom import (SHEPP_LOGAN, Ellipse, FormatError, read_image_ascii,
                      read_phantom_spec, read_sinogram_ascii, render_phantom,
                      shepp_logan, write_image_ascii, write_image_pgm,
                      write_sinogram_ascii)
from .metrics import (CSV_COLUMNS, QualityReport, max_abs_error, psnr, rmse,
                      score, sinogram_residual, write_csv)

__version__ = "0.1.0"

__all__ = [
    "CSV_COLUMNS", "CorrectionConfig", "Ellipse", "FormatError",
    "InverseRadonParams", "PairOutcome", "PairPool", "PoolExhaustedError",
    "QualityReport", "RayPath", "RaySystem", "RunReport", "SHEPP_LOGAN",
    "ScanGeometry", "SingleRayOutcome", "apply_pair_update", "apply_zero_mask",
    "build_ray_system", "build_zero_mask", "detector_position",
    "direct_integration_reconstruct", "fbp_reconstruct", "filter_ray_paths",
    "forward_project", "generate_pair_pool", "initial_scale", "line_integral",
    "max_abs_error", "pair_iteration", "pair_update_solve_x", "psnr",
    "radial_derivative", "read_image_ascii", "read_phantom_spec",
    "read_sinogram_ascii", "render_phantom", "rmse", "run_correction",
    "run_single_ray_correction", "score", "shepp_logan", "single_ray_update",
    "sinogram_residual", "sinogram_scale_factor", "source_position",
    "trace_ray", "trace_system", "write_csv", "write_image_ascii",
    "write_image_pgm", "write_sinogram_ascii",
]

"""Command-line front end: simulate, reconstruct, pair generation, correction.

Every run resolves its parameters from built-in defaults, an optional
``key = value`` config file, and command-line flags (in that order of
precedence), then writes the resolved values into a ``manifest.json``
next to the output artifacts so any result can be reproduced exactly.

Exit codes: 0 on success, 1 on numerical or I/O failure mid-run, 2 on
usage errors (bad flags, missing input files).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from .analytic import (InverseRadonParams, direct_integration_reconstruct,
                       fbp_reconstruct)
from .geometry import ScanGeometry, build_ray_system, trace_system
from .metrics import score, write_csv
from .phantom import (SHEPP_LOGAN, read_image_ascii, read_phantom_spec,
                      read_sinogram_ascii, render_phantom, write_image_ascii,
                      write_image_pgm, write_sinogram_ascii)
from .randomized import (CorrectionConfig, PairPool, generate_pair_pool,
                         run_correction)

OUTDIR_ENV = "FANRECON_OUTDIR"

# Geometry and run parameters recognised in config files and as flags.
_GEOMETRY_KEYS = {
    "source_to_origin_mm": float,
    "source_to_detectors_mm": float,
    "detector_count": int,
    "view_count": int,
    "image_rows": int,
    "image_cols": int,
    "pixel_pitch_mm": float,
}
_RUN_KEYS = {
    "seed": int,
    "iterations": int,
    "pool_pairs": int,
    "fbp_filter": str,
    "derivative_scheme": str,
    "singularity_epsilon": float,
    "p_samples": int,
}
_DEFAULTS = {
    "seed": 0,
    "iterations": 125_000,
    "pool_pairs": 1_000_000,
    "fbp_filter": "ram-lak",
    "derivative_scheme": "central",
    "singularity_epsilon": None,
    "p_samples": None,
}


class UsageError(Exception):
    """Bad invocation (missing input, unknown key): exit code 2."""


def read_config_file(path) -> dict:
    """Parse a ``key = value`` config file; '#' starts a comment."""
    known = {**_GEOMETRY_KEYS, **_RUN_KEYS}
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = body.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown parameter {key!r}")
            try:
                values[key] = known[key](raw)
            except ValueError:
                raise UsageError(
                    f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    return values


def resolve_settings(args) -> dict:
    """Merge defaults, config file, and flags into one settings dict."""
    settings = dict(_DEFAULTS)
    geom_defaults = ScanGeometry()
    for key in _GEOMETRY_KEYS:
        settings[key] = getattr(geom_defaults, key)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in list(_GEOMETRY_KEYS) + list(_RUN_KEYS):
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    views = getattr(args, "views", None)
    if views is not None:
        settings["view_count"] = views
    return settings


def geometry_from_settings(settings: dict) -> ScanGeometry:
    return ScanGeometry(**{k: settings[k] for k in _GEOMETRY_KEYS})


def _inverse_radon_params(settings: dict) -> InverseRadonParams:
    return InverseRadonParams(
        derivative_scheme=settings["derivative_scheme"],
        singularity_epsilon=settings["singularity_epsilon"],
        p_samples=settings["p_samples"],
    )


def _outdir(args) -> str:
    outdir = args.outdir or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _require_file(path, what: str) -> str:
    if path is None:
        raise UsageError(f"missing required {what}")
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_image(image, outdir, stem) -> list:
    ascii_path = os.path.join(outdir, stem + ".txt")
    pgm_path = os.path.join(outdir, stem + ".pgm")
    write_image_ascii(image, ascii_path)
    write_image_pgm(image, pgm_path)
    return [stem + ".txt", stem + ".pgm"]


def _write_manifest(outdir, command, settings, artifacts, extra=None) -> None:
    manifest = {
        "command": command,
        "settings": {k: settings[k] for k in sorted(settings)},
        "geometry_fingerprint": geometry_from_settings(settings).fingerprint(),
        "artifacts": artifacts,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_phantom(args, geometry: ScanGeometry) -> np.ndarray:
    if getattr(args, "phantom", None):
        ellipses = read_phantom_spec(_require_file(args.phantom, "phantom file"))
    else:
        ellipses = SHEPP_LOGAN
    return render_phantom(ellipses, geometry.image_rows, geometry.image_cols)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    settings = resolve_settings(args)
    geometry = geometry_from_settings(settings)
    outdir = _outdir(args)
    truth = _load_phantom(args, geometry)
    _progress(f"tracing {geometry.n_rays} rays ({geometry.view_count} views)")
    t0 = time.perf_counter()
    system, sinogram = build_ray_system(geometry, truth)
    trace_s = time.perf_counter() - t0
    artifacts = _write_image(truth, outdir, "phantom")
    write_sinogram_ascii(sinogram, os.path.join(outdir, "sinogram.txt"))
    artifacts.append("sinogram.txt")
    if not args.no_cache:
        system.save(os.path.join(outdir, "raysystem.npz"))
        artifacts.append("raysystem.npz")
    _write_manifest(outdir, "simulate", settings, artifacts,
                    extra={"wall_seconds": {"trace": trace_s}})
    _progress(f"simulate: wrote {', '.join(artifacts)} to {outdir}")
    return 0


def _load_sinogram(args, geometry: ScanGeometry) -> np.ndarray:
    path = _require_file(args.sinogram, "sinogram file")
    return read_sinogram_ascii(path, geometry.detector_count, geometry.view_count)


def cmd_reconstruct(args) -> int:
    settings = resolve_settings(args)
    geometry = geometry_from_settings(settings)
    outdir = _outdir(args)
    sinogram = _load_sinogram(args, geometry)
    t0 = time.perf_counter()
    if args.method == "fbp":
        image = fbp_reconstruct(sinogram, geometry, filter_name=settings["fbp_filter"])
    else:
        image = direct_integration_reconstruct(
            sinogram, geometry, _inverse_radon_params(settings))
    recon_s = time.perf_counter() - t0
    artifacts = _write_image(image, outdir, args.method)
    _write_manifest(outdir, f"reconstruct {args.method}", settings, artifacts,
                    extra={"wall_seconds": {"reconstruct": recon_s}})
    _progress(f"reconstruct {args.method}: wrote {', '.join(artifacts)} to {outdir}")
    return 0


def cmd_pairs(args) -> int:
    settings = resolve_settings(args)
    geometry = geometry_from_settings(settings)
    outdir = _outdir(args)
    count = args.count if args.count is not None else settings["pool_pairs"]
    _progress(f"tracing {geometry.n_rays} rays for pair generation")
    system = trace_system(geometry)
    t0 = time.perf_counter()
    pool = generate_pair_pool(system, count, seed=settings["seed"])
    gen_s = time.perf_counter() - t0
    name = args.output or "pairs.bin"
    pool.save(os.path.join(outdir, name))
    _write_manifest(outdir, "pairs", settings, [name],
                    extra={"pair_count": len(pool),
                           "wall_seconds": {"generate": gen_s}})
    _progress(f"pairs: wrote {len(pool)} disjoint pairs to {os.path.join(outdir, name)}")
    return 0


def _report_dict(report) -> dict:
    return dataclasses.asdict(report)


def cmd_correct(args) -> int:
    settings = resolve_settings(args)
    geometry = geometry_from_settings(settings)
    outdir = _outdir(args)
    sinogram = _load_sinogram(args, geometry)
    initial_path = _require_file(args.initial, "initial image file")
    initial = read_image_ascii(initial_path, geometry.image_rows, geometry.image_cols)
    _progress(f"tracing {geometry.n_rays} rays")
    system = trace_system(geometry)
    if args.pairs:
        pool = PairPool.load(_require_file(args.pairs, "pair pool file"))
    else:
        pool = generate_pair_pool(system, settings["pool_pairs"],
                                  seed=settings["seed"])
    config = CorrectionConfig(iteration_budget=settings["iterations"],
                              seed=settings["seed"])
    _progress(f"correcting: {config.iteration_budget} usable iterations")
    image, report = run_correction(initial, sinogram, system, pool, config)
    artifacts = _write_image(image, outdir, "corrected")
    _write_manifest(outdir, "correct", settings, artifacts,
                    extra={"report": _report_dict(report),
                           "wall_seconds": {"correction_loop": report.wall_seconds}})
    _progress(f"correct: {report.usable_iterations} usable iterations in "
              f"{report.wall_seconds:.3f} s; wrote {', '.join(artifacts)}")
    return 0


def _score_row(name, image, truth, sinogram, system, iterations=0):
    return score(name, image, truth, sinogram, system, iterations=iterations)


def _experiment_paper270(args, settings, outdir) -> int:
    """Sparse-view experiment: correct 270-view analytic reconstructions.

    Produces six images (two initial reconstructions, two corrected, two
    full-view references), a metrics CSV, and a manifest.
    """
    geometry = geometry_from_settings(settings)
    truth = _load_phantom(args, geometry)
    params = _inverse_radon_params(settings)
    wall = {}
    reports = {}

    _progress(f"tracing {geometry.view_count}-view system")
    t0 = time.perf_counter()
    system, sinogram = build_ray_system(geometry, truth)
    wall["trace"] = time.perf_counter() - t0

    full = dataclasses.replace(geometry, view_count=360)
    _progress("tracing 360-view reference system")
    t0 = time.perf_counter()
    system_full, sinogram_full = build_ray_system(full, truth)
    wall["trace_reference"] = time.perf_counter() - t0

    _progress("analytic reconstructions")
    t0 = time.perf_counter()
    fbp_init = fbp_reconstruct(sinogram, geometry, filter_name=settings["fbp_filter"])
    dint_init = direct_integration_reconstruct(sinogram, geometry, params)
    fbp_ref = fbp_reconstruct(sinogram_full, full, filter_name=settings["fbp_filter"])
    dint_ref = direct_integration_reconstruct(sinogram_full, full, params)
    wall["analytic"] = time.perf_counter() - t0

    _progress(f"generating {settings['pool_pairs']} disjoint pairs")
    t0 = time.perf_counter()
    pool = generate_pair_pool(system, settings["pool_pairs"], seed=settings["seed"])
    wall["pairs"] = time.perf_counter() - t0

    config = CorrectionConfig(iteration_budget=settings["iterations"],
                              seed=settings["seed"])
    corrected = {}
    for name, init in (("fbp", fbp_init), ("dint", dint_init)):
        _progress(f"correcting {name} initial ({config.iteration_budget} iterations)")
        image, report = run_correction(init, sinogram, system, pool, config)
        corrected[name] = image
        reports[name] = _report_dict(report)
        wall[f"correction_loop_{name}"] = report.wall_seconds

    artifacts = []
    images = [
        ("fbp_initial", fbp_init, sinogram, system, 0),
        ("dint_initial", dint_init, sinogram, system, 0),
        ("fbp_corrected", corrected["fbp"], sinogram, system, config.iteration_budget),
        ("dint_corrected", corrected["dint"], sinogram, system, config.iteration_budget),
        ("fbp_reference", fbp_ref, sinogram_full, system_full, 0),
        ("dint_reference", dint_ref, sinogram_full, system_full, 0),
    ]
    rows = []
    for name, image, sino, sys_, iters in images:
        artifacts += _write_image(image, outdir, name)
        rows.append(_score_row(name, image, truth, sino, sys_, iterations=iters))
    write_csv(rows, os.path.join(outdir, "metrics.csv"))
    artifacts.append("metrics.csv")
    _write_manifest(outdir, "experiment paper270", settings, artifacts,
                    extra={"reports": reports, "wall_seconds": wall})
    _progress(f"experiment paper270: wrote {len(artifacts)} artifacts to {outdir}")
    return 0


def _experiment_sweep(args, settings, outdir) -> int:
    """View-reduction sweep: analytic baselines at 234/270/306/360 views
    plus corrected runs at 270 and 234, scored against the phantom."""
    base = geometry_from_settings(settings)
    params = _inverse_radon_params(settings)
    config = CorrectionConfig(iteration_budget=settings["iterations"],
                              seed=settings["seed"])
    wall = {}
    reports = {}
    rows = []
    artifacts = []
    fbp_ref_rmse = None
    corrected_rmse = {}

    for views in (234, 270, 306, 360):
        geometry = dataclasses.replace(base, view_count=views)
        truth = _load_phantom(args, geometry)
        _progress(f"tracing {views}-view system")
        t0 = time.perf_counter()
        system, sinogram = build_ray_system(geometry, truth)
        wall[f"trace_{views}"] = time.perf_counter() - t0
        fbp = fbp_reconstruct(sinogram, geometry, filter_name=settings["fbp_filter"])
        dint = direct_integration_reconstruct(sinogram, geometry, params)
        rows.append(_score_row("fbp", fbp, truth, sinogram, system))
        rows.append(_score_row("dint", dint, truth, sinogram, system))
        if views == 360:
            fbp_ref_rmse = rows[-2].rmse
        if views in (234, 270):
            _progress(f"correcting fbp-{views} ({config.iteration_budget} iterations)")
            pool = generate_pair_pool(system, settings["pool_pairs"],
                                      seed=settings["seed"])
            image, report = run_correction(fbp, sinogram, system, pool, config)
            row = _score_row("fbp_corrected", image, truth, sinogram, system,
                             iterations=config.iteration_budget)
            rows.append(row)
            corrected_rmse[views] = row.rmse
            reports[f"fbp_corrected_{views}"] = _report_dict(report)
            wall[f"correction_loop_{views}"] = report.wall_seconds
            artifacts += _write_image(image, outdir, f"fbp_corrected_{views}")

    write_csv(rows, os.path.join(outdir, "metrics.csv"))
    artifacts.append("metrics.csv")
    qualitative = {
        "corrected_234_rmse": corrected_rmse.get(234),
        "fbp_360_rmse": fbp_ref_rmse,
        "corrected_234_within_1p3_of_fbp_360":
            corrected_rmse.get(234) is not None and fbp_ref_rmse is not None
            and corrected_rmse[234] <= 1.3 * fbp_ref_rmse,
    }
    _write_manifest(outdir, "experiment sweep", settings, artifacts,
                    extra={"reports": reports, "wall_seconds": wall,
                           "qualitative": qualitative})
    _progress(f"experiment sweep: corrected-234 rmse {corrected_rmse.get(234):.5f} "
              f"vs 1.3 * fbp-360 {1.3 * fbp_ref_rmse:.5f}")
    return 0


def cmd_experiment(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    if args.preset == "paper270":
        return _experiment_paper270(args, settings, outdir)
    return _experiment_sweep(args, settings, outdir)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value parameter file")
    parser.add_argument("--outdir",
                        help=f"output directory (default ${OUTDIR_ENV} or '.')")
    for key, cast in _GEOMETRY_KEYS.items():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, type=cast)
    parser.add_argument("--views", type=int, help="shorthand for --view-count")
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fanrecon",
        description="Fan-beam CT simulation, analytic reconstruction, and "
                    "randomized pairwise correction.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="render phantom and simulate a sinogram")
    _add_common(p)
    p.add_argument("--phantom", help="ellipse description file (default Shepp-Logan)")
    p.add_argument("--no-cache", action="store_true",
                   help="skip writing the traced ray-system cache")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="analytic reconstruction of a sinogram")
    p.add_argument("method", choices=("fbp", "dint"))
    _add_common(p)
    p.add_argument("--sinogram", required=True, help="ASCII sinogram file")
    p.add_argument("--fbp-filter", dest="fbp_filter", choices=("ram-lak", "hamming"))
    p.add_argument("--derivative-scheme", dest="derivative_scheme",
                   choices=("central", "forward"))
    p.add_argument("--singularity-epsilon", dest="singularity_epsilon", type=float)
    p.add_argument("--p-samples", dest="p_samples", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("pairs", help="generate a cell-disjoint ray-pair pool")
    _add_common(p)
    p.add_argument("--count", type=int, help="number of pairs (default pool_pairs)")
    p.add_argument("--output", help="pool file name (.bin binary, else text)")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("correct", help="randomized pairwise correction of an image")
    _add_common(p)
    p.add_argument("--initial", required=True, help="initial image (ASCII)")
    p.add_argument("--sinogram", required=True, help="ASCII sinogram file")
    p.add_argument("--pairs", help="pair pool file (default: generate from seed)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--pool-pairs", dest="pool_pairs", type=int)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("experiment", help="end-to-end scored experiment")
    p.add_argument("preset", choices=("paper270", "sweep"))
    _add_common(p)
    p.add_argument("--phantom", help="ellipse description file (default Shepp-Logan)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--pool-pairs", dest="pool_pairs", type=int)
    p.add_argument("--fbp-filter", dest="fbp_filter", choices=("ram-lak", "hamming"))
    p.add_argument("--derivative-scheme", dest="derivative_scheme",
                   choices=("central", "forward"))
    p.add_argument("--singularity-epsilon", dest="singularity_epsilon", type=float)
    p.add_argument("--p-samples", dest="p_samples", type=int)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fanrecon: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"fanrecon: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

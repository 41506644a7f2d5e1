"""Analytical fan-beam reconstruction baselines.

Two reconstructors produce the initial solution for the randomized
correction: a standard full-scan fan-beam filtered back-projection for
equally spaced detectors, and a direct numerical integration of the
fan-beam inverse Radon transform (derivative of the sinogram against a
principal-value Hilbert-type kernel, no Fourier transform).

Detector coordinates are rescaled to the "virtual" detector line through
the rotation centre, where the spacing equals the pixel pitch; X and Y
below are the pixel's coordinates in the source-centred frame, X along the
detector direction and Y along source-to-origin, so the ray through the
pixel meets the virtual detector at R * X / Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import ScanGeometry


@dataclass(frozen=True)
class InverseRadonParams:
    """Tuning knobs of the direct inverse-Radon integration.

    ``fan_radius_mm`` defaults to the geometry's source-to-origin distance;
    ``singularity_epsilon`` (mm) is the half-width of the symmetric window
    excluded around the kernel pole, defaulting to a tenth of the virtual
    detector pitch; ``p_samples`` is the number of quadrature nodes over
    the detector coordinate range (at least the detector count).
    """

    fan_radius_mm: float | None = None
    derivative_scheme: str = "central"
    singularity_epsilon: float | None = None
    p_samples: int | None = None

    def __post_init__(self):
        if self.derivative_scheme not in ("central", "forward"):
            raise ValueError(f"unknown derivative scheme {self.derivative_scheme!r}")
        if self.singularity_epsilon is not None and self.singularity_epsilon <= 0.0:
            raise ValueError("singularity_epsilon must be positive")


def radial_derivative(sinogram: np.ndarray, pitch_mm: float,
                      scheme: str = "central") -> np.ndarray:
    """Per-view derivative of the sinogram along the detector coordinate.

    Central differences in the interior, one-sided at the edges, divided by
    the detector coordinate pitch.  The forward scheme uses one-sided
    differences throughout (backward on the last row).
    """
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if sinogram.ndim != 2 or sinogram.shape[0] < 3:
        raise ValueError("sinogram must be 2-D with at least 3 detector rows")
    if pitch_mm <= 0.0:
        raise ValueError("pitch must be positive")
    out = np.empty_like(sinogram)
    if scheme == "central":
        out[1:-1] = (sinogram[2:] - sinogram[:-2]) / (2.0 * pitch_mm)
        out[0] = (sinogram[1] - sinogram[0]) / pitch_mm
        out[-1] = (sinogram[-1] - sinogram[-2]) / pitch_mm
    elif scheme == "forward":
        out[:-1] = (sinogram[1:] - sinogram[:-1]) / pitch_mm
        out[-1] = (sinogram[-1] - sinogram[-2]) / pitch_mm
    else:
        raise ValueError(f"unknown derivative scheme {scheme!r}")
    return out


def _virtual_coordinates(geometry: ScanGeometry) -> np.ndarray:
    nd = geometry.detector_count
    du = geometry.virtual_detector_pitch_mm
    return (np.arange(nd) - (nd - 1) / 2.0) * du


def _check_sinogram(sinogram, geometry) -> np.ndarray:
    sinogram = np.asarray(sinogram, dtype=np.float64)
    expected = (geometry.detector_count, geometry.view_count)
    if sinogram.shape != expected:
        raise ValueError(f"sinogram shape {sinogram.shape} does not match geometry {expected}")
    return sinogram


# ---------------------------------------------------------------------------
# Filtered back-projection
# ---------------------------------------------------------------------------

def _ramp_kernel(n_detectors: int, du: float, filter_name: str):
    """Frequency response of the band-limited ramp filter, FFT-ready."""
    size = 1
    while size < 2 * n_detectors:
        size *= 2
    h = np.zeros(size)
    h[0] = 1.0 / (4.0 * du * du)
    odd = np.arange(1, n_detectors, 2)
    values = -1.0 / (math.pi * odd * du) ** 2
    h[odd] = values
    h[-odd] = values
    response = np.real(np.fft.fft(h))
    if filter_name == "hamming":
        freq = np.fft.fftfreq(size)
        ratio = freq / np.max(np.abs(freq))
        response = response * (0.54 + 0.46 * np.cos(math.pi * ratio))
    elif filter_name != "ram-lak":
        raise ValueError(f"unknown filter {filter_name!r} (expected 'ram-lak' or 'hamming')")
    return response, size


@njit(cache=True)
def _backproject(qf, u0, du, d, nx, ny, pitch, dphi, out):
    nd, nv = qf.shape
    for v in range(nv):
        phi = v * dphi
        sinf = math.sin(phi)
        cosf = math.cos(phi)
        for i in range(nx):
            y = ((nx - 1) * 0.5 - i) * pitch
            for j in range(ny):
                x = (j - (ny - 1) * 0.5) * pitch
                bigy = d - x * sinf + y * cosf
                if bigy <= 0.0:
                    continue
                ustar = d * (x * cosf + y * sinf) / bigy
                t = (ustar - u0) / du
                k = int(math.floor(t))
                if k < 0 or k >= nd - 1:
                    continue
                frac = t - k
                val = qf[k, v] + frac * (qf[k + 1, v] - qf[k, v])
                out[i, j] += val * (d * d) / (bigy * bigy)


def fbp_reconstruct(sinogram: np.ndarray, geometry: ScanGeometry,
                    filter_name: str = "ram-lak", clamp_negative: bool = True) -> np.ndarray:
    """Full-scan fan-beam filtered back-projection for flat detectors.

    Cosine-weight each projection, convolve along the detector coordinate
    with the band-limited ramp filter, and back-project with inverse square
    distance weighting over the full 2-pi sweep.
    """
    sinogram = _check_sinogram(sinogram, geometry)
    d = geometry.source_to_origin_mm
    u = _virtual_coordinates(geometry)
    du = geometry.virtual_detector_pitch_mm
    nd = geometry.detector_count

    weighted = sinogram * (d / np.sqrt(d * d + u * u))[:, None]
    response, size = _ramp_kernel(nd, du, filter_name)
    spectrum = np.fft.fft(weighted, n=size, axis=0) * response[:, None]
    filtered = np.real(np.fft.ifft(spectrum, axis=0))[:nd] * du

    out = np.zeros((geometry.image_rows, geometry.image_cols))
    _backproject(np.ascontiguousarray(filtered), u[0], du, d,
                 geometry.image_rows, geometry.image_cols,
                 geometry.pixel_pitch_mm, geometry.view_angle_step, out)
    # half the 2-pi sweep is redundant (every line is measured twice)
    out *= 0.5 * geometry.view_angle_step
    if clamp_negative:
        np.clip(out, 0.0, None, out=out)
    return out


# ---------------------------------------------------------------------------
# Direct integration of the inverse Radon transform
# ---------------------------------------------------------------------------

@njit(cache=True)
def _direct_integration(wds, p, dp_node, radius, eps, nx, ny, pitch, dphi, out):
    """Per-pixel double quadrature of the fan-beam inversion integral.

    ``wds[v, k]`` holds the derivative table already multiplied by the
    sqrt(1 + p^2/R^2) weight and the node spacing.  Far from the pole each
    node contributes its midpoint value over 1 / (p - pole); for nodes
    whose quadrature cell sits near the pole the kernel is integrated
    exactly over the part of the cell outside the symmetric exclusion
    window (log of the endpoint ratio), so the sum stays finite and varies
    smoothly with the pole position.  Returns the number of (pixel, view)
    terms skipped because the pixel sat behind the source.
    """
    nv, np_nodes = wds.shape
    p0 = p[0]
    # near-pole band: every cell that can overlap the exclusion window,
    # plus a margin where the midpoint rule is still inaccurate
    half_band = int(eps / dp_node) + 4
    skipped = 0
    for i in range(nx):
        y = ((nx - 1) * 0.5 - i) * pitch
        for j in range(ny):
            x = (j - (ny - 1) * 0.5) * pitch
            acc = 0.0
            for v in range(nv):
                phi = v * dphi
                sinf = math.sin(phi)
                cosf = math.cos(phi)
                bigy = radius - x * sinf + y * cosf
                if bigy <= 0.0:
                    skipped += 1
                    continue
                pole = radius * (x * cosf + y * sinf) / bigy
                kc = int(math.floor((pole - p0) / dp_node + 0.5))
                klo = kc - half_band
                khi = kc + half_band + 1
                inner = 0.0
                for k in range(np_nodes):
                    dp = p[k] - pole
                    if klo <= k < khi:
                        a = dp - 0.5 * dp_node
                        b = dp + 0.5 * dp_node
                        w = 0.0
                        hi = b if b < -eps else -eps
                        if hi > a:
                            w += math.log(hi / a)
                        lo = a if a > eps else eps
                        if b > lo:
                            w += math.log(b / lo)
                        inner += wds[v, k] * w / dp_node
                    else:
                        inner += wds[v, k] / dp
                acc += inner / bigy
            out[i, j] = acc * radius * dphi
    return skipped


def direct_integration_reconstruct(sinogram: np.ndarray, geometry: ScanGeometry,
                                   params: InverseRadonParams | None = None,
                                   clamp_negative: bool = True,
                                   diagnostics: dict | None = None) -> np.ndarray:
    """Reconstruct by direct quadrature of the fan-beam inverse Radon integral.

    Outer sum over views weighted by R * dphi / Y, inner principal-value
    sum over the detector coordinate with the sqrt(1 + p^2/R^2) weight,
    excluding a symmetric window around the pole p = R * X / Y.
    """
    sinogram = _check_sinogram(sinogram, geometry)
    params = params or InverseRadonParams()
    radius = params.fan_radius_mm or geometry.source_to_origin_mm
    du = geometry.virtual_detector_pitch_mm
    eps = params.singularity_epsilon if params.singularity_epsilon is not None else 0.1 * du
    nd = geometry.detector_count
    n_nodes = params.p_samples if params.p_samples is not None else nd
    if n_nodes < nd:
        raise ValueError(f"p_samples must be at least detector_count ({nd})")

    u = _virtual_coordinates(geometry)
    table = radial_derivative(sinogram, du, params.derivative_scheme)
    if n_nodes == nd:
        p = u
    else:
        p = np.linspace(u[0], u[-1], n_nodes)
        table = np.stack([np.interp(p, u, table[:, v]) for v in range(geometry.view_count)],
                         axis=1)
    dp = p[1] - p[0]
    weight = np.sqrt(1.0 + (p / radius) ** 2) * dp
    wds = np.ascontiguousarray((table * weight[:, None]).T)

    out = np.zeros((geometry.image_rows, geometry.image_cols))
    skipped = _direct_integration(wds, p, float(dp), radius, eps,
                                  geometry.image_rows, geometry.image_cols,
                                  geometry.pixel_pitch_mm, geometry.view_angle_step, out)
    # Change of variables from the parallel-beam inversion integral gives
    # -1/(4 pi^2) for this detector parameterization: the full 2-pi sweep
    # covers every line twice, and the kernel here is 1/(p - pole) rather
    # than its negative.
    out *= -0.25 / math.pi ** 2
    if diagnostics is not None:
        diagnostics["skipped_pixel_views"] = int(skipped)
    if clamp_negative:
        np.clip(out, 0.0, None, out=out)
    return out

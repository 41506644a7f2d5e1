"""Ellipse phantoms and file I/O for images and sinograms.

File formats follow the conventions of the original desk experiment:
whitespace-separated decimal reals, row-major, with negatives clamped to
zero on load; 8-bit binary PGM for quick visual inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class FormatError(ValueError):
    """Malformed image/sinogram/phantom file; carries the offending position."""

    def __init__(self, message: str, path=None, position=None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if position is not None:
            detail = f"{detail} (value #{position})"
        super().__init__(detail)
        self.path = path
        self.position = position


@dataclass(frozen=True)
class Ellipse:
    """One additive ellipse: centre and semi-axes in [-1, 1] image units."""

    cx: float
    cy: float
    a: float
    b: float
    theta_deg: float
    intensity: float

    def __post_init__(self):
        if self.a <= 0.0 or self.b <= 0.0:
            raise ValueError("ellipse semi-axes must be positive")


# Classic ten-ellipse Shepp-Logan head section with the high-contrast
# ("modified") intensities.  y axis points up, rotations counter-clockwise.
SHEPP_LOGAN = (
    Ellipse(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    Ellipse(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    Ellipse(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    Ellipse(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    Ellipse(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    Ellipse(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    Ellipse(0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
    Ellipse(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
)


def render_phantom(ellipses, nx: int, ny: int) -> np.ndarray:
    """Rasterise additive ellipses onto an nx-by-ny grid.

    A pixel accumulates the intensity of every ellipse containing its
    centre; the summed image is clamped at zero.
    """
    if nx < 1 or ny < 1:
        raise ValueError("phantom dimensions must be positive")
    cols = (np.arange(ny) - (ny - 1) / 2.0) / (ny / 2.0)
    rows = ((nx - 1) / 2.0 - np.arange(nx)) / (nx / 2.0)
    x, y = np.meshgrid(cols, rows)
    image = np.zeros((nx, ny))
    for e in ellipses:
        theta = math.radians(e.theta_deg)
        ct, st = math.cos(theta), math.sin(theta)
        u = (x - e.cx) * ct + (y - e.cy) * st
        v = -(x - e.cx) * st + (y - e.cy) * ct
        inside = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
        image[inside] += e.intensity
    np.clip(image, 0.0, None, out=image)
    return image


def shepp_logan(nx: int = 250, ny: int = 250) -> np.ndarray:
    return render_phantom(SHEPP_LOGAN, nx, ny)


def read_phantom_spec(path) -> list[Ellipse]:
    """Parse a phantom description file: six fields per line, '#' comments."""
    ellipses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            fields = body.split()
            if len(fields) != 6:
                raise FormatError(
                    f"line {lineno}: expected 6 fields (cx cy a b theta_deg intensity), "
                    f"got {len(fields)}", path=path)
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise FormatError(f"line {lineno}: unparseable number", path=path) from None
            ellipses.append(Ellipse(*values))
    return ellipses


def _read_values(path, count: int) -> np.ndarray:
    values = np.empty(count)
    pos = 0
    with open(path) as fh:
        for token in fh.read().split():
            if pos >= count:
                raise FormatError(f"expected {count} values, found more", path=path,
                                  position=pos + 1)
            try:
                values[pos] = float(token)
            except ValueError:
                raise FormatError(f"unparseable token {token!r}", path=path,
                                  position=pos + 1) from None
            pos += 1
    if pos != count:
        raise FormatError(f"expected {count} values, found {pos}", path=path, position=pos)
    np.clip(values, 0.0, None, out=values)
    return values


def _write_values(values: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for v in values.ravel():
            fh.write(f"{v:.17g}\n")


def read_image_ascii(path, rows: int, cols: int) -> np.ndarray:
    """Load a row-major ASCII image; negatives clamp to 0 on load."""
    return _read_values(path, rows * cols).reshape(rows, cols)


def write_image_ascii(image: np.ndarray, path) -> None:
    _write_values(np.asarray(image, dtype=np.float64), path)


def read_sinogram_ascii(path, detector_count: int, view_count: int) -> np.ndarray:
    return _read_values(path, detector_count * view_count).reshape(detector_count, view_count)


def write_sinogram_ascii(sinogram: np.ndarray, path) -> None:
    _write_values(np.asarray(sinogram, dtype=np.float64), path)


def write_image_pgm(image: np.ndarray, path, normalize: bool = True) -> None:
    """Write an 8-bit binary PGM (P5, maxval 255).

    With ``normalize`` the image maximum maps to 255 (an all-zero image
    stays black); otherwise values are clamped to [0, 255] as-is.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("cannot write an empty image")
    if normalize:
        peak = float(image.max())
        scaled = (image / peak) * 255.0 if peak > 0.0 else np.zeros_like(image)
    else:
        scaled = np.clip(image, 0.0, 255.0)
    data = np.floor(scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())

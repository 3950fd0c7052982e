"""Display-path post-processing and portable image export.

Nothing here feeds back into tomography: the reconstruction consumes
``CountFrame`` objects only, while everything in this module works on
``RealImage``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .lattice import GridGeometry

CORNER_BLOCK = 4
SIGMA_MIN = 0.5
SIGMA_MAX = 3.0
COLORMAPS = ("gray", "hot")


class DegenerateImageError(ValueError):
    """Image has no positive values to normalize against."""


@dataclass(frozen=True)
class RealImage:
    grid: GridGeometry
    values: np.ndarray = field(repr=False)    # (height, width) float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"image shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, values, pixel_pitch: float = 1.0) -> "RealImage":
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise ValueError("image must be 2-D")
        return cls(GridGeometry(v.shape[1], v.shape[0], pixel_pitch), v)

    def with_values(self, values) -> "RealImage":
        return replace(self, values=values)


@dataclass(frozen=True)
class FilterConfig:
    """Display pipeline settings.

    ``sigma=None`` selects the adaptive width. ``background`` is
    "corner-median", "none" or a fixed pedestal value.
    """

    sigma: float | None = None
    background: str | float = "corner-median"
    colormap: str = "gray"

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if isinstance(self.background, str) and self.background not in ("corner-median", "none"):
            raise ValueError(f"unknown background method {self.background!r}")
        if self.colormap not in COLORMAPS:
            raise ValueError(f"unknown colormap {self.colormap!r}; choose from {COLORMAPS}")


def subtract_background(img: RealImage, method: str | float = "corner-median") -> RealImage:
    """Remove a constant pedestal and clamp at zero.

    The corner-median pedestal is the median over the four 4x4 corner blocks.
    """
    v = img.values
    if isinstance(method, str):
        if method == "none":
            return img
        if method != "corner-median":
            raise ValueError(f"unknown background method {method!r}")
        h, w = v.shape
        if h < 2 * CORNER_BLOCK or w < 2 * CORNER_BLOCK:
            raise ValueError("corner-median background needs an image of at least 8x8")
        b = CORNER_BLOCK
        corners = np.concatenate([v[:b, :b].ravel(), v[:b, -b:].ravel(),
                                  v[-b:, :b].ravel(), v[-b:, -b:].ravel()])
        pedestal = float(np.median(corners))
    else:
        pedestal = float(method)
    return img.with_values(np.maximum(v - pedestal, 0.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-ceil(3 sigma), unit sum."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter(img: RealImage, sigma: float) -> RealImage:
    """Separable Gaussian blur with mirrored edges."""
    k = gaussian_kernel(sigma)
    # "reflect" repeats the edge sample (d c b a | a b c d).
    out = ndimage.convolve1d(img.values, k, axis=0, mode="reflect")
    out = ndimage.convolve1d(out, k, axis=1, mode="reflect")
    return img.with_values(out)


def adaptive_sigma(img: RealImage) -> float:
    """Blur width from count statistics: 5 / sqrt(median of the brightest 10%).

    Clamped to [0.5, 3]; dim (noisier) images get more smoothing.
    """
    v = np.sort(img.values.ravel())
    if v.size == 0:
        raise ValueError("empty image")
    top = v[-max(1, math.ceil(v.size / 10)):]
    m = float(np.median(top))
    if m <= 0:
        return SIGMA_MAX
    return min(max(5.0 / math.sqrt(m), SIGMA_MIN), SIGMA_MAX)


def normalize(img: RealImage) -> RealImage:
    peak = float(img.values.max())
    if not peak > 0:
        raise DegenerateImageError("image has no positive values; nothing to normalize")
    return img.with_values(img.values / peak)


def process(img: RealImage, config: FilterConfig) -> RealImage:
    """Background subtraction, smoothing and normalization, in that order."""
    sigma = adaptive_sigma(img) if config.sigma is None else config.sigma
    out = subtract_background(img, config.background)
    return normalize(gaussian_filter(out, sigma))


def _ramp(name: str) -> np.ndarray:
    t = np.arange(256) / 255.0
    if name == "gray":
        rgb = np.stack([t, t, t], axis=1)
    elif name == "hot":
        # black -> red -> yellow -> white
        rgb = np.clip(np.stack([3 * t, 3 * t - 1, 3 * t - 2], axis=1), 0.0, 1.0)
    else:
        raise ValueError(f"unknown colormap {name!r}; choose from {COLORMAPS}")
    return np.floor(rgb * 255 + 0.5).astype(np.uint8)


COLOR_RAMPS = {name: _ramp(name) for name in COLORMAPS}


def quantize(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
        raise ValueError("render expects values in [0, 1]; normalize first")
    return np.floor(v * 255 + 0.5).astype(np.uint8)


def render(img: RealImage, colormap: str = "gray", binary: bool = True) -> bytes:
    """Encode as PGM (gray) or PPM (any other ramp); P5/P6 when ``binary`` else P2/P3."""
    q = quantize(img.values)
    h, w = q.shape
    if colormap == "gray":
        magic = "P5" if binary else "P2"
        samples = q
    else:
        if colormap not in COLOR_RAMPS:
            raise ValueError(f"unknown colormap {colormap!r}; choose from {COLORMAPS}")
        magic = "P6" if binary else "P3"
        samples = COLOR_RAMPS[colormap][q]         # (h, w, 3)
    header = f"{magic}\n{w} {h}\n255\n".encode("ascii")
    if binary:
        return header + samples.tobytes()
    rows = samples.reshape(h, -1)
    body = "".join(" ".join(str(int(s)) for s in row) + "\n" for row in rows)
    return header + body.encode("ascii")


def image_extension(colormap: str) -> str:
    return ".pgm" if colormap == "gray" else ".ppm"

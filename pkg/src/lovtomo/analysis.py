"""Bell-fidelity maps, entanglement witness statistics and lattice-spacing estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .lattice import GridGeometry
from .qstate import BELL_LABELS, bell_state, canonical_bell_label
from .tomography import STATUS_DEGENERATE, TomographyMap

WITNESS_THRESHOLD = 0.5
DEFAULT_BINS = 50

_BELL_KETS = np.array([bell_state(label) for label in BELL_LABELS])


@dataclass(frozen=True)
class FidelityMap:
    grid: GridGeometry
    values: np.ndarray = field(repr=False)
    label: str = "phi+"


@dataclass(frozen=True)
class MaxFidelityMap:
    """Highest Bell fidelity per pixel and the index (into BELL_LABELS) attaining it."""

    grid: GridGeometry
    values: np.ndarray = field(repr=False)
    argmax: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class FidelityHistogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int


@dataclass(frozen=True)
class WitnessSummary:
    threshold: float
    entangled_fraction: float
    entangled_pixels: int
    total_pixels: int
    # Witnessed pixels broken down by which Bell state is closest, in BELL_LABELS order.
    per_bell: tuple[int, int, int, int]


@dataclass(frozen=True)
class SpacingEstimate:
    spacing: float
    uncertainty: float
    method: str = "normalized-autocorrelation"
    axis_periods_px: tuple[float, float] = (float("nan"), float("nan"))


class SpacingEstimationError(ValueError):
    """No periodic structure strong enough to measure."""


# -- Bell fidelities ---------------------------------------------------------

def bell_fidelities(tmap: TomographyMap) -> np.ndarray:
    """All four Bell fidelities, shape (height, width, 4), BELL_LABELS order."""
    f = np.einsum("bi,hwij,bj->hwb", _BELL_KETS.conj(), tmap.rho, _BELL_KETS).real
    f[tmap.status == STATUS_DEGENERATE] = 0.25
    return f


def bell_fidelity_map(tmap: TomographyMap, label: str) -> FidelityMap:
    label = canonical_bell_label(label)
    idx = BELL_LABELS.index(label)
    return FidelityMap(tmap.grid, bell_fidelities(tmap)[..., idx], label)


def argmax_bell(fidelities: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Index of the largest fidelity; near-ties go to the earliest Bell label."""
    f = np.asarray(fidelities)
    top = f.max(axis=-1, keepdims=True)
    return np.argmax(f >= top * (1 - rtol), axis=-1)


def max_bell_fidelity(tmap: TomographyMap) -> MaxFidelityMap:
    f = bell_fidelities(tmap)
    return MaxFidelityMap(tmap.grid, f.max(axis=-1), argmax_bell(f))


def fidelity_histogram(max_map: MaxFidelityMap | np.ndarray,
                       n_bins: int = DEFAULT_BINS) -> FidelityHistogram:
    """Uniform bins over [0, 1]; the last bin includes 1."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    values = max_map.values if isinstance(max_map, MaxFidelityMap) else np.asarray(max_map)
    v = np.clip(values.ravel(), 0.0, 1.0)
    counts, edges = np.histogram(v, bins=n_bins, range=(0.0, 1.0))
    return FidelityHistogram(edges, counts, int(v.size))


def entangled_fraction(max_map: MaxFidelityMap,
                       threshold: float = WITNESS_THRESHOLD) -> WitnessSummary:
    """Fraction of pixels whose best Bell fidelity strictly exceeds ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    hit = max_map.values > threshold
    per_bell = tuple(int(np.count_nonzero(hit & (max_map.argmax == b))) for b in range(4))
    n_hit = int(np.count_nonzero(hit))
    total = int(hit.size)
    return WitnessSummary(threshold, n_hit / total, n_hit, total, per_bell)


def map_difference(a: FidelityMap, b: FidelityMap) -> tuple[float, float]:
    """Mean and max absolute pixel difference of two maps on the same grid."""
    if a.grid != b.grid or a.values.shape != b.values.shape:
        raise ValueError(f"geometry mismatch: {a.grid} vs {b.grid}")
    d = np.abs(a.values - b.values)
    return float(d.mean()), float(d.max())


# -- lattice spacing ---------------------------------------------------------

def _normalized_autocorrelation(m: np.ndarray, max_lag: int) -> np.ndarray:
    """Correlation coefficient between the image and its copy shifted along axis 1.

    Each lag is normalized by the energy of the two overlapping windows, so an
    exact period gives 1 regardless of how many periods fit in the window.
    """
    w = m.shape[1]
    out = np.zeros(max_lag + 1)
    for k in range(max_lag + 1):
        a = m[:, :w - k]
        b = m[:, k:]
        den = np.sqrt(np.sum(a * a) * np.sum(b * b))
        out[k] = np.sum(a * b) / den if den > 0 else 0.0
    return out


def _first_period(line: np.ndarray, min_height: float = 0.1, rel: float = 0.9) -> float:
    """Sub-pixel lag of the fundamental peak of a normalized autocorrelation.

    Peaks are searched beyond the central lobe (first non-positive lag). The
    fundamental is the first peak within ``rel`` of the tallest one, which
    skips weaker harmonic peaks at fractions of the period.
    """
    nonpos = np.flatnonzero(line <= 0)
    if nonpos.size == 0:
        return float("nan")
    start = max(int(nonpos[0]), 1)
    peaks = [k for k in range(start, line.size - 1)
             if line[k] >= line[k - 1] and line[k] > line[k + 1] and line[k] > min_height * line[0]]
    if not peaks:
        return float("nan")
    top = max(line[k] for k in peaks)
    k = next(k for k in peaks if line[k] >= rel * top)
    curv = line[k - 1] - 2.0 * line[k] + line[k + 1]
    return k + 0.5 * (line[k - 1] - line[k + 1]) / curv


def _axis_periods(m: np.ndarray) -> tuple[float, float]:
    """(x, y) periods in pixels; row/column means are removed per axis."""
    h, w = m.shape
    mx = m - m.mean(axis=1, keepdims=True)
    my = m - m.mean(axis=0, keepdims=True)
    px = _first_period(_normalized_autocorrelation(mx, w // 2))
    py = _first_period(_normalized_autocorrelation(my.T, h // 2))
    return px, py


def _fold(px: float, py: float, tol: float = 0.1) -> tuple[float, float]:
    """Map an axis showing half the other's period back onto the common lattice period.

    Both gradients share one spacing, so the lattice is square; some projections
    have an extra half-period symmetry along one axis only.
    """
    if not (np.isfinite(px) and np.isfinite(py)):
        return px, py
    if abs(2 * px / py - 1) < tol:
        px *= 2
    elif abs(2 * py / px - 1) < tol:
        py *= 2
    return px, py


def _period_average(img: np.ndarray, period: float) -> np.ndarray:
    """Separable moving average over a window exactly ``period`` pixels wide."""
    half = period / 2
    r = int(np.ceil(half))
    j = np.arange(-r, r + 1)
    kernel = np.clip(np.minimum(j + 0.5, half) - np.maximum(j - 0.5, -half), 0, None)
    kernel /= kernel.sum()
    out = ndimage.convolve1d(img, kernel, axis=0, mode="reflect")
    return ndimage.convolve1d(out, kernel, axis=1, mode="reflect")


def _beam_envelope(img: np.ndarray, period: float) -> np.ndarray:
    """Gaussian beam model fitted to the one-period local mean of ``img``.

    log(local mean) is fitted with a weighted quadratic; the variance added
    by the averaging window (period^2 / 12 per axis) is then removed.
    """
    h, w = img.shape
    local = _period_average(img, period)
    y, x = np.mgrid[0:h, 0:w].astype(float)
    x -= w / 2
    y -= h / 2
    ok = local > 0
    design = np.stack([np.ones(ok.sum()), x[ok], y[ok], x[ok] ** 2, y[ok] ** 2, x[ok] * y[ok]], 1)
    wt = local[ok] / local.max()
    c, *_ = np.linalg.lstsq(design * wt[:, None], np.log(local[ok]) * wt, rcond=None)
    quad = np.array([[c[3], c[5] / 2], [c[5] / 2, c[4]]])
    if np.all(np.linalg.eigvalsh(quad) < 0):
        cov = -0.5 * np.linalg.inv(quad) - np.eye(2) * period ** 2 / 12
        if np.all(np.linalg.eigvalsh(cov) > 0):
            mu = np.linalg.solve(-2 * quad, c[1:3])
            prec = np.linalg.inv(cov)
            dx = x - mu[0]
            dy = y - mu[1]
            return np.exp(-0.5 * (prec[0, 0] * dx * dx + 2 * prec[0, 1] * dx * dy
                                  + prec[1, 1] * dy * dy))
    return np.exp(c[1] * x + c[2] * y + c[3] * x * x + c[4] * y * y + c[5] * x * y)


def estimate_lattice_spacing(intensity: np.ndarray, pixel_pitch: float,
                             refinements: int = 2) -> SpacingEstimate:
    """Lattice period of an intensity map from its normalized autocorrelation.

    A coarse period is read off after subtracting a broad Gaussian blur. The
    beam envelope is then modelled at that period and divided out, and the
    period re-measured. Spacing is the mean of the two axis periods (after
    half-period folding) times ``pixel_pitch``; the uncertainty is half their
    difference plus half a pixel for the parabolic interpolation.
    """
    img = np.asarray(intensity, dtype=float)
    if img.ndim != 2 or min(img.shape) < 4:
        raise ValueError("intensity must be a 2-D map at least 4x4")
    if not pixel_pitch > 0:
        raise ValueError("pixel_pitch must be positive")
    coarse = img - ndimage.gaussian_filter(img, min(img.shape) / 8, mode="reflect")
    px, py = _fold(*_axis_periods(coarse))
    if not (np.isfinite(px) and np.isfinite(py)):
        raise SpacingEstimationError("no off-center autocorrelation peak above 10% of the central peak")
    for _ in range(refinements):
        flat = img / _beam_envelope(img, 0.5 * (px + py))
        qx, qy = _fold(*_axis_periods(flat - flat.mean()))
        if not (np.isfinite(qx) and np.isfinite(qy)):
            break
        px, py = qx, qy
    px, py = float(px), float(py)
    spacing = 0.5 * (px + py) * pixel_pitch
    uncertainty = (0.5 * abs(px - py) + 0.5) * pixel_pitch
    return SpacingEstimate(spacing, uncertainty, "normalized-autocorrelation", (px, py))

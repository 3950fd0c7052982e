"""Spin-orbit lattice state produced by LOV prism pairs, evaluated on a pixel grid.

Coordinates handed to the operator functions live in the prism plane. A
``GridGeometry`` maps detector pixels to that plane through a single scalar
``magnification`` (prism-plane length per detector-plane length).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .qstate import polarization_ket

TOMOGRAPHY_LABELS = ("H", "V", "D", "R")

# Default acquisition geometry.
DEFAULT_WIDTH = 140
DEFAULT_PIXEL_PITCH = 13e-6
DEFAULT_DETECTOR_SPACING = 0.519e-3
DEFAULT_WAVELENGTH = 808e-9
DEFAULT_EXPOSURES = 2000
# Camera-side telescope demagnifies 4x; the 8.3x input telescope acts before the prisms.
DEFAULT_MAGNIFICATION = 4.0
DEFAULT_DELTA_N = 9e-3


@dataclass(frozen=True)
class LatticeParams:
    wavelength: float
    delta_n: float
    incline_theta: float
    origin_x0: float = 0.0
    origin_y0: float = 0.0
    n_passes: int = 2

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if not self.delta_n * math.tan(self.incline_theta) > 0:
            raise ValueError("delta_n * tan(incline_theta) must be positive "
                             f"(got delta_n={self.delta_n}, incline_theta={self.incline_theta})")
        if int(self.n_passes) != self.n_passes or self.n_passes < 1:
            raise ValueError(f"n_passes must be a positive integer, got {self.n_passes}")

    @classmethod
    def for_spacing(cls, spacing: float, wavelength: float = DEFAULT_WAVELENGTH,
                    delta_n: float = DEFAULT_DELTA_N, **kwargs) -> "LatticeParams":
        """Back-compute the prism incline angle that yields ``spacing``."""
        theta = math.atan(wavelength / (delta_n * spacing))
        return cls(wavelength=wavelength, delta_n=delta_n, incline_theta=theta, **kwargs)


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    pixel_pitch: float
    magnification: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pixel_pitch > 0:
            raise ValueError(f"pixel_pitch must be positive, got {self.pixel_pitch}")
        if not self.magnification > 0:
            raise ValueError(f"magnification must be positive, got {self.magnification}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (rows, columns) = (height, width)."""
        return (self.height, self.width)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Prism-plane (x, y) of every pixel center, each of shape ``self.shape``."""
        cx = (np.arange(self.width) + 0.5) * self.pixel_pitch * self.magnification
        cy = (np.arange(self.height) + 0.5) * self.pixel_pitch * self.magnification
        y, x = np.meshgrid(cy, cx, indexing="ij")
        return x, y

    def center(self) -> tuple[float, float]:
        """Prism-plane coordinates of the grid center."""
        s = self.pixel_pitch * self.magnification
        return 0.5 * self.width * s, 0.5 * self.height * s


@dataclass(frozen=True)
class BeamEnvelope:
    waist: float
    center_x: float
    center_y: float

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError(f"waist must be positive, got {self.waist}")


def lattice_spacing(params: LatticeParams) -> float:
    """Prism-plane lattice period a = wavelength / (delta_n tan(theta))."""
    denom = params.delta_n * math.tan(params.incline_theta)
    if not denom > 0 or not math.isfinite(denom):
        raise ValueError("lattice spacing is infinite for delta_n * tan(theta) <= 0")
    return params.wavelength / denom


def detector_spacing(params: LatticeParams, grid: GridGeometry) -> float:
    """Lattice period as seen in the detector plane."""
    return lattice_spacing(params) / grid.magnification


def default_geometry(width: int = DEFAULT_WIDTH, height: int | None = None,
                   pixel_pitch: float = DEFAULT_PIXEL_PITCH,
                   spacing: float = DEFAULT_DETECTOR_SPACING,
                   magnification: float = DEFAULT_MAGNIFICATION,
                   ) -> tuple[LatticeParams, GridGeometry, BeamEnvelope]:
    """Default 140x140 acquisition with 13 um pixels and a 0.519 mm period.

    Gradient origin and beam center sit at the grid center; the waist is
    0.45 of the grid side.
    """
    height = width if height is None else height
    grid = GridGeometry(width, height, pixel_pitch, magnification)
    x0, y0 = grid.center()
    params = LatticeParams.for_spacing(spacing * magnification, origin_x0=x0, origin_y0=y0)
    side = min(width, height) * pixel_pitch * magnification
    envelope = BeamEnvelope(waist=0.45 * side, center_x=x0, center_y=y0)
    return params, grid, envelope


# -- operators ---------------------------------------------------------------

def _phase(coord, origin, spacing):
    return np.pi * (np.asarray(coord, dtype=float) - origin) / spacing


def _ux_batch(phi: np.ndarray) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    out = np.empty(np.shape(phi) + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = 1j * s
    out[..., 1, 0] = 1j * s
    return out


def _uy_batch(psi: np.ndarray) -> np.ndarray:
    out = np.zeros(np.shape(psi) + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(1j * psi)
    out[..., 1, 1] = np.exp(-1j * psi)
    return out


def gradient_unitary_x(x: float, params: LatticeParams) -> np.ndarray:
    """exp(i pi (x - x0)/a sigma_x) in closed form."""
    return _ux_batch(_phase(x, params.origin_x0, lattice_spacing(params)))


def gradient_unitary_y(y: float, params: LatticeParams) -> np.ndarray:
    """exp(i pi (y - y0)/a sigma_z) in closed form."""
    return _uy_batch(_phase(y, params.origin_y0, lattice_spacing(params)))


def lov_operator(x, y, params: LatticeParams) -> np.ndarray:
    """(U_x U_y)^N for N = params.n_passes.

    Broadcasts over array-valued ``x`` and ``y``; the trailing two axes hold
    the 2x2 operator.
    """
    single = gradient_unitary_x(x, params) @ gradient_unitary_y(y, params)
    out = single
    for _ in range(params.n_passes - 1):
        out = out @ single
    return out


def circular_amplitudes(x, y, params: LatticeParams) -> tuple[complex, complex]:
    """Amplitudes A = <L|U|L> and B = <R|U|L> of the LOV operator U."""
    u = lov_operator(x, y, params)
    ket_l = polarization_ket("L")
    ket_r = polarization_ket("R")
    ul = u @ ket_l
    return ul @ ket_l.conj(), ul @ ket_r.conj()


def lov_state(x, y, params: LatticeParams) -> np.ndarray:
    """Normalized two-photon ket (U (x) I)|phi+> at prism-plane point (x, y).

    The beam envelope is not folded in; see ``evaluate_field``.
    """
    u = lov_operator(x, y, params)
    # (U (x) I)|phi+> = (1/sqrt2) sum_j (U|j>) (x) |j>, i.e. psi[2a+b] = U[a, b]/sqrt2
    psi = u.reshape(u.shape[:-2] + (4,)) * (1.0 / np.sqrt(2.0))
    return psi


@dataclass(frozen=True)
class SpinOrbitField:
    """Per-pixel normalized kets plus the separately stored envelope weight."""

    grid: GridGeometry
    kets: np.ndarray = field(repr=False)      # shape (height, width, 4)
    weights: np.ndarray = field(repr=False)   # shape (height, width), sums to 1


def evaluate_field(params: LatticeParams, grid: GridGeometry,
                   envelope: BeamEnvelope) -> SpinOrbitField:
    x, y = grid.pixel_centers()
    kets = lov_state(x, y, params)
    r2 = (x - envelope.center_x) ** 2 + (y - envelope.center_y) ** 2
    w = np.exp(-2.0 * r2 / envelope.waist ** 2)
    total = w.sum()
    if not total > 0:
        raise ValueError("beam envelope vanishes over the whole grid")
    return SpinOrbitField(grid, kets, w / total)


def projection_probability(state: np.ndarray, signal_label: str, idler_label: str):
    """|(<s| (x) <i|)|psi>|^2; broadcasts over leading axes of ``state``."""
    proj = np.kron(polarization_ket(signal_label), polarization_ket(idler_label))
    amp = np.asarray(state, dtype=complex) @ proj.conj()
    return np.abs(amp) ** 2


def theoretical_intensity(fld: SpinOrbitField, signal_label: str, idler_label: str) -> np.ndarray:
    """Envelope-weighted projection probability map, shape ``grid.shape``."""
    return fld.weights * projection_probability(fld.kets, signal_label, idler_label)


# -- count simulation --------------------------------------------------------

@dataclass(frozen=True)
class CountFrame:
    signal_setting: str
    idler_setting: str
    grid: GridGeometry
    counts: np.ndarray = field(repr=False)   # int64, shape (height, width)
    exposures: int = DEFAULT_EXPOSURES
    seed: int = 0

    def __post_init__(self):
        if self.counts.shape != self.grid.shape:
            raise ValueError(f"counts shape {self.counts.shape} does not match grid {self.grid.shape}")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("counts must be nonnegative")
        if self.exposures < 1:
            raise ValueError("exposures must be positive")

    @property
    def setting(self) -> str:
        return self.signal_setting + self.idler_setting


def expected_counts(fld: SpinOrbitField, signal_label: str, idler_label: str,
                    mean_total_counts: float, background_rate: float = 0.0) -> np.ndarray:
    """Poisson mean of every pixel for one setting."""
    if mean_total_counts < 0 or background_rate < 0:
        raise ValueError("mean_total_counts and background_rate must be nonnegative")
    return mean_total_counts * theoretical_intensity(fld, signal_label, idler_label) + background_rate


def _setting_uniforms(seed: int, signal_label: str, idler_label: str, n: int) -> np.ndarray:
    """One uniform in (0, 1) per pixel, a fixed function of (seed, setting, pixel index)."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    ss = np.random.SeedSequence([seed, ord(signal_label), ord(idler_label)])
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.random(n) + 2.0 ** -54


def simulate_frame(fld: SpinOrbitField, signal_label: str, idler_label: str,
                   mean_total_counts: float, background_rate: float, seed: int,
                   exposures: int = DEFAULT_EXPOSURES) -> CountFrame:
    """Poisson-sampled count frame for one (signal, idler) setting.

    Counts are drawn by inverse-CDF sampling from a per-pixel uniform, so the
    value at each pixel depends only on its index, the setting and the seed.
    """
    lam = expected_counts(fld, signal_label, idler_label, mean_total_counts, background_rate)
    u = _setting_uniforms(seed, signal_label, idler_label, lam.size).reshape(lam.shape)
    counts = np.zeros(lam.shape, dtype=np.int64)
    live = lam > 0
    counts[live] = stats.poisson.ppf(u[live], lam[live]).astype(np.int64)
    return CountFrame(signal_label, idler_label, fld.grid, counts, exposures, seed)


def canonical_settings() -> list[tuple[str, str]]:
    """Row-major {H,V,D,R} x {H,V,D,R} order used by every API and file."""
    return [(s, i) for s in TOMOGRAPHY_LABELS for i in TOMOGRAPHY_LABELS]


def simulate_measurement_frames(fld: SpinOrbitField, mean_total_counts: float,
                                background_rate: float, seed: int,
                                exposures: int = DEFAULT_EXPOSURES) -> list[CountFrame]:
    return [simulate_frame(fld, s, i, mean_total_counts, background_rate, seed, exposures)
            for s, i in canonical_settings()]


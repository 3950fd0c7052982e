"""Pixel-wise maximum-likelihood reconstruction of two-qubit density matrices.

The likelihood minimizer runs in a compiled extension when it was built and
falls back to a pure-Python implementation of the same iteration otherwise.
``BACKEND`` names the one picked at import; setting ``LOVTOMO_BACKEND=python``
in the environment forces the fallback.
"""

from __future__ import annotations

import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..lattice import CountFrame, GridGeometry
from . import _fallback
from .model import (
    FLUX_INDICES,
    N_SETTINGS,
    SETTINGS,
    DegenerateCountsError,
    born_probabilities,
    check_counts,
    estimate_flux,
    linear_inversion,
    negative_log_likelihood,
    nll_and_gradient,
    params_to_rho,
    project_to_physical,
    rho_to_params,
)

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

if os.environ.get("LOVTOMO_BACKEND") == "python":
    _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"

MAX_ITER = 10000
REL_TOL = 1e-10

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_DEGENERATE = 2
STATUS_NAMES = ("converged", "max_iter", "degenerate_zero_counts")

__all__ = [
    "BACKEND", "SETTINGS", "STATUS_NAMES", "DegenerateCountsError", "MeasurementSet",
    "PixelTomographyResult", "TomographyMap", "available_backends", "born_probabilities",
    "estimate_flux", "linear_inversion", "mle_reconstruct", "negative_log_likelihood",
    "nll_and_gradient", "pixelwise_tomography", "project_to_physical", "params_to_rho",
    "rho_to_params",
]


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _kernels is not None else ("python",)


def _backend_module(name: str | None):
    name = name or BACKEND
    if name == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled tomography kernel is not built; "
                               "reinstall with Cython available or use backend='python'")
        return _kernels
    if name == "python":
        return _fallback
    raise ValueError(f"unknown backend {name!r}; expected 'compiled' or 'python'")


@dataclass(frozen=True)
class MeasurementSet:
    """The 16 count frames of one acquisition, stacked in canonical order."""

    grid: GridGeometry
    counts: np.ndarray = field(repr=False)    # shape (height, width, 16)
    exposures: int = 1

    @classmethod
    def from_frames(cls, frames: Sequence[CountFrame]) -> "MeasurementSet":
        by_setting: dict[str, CountFrame] = {}
        for fr in frames:
            if fr.setting not in SETTINGS:
                raise ValueError(f"setting {fr.setting!r} is not part of the {{H,V,D,R}}^2 set")
            if fr.setting in by_setting:
                raise ValueError(f"duplicate frame for setting {fr.setting}")
            by_setting[fr.setting] = fr
        missing = [s for s in SETTINGS if s not in by_setting]
        if missing:
            raise ValueError(f"missing frames for settings {', '.join(missing)}")
        first = by_setting[SETTINGS[0]]
        for s in SETTINGS:
            if by_setting[s].counts.shape != first.counts.shape:
                raise ValueError(f"frame {s} has shape {by_setting[s].counts.shape}, "
                                 f"expected {first.counts.shape}")
        counts = np.stack([by_setting[s].counts for s in SETTINGS], axis=-1)
        return cls(first.grid, counts, first.exposures)

    def __post_init__(self):
        if self.counts.shape != self.grid.shape + (N_SETTINGS,):
            raise ValueError(f"counts shape {self.counts.shape} does not match "
                             f"grid {self.grid.shape} x {N_SETTINGS} settings")


@dataclass(frozen=True)
class PixelTomographyResult:
    rho: np.ndarray
    nll: float
    iterations: int
    flux_estimate: float
    status: str


@dataclass(frozen=True)
class TomographyMap:
    grid: GridGeometry
    rho: np.ndarray = field(repr=False)         # (height, width, 4, 4) complex
    nll: np.ndarray = field(repr=False)         # (height, width)
    iterations: np.ndarray = field(repr=False)  # (height, width) int32
    flux: np.ndarray = field(repr=False)        # (height, width)
    status: np.ndarray = field(repr=False)      # (height, width) int8 status codes

    def __post_init__(self):
        if self.rho.shape != self.grid.shape + (4, 4):
            raise ValueError(f"rho shape {self.rho.shape} does not match grid {self.grid.shape}")

    def pixel(self, row: int, col: int) -> PixelTomographyResult:
        return PixelTomographyResult(self.rho[row, col], float(self.nll[row, col]),
                                     int(self.iterations[row, col]), float(self.flux[row, col]),
                                     STATUS_NAMES[self.status[row, col]])

    def status_counts(self) -> dict[str, int]:
        return {name: int(np.count_nonzero(self.status == code))
                for code, name in enumerate(STATUS_NAMES)}


def _reconstruct_rows(counts: np.ndarray, backend: str | None, num_threads: int,
                      max_iter: int, rel_tol: float):
    """Reconstruct every row of an (n, 16) count array."""
    impl = _backend_module(backend)
    n = counts.shape[0]
    flux = np.zeros(n)
    for k in FLUX_INDICES:
        flux = flux + counts[:, k]
    rho = np.broadcast_to(np.eye(4, dtype=complex) / 4, (n, 4, 4)).copy()
    nll = np.zeros(n)
    iters = np.zeros(n, dtype=np.int32)
    status = np.full(n, STATUS_DEGENERATE, dtype=np.int8)
    live = np.flatnonzero(flux > 0)
    if live.size:
        c = np.ascontiguousarray(counts[live])
        seed = rho_to_params(project_to_physical(linear_inversion(c, flux[live])))
        theta, nll[live], iters[live], status[live] = impl.minimize_batch(
            seed, c, flux[live], max_iter, rel_tol, num_threads)
        r = params_to_rho(theta)
        rho[live] = 0.5 * (r + np.conj(np.swapaxes(r, -1, -2)))
    return rho, nll, iters, flux, status


def mle_reconstruct(counts, settings: Sequence[str] | None = None, *,
                    backend: str | None = None, max_iter: int = MAX_ITER,
                    rel_tol: float = REL_TOL) -> PixelTomographyResult:
    """Maximum-likelihood density matrix for one pixel's 16 counts.

    ``counts`` is either a mapping from setting label ("HD", ...) to count or
    a sequence in canonical order. If ``settings`` is given it must equal the
    canonical order.
    """
    if isinstance(counts, Mapping):
        if set(counts) != set(SETTINGS):
            raise ValueError(f"count mapping must have exactly the keys {SETTINGS}")
        counts = [counts[s] for s in SETTINGS]
    elif settings is not None and tuple(settings) != SETTINGS:
        raise ValueError(f"counts must be given in canonical setting order {SETTINGS}")
    c = check_counts(counts)
    if c.shape != (N_SETTINGS,):
        raise ValueError(f"expected {N_SETTINGS} counts, got shape {c.shape}")
    rho, nll, iters, flux, status = _reconstruct_rows(c[None, :], backend, 1, max_iter, rel_tol)
    return PixelTomographyResult(rho[0], float(nll[0]), int(iters[0]), float(flux[0]),
                                 STATUS_NAMES[status[0]])


def pixelwise_tomography(mset: MeasurementSet, *, backend: str | None = None,
                         num_threads: int = 0, pixel_order: np.ndarray | None = None,
                         max_iter: int = MAX_ITER, rel_tol: float = REL_TOL) -> TomographyMap:
    """Independent maximum-likelihood reconstruction at every pixel.

    ``pixel_order`` (a permutation of flat row-major pixel indices) changes
    the visitation order only; the result does not depend on it.
    """
    h, w = mset.grid.shape
    flat = mset.counts.reshape(h * w, N_SETTINGS).astype(float)
    order = np.arange(h * w) if pixel_order is None else np.asarray(pixel_order)
    if sorted(order.tolist()) != list(range(h * w)):
        raise ValueError("pixel_order must be a permutation of the pixel indices")
    rho, nll, iters, flux, status = _reconstruct_rows(flat[order], backend, num_threads,
                                                      max_iter, rel_tol)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return TomographyMap(mset.grid, rho[inv].reshape(h, w, 4, 4), nll[inv].reshape(h, w),
                         iters[inv].reshape(h, w), flux[inv].reshape(h, w),
                         status[inv].reshape(h, w))

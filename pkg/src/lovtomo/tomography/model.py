"""Measurement model shared by both optimizer backends.

Setting order is the row-major {H,V,D,R} x {H,V,D,R} sequence
(HH, HV, HD, HR, VH, ..., RR), signal label first.

Cholesky parameter layout (16 reals) for the lower-triangular T with
rho = T^dag T / Tr(T^dag T)::

    T = [[t0,         0,          0,        0 ],
         [t4 + i t5,  t1,         0,        0 ],
         [t10 + i t11, t6 + i t7,  t2,       0 ],
         [t14 + i t15, t12 + i t13, t8 + i t9, t3]]
"""

from __future__ import annotations

import numpy as np

from ..lattice import TOMOGRAPHY_LABELS
from ..qstate import I2, SIGMA_X, SIGMA_Y, SIGMA_Z, polarization_ket

SETTINGS = tuple(s + i for s in TOMOGRAPHY_LABELS for i in TOMOGRAPHY_LABELS)
N_SETTINGS = len(SETTINGS)

# Settings whose projectors sum to the identity; their counts give the flux.
FLUX_SETTINGS = ("HH", "HV", "VH", "VV")
FLUX_INDICES = tuple(SETTINGS.index(s) for s in FLUX_SETTINGS)

NLL_EPS = 1e-12
SEED_JITTER = 1e-8

PROJECTOR_KETS = np.array(
    [np.kron(polarization_ket(s[0]), polarization_ket(s[1])) for s in SETTINGS])
PROJECTORS = np.einsum("ki,kj->kij", PROJECTOR_KETS, PROJECTOR_KETS.conj())

# (row, col, real-index, imag-index) of each strictly-lower entry of T.
OFFDIAG_LAYOUT = (
    (1, 0, 4, 5), (2, 1, 6, 7), (3, 2, 8, 9),
    (2, 0, 10, 11), (3, 1, 12, 13), (3, 0, 14, 15),
)

_PAULI = (I2, SIGMA_X, SIGMA_Y, SIGMA_Z)
_PAULI_PRODUCTS = np.array([np.kron(a, b) for a in _PAULI for b in _PAULI])
# p_k = sum_m design[k, m] r_m with rho = sum_m r_m (sigma_a (x) sigma_b) / 4
_DESIGN = np.einsum("kij,mji->km", PROJECTORS, _PAULI_PRODUCTS).real / 4.0
assert np.linalg.cond(_DESIGN) < 1e3, "measurement set is not tomographically complete"
_DESIGN_INV = np.linalg.inv(_DESIGN)


class DegenerateCountsError(ValueError):
    """All counts in the flux-defining sub-basis are zero."""


def check_counts(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    if c.shape[-1] != N_SETTINGS:
        raise ValueError(f"expected {N_SETTINGS} counts per pixel in canonical order {SETTINGS}, "
                         f"got trailing dimension {c.shape[-1]}")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("counts must be finite and nonnegative")
    return c


def born_probabilities(rho: np.ndarray) -> np.ndarray:
    """Probabilities of the 16 canonical projectors; broadcasts over leading axes."""
    return np.einsum("ki,...ij,kj->...k", PROJECTOR_KETS.conj(), rho, PROJECTOR_KETS).real


def estimate_flux(counts) -> float:
    """Total counts over the complete HH/HV/VH/VV sub-basis."""
    c = check_counts(counts)
    flux = float(sum(c[i] for i in FLUX_INDICES))
    if flux == 0:
        raise DegenerateCountsError("all HH, HV, VH, VV counts are zero")
    return flux


def linear_inversion(counts, flux: float) -> np.ndarray:
    """Hermitian matrix reproducing counts/flux exactly on the 16 projectors.

    Works on a single 16-vector or a stack (..., 16). The result may have
    negative eigenvalues.
    """
    c = check_counts(counts)
    flux = np.asarray(flux, dtype=float)
    if np.any(flux <= 0):
        raise ValueError("flux must be positive")
    probs = c / flux[..., None]
    # Fixed-order accumulation keeps each pixel's result independent of its
    # position in a stacked batch (BLAS blocking is not).
    r = np.zeros(probs.shape)
    for k in range(N_SETTINGS):
        r = r + probs[..., k, None] * _DESIGN_INV[:, k]
    rho = np.zeros(probs.shape[:-1] + (4, 4), dtype=complex)
    for m in range(N_SETTINGS):
        rho = rho + r[..., m, None, None] * _PAULI_PRODUCTS[m]
    rho = rho / 4.0
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def project_to_physical(h: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues to zero and renormalize to unit trace.

    Falls back to the maximally mixed state when nothing positive remains.
    Accepts a single 4x4 matrix or a stack.
    """
    h = np.asarray(h, dtype=complex)
    herm = np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2))))
    if herm > 1e-9:
        raise ValueError(f"input is not Hermitian (residual {herm:.3e})")
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    total = w.sum(axis=-1)
    dead = total <= 0
    w = np.where(dead[..., None], 0.25, w / np.where(dead, 1.0, total)[..., None])
    rho = np.einsum("...ik,...k,...jk->...ij", v, w, v.conj())
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def params_to_t(params) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    t = np.zeros(p.shape[:-1] + (4, 4), dtype=complex)
    for d in range(4):
        t[..., d, d] = p[..., d]
    for row, col, re, im in OFFDIAG_LAYOUT:
        t[..., row, col] = p[..., re] + 1j * p[..., im]
    return t


def t_to_params(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    p = np.empty(t.shape[:-2] + (16,), dtype=float)
    for d in range(4):
        p[..., d] = t[..., d, d].real
    for row, col, re, im in OFFDIAG_LAYOUT:
        p[..., re] = t[..., row, col].real
        p[..., im] = t[..., row, col].imag
    return p


def params_to_rho(params) -> np.ndarray:
    """rho = T^dag T / Tr(T^dag T)."""
    t = params_to_t(params)
    a = np.conj(np.swapaxes(t, -1, -2)) @ t
    tr = np.trace(a, axis1=-2, axis2=-1).real
    return a / tr[..., None, None]


def rho_to_params(rho: np.ndarray, jitter: float = SEED_JITTER) -> np.ndarray:
    """Cholesky parameters whose T^dag T reproduces ``rho``.

    A diagonal jitter is mixed in when ``rho`` is (numerically) rank deficient
    so that the factorization exists and no eigenvalue starts pinned at zero.
    """
    rho = np.asarray(rho, dtype=complex)
    lam_min = np.linalg.eigvalsh(rho)[..., 0]
    needs = lam_min < jitter
    eye = np.eye(4)
    rho = np.where(needs[..., None, None], (rho + jitter * eye) / (1 + 4 * jitter), rho)
    # With J the exchange matrix, J rho J = L L^dag gives rho = T^dag T for T = J L^dag J.
    flipped = rho[..., ::-1, ::-1]
    low = np.linalg.cholesky(flipped)
    t = np.conj(np.swapaxes(low, -1, -2))[..., ::-1, ::-1]
    return t_to_params(t)


def negative_log_likelihood(params, counts, flux: float) -> float:
    """Poisson negative log-likelihood with constant terms dropped."""
    c = check_counts(counts)
    if flux <= 0:
        raise ValueError("flux must be positive")
    p = born_probabilities(params_to_rho(params))
    nbar = flux * p + NLL_EPS
    return float(np.sum(nbar - c * np.log(nbar)))


def nll_and_gradient(params, counts, flux: float) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient with respect to the 16 parameters."""
    params = np.asarray(params, dtype=float)
    t = params_to_t(params)
    tau = float(np.sum(np.abs(t) ** 2))
    v = PROJECTOR_KETS @ t.T                      # row k holds T psi_k
    q = np.sum(np.abs(v) ** 2, axis=1)
    nbar = flux * q / tau + NLL_EPS
    f = float(np.sum(nbar - counts * np.log(nbar)))
    w = flux * (1.0 - counts / nbar)
    m = (PROJECTOR_KETS.T * w) @ PROJECTOR_KETS.conj()
    g_mat = 2.0 * (t @ m) / tau - 2.0 * float(w @ q) * t / tau ** 2
    return f, t_to_params(g_mat)

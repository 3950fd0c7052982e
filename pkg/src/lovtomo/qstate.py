"""Two-level and two-qubit state primitives.

All states are plain numpy arrays. Two-qubit vectors use the ordering
(HH, HV, VH, VV) with the signal photon as the first (left) factor, and
H, V map onto the computational states 0 and 1.
"""

from __future__ import annotations

import numpy as np

SQRT_HALF = 1.0 / np.sqrt(2.0)

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

POLARIZATION_LABELS = ("H", "V", "D", "A", "R", "L")

_KETS = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([SQRT_HALF, SQRT_HALF], dtype=complex),
    "A": np.array([SQRT_HALF, -SQRT_HALF], dtype=complex),
    "R": np.array([SQRT_HALF, 1j * SQRT_HALF], dtype=complex),
    "L": np.array([SQRT_HALF, -1j * SQRT_HALF], dtype=complex),
}

# Fixed order doubles as the argmax tie-break order in the analysis layer.
BELL_LABELS = ("phi+", "phi-", "psi+", "psi-")

_BELL_ALIASES = {
    "phi+": "phi+", "Φ+": "phi+", "phi_plus": "phi+",
    "phi-": "phi-", "Φ-": "phi-", "Φ−": "phi-", "phi_minus": "phi-",
    "psi+": "psi+", "Ψ+": "psi+", "psi_plus": "psi+",
    "psi-": "psi-", "Ψ-": "psi-", "Ψ−": "psi-", "psi_minus": "psi-",
}

_BELL = {
    "phi+": np.array([1, 0, 0, 1], dtype=complex) * SQRT_HALF,
    "phi-": np.array([1, 0, 0, -1], dtype=complex) * SQRT_HALF,
    "psi+": np.array([0, 1, 1, 0], dtype=complex) * SQRT_HALF,
    "psi-": np.array([0, 1, -1, 0], dtype=complex) * SQRT_HALF,
}

HERMITIAN_TOL = 1e-9
TRACE_TOL = 1e-9
PSD_TOL = 1e-9


class UnphysicalStateError(ValueError):
    """Raised when a matrix violates the density-matrix invariants."""


def polarization_ket(label: str) -> np.ndarray:
    """Return the unit ket for a polarization label in the (H, V) basis."""
    try:
        return _KETS[label].copy()
    except (KeyError, TypeError):
        raise ValueError(f"unknown polarization label {label!r}; "
                         f"expected one of {POLARIZATION_LABELS}") from None


def canonical_bell_label(label: str) -> str:
    try:
        return _BELL_ALIASES[label]
    except (KeyError, TypeError):
        raise ValueError(f"unknown Bell state label {label!r}; "
                         f"expected one of {BELL_LABELS}") from None


def bell_state(label: str) -> np.ndarray:
    """Return one of the four Bell states in (HH, HV, VH, VV) ordering."""
    return _BELL[canonical_bell_label(label)].copy()


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with ``a`` acting on the signal (first) qubit."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise ValueError("tensor expects two kets or two operators")
    return np.kron(a, b)


def ket_to_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def is_unitary(u: np.ndarray, tol: float = 1e-12) -> bool:
    u = np.asarray(u)
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol)


def check_density_matrix(rho: np.ndarray) -> np.ndarray:
    """Validate ``rho`` against the Hermitian / unit-trace / PSD invariants.

    Returns the matrix as a complex array; raises UnphysicalStateError with
    the violated quantity otherwise.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise UnphysicalStateError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITIAN_TOL:
        raise UnphysicalStateError(f"not Hermitian: max |rho - rho^dag| = {herm:.3e}")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise UnphysicalStateError(f"trace is {tr:.12g}, expected 1")
    lam_min = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam_min < -PSD_TOL:
        raise UnphysicalStateError(f"negative eigenvalue {lam_min:.3e}")
    return rho


def fidelity(rho: np.ndarray, psi: np.ndarray) -> float:
    """Overlap <psi|rho|psi> of a density matrix with a pure target state."""
    rho = check_density_matrix(rho)
    psi = np.asarray(psi, dtype=complex)
    value = np.vdot(psi, rho @ psi)
    if abs(value.imag) > 1e-10:
        raise UnphysicalStateError(f"fidelity has imaginary part {value.imag:.3e}")
    return float(value.real)


def partial_trace(rho: np.ndarray, subsystem: str) -> np.ndarray:
    """Trace out ``subsystem`` ("signal" or "idler") of a two-qubit state."""
    r = np.asarray(rho, dtype=complex).reshape(2, 2, 2, 2)
    if subsystem == "signal":
        return np.einsum("ijik->jk", r)
    if subsystem == "idler":
        return np.einsum("ijkj->ik", r)
    raise ValueError(f"subsystem must be 'signal' or 'idler', got {subsystem!r}")


def eigen_hermitian(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending.

    Columns of the returned eigenvector matrix pair with the eigenvalues.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    herm = np.max(np.abs(m - m.conj().T))
    if herm > HERMITIAN_TOL:
        raise ValueError(f"matrix is not Hermitian (residual {herm:.3e})")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return w[::-1].copy(), v[:, ::-1].copy()

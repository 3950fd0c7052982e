import numpy as np
import pytest

from lovtomo.lattice import (
    canonical_settings,
    default_geometry,
    evaluate_field,
    expected_counts,
)
from lovtomo.tomography import MeasurementSet, available_backends, pixelwise_tomography

BACKENDS = available_backends()


def random_density_matrix(rng, rank=None):
    """Ginibre-distributed two-qubit state of the given rank (full rank by default)."""
    k = rank or 4
    g = rng.normal(size=(4, k)) + 1j * rng.normal(size=(4, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def state_fidelity(a, b):
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2 of two density matrices."""
    w, v = np.linalg.eigh(a)
    sa = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    lam = np.linalg.eigvalsh(sa @ b @ sa)
    return float(np.sum(np.sqrt(np.clip(lam, 0, None))) ** 2)


def noiseless_measurement(fld, per_pixel_flux=1e6):
    """Analytic (non-integer) expected counts for all 16 settings."""
    total = per_pixel_flux * fld.grid.n_pixels
    counts = np.stack([expected_counts(fld, s, i, total) for s, i in canonical_settings()], axis=-1)
    return MeasurementSet(fld.grid, counts)


@pytest.fixture(scope="session")
def ref_geometry():
    return default_geometry()


@pytest.fixture(scope="session")
def ref_field(ref_geometry):
    return evaluate_field(*ref_geometry)


@pytest.fixture(scope="session")
def ref_tomography(ref_field):
    """Noiseless reconstruction of the full 140x140 field (compiled when available)."""
    return pixelwise_tomography(noiseless_measurement(ref_field))


@pytest.fixture(scope="session")
def small_field():
    return evaluate_field(*default_geometry(width=24))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

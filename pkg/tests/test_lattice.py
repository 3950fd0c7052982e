import math

import numpy as np
import pytest
from scipy import stats

from lovtomo.lattice import (
    BeamEnvelope,
    CountFrame,
    GridGeometry,
    LatticeParams,
    canonical_settings,
    circular_amplitudes,
    detector_spacing,
    evaluate_field,
    expected_counts,
    gradient_unitary_x,
    gradient_unitary_y,
    lattice_spacing,
    lov_operator,
    lov_state,
    projection_probability,
    simulate_frame,
    simulate_measurement_frames,
    theoretical_intensity,
)
from lovtomo.qstate import SIGMA_X, SIGMA_Z, bell_state, partial_trace, polarization_ket


@pytest.fixture
def params():
    return LatticeParams(808e-9, 1e-2, math.pi / 4, origin_x0=1e-4, origin_y0=-3e-5)


def test_spacing_examples():
    assert lattice_spacing(LatticeParams(808e-9, 1e-2, math.pi / 4)) == pytest.approx(8.08e-5)
    assert lattice_spacing(LatticeParams(808e-9, 2e-2, math.pi / 4)) == pytest.approx(4.04e-5)


@pytest.mark.parametrize("dn, theta", [(0.0, 0.3), (1e-2, 0.0), (-1e-2, 0.3)])
def test_infinite_spacing_rejected(dn, theta):
    with pytest.raises(ValueError):
        LatticeParams(808e-9, dn, theta)


def test_ref_geometry_spacing(ref_geometry):
    params, grid, _ = ref_geometry
    assert detector_spacing(params, grid) == pytest.approx(0.519e-3, rel=1e-12)
    assert grid.shape == (140, 140)


def test_for_spacing_roundtrip():
    p = LatticeParams.for_spacing(2e-3, delta_n=5e-3)
    assert lattice_spacing(p) == pytest.approx(2e-3, rel=1e-14)


def test_gradient_unitary_special_points(params):
    a = lattice_spacing(params)
    x0, y0 = params.origin_x0, params.origin_y0
    assert np.allclose(gradient_unitary_x(x0, params), np.eye(2), atol=1e-15)
    assert np.allclose(gradient_unitary_x(x0 + a / 2, params), 1j * SIGMA_X, atol=1e-12)
    assert np.allclose(gradient_unitary_x(x0 + a, params), -np.eye(2), atol=1e-12)
    assert np.allclose(gradient_unitary_y(y0, params), np.eye(2), atol=1e-15)
    assert np.allclose(gradient_unitary_y(y0 + a / 2, params), 1j * SIGMA_Z, atol=1e-12)


def test_operators_unitary_and_periodic(params, rng):
    a = lattice_spacing(params)
    x = rng.uniform(-5 * a, 5 * a, 1000)
    y = rng.uniform(-5 * a, 5 * a, 1000)
    eye = np.eye(2)
    for u in (gradient_unitary_x(x, params), gradient_unitary_y(y, params), lov_operator(x, y, params)):
        assert np.max(np.abs(np.conj(np.swapaxes(u, -1, -2)) @ u - eye)) <= 1e-12
    u = lov_operator(x, y, params)
    assert np.max(np.abs(lov_operator(x + a, y, params) - u)) <= 1e-12
    assert np.max(np.abs(lov_operator(x, y + a, params) - u)) <= 1e-12
    assert np.max(np.abs(gradient_unitary_x(x + a, params) + gradient_unitary_x(x, params))) <= 1e-12


def test_odd_pass_count_has_doubled_period(rng):
    p = LatticeParams(808e-9, 1e-2, math.pi / 4, n_passes=1)
    a = lattice_spacing(p)
    x = rng.uniform(0, a, 50)
    y = rng.uniform(0, a, 50)
    assert np.allclose(lov_operator(x + a, y, p), -lov_operator(x, y, p), atol=1e-12)
    assert np.allclose(lov_operator(x + 2 * a, y, p), lov_operator(x, y, p), atol=1e-12)


def test_circular_amplitudes(params, rng):
    A, B = circular_amplitudes(params.origin_x0, params.origin_y0, params)
    assert A == pytest.approx(1) and abs(B) < 1e-15
    a = lattice_spacing(params)
    x = rng.uniform(-a, a, 1000)
    y = rng.uniform(-a, a, 1000)
    A, B = circular_amplitudes(x, y, params)
    assert np.max(np.abs(np.abs(A) ** 2 + np.abs(B) ** 2 - 1)) <= 1e-12
    # U is in SU(2): <R|U|R> = conj(A), <L|U|R> = -conj(B)
    u = lov_operator(x, y, params)
    r, l = polarization_ket("R"), polarization_ket("L")
    assert np.max(np.abs((u @ r) @ r.conj() - np.conj(A))) <= 1e-12
    assert np.max(np.abs((u @ r) @ l.conj() + np.conj(B))) <= 1e-12
    # the sigma_y part makes the diagonal circular elements differ away from the axes
    assert np.max(np.abs((u @ r) @ r.conj() - A)) > 0.1


def test_lov_state_origin_and_marginals(params, rng):
    assert np.allclose(lov_state(params.origin_x0, params.origin_y0, params), bell_state("phi+"))
    a = lattice_spacing(params)
    shifted = lov_state(params.origin_x0 + a, params.origin_y0, params)
    assert abs(np.vdot(bell_state("phi+"), shifted)) ** 2 == pytest.approx(1, abs=1e-12)
    for x, y in rng.uniform(-a, a, (200, 2)):
        psi = lov_state(x, y, params)
        rho = np.outer(psi, psi.conj())
        assert np.allclose(partial_trace(rho, "signal"), np.eye(2) / 2, atol=1e-12)


def test_projection_probability_examples():
    phi = bell_state("phi+")
    assert projection_probability(phi, "H", "H") == pytest.approx(0.5)
    assert projection_probability(phi, "H", "V") == pytest.approx(0, abs=1e-30)
    assert projection_probability(phi, "R", "R") == pytest.approx(0, abs=1e-30)
    assert projection_probability(phi, "R", "L") == pytest.approx(0.5)


def test_single_pixel_field():
    grid = GridGeometry(1, 1, 1e-5)
    cx, cy = grid.center()
    p = LatticeParams(808e-9, 1e-2, math.pi / 4, origin_x0=cx, origin_y0=cy)
    fld = evaluate_field(p, grid, BeamEnvelope(1e-4, cx, cy))
    assert np.allclose(fld.kets[0, 0], bell_state("phi+"))
    assert fld.weights[0, 0] == 1.0


def test_field_invariants(ref_field, ref_geometry):
    norms = np.linalg.norm(ref_field.kets, axis=-1)
    assert np.max(np.abs(norms - 1)) <= 1e-12
    assert ref_field.weights.min() >= 0
    assert ref_field.weights.sum() == pytest.approx(1, abs=1e-9)
    params, grid, env = ref_geometry
    a = lattice_spacing(params)
    moved = LatticeParams(params.wavelength, params.delta_n, params.incline_theta,
                          params.origin_x0 + a, params.origin_y0 + a)
    assert np.max(np.abs(evaluate_field(moved, grid, env).kets - ref_field.kets)) <= 1e-12


def test_complete_projector_sets(ref_field):
    for pair in (("H", "V"), ("D", "A"), ("R", "L")):
        total = sum(theoretical_intensity(ref_field, s, i) for s in pair for i in pair)
        assert np.max(np.abs(total - ref_field.weights)) <= 1e-9


def test_rl_map_at_origin():
    # odd grid so the centre pixel sits exactly on the origin
    grid = GridGeometry(3, 3, 1e-5)
    cx, cy = grid.center()
    p = LatticeParams(808e-9, 1e-2, math.pi / 4, origin_x0=cx, origin_y0=cy)
    fld = evaluate_field(p, grid, BeamEnvelope(1e-4, cx, cy))
    rl = theoretical_intensity(fld, "R", "L")
    assert rl[1, 1] == pytest.approx(0.5 * fld.weights[1, 1], rel=1e-12)


def test_zero_flux_frame(small_field):
    fr = simulate_frame(small_field, "H", "D", 0.0, 0.0, seed=5)
    assert not fr.counts.any()


def test_frames_deterministic_and_setting_keyed(small_field):
    a = simulate_frame(small_field, "D", "R", 1e5, 2.0, seed=9)
    b = simulate_frame(small_field, "D", "R", 1e5, 2.0, seed=9)
    c = simulate_frame(small_field, "R", "D", 1e5, 2.0, seed=9)
    d = simulate_frame(small_field, "D", "R", 1e5, 2.0, seed=10)
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)
    assert not np.array_equal(a.counts, d.counts)
    assert a.counts.dtype == np.int64 and a.counts.min() >= 0


def test_frame_total_within_poisson_band(ref_field):
    total, bg = 5e5, 3.0
    for s, i in [("H", "H"), ("D", "R"), ("V", "D")]:
        lam = expected_counts(ref_field, s, i, total, bg)
        fr = simulate_frame(ref_field, s, i, total, bg, seed=2)
        mean = total * theoretical_intensity(ref_field, s, i).sum() + bg * ref_field.grid.n_pixels
        assert lam.sum() == pytest.approx(mean)
        assert abs(fr.counts.sum() - mean) <= 5 * math.sqrt(mean)


def test_frame_counts_follow_poisson(small_field):
    # every pixel shares the same mean when only background is present
    fr = simulate_frame(small_field, "H", "H", 0.0, 7.0, seed=4)
    counts = fr.counts.ravel()
    observed = np.bincount(counts, minlength=30)[:30]
    expected = stats.poisson.pmf(np.arange(30), 7.0) * counts.size
    keep = expected > 5
    chi2 = np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-3


def test_measurement_frames_in_canonical_order(small_field):
    frames = simulate_measurement_frames(small_field, 1e4, 0.0, seed=1)
    assert [f.setting for f in frames] == [s + i for s, i in canonical_settings()]


def test_count_frame_validation():
    g = GridGeometry(2, 2, 1e-5)
    with pytest.raises(ValueError, match="shape"):
        CountFrame("H", "H", g, np.zeros((3, 2), dtype=np.int64))
    with pytest.raises(ValueError, match="nonnegative"):
        CountFrame("H", "H", g, -np.ones((2, 2), dtype=np.int64))


def test_negative_rates_rejected(small_field):
    with pytest.raises(ValueError):
        simulate_frame(small_field, "H", "H", -1.0, 0.0, seed=0)
    with pytest.raises(ValueError):
        simulate_frame(small_field, "H", "H", 1.0, 0.0, seed=-1)

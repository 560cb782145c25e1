import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftfsim.circuit import (DEVICE_COUPLER, DEVICE_F1, DEVICE_F2, ConvergenceError, CouplingParams,
                            FluxoniumParams, LabelingError, TransmonParams, TruncationSpec, _assign_labels,
                            build_composite, diagonalize_fluxonium, diagonalize_transmon)
from oracles import fluxonium_grid_f01, rayleigh_schroedinger

ZERO = CouplingParams(0.0, 0.0, 0.0)


def test_f2_f01_matches_finite_difference_grid():
    e, _, _ = diagonalize_fluxonium(DEVICE_F2)
    ref = fluxonium_grid_f01(DEVICE_F2.e_c, DEVICE_F2.e_l, DEVICE_F2.e_j, DEVICE_F2.phi_ext)
    assert abs(e[1] - ref) * 1e6 < 10.0  # kHz


def test_harmonic_limit_equal_spacing():
    p = FluxoniumParams(e_c=0.9, e_l=0.5, e_j=0.0)
    e, _, _ = diagonalize_fluxonium(p, 100, 6)
    omega = np.sqrt(8 * p.e_c * p.e_l)
    np.testing.assert_allclose(np.diff(e), omega, rtol=1e-9)


def test_fluxonium_matrices_hermitian_and_converged():
    e, n, phi = diagonalize_fluxonium(DEVICE_F1, 100, 4)
    e2, _, _ = diagonalize_fluxonium(DEVICE_F1, 200, 4)
    assert np.allclose(n, n.conj().T) and np.allclose(phi, phi.conj().T)
    assert np.max(np.abs(e - e2)) * 1e6 < 1.0


def test_fluxonium_too_small_basis_names_level():
    with pytest.raises(ConvergenceError, match="level"):
        diagonalize_fluxonium(FluxoniumParams(0.88, 0.05, 4.9), 16, 4)


def test_basis_size_precondition():
    with pytest.raises(ValueError):
        diagonalize_fluxonium(DEVICE_F1, 12, 4)


def test_transmon_device_frequencies():
    e, _ = diagonalize_transmon(DEVICE_COUPLER)
    assert abs(e[1] - 4.58) < 0.05
    e0, _ = diagonalize_transmon(TransmonParams(0.1861, 16.87, 0.0))
    assert 4.7 - 0.15 <= e0[1] <= 4.83 + 0.15


def test_transmon_anharmonicity_and_perturbative_f01():
    p = TransmonParams(e_c=0.2, e_j_total=18.0)  # E_J/E_C = 90
    e, _ = diagonalize_transmon(p, 30, 3)
    alpha = (e[2] - e[1]) - e[1]
    assert abs(alpha + p.e_c) / p.e_c < 0.15
    approx = np.sqrt(8 * p.e_j_total * p.e_c) - p.e_c
    assert abs(e[1] - approx) / e[1] < 0.01


def test_transmon_cutoff_precondition():
    with pytest.raises(ValueError):
        diagonalize_transmon(DEVICE_COUPLER, 5, 3)


@pytest.mark.parametrize("flux", [0.13, 0.0, 0.31])
def test_josephson_sign_gauge_leaves_spectrum(flux):
    p = TransmonParams(0.1861, 16.87, flux)
    a, _ = diagonalize_transmon(p, 30, 3, josephson_sign=1)
    b, _ = diagonalize_transmon(p, 30, 3, josephson_sign=-1)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_flux_periodicity():
    e_a, _, _ = diagonalize_fluxonium(DEVICE_F1)
    shifted = FluxoniumParams(DEVICE_F1.e_c, DEVICE_F1.e_l, DEVICE_F1.e_j, DEVICE_F1.phi_ext + 2 * np.pi)
    e_b, _, _ = diagonalize_fluxonium(shifted)
    np.testing.assert_allclose(e_a, e_b, atol=1e-9)
    t_a, _ = diagonalize_transmon(TransmonParams(0.1861, 16.87, 0.13))
    t_b, _ = diagonalize_transmon(TransmonParams(0.1861, 16.87, 1.13))
    np.testing.assert_allclose(t_a, t_b, atol=1e-9)


def test_decoupled_composite_is_additive():
    sys = build_composite(g=ZERO)
    bare = dict(zip(sys.bare_labels, sys.bare_energies))
    for k, lab in enumerate(sys.labels):
        assert abs(sys.eigenvalues[k] - bare[lab]) < 1e-9
    assert sorted(sys.labels) == sorted(sys.bare_labels)


def test_decoupled_labeling_is_identity_map():
    sys = build_composite(g=ZERO)
    order = np.argsort(sys.bare_energies, kind="stable")
    assert [sys.labels[k] for k in range(sys.dim)] == [sys.bare_labels[i] for i in order]


def test_device_composite_invariants(device):
    v = device.eigenvectors
    assert np.max(np.abs(v.conj().T @ v - np.eye(device.dim))) < 1e-10
    assert np.all(np.diff(device.eigenvalues) >= 0)
    assert len(set(device.labels)) == device.dim == 48
    for op in device.charge_operators:
        assert np.allclose(op, op.conj().T, atol=1e-12)


def test_device_transitions_in_window(device):
    for i in (0, 1):
        for j in (0, 1):
            f = device.energy((i, 1, j)) - device.energy((i, 0, j))
            assert 4.5 <= f <= 4.9


def test_device_convergence_under_truncation_doubling(device):
    big = build_composite(trunc=TruncationSpec(4, 3, 200, 60))
    for lab in [(i, c, j) for i in (0, 1) for c in (0, 1) for j in (0, 1)]:
        assert abs(device.energy(lab) - big.energy(lab)) * 1e6 < 1.0


def test_second_order_perturbation_two_level_truncation():
    trunc = TruncationSpec(2, 2, 100, 30)
    g = CouplingParams(1.0, 8.0, 8.0)
    sys = build_composite(g=g, trunc=trunc)
    e1, n1, _ = diagonalize_fluxonium(DEVICE_F1, 100, 2)
    e2, n2, _ = diagonalize_fluxonium(DEVICE_F2, 100, 2)
    ec, nc = diagonalize_transmon(DEVICE_COUPLER, 30, 2)
    i2 = np.eye(2)
    k = lambda a, b, c: np.kron(np.kron(a, b), c)
    v = 1e-3 * (g.g_12 * k(n1, i2, i2) @ k(i2, i2, n2) + g.g_1c * k(n1, i2, i2) @ k(i2, nc, i2)
                + g.g_2c * k(i2, nc, i2) @ k(i2, i2, n2))
    e0 = sys.bare_energies
    for idx, lab in enumerate(sys.bare_labels):
        shift_pt = rayleigh_schroedinger(e0, v, idx, 2).sum()
        shift = sys.energy(lab) - e0[idx]
        assert abs(shift - shift_pt) <= 0.01 * abs(shift_pt) + 1e-12


def test_missing_label_error_names_state(device):
    with pytest.raises(KeyError, match=r"\|392>"):
        device.index((3, 9, 2))


def test_labeling_tie_and_ambiguity():
    bare = np.array([0.0, 1.0])
    labels = ((0, 0, 0), (0, 1, 0))
    mixed = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    with pytest.raises(LabelingError) as err, pytest.warns(UserWarning, match="tie"):
        _assign_labels(mixed, bare, bare, labels, {labels[0]})
    assert set(err.value.contested) == {0, 1}
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        out = _assign_labels(mixed, bare, bare, labels, set())
    assert out == labels  # energy order breaks the tie
    assert any("tie" in str(w.message) for w in rec)


def test_parameter_invariants():
    with pytest.raises(ValueError):
        FluxoniumParams(-1.0, 0.5, 4.0)
    with pytest.raises(ValueError):
        TransmonParams(0.2, 16.0, 0.5)
    with pytest.raises(ValueError):
        CouplingParams(np.nan, 0.0, 0.0)
    with pytest.raises(ValueError):
        TruncationSpec(1, 3)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 2 * np.pi), st.floats(0.3, 1.0), st.floats(3.0, 6.0))
def test_fluxonium_hamiltonian_properties(phi_ext, e_l, e_j):
    p = FluxoniumParams(0.88, e_l, e_j, phi_ext)
    e, n, phi = diagonalize_fluxonium(p, 100, 4)
    assert np.all(np.isreal(e)) and np.all(np.diff(e) >= 0)
    assert np.allclose(n, n.conj().T, atol=1e-12)
    mirrored = FluxoniumParams(0.88, e_l, e_j, 2 * np.pi - phi_ext)
    np.testing.assert_allclose(e, diagonalize_fluxonium(mirrored, 100, 4)[0], atol=1e-8)

import math

import numpy as np
import pytest

from isotorus import IsotorusNumericalError, IsotorusValidationError
from isotorus.harmonic import (
    HarmonicSpectrum,
    build_lattice,
    default_lags,
    default_window,
    dolph_window,
    extract_spectrum,
    lag_extrapolate,
    principal_amplitudes,
    psi_samples,
    real_tolerance,
    synthesize,
    windowed_dft,
    write_spectrum_csv,
)
from isotorus.utils import read_csv_table

THREE_FUNDAMENTALS = [0.1234, 0.2718, 0.3691]


def single_line(n: int) -> np.ndarray:
    j = np.arange(n)
    return 0.3 + 0.1 * np.cos(2.0 * np.pi * 0.31 * j + 0.7)


def test_lattice_size():
    lattice = build_lattice([0.2, 0.37, 0.61], 8)
    assert lattice.ball_size == 833
    assert len(lattice) == 417
    assert np.all(np.diff(lattice.omega) >= 0)
    assert np.all((lattice.omega >= 0) & (lattice.omega <= np.pi))


def test_rational_fundamental_aliases():
    lattice = build_lattice([0.5], 2)
    np.testing.assert_allclose(lattice.omega, [0.0, 0.0, np.pi])
    assert lattice.k[:, 0].tolist() == [0, 2, 1]
    assert lattice.collisions == ((0, 1),)
    assert lattice.real_mask().all()


def test_lattice_lookup():
    lattice = build_lattice([0.31], 3)
    assert lattice.index_of([-1]) == lattice.index_of([1])
    # 0.62 and 0.93 fold back below one half
    assert lattice.conjugate[lattice.index_of([2])]
    assert lattice.omega[lattice.index_of([3])] == pytest.approx(2.0 * np.pi * 0.07)
    np.testing.assert_array_equal(lattice.k[lattice.axis_entries(0)][:, 0], [1, 2, 3])
    with pytest.raises(IsotorusValidationError, match="not in the lattice"):
        lattice.index_of([4])


def test_lattice_validation():
    with pytest.raises(IsotorusValidationError, match="\\(0, 1\\)"):
        build_lattice([1.2], 2)
    with pytest.raises(IsotorusValidationError, match="at least 1"):
        build_lattice([0.3], 0)


def test_window_transform():
    window = dolph_window(101, 120.0)
    assert window.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert float(window.transform(0.0)) == pytest.approx(1.0, abs=1e-12)
    m = np.arange(window.length) - window.half
    for x in (0.01, 0.05, 0.4, 2.0):
        dtft = float(np.dot(window.weights, np.cos(x * m)))
        assert dtft == pytest.approx(float(window.transform(x)), abs=1e-12)
    far = np.linspace(window.main_lobe, np.pi, 500)
    assert np.max(np.abs(window.transform(far))) <= window.sidelobe_level * (1.0 + 1e-9)
    np.testing.assert_allclose(window.transform(-far), window.transform(far))


def test_window_length_rules():
    with pytest.raises(IsotorusValidationError, match="odd"):
        dolph_window(100)
    lattice = build_lattice([0.31], 3)
    assert default_window(4000, lattice).length == 3999
    assert default_window(10**6, lattice).length == 4001


def test_windowed_dft_of_constant():
    window = dolph_window(101)
    b = np.full(200, 0.7)
    assert abs(windowed_dft(b, window, 0, 0.0) - 0.7) < 1e-14
    with pytest.raises(IsotorusValidationError, match="runs past"):
        windowed_dft(b[:50], window, 0, 0.0)


def test_windowed_dft_of_cosine():
    omega0 = 2.0 * np.pi * 0.1234
    b = np.cos(omega0 * np.arange(2000))
    window = dolph_window(1001)
    assert abs(windowed_dft(b, window, 100, omega0)) == pytest.approx(0.5, abs=1e-5)


def test_single_line_recovery():
    lattice = build_lattice([0.31], 3)
    spectrum = extract_spectrum(single_line(4000), lattice)
    assert spectrum.window_length == 3999
    dc_amp, dc_phase = spectrum.entry([0])
    assert dc_amp == pytest.approx(0.3, abs=1e-8)
    assert dc_phase == pytest.approx(0.0, abs=1e-8)
    amp, phase = spectrum.entry([1])
    assert amp == pytest.approx(0.05, abs=1e-8)
    assert phase == pytest.approx(0.7, abs=1e-8)
    assert spectrum.cosine_amplitudes[lattice.index_of([1])] == pytest.approx(0.1, abs=1e-8)
    for k in ([2], [3]):
        assert spectrum.entry(k)[0] < 1e-8


def test_two_lines_inside_one_main_lobe():
    spacing = 0.005
    fundamentals = [0.2, 0.2 + spacing / (2.0 * np.pi)]
    lattice = build_lattice(fundamentals, 1)
    window = dolph_window(2001)
    assert spacing < window.main_lobe
    j = np.arange(2001)
    theta = 2.0 * np.pi * np.asarray(fundamentals)
    b = 0.4 * np.cos(theta[0] * j + 0.2) + 0.25 * np.cos(theta[1] * j - 1.0)
    spectrum = extract_spectrum(b, lattice, window=window)
    assert spectrum.entry([1, 0]) == pytest.approx((0.2, 0.2), abs=1e-8)
    assert spectrum.entry([0, 1]) == pytest.approx((0.125, -1.0), abs=1e-8)
    np.testing.assert_allclose(principal_amplitudes(spectrum), [0.2, 0.125], atol=1e-8)


def test_round_trip():
    lattice = build_lattice(THREE_FUNDAMENTALS, 3)
    assert len(lattice) == 32
    rng = np.random.default_rng(11)
    active = np.sort(rng.choice(len(lattice), 25, replace=False))
    amplitudes = np.zeros(len(lattice))
    amplitudes[active] = 10.0 ** rng.uniform(-4.0, 0.0, active.size)
    phases = rng.uniform(-np.pi, np.pi, len(lattice))
    real = lattice.real_mask()
    phases[real] = 0.0
    coefficients = amplitudes * np.exp(1j * phases)
    truth = HarmonicSpectrum(lattice=lattice, coefficients=coefficients, multiplicity=np.ones(len(lattice), dtype=int))

    b = synthesize(truth, (0, 6000))
    spectrum = extract_spectrum(b, lattice)
    assert spectrum.window_length == 4001
    np.testing.assert_array_equal(spectrum.real_type, real)
    np.testing.assert_allclose(spectrum.coefficients, coefficients, atol=1e-8)
    np.testing.assert_allclose(spectrum.amplitudes[active], amplitudes[active], atol=1e-8)
    phase_error = np.angle(np.exp(1j * (spectrum.phases[active] - phases[active])))
    assert np.max(np.abs(phase_error)) < 1e-8
    assert np.max(np.abs(synthesize(spectrum, (0, 6000)) - b)) < 1e-8


def test_entry_near_pi_is_counted_once():
    # 2 pi 1e-9 below pi: not exactly real, but far inside the merge tolerance
    lattice = build_lattice([0.5 - 1e-9], 1)
    near_pi = lattice.index_of([1])
    assert not lattice.real_mask()[near_pi]
    j = np.arange(6000)
    b = 0.3 + 0.1 * np.cos(lattice.omega[near_pi] * j)
    spectrum = extract_spectrum(b, lattice)
    assert spectrum.real_type[near_pi]
    assert spectrum.cosine_amplitudes[near_pi] == pytest.approx(0.1, abs=1e-9)
    assert np.max(np.abs(synthesize(spectrum, (0, 6000)) - b)) < 1e-9
    lagged = lag_extrapolate(b, lattice, lags=[500, 1000, 1500])
    assert lagged.real_type[near_pi]
    assert lagged.cosine_amplitudes[near_pi] == pytest.approx(0.1, abs=1e-8)


def test_round_trip_near_pi():
    lattice = build_lattice([0.5 - 1e-6], 1)
    window = default_window(6000, lattice)
    real = lattice.real_mask(real_tolerance(window.length))
    assert real.all() and not lattice.real_mask().all()
    truth = HarmonicSpectrum(
        lattice=lattice, coefficients=np.array([0.3, -0.05]), multiplicity=np.ones(2, dtype=int), real_type=real
    )
    b = synthesize(truth, (0, 6000))
    np.testing.assert_allclose(b[:4], [0.25, 0.35, 0.25, 0.35], atol=1e-15)
    spectrum = extract_spectrum(b, lattice, window=window)
    np.testing.assert_array_equal(spectrum.real_type, real)
    np.testing.assert_allclose(spectrum.coefficients, truth.coefficients, atol=1e-12)
    np.testing.assert_allclose(synthesize(spectrum, (0, 6000)), b, atol=1e-12)


def test_merged_entries_share_one_unknown():
    lattice = build_lattice([0.5], 2)
    j = np.arange(501)
    b = 0.2 + 0.1 * (-1.0) ** j
    spectrum = extract_spectrum(b, lattice)
    assert spectrum.multiplicity.tolist() == [2, 0, 1]
    assert spectrum.entry([0]) == pytest.approx((0.2, 0.0), abs=1e-12)
    assert spectrum.entry([1]) == pytest.approx((0.1, 0.0), abs=1e-12)
    np.testing.assert_allclose(synthesize(spectrum, (0, 501)), b, atol=1e-12)


def test_condition_cap():
    lattice = build_lattice([0.31], 3)
    with pytest.raises(IsotorusNumericalError, match="longer window or a smaller L"):
        extract_spectrum(single_line(4000), lattice, condition_cap=0.5)


def test_lag_extrapolation_of_stationary_input():
    lattice = build_lattice([0.31], 3)
    b = single_line(8000)
    single = extract_spectrum(b, lattice, window=dolph_window(3999), lag=500)
    spectrum = lag_extrapolate(b, lattice)
    assert spectrum.window_length == 3999
    assert len(spectrum.lags) >= 3
    for k in ([0], [1]):
        e = lattice.index_of(k)
        assert not spectrum.unreliable[e]
        assert spectrum.coefficients[e] == pytest.approx(single.coefficients[e], abs=1e-9)


def test_lag_extrapolation_removes_slow_decay():
    lattice = build_lattice([0.31], 1)
    j = np.arange(8000)
    b = np.cos(2.0 * np.pi * 0.31 * j) + 1.0 / (j + 1.0)
    spectrum = lag_extrapolate(b, lattice)
    assert spectrum.cosine_amplitudes[lattice.index_of([1])] == pytest.approx(1.0, abs=1e-4)


def test_lag_validation():
    lattice = build_lattice([0.31], 1)
    with pytest.raises(IsotorusValidationError, match="3 distinct positive lags"):
        lag_extrapolate(single_line(8000), lattice, lags=[10, 20])
    with pytest.raises(IsotorusValidationError, match="no lag range"):
        default_lags(1000, dolph_window(999))


def test_synthesize_constant():
    lattice = build_lattice([0.31], 1)
    spectrum = HarmonicSpectrum(lattice=lattice, coefficients=np.array([0.7, 0.0]), multiplicity=np.array([1, 1]))
    np.testing.assert_allclose(synthesize(spectrum, (0, 10)), 0.7)
    np.testing.assert_allclose(synthesize(spectrum, np.array([3, 100])), 0.7)


def test_psi_samples():
    lattice = build_lattice([0.2, 0.37], 1)
    coefficients = np.array([0.0, 0.5j, 0.25])
    spectrum = HarmonicSpectrum(lattice=lattice, coefficients=coefficients, multiplicity=np.ones(3, dtype=int))
    a1, a2, values = psi_samples(spectrum, grid=8)
    assert values.shape == (8, 8)
    k = lattice.k
    expected = sum(
        2.0 * abs(c) * np.cos(2.0 * np.pi * (a1 * kk[0] + a2 * kk[1]) + np.angle(c))
        for c, kk in zip(coefficients, k)
        if abs(c) > 0
    )
    np.testing.assert_allclose(values, expected, atol=1e-14)
    with pytest.raises(IsotorusValidationError, match="two fundamentals"):
        psi_samples(extract_spectrum(single_line(4000), build_lattice([0.31], 1)))


def test_spectrum_csv(tmp_path):
    lattice = build_lattice([0.31], 3)
    spectrum = extract_spectrum(single_line(4000), lattice)
    table = read_csv_table(write_spectrum_csv(spectrum, str(tmp_path / "spectrum.csv")))
    assert [c["name"] for c in table["columns"]] == ["k_1", "omega_k", "amplitude", "phase"]
    assert len(table["dataset"]) == 4
    assert math.isclose(table["dataset"][1][2], spectrum.amplitudes[1], rel_tol=0, abs_tol=0)

import math

import numpy as np
import pytest

from isotorus import IsotorusNumericalError, IsotorusValidationError
from isotorus.config import Settings
from isotorus.equilibrium import angular_frequencies
from isotorus.experiments import (
    converge_to_balanced,
    converge_to_torus,
    discretize_kwargs,
    fit_delta,
    fit_exponential_decay,
    fit_power_bound,
    gap_amplitude_pairs,
    proportionality_fit,
    stabilization_index,
    torus_error_profile,
    torus_reference,
)
from isotorus.harmonic import principal_amplitudes
from isotorus.ifs import ordered_gaps
from isotorus.jacobi import loglog_slope
from isotorus.torus import torus_limit_sequence, torus_point_for_level


def test_exponential_decay_fit():
    j = np.arange(1, 201, dtype=float)
    diff = np.maximum(2.0 * np.exp(-0.3 * j), 1e-14)
    fit = fit_exponential_decay(j, diff)
    assert fit.d == pytest.approx(0.3, rel=1e-8)
    assert fit.c == pytest.approx(2.0, rel=1e-6)
    assert fit.plateau == 1e-14
    assert fit.start == 5 and fit.end == 103


def test_exponential_decay_at_floor():
    j = np.arange(1, 50, dtype=float)
    with pytest.raises(IsotorusValidationError, match="fewer than two points"):
        fit_exponential_decay(j, np.full(j.size, 1e-14))


def test_power_bound():
    j = np.arange(1, 2001, dtype=float)
    bound = fit_power_bound(j, 3.0 / j)
    assert bound.A == pytest.approx(3.0)
    assert bound.exceed_fraction <= 0.05
    assert bound.j_range == (10.0, 1000.0)
    with pytest.raises(IsotorusValidationError, match="No points"):
        fit_power_bound(j, 3.0 / j, (5000, 6000))


def test_fit_delta():
    n = [1, 2, 3, 4]
    delta, c = fit_delta(n, [5.0 * math.exp(-0.7 * k) for k in n])
    assert delta == pytest.approx(0.7)
    assert c == pytest.approx(math.log(5.0))
    with pytest.raises(IsotorusValidationError, match="positive decay rates"):
        fit_delta([1, 2], [0.1, -0.1])


def test_stabilization_index():
    x = np.zeros(4)
    assert stabilization_index(x, [0.0, 1e-3, 0.0, 0.0], 1e-4) == 1
    assert stabilization_index(x, x, 1e-4) == 4
    with pytest.raises(IsotorusValidationError, match="positive"):
        stabilization_index(x, x, 0.0)


def test_proportionality_fit():
    x = np.array([0.1, 0.2, 0.4])
    slope, corr = proportionality_fit(x, 2.0 * x)
    assert slope == pytest.approx(2.0)
    assert corr == pytest.approx(1.0)


def test_torus_reference(example1):
    ref = torus_reference(example1, 1, 600, 2)
    assert ref.bands.N == 2
    assert ref.lattice.d == 1 and len(ref.lattice) == 3
    assert ref.spectrum.window_length == 599
    seq = ref.jacobi.b[1:]
    dc, _ = ref.spectrum.entry([0])
    assert dc == pytest.approx(seq.mean(), abs=1e-3)
    assert ref.spectrum.entry([1])[0] > 1e-4
    with pytest.raises(IsotorusValidationError, match="n >= 1"):
        torus_reference(example1, 0, 600, 2)


def test_gap_amplitude_pairs(example1):
    rows = gap_amplitude_pairs(example1, [1], 600, 2)
    assert len(rows) == 1
    n, i, width, amp = rows[0]
    assert (n, i) == (1, 1)
    assert width == pytest.approx(0.28)
    assert amp == pytest.approx(torus_reference(example1, 1, 600, 2).spectrum.entry([1])[0])


def test_torus_error_profile(example1):
    bands, point = torus_point_for_level(example1, 1)
    jacobi, profile, nodes = torus_error_profile(bands, point, 64)
    assert jacobi.J == 64
    assert nodes >= 64
    assert profile.eps[-1] < 1e-9
    # either the refined run or the doubling itself runs out of atoms
    with pytest.raises((IsotorusValidationError, IsotorusNumericalError), match="smaller J"):
        torus_error_profile(bands, point, 64, Settings(atom_budget=300))


@pytest.mark.slow
def test_converge_to_torus(example1):
    result = converge_to_torus(example1, "b", 1, 2000, 2)
    assert result.b_mu.shape == result.b_theta.shape == (1999,)
    np.testing.assert_allclose(result.diff, np.abs(result.b_mu - result.b_theta))
    assert result.diff[-200:].mean() < result.diff[:50].mean()
    assert result.mu.J == 2000


# desk-scale checks against published values; long sequences need a looser
# stabilization tolerance so that rounding drift does not reach the node cap
DESK = Settings(discretize_tol=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("n, amplitude", [(2, 2.43e-2), (3, 2.44e-2)])
def test_second_gap_harmonic(example1, n, amplitude):
    ref = torus_reference(example1, n, 100001, 6, DESK)
    gap = ordered_gaps(example1, n).order[1]
    assert angular_frequencies(ref.solution)[gap] == pytest.approx(1.5543, abs=2e-3)
    assert principal_amplitudes(ref.spectrum)[gap] == pytest.approx(amplitude, rel=0.05)


@pytest.mark.slow
def test_amplitudes_do_not_depend_on_torus_point(example1):
    mid = torus_reference(example1, 2, 20001, 4, DESK, rule="midpoint-plus")
    third = torus_reference(example1, 2, 20001, 4, DESK, rule="third-mixed")
    np.testing.assert_array_equal(mid.lattice.k, third.lattice.k)
    amps = mid.spectrum.amplitudes
    keep = (mid.lattice.norms <= 4) & (amps > 1e-5) & (mid.spectrum.multiplicity > 0)
    assert keep.sum() > 10
    np.testing.assert_allclose(third.spectrum.amplitudes[keep], amps[keep], rtol=1e-3)


@pytest.mark.slow
def test_principal_amplitudes_follow_gap_widths(example1):
    rows = gap_amplitude_pairs(example1, [2, 3], 20001, 4, DESK)
    widths = np.array([r[2] for r in rows])
    amps = np.array([r[3] for r in rows])
    slope, corr = proportionality_fit(widths, amps)
    assert slope > 0
    assert corr >= 0.99


@pytest.mark.slow
def test_power_law_against_exponential_convergence(example1):
    ref = torus_reference(example1, 2, 4001, 4, DESK)
    case_a = converge_to_torus(example1, "a", 2, 4001, 4, DESK, reference=ref)
    bound = fit_power_bound(case_a.j, case_a.diff, (10, 1000))
    assert bound.exceed_fraction <= 0.05
    slope_a = loglog_slope(case_a.j, case_a.diff, (10, 1000))

    case_b = converge_to_torus(example1, "b", 2, 4001, 4, DESK, reference=ref)
    fit = fit_exponential_decay(case_b.j, case_b.diff)
    slope_b = loglog_slope(case_b.j, case_b.diff, (fit.start, fit.end))
    assert slope_b < 0
    assert abs(slope_b) >= 5.0 * abs(slope_a)


@pytest.mark.slow
def test_decay_rates_and_delta(example1):
    result = converge_to_balanced(example1, "b", 4, 10001, 4, [1e-3], DESK)
    assert result.fits[1].d == pytest.approx(0.300994, rel=0.15)
    assert result.fits[2].d == pytest.approx(0.164903, rel=0.15)
    assert result.delta == pytest.approx(0.644, abs=0.1)


@pytest.mark.slow
def test_torus_stabilization_grows(example1):
    result = torus_limit_sequence(example1, 4, 8192, [1e-3], **discretize_kwargs(DESK))
    N = {n: indices[0] for n, _, indices in result.stabilization()}
    assert N[2] <= N[3] <= N[4]
    assert N[4] >= 2 * N[2]


@pytest.mark.slow
def test_error_profile_grows_sublinearly(example1):
    bands, point = torus_point_for_level(example1, 2)
    _, profile, _ = torus_error_profile(bands, point, 10001, DESK)
    assert loglog_slope(profile.j, profile.eps, (1e2, 1e4)) < 1.0

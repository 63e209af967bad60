import json

import numpy as np
import pytest

from isotorus import IsotorusNumericalError, IsotorusValidationError
from isotorus.ifs import IntervalUnion, gaps_of, ordered_gaps
from isotorus.jacobi import JacobiMatrix, jacobi_from_discrete, jacobi_from_moments
from isotorus.torus import (
    TorusPoint,
    asymptotic_mass,
    branch_sign,
    build_X,
    discretize,
    load_torus_point,
    markov_function,
    power_moments,
    torus_jacobi,
    torus_jacobi_at,
    torus_limit_sequence,
    torus_measure,
    torus_point_for_level,
)


def test_branch_signs():
    two = IntervalUnion.from_bands([(-1.0, -0.5), (0.5, 1.0)])
    three = IntervalUnion.from_bands([(-1.0, -0.6), (-0.2, 0.2), (0.6, 1.0)])
    assert branch_sign(two, 1) == -1
    assert branch_sign(three, 2) == -1
    assert branch_sign(three, 1) == 1
    with pytest.raises(IsotorusValidationError, match="out of range"):
        branch_sign(two, 2)


def test_single_band_is_semicircle():
    bands = IntervalUnion.from_bands([(0.0, 2.0)])
    point = TorusPoint(xi=[], sigma=[])
    measure = torus_measure(bands, point)
    assert measure.atom_positions.size == 0
    assert measure.raw_total_mass == pytest.approx(0.5, rel=1e-14)
    jac, _ = torus_jacobi(bands, point, 32)
    np.testing.assert_allclose(jac.a, 1.0, atol=1e-12)
    np.testing.assert_allclose(jac.b[1:], 0.5, atol=1e-12)


def test_sign_against_branch_makes_one_atom(two_bands):
    with_atom = torus_measure(two_bands, TorusPoint(xi=[0.1], sigma=[1]))
    np.testing.assert_allclose(with_atom.atom_positions, [0.1])
    assert with_atom.atom_weights[0] > 0
    without = torus_measure(two_bands, TorusPoint(xi=[0.1], sigma=[-1]))
    assert without.atom_positions.size == 0


def test_total_mass_is_one(two_bands):
    for sigma in (1, -1):
        measure = torus_measure(two_bands, TorusPoint(xi=[-0.1], sigma=[sigma]))
        assert power_moments(measure, 0)[0] == pytest.approx(1.0, abs=1e-10)
        mu = discretize(measure, 256)
        assert mu.weights.sum() == pytest.approx(1.0, abs=1e-14)


def test_markov_function_matches_quadrature(two_bands):
    measure = torus_measure(two_bands, TorusPoint(xi=[0.12], sigma=[1]))
    mu = discretize(measure, 512)
    for z in (0.5 + 1.0j, 2.0 + 0.5j, -0.1 + 0.3j):
        direct = np.sum(mu.weights / (z - mu.positions))
        assert abs(markov_function(measure, z) - direct) < 1e-10


def test_jacobi_matches_hankel_moments():
    bands = IntervalUnion.from_bands([(-1.0, -0.25), (0.1, 1.0)])
    J = 8
    point = TorusPoint(xi=[-0.05], sigma=[1])
    measure = torus_measure(bands, point)
    jac, _ = torus_jacobi(bands, point, J, measure=measure)
    oracle = jacobi_from_moments(power_moments(measure, 2 * J), J)
    np.testing.assert_allclose(jac.a, oracle.a, atol=1e-7)
    np.testing.assert_allclose(jac.b, oracle.b, atol=1e-7)


def test_power_moments_are_finite(two_bands):
    # the band endpoints are quadrature nodes of the endpoint weight
    measure = torus_measure(two_bands, TorusPoint(xi=[0.1], sigma=[1]))
    moments = power_moments(measure, 6)
    assert np.isfinite(moments).all()
    assert moments[0] == pytest.approx(1.0, abs=1e-10)


def test_atoms_folded_into_band_lanczos(two_bands):
    measure = torus_measure(two_bands, TorusPoint(xi=[0.1], sigma=[1]))
    assert measure.atom_positions.size == 1
    folded = torus_jacobi_at(measure, 128, 40)
    direct = jacobi_from_discrete(discretize(measure, 128), 40)
    np.testing.assert_allclose(folded.a, direct.a, atol=1e-11)
    np.testing.assert_allclose(folded.b, direct.b, atol=1e-11)


def test_streamed_torus_jacobi_matches(two_bands):
    point = TorusPoint(xi=[0.1], sigma=[1])
    stored, _ = torus_jacobi(two_bands, point, 16)
    streamed, _ = torus_jacobi(two_bands, point, 16, reorth_memory_mb=0)
    np.testing.assert_allclose(streamed.b, stored.b, atol=1e-10)
    np.testing.assert_allclose(streamed.a, stored.a, atol=1e-10)


def test_node_cap_is_an_error(two_bands):
    point = TorusPoint(xi=[0.1], sigma=[1])
    with pytest.raises(IsotorusNumericalError, match="Node cap 64") as info:
        torus_jacobi(two_bands, point, 8, start=64, cap=64, tol=0.0)
    assert isinstance(info.value.partial, JacobiMatrix)
    assert info.value.partial.J == 8


def test_mass_mismatch_is_an_error(two_bands, monkeypatch):
    monkeypatch.setattr("isotorus.torus.MASS_CHECK_TOL", -1.0)
    with pytest.raises(IsotorusNumericalError, match="asymptotic value") as info:
        torus_measure(two_bands, TorusPoint(xi=[-0.1], sigma=[1]))
    assert info.value.residual is not None


def test_asymptotic_mass_of_three_bands():
    bands = IntervalUnion.from_bands([(-1.0, -0.6), (-0.2, 0.2), (0.6, 1.0)])
    point = TorusPoint(xi=[-0.5, 0.3], sigma=[1, -1])
    measure = torus_measure(bands, point)
    T = asymptotic_mass(bands, point)
    assert T > 0
    assert power_moments(measure, 0)[0] == pytest.approx(1.0, abs=1e-10)


def test_point_validation(two_bands):
    with pytest.raises(IsotorusValidationError, match="not strictly inside gap 1"):
        torus_measure(two_bands, TorusPoint(xi=[0.3], sigma=[1]))
    with pytest.raises(IsotorusValidationError, match="need 1 torus coordinates"):
        build_X(two_bands, TorusPoint(xi=[0.0, 0.1], sigma=[1, 1]))
    with pytest.raises(IsotorusValidationError, match="\\+1 or -1"):
        TorusPoint(xi=[0.0], sigma=[0])


def test_rules_follow_gap_order(example1):
    gaps = ordered_gaps(example1, 2)
    point = TorusPoint.from_rule(gaps, "third-mixed")
    assert list(point.sigma) == [1, -1, 1]
    xi, sigma = point.ascending()
    np.testing.assert_allclose(xi, gaps.ascending().left + gaps.ascending().widths / 3.0)
    assert list(sigma) == [-1, 1, 1]


def test_random_rule_is_seeded(example1):
    gaps = ordered_gaps(example1, 3)
    first = TorusPoint.from_rule(gaps, "random", seed=7)
    second = TorusPoint.from_rule(gaps, "random", seed=7)
    np.testing.assert_array_equal(first.xi, second.xi)
    assert np.all((gaps.left < first.xi) & (first.xi < gaps.right))
    with pytest.raises(IsotorusValidationError, match="Unknown point rule"):
        TorusPoint.from_rule(gaps, "corner")


def test_load_torus_point(tmp_path, two_bands):
    gaps = gaps_of(two_bands)
    path = tmp_path / "point.json"
    path.write_text(json.dumps({"xi": [0.05], "sigma": [-1]}))
    point = load_torus_point(str(path), gaps)
    assert point.xi[0] == 0.05 and point.sigma[0] == -1
    path.write_text(json.dumps({"rule": "midpoint-plus"}))
    assert load_torus_point(str(path), gaps).xi[0] == pytest.approx(0.0)
    path.write_text(json.dumps({"xi": [0.05]}))
    with pytest.raises(IsotorusValidationError, match="needs 'xi' and 'sigma'"):
        load_torus_point(str(path), gaps)


def test_level_zero_point(example1):
    bands, point = torus_point_for_level(example1, 0)
    assert bands.N == 1 and point.xi.size == 0


def test_limit_sequence_first_row(example1):
    result = torus_limit_sequence(example1, 2, 16, eps=[1e-2, 1e-6])
    rows = result.stabilization()
    assert [r[0] for r in rows] == [2]
    n, max_diff, counts = rows[0]
    assert np.isfinite(max_diff) and max_diff > 0
    assert counts[0] >= counts[1]
    with pytest.raises(IsotorusValidationError, match="positive"):
        torus_limit_sequence(example1, 2, 16, eps=[0.0])

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import quad_integral

from plmsel import (
    PenaltyKind,
    PenaltySpec,
    hard_derivative,
    hard_penalty,
    lqa_matrix,
    lqa_weights,
    scad_derivative,
    scad_penalty,
)
from plmsel.exceptions import ParameterError

A = 3.7


def literal_scad_derivative(b: float, lam: float, a: float = A) -> float:
    """The SCAD derivative typed in directly from its definition."""
    ind_low = 1.0 if b <= lam else 0.0
    ind_high = 1.0 if b > lam else 0.0
    return lam * (ind_low + max(a * lam - b, 0.0) / ((a - 1.0) * lam) * ind_high)


def finite_difference(f, b, h=1e-6):
    return (f(b + h) - f(b - h)) / (2 * h)


lams = st.floats(0.01, 10.0)


class TestScad:
    def test_formula_exact_on_grid(self):
        for lam in (0.3, 1.0, 2.5):
            grid = np.linspace(0.0, 5 * A * lam, 1000)
            got = scad_derivative(grid, lam)
            want = np.array([literal_scad_derivative(float(b), lam) for b in grid])
            np.testing.assert_array_equal(got, want)

    def test_examples(self):
        assert scad_derivative(0.5, 1.0) == 1.0
        assert scad_derivative(A * 2.0, 2.0) == 0.0
        np.testing.assert_allclose(scad_derivative(2.0, 1.0), 1.7 / 2.7, rtol=1e-15)
        assert scad_penalty(0.0, 1.0) == 0.0
        assert scad_penalty(1e6, 1.5) == (A + 1) * 1.5**2 / 2

    def test_penalty_matches_quadrature(self):
        want = quad_integral(lambda t: float(scad_derivative(t, 1.0)), 0.0, 2.0, breaks=(1.0, A))
        assert abs(scad_penalty(2.0, 1.0) - want) < 1e-9

    @given(st.floats(0.0, 50.0), lams)
    def test_penalty_is_integral_of_derivative(self, b, lam):
        want = quad_integral(lambda t: float(scad_derivative(t, lam)), 0.0, b, breaks=(lam, A * lam))
        assert abs(float(scad_penalty(b, lam)) - want) < 1e-9 * max(1.0, lam * lam)

    @given(lams)
    def test_continuity_at_kinks(self, lam):
        for knot in (lam, A * lam):
            left = scad_derivative(np.nextafter(knot, 0.0), lam)
            right = scad_derivative(np.nextafter(knot, np.inf), lam)
            assert abs(left - right) <= 1e-12 * lam
            lv, rv = scad_penalty(np.nextafter(knot, 0.0), lam), scad_penalty(np.nextafter(knot, np.inf), lam)
            assert abs(lv - rv) <= 1e-12 * lam * lam

    @given(lams)
    def test_flat_tail(self, lam):
        grid = np.linspace(A * lam, 100 * A * lam, 200)
        assert np.all(scad_derivative(grid, lam) == 0.0)

    @given(lams)
    def test_derivative_nonincreasing(self, lam):
        grid = np.linspace(0.0, 5 * A * lam, 2000)
        assert np.all(np.diff(scad_derivative(grid, lam)) <= 1e-15 * lam)

    @given(lams, st.floats(0.01, 0.99))
    def test_finite_differences(self, lam, frac):
        b = frac * 5 * A * lam
        if min(abs(b - lam), abs(b - A * lam)) < 1e-3 * lam:
            return
        fd = finite_difference(lambda t: float(scad_penalty(t, lam)), b, h=1e-6 * lam)
        assert abs(fd - float(scad_derivative(b, lam))) < 1e-6 * max(1.0, lam)

    def test_zero_lambda(self):
        assert scad_derivative(0.0, 0.0) == 0.0
        assert scad_derivative(1.0, 0.0) == 0.0
        assert scad_penalty(1.0, 0.0) == 0.0


class TestHard:
    def test_examples(self):
        assert hard_penalty(0.0, 2.0) == 0.0
        assert hard_penalty(0.5, 1.0) == 0.75
        assert hard_derivative(0.0, 1.5) == 3.0
        assert hard_derivative(2.0, 1.5) == 0.0

    @given(lams, st.floats(1.0, 1e3))
    def test_flat_above_lambda_exactly(self, lam, mult):
        assert hard_penalty(lam * mult, lam) == lam * lam
        assert hard_penalty(lam, lam) == lam * lam

    def test_finite_difference_at_point_three(self):
        lam = 1.3
        fd = finite_difference(lambda t: float(hard_penalty(t, lam)), 0.3 * lam)
        assert abs(fd - hard_derivative(0.3 * lam, lam)) < 1e-6

    @given(lams, st.floats(0.01, 3.0))
    def test_finite_differences(self, lam, frac):
        b = frac * lam
        if abs(b - lam) < 1e-3 * lam:
            return
        fd = finite_difference(lambda t: float(hard_penalty(t, lam)), b, h=1e-6 * lam)
        assert abs(fd - float(hard_derivative(b, lam))) < 1e-6 * max(1.0, lam)


class TestLqa:
    def test_examples(self):
        spec = PenaltySpec("SCAD", [1.0, 1.0, 0.0])
        w = lqa_weights([10.0, 0.0, 0.5], spec)
        assert w[0] == 0.0
        assert w[1] == 1.0 / 1e-6
        assert w[2] == 0.0

    def test_zero_lambdas_give_zero_matrix(self):
        np.testing.assert_array_equal(lqa_matrix([0.0, 1.0, -2.0], PenaltySpec("HARD", np.zeros(3))), np.zeros((3, 3)))

    def test_unpenalized_indices(self):
        spec = PenaltySpec("SCAD", [1.0, 1.0], unpenalized=(0,))
        assert spec.lambdas[0] == 0.0 and spec.lambdas[1] == 1.0
        assert lqa_weights([0.0, 0.0], spec)[0] == 0.0

    @given(
        st.sampled_from(list(PenaltyKind)),
        st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 5)), min_size=1, max_size=8),
    )
    def test_nonnegative_diagonal(self, kind, pairs):
        beta, lam = map(np.array, zip(*pairs))
        m = lqa_matrix(beta, PenaltySpec(kind, lam))
        assert np.all(np.diag(m) >= 0)
        assert np.all(m == np.diag(np.diag(m)))

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            lqa_weights([1.0, 2.0], PenaltySpec("SCAD", [1.0]))


class TestSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(lambdas=[-1.0]),
            dict(lambdas=[np.inf]),
            dict(lambdas=[1.0], a=2.0),
            dict(lambdas=[1.0], epsilon=0.0),
            dict(lambdas=[1.0], unpenalized=(3,)),
            dict(kind="lasso", lambdas=[1.0]),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            PenaltySpec(**kwargs)

    def test_defaults(self):
        spec = PenaltySpec(lambdas=[1.0])
        assert spec.a == 3.7 and spec.epsilon == 1e-6 and spec.kind is PenaltyKind.SCAD

    def test_total(self):
        spec = PenaltySpec("HARD", [1.0, 2.0])
        assert spec.total([0.5, 5.0]) == 0.75 + 4.0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from choquet_probit.membership import (
    CutoffParameterization,
    Direction,
    HalfTriangularDecreasing,
    HalfTriangularIncreasing,
    MembershipError,
    MinMaxRange,
    Trapezoidal,
    cumulative_points,
    make_membership,
    membership_for,
    membership_value,
    normalize_minmax,
    normalize_minmax_rows,
    points_to_log_gaps,
    resolve_cutoffs,
)

values = st.floats(-50, 50, allow_nan=False)


class TestMinMax:
    def test_against_oracle(self):
        x = [3.0, 9.0, 4.5, 7.0]
        np.testing.assert_allclose(normalize_minmax(x), oracles.minmax(x), atol=1e-15)
        np.testing.assert_allclose(normalize_minmax(x, "negative"), oracles.minmax(x, positive=False), atol=1e-15)

    def test_degenerate_range(self):
        np.testing.assert_array_equal(normalize_minmax([2.0, 2.0, 2.0]), [0.5, 0.5, 0.5])

    def test_needs_two_values(self):
        with pytest.raises(MembershipError):
            normalize_minmax([1.0])

    def test_rows_ignore_unavailable(self):
        x = np.array([[1.0, 5.0, 100.0], [2.0, 2.0, 0.0]])
        avail = np.array([[True, True, False], [True, True, False]])
        out = normalize_minmax_rows(x, avail, Direction.POSITIVE)
        np.testing.assert_allclose(out[0, :2], [0.0, 1.0])
        np.testing.assert_allclose(out[1, :2], [0.5, 0.5])
        assert np.isnan(out[:, 2]).all()

    @settings(max_examples=100, deadline=None)
    @given(st.lists(values, min_size=2, max_size=8))
    def test_range_and_extremes(self, xs):
        out = normalize_minmax(xs)
        assert np.all((out >= 0) & (out <= 1))
        if max(xs) > min(xs):
            assert out[int(np.argmax(xs))] == 1.0 and out[int(np.argmin(xs))] == 0.0
            np.testing.assert_allclose(normalize_minmax(xs, Direction.NEGATIVE), 1 - out, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(values, min_size=2, max_size=8), st.floats(0.1, 10), st.floats(-5, 5))
    def test_affine_invariance(self, xs, scale, shift):
        xs = np.array(xs)
        if np.ptp(xs) < 1e-6:
            return
        np.testing.assert_allclose(normalize_minmax(xs * scale + shift), normalize_minmax(xs), atol=1e-9)


class TestShapes:
    @settings(max_examples=200, deadline=None)
    @given(values, st.floats(0, 10), st.floats(0.01, 10))
    def test_half_triangular_against_oracle(self, x, a, width):
        b = a + width
        assert membership_value(x, HalfTriangularDecreasing(a, b)) == pytest.approx(
            oracles.half_triangular_decreasing(x, a, b), abs=1e-12
        )
        assert membership_value(x, HalfTriangularIncreasing(a, b)) == pytest.approx(
            oracles.half_triangular_increasing(x, a, b), abs=1e-12
        )

    @settings(max_examples=200, deadline=None)
    @given(values, st.lists(st.floats(0, 5), min_size=4, max_size=4))
    def test_trapezoid_against_oracle(self, x, gaps):
        a = gaps[0]
        b, c = a + gaps[1], a + gaps[1] + gaps[2]
        d = c + gaps[3] + 0.01
        assert membership_value(x, Trapezoidal(a, b, c, d)) == pytest.approx(
            oracles.trapezoid(x, a, b, c, d), abs=1e-12
        )

    def test_degenerate_triangle_peak(self):
        # b == c gives a triangle
        t = Trapezoidal(1.0, 2.0, 2.0, 3.0)
        np.testing.assert_allclose(membership_value(np.array([1.5, 2.0, 2.5]), t), [0.5, 1.0, 0.5])

    def test_vertical_edge(self):
        # a == b: jumps to 1 just above a
        t = Trapezoidal(1.0, 1.0, 2.0, 3.0)
        assert membership_value(1.0, t) == 0.0
        assert membership_value(1.0001, t) == 1.0

    def test_invalid_points(self):
        with pytest.raises(MembershipError):
            HalfTriangularDecreasing(3.0, 3.0)
        with pytest.raises(MembershipError):
            Trapezoidal(1.0, 3.0, 2.0, 4.0)
        with pytest.raises(MembershipError):
            make_membership("trapezoidal", [1, 2])
        with pytest.raises(MembershipError):
            make_membership("bell", [1, 2])

    def test_minmax_is_not_pointwise(self):
        with pytest.raises(MembershipError):
            membership_value(1.0, MinMaxRange())

    def test_mod_scenarios(self):
        # three scenarios of in-vehicle time, out-of-vehicle time and cost per km
        raw = np.array([[5, 3, 1.6], [4, 4, 1.6], [4, 2, 2.0]])
        shapes = [HalfTriangularDecreasing(2.5, 4.5), HalfTriangularDecreasing(1.5, 3.5), HalfTriangularDecreasing(1.0, 1.9)]
        got = np.array([[membership_value(raw[s, k], shapes[k]) for k in range(3)] for s in range(3)])
        np.testing.assert_allclose(got, [[0, 0.25, 0.33], [0.25, 0, 0.33], [0.25, 0.75, 0]], atol=4e-3)


class TestCutoffLink:
    def test_cumulative_points(self):
        np.testing.assert_allclose(cumulative_points([0.29, 0.97]), [np.exp(0.29), np.exp(0.29) + np.exp(0.97)])

    def test_published_constants(self):
        # constant-only in-vehicle time and cost cut-offs; the upper point
        # builds on the lower point as printed (two decimals)
        assert cumulative_points([0.29])[0] == pytest.approx(1.33, abs=1e-2)
        assert cumulative_points([np.log(1.33), 0.97])[1] == pytest.approx(3.96, abs=1e-2)
        assert cumulative_points([-1.73])[0] == pytest.approx(0.18, abs=1e-2)
        assert cumulative_points([np.log(0.18), 1.2])[1] == pytest.approx(3.50, abs=1e-2)

    def test_published_constants_within_rounding(self):
        # some coefficients within half a unit of the printed ones hit 3.96 exactly
        lo = cumulative_points([0.285, 0.965])[1]
        hi = cumulative_points([0.295, 0.975])[1]
        assert lo < 3.96 < hi

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 3), min_size=2, max_size=4))
    def test_points_increase(self, eta):
        pts = cumulative_points(eta)
        assert np.all(pts > 0) and np.all(np.diff(pts) > 0)
        np.testing.assert_allclose(points_to_log_gaps(pts), eta, atol=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(MembershipError):
            cumulative_points([np.nan, 1.0])

    def test_log_gaps_reject_unordered(self):
        with pytest.raises(MembershipError):
            points_to_log_gaps([3.0, 2.0])

    def test_from_points_round_trip(self):
        p = CutoffParameterization.from_points("trapezoidal", [2.0, 4.0, 6.0, 7.0])
        np.testing.assert_allclose(resolve_cutoffs(p, {}), [2.0, 4.0, 6.0, 7.0])

    def test_covariates(self):
        p = CutoffParameterization("half_decreasing", ((0.1, 0.0), (0.5, -0.3)), ("male",))
        lo, hi = resolve_cutoffs(p, {"male": 1.0})
        assert lo == pytest.approx(np.exp(0.1))
        assert hi == pytest.approx(np.exp(0.1) + np.exp(0.2))
        assert resolve_cutoffs(p, [1.0, 1.0]) == (lo, hi)
        assert membership_for(p, lo - 0.01, {"male": 1.0}) == 1.0

    def test_covariate_vector_checked(self):
        p = CutoffParameterization("half_decreasing", ((0.1, 0.0), (0.5, -0.3)), ("male",))
        with pytest.raises(MembershipError):
            resolve_cutoffs(p, [0.0, 1.0])
        with pytest.raises(MembershipError):
            CutoffParameterization("half_decreasing", ((0.1,), (0.5, 1.0)), ("male",))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from zzfree.errors import DomainError
from zzfree.pulses import (
    AdiabaticPoly, Constant, RampUp, Scaled, TruncatedGaussian, derivative, drag_pair,
    envelope_from_dict, evaluate,
)


def finite_difference(f, t, h=1e-5):
    return (f(t + h) - f(t - h)) / (2 * h)


class TestTruncatedGaussian:
    def test_default_duration_is_four_sigma(self):
        assert TruncatedGaussian(1.0, 5.0).duration == 20.0

    def test_lifted_edges_vanish_and_peak_kept(self):
        g = TruncatedGaussian(0.3, 10.0)
        assert evaluate(g, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert evaluate(g, 40.0) == pytest.approx(0.0, abs=1e-15)
        assert evaluate(g, 20.0) == pytest.approx(0.3)

    def test_unlifted_keeps_gaussian_tail(self):
        g = TruncatedGaussian(1.0, 10.0, lifted=False)
        assert evaluate(g, 0.0) == pytest.approx(math.exp(-2.0))

    def test_zero_after_duration(self):
        assert evaluate(TruncatedGaussian(1.0, 10.0), 41.0) == 0.0

    def test_area_matches_quadrature(self):
        g = TruncatedGaussian(0.7, 10.0)
        ref, _ = quad(lambda t: evaluate(g, t), 0.0, 40.0)
        assert g.area() == pytest.approx(ref, rel=1e-10)

    def test_unit_area_value(self):
        # frozen from the erf closed form: (σ√(2π) erf(√2) - 40 e^{-2}) / (1 - e^{-2})
        assert TruncatedGaussian(1.0, 10.0).area() == pytest.approx(21.409858154, abs=1e-8)

    @given(st.floats(0.5, 39.5))
    def test_derivatives_match_finite_differences(self, t):
        g = TruncatedGaussian(0.4, 10.0)
        assert derivative(g, t) == pytest.approx(finite_difference(g.value, t), abs=1e-8)
        assert float(g.deriv2(t)) == pytest.approx(finite_difference(g.deriv, t), abs=1e-8)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            TruncatedGaussian(1.0, 1.0).value(-0.1)

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            TruncatedGaussian(1.0, 0.0)


class TestAdiabaticPoly:
    @pytest.mark.parametrize("n", [2, 4, 8, 16, 32])
    def test_endpoints_and_midpoint(self, n):
        p = AdiabaticPoly(0.27, n, 100.0)
        assert evaluate(p, 0.0) == pytest.approx(0.27)
        assert evaluate(p, 100.0) == pytest.approx(0.27)
        assert evaluate(p, 50.0) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("n", [2, 4, 8, 16, 32])
    def test_endpoint_derivatives_vanish(self, n):
        p = AdiabaticPoly(0.27, n, 100.0)
        for t in (0.0, 100.0):
            assert abs(float(p.deriv(t))) < 1e-8
            assert abs(float(p.deriv2(t))) < 1e-8

    @given(st.sampled_from([2, 6, 12, 32]), st.floats(1.0, 99.0))
    def test_derivative_consistency(self, n, t):
        p = AdiabaticPoly(0.3, n, 100.0)
        assert float(p.deriv(t)) == pytest.approx(finite_difference(p.value, t), abs=1e-8)
        assert float(p.deriv2(t)) == pytest.approx(finite_difference(p.deriv, t), abs=1e-7)

    @given(st.sampled_from([2, 4, 32]), st.floats(0.0, 100.0))
    def test_bounded_by_base(self, n, t):
        v = evaluate(AdiabaticPoly(0.3, n, 100.0), t)
        assert -1e-15 <= v <= 0.3 + 1e-15

    def test_larger_exponent_is_flatter(self):
        t = 20.0
        assert evaluate(AdiabaticPoly(1.0, 32, 100.0), t) < evaluate(AdiabaticPoly(1.0, 2, 100.0), t)

    @pytest.mark.parametrize("n", [1, 3, 0])
    def test_odd_or_small_exponent_rejected(self, n):
        with pytest.raises(ValueError):
            AdiabaticPoly(1.0, n, 10.0)


class TestOtherEnvelopes:
    def test_constant(self):
        c = Constant(0.2)
        assert evaluate(c, 3.0) == 0.2
        assert derivative(c, 3.0) == 0.0

    @pytest.mark.parametrize("order", [3, 5])
    def test_ramp_reaches_target(self, order):
        r = RampUp(0.5, 10.0, order)
        assert evaluate(r, 0.0) == 0.0
        assert evaluate(r, 10.0) == pytest.approx(0.5)
        assert evaluate(r, 50.0) == pytest.approx(0.5)
        assert math.isinf(r.duration)

    def test_ramp_with_hold_returns_to_zero(self):
        r = RampUp(0.5, 10.0, 5, hold=20.0)
        assert r.duration == 40.0
        assert evaluate(r, 25.0) == pytest.approx(0.5)
        assert evaluate(r, 40.0) == pytest.approx(0.0, abs=1e-14)

    @given(st.floats(0.1, 39.9))
    def test_ramp_derivative(self, t):
        r = RampUp(0.5, 10.0, 5, hold=20.0)
        if min(abs(t - 10.0), abs(t - 30.0)) > 1e-4:
            assert derivative(r, t) == pytest.approx(finite_difference(r.value, t, 1e-6), abs=1e-7)

    def test_ramp_order_validated(self):
        with pytest.raises(ValueError):
            RampUp(1.0, 1.0, order=4)

    def test_from_dict(self):
        env = envelope_from_dict({"kind": "adiabatic-poly", "base": 0.2, "exponent": 4,
                                  "duration": 50.0})
        assert isinstance(env, AdiabaticPoly)
        with pytest.raises(ValueError):
            envelope_from_dict({"kind": "square"})


class TestDrag:
    def test_quadrature_is_scaled_derivative(self):
        g = TruncatedGaussian(0.1, 10.0)
        pair = drag_pair(g, -0.32)
        assert isinstance(pair.quadrature, Scaled)
        t = np.linspace(0, 40, 11)
        np.testing.assert_allclose(pair.quadrature.value(t),
                                   g.deriv(t) / (2 * math.pi * 0.32), rtol=1e-12)
        assert pair.in_phase is g

    def test_zero_anharmonicity(self):
        with pytest.raises(ZeroDivisionError):
            drag_pair(TruncatedGaussian(1.0, 1.0), 0.0)

    def test_array_evaluation(self):
        out = evaluate(TruncatedGaussian(1.0, 10.0), np.array([0.0, 20.0]))
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-15)

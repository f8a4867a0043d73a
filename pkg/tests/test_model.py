import math

import numpy as np
import pytest

from oploc.model import (
    MeasurementSchedule,
    Readouts,
    coeffs_ab,
    collapse_threshold,
    f_drift,
    fourier_coeff_exact,
    fourier_coeff_gaussian,
    g_cost,
    h_star,
    h_star_grad,
    h_star_series,
    kick_envelope,
    optimal_readouts,
    resonant_momenta,
    tau_z_of_t,
)


class TestSchedule:
    def test_rejects_epsilon_one(self):
        with pytest.raises(ValueError):
            MeasurementSchedule(epsilon=1.0)

    @pytest.mark.parametrize("field,value", [
        ("tau_x", -1.0), ("tau_m", 0.0), ("capital_lambda", -2.0),
        ("epsilon", -0.1), ("epsilon", 1.5),
    ])
    def test_rejects_bad_fields(self, field, value):
        with pytest.raises(ValueError):
            MeasurementSchedule(**{field: value})

    def test_kick_amplitude(self):
        s = MeasurementSchedule(tau_x=2.0, epsilon=0.5)
        assert s.kick_amplitude == 1.0


class TestKickEnvelope:
    def test_peak_is_one(self, strong_kick):
        assert kick_envelope(0.5, strong_kick) == 1.0

    def test_trough_value(self):
        s = MeasurementSchedule(tau_m=0.025, capital_lambda=1.0)
        assert kick_envelope(0.0, s) == pytest.approx(math.exp(-200.0), rel=1e-12)

    def test_periodicity(self, strong_kick):
        t = 0.37
        assert kick_envelope(t + 1.0, strong_kick) == pytest.approx(
            kick_envelope(t, strong_kick), abs=1e-15
        )


class TestTauZ:
    def test_no_kick(self, rotor):
        for t in (0.0, 0.3, 0.5, 0.9):
            assert tau_z_of_t(t, rotor) == 1.0

    def test_projective_dip(self):
        s = MeasurementSchedule(epsilon=0.99)
        assert tau_z_of_t(0.5, s) == pytest.approx(0.01, rel=1e-12)

    def test_trough_near_tau_x(self, half_kick):
        assert tau_z_of_t(0.0, half_kick) == pytest.approx(
            1.0 - 0.5 * math.exp(-200.0), rel=1e-15
        )

    def test_always_positive(self, strong_kick):
        t = np.linspace(0, 2, 4001)
        assert np.all(tau_z_of_t(t, strong_kick) > 0)


class TestCoefficients:
    def test_rotor_limit(self, rotor, rng):
        theta = rng.uniform(0, 2 * np.pi, 100)
        a, b = coeffs_ab(theta, 0.5, rotor)
        np.testing.assert_allclose(a, 0.5, rtol=1e-15)
        np.testing.assert_allclose(b, 0.0, atol=1e-15)

    def test_measurement_axis(self, strong_kick):
        a, b = coeffs_ab(0.0, 0.123, strong_kick)
        assert a == pytest.approx(0.5)
        assert b == 0.0

    def test_hand_value_at_kick_peak(self):
        # tau_z(peak) = 0.5 at epsilon = 0.5; theta = pi/4 gives
        # a = 0.5*(0.5/0.5 + 0.5/1.0) = 0.75 and b = 0.5*(1 - 2) = -0.5
        s = MeasurementSchedule(epsilon=0.5)
        a, b = coeffs_ab(np.pi / 4, 0.5, s)
        assert a == pytest.approx(0.75, rel=1e-12)
        assert b == pytest.approx(-0.5, rel=1e-12)

    def test_hand_value_symbolic_crosscheck(self):
        sympy = pytest.importorskip("sympy")
        th, tx, tz = sympy.symbols("theta tau_x tau_z", positive=True)
        a_sym = sympy.sin(th) ** 2 / (2 * tz) + sympy.cos(th) ** 2 / (2 * tx)
        b_sym = sympy.sin(th) * sympy.cos(th) * (1 / tx - 1 / tz)
        subs = {th: sympy.pi / 4, tx: 1, tz: sympy.Rational(1, 2)}
        assert float(a_sym.subs(subs)) == pytest.approx(0.75)
        assert float(b_sym.subs(subs)) == pytest.approx(-0.5)


class TestHStar:
    def test_zero_on_unit_momentum_axis(self, strong_kick):
        assert h_star(0.0, 1.0, 0.5, strong_kick) == 0.0

    def test_rotor_form(self, rotor, rng):
        theta = rng.uniform(0, 2 * np.pi, 200)
        p = rng.uniform(-5, 5, 200)
        t = rng.uniform(0, 1, 200)
        np.testing.assert_allclose(
            h_star(theta, p, t, rotor), (p * p - 1) / 2.0, atol=1e-15, rtol=1e-15
        )

    def test_hand_value(self):
        s = MeasurementSchedule(epsilon=0.5)
        assert h_star(np.pi / 4, 2.0, 0.5, s) == pytest.approx(1.25, rel=1e-12)

    def test_pi_periodicity(self, strong_kick, rng):
        theta = rng.uniform(0, 2 * np.pi, 500)
        p = rng.uniform(-5, 5, 500)
        t = rng.uniform(0, 1, 500)
        np.testing.assert_allclose(
            h_star(theta + np.pi, p, t, strong_kick),
            h_star(theta, p, t, strong_kick),
            rtol=1e-12, atol=1e-12,
        )

    def test_odd_symmetry_exact(self, strong_kick, rng):
        theta = rng.uniform(-10, 10, 500)
        p = rng.uniform(-5, 5, 500)
        t = rng.uniform(0, 1, 500)
        lhs = h_star(-theta, -p, t, strong_kick)
        rhs = h_star(theta, p, t, strong_kick)
        assert np.array_equal(lhs, rhs)


class TestGradient:
    def test_rotor(self, rotor):
        dth, dp = h_star_grad(1.1, 2.5, 0.2, rotor)
        assert dth == pytest.approx(0.0, abs=1e-15)
        assert dp == pytest.approx(2.5, rel=1e-15)

    def test_fixed_point_on_axis(self, strong_kick):
        _, dp = h_star_grad(0.0, 0.0, 0.4, strong_kick)
        assert dp == 0.0

    def test_matches_finite_differences(self, strong_kick, rng):
        theta = rng.uniform(0, 2 * np.pi, 2000)
        p = rng.uniform(-5, 5, 2000)
        t = rng.uniform(0, 1, 2000)
        step = 1e-6
        dth, dp = h_star_grad(theta, p, t, strong_kick)
        fd_th = (
            h_star(theta + step, p, t, strong_kick)
            - h_star(theta - step, p, t, strong_kick)
        ) / (2 * step)
        fd_p = (
            h_star(theta, p + step, t, strong_kick)
            - h_star(theta, p - step, t, strong_kick)
        ) / (2 * step)
        np.testing.assert_allclose(dth, fd_th, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(dp, fd_p, rtol=1e-6, atol=1e-6)


class TestReadouts:
    def test_poles(self):
        r = optimal_readouts(0.0, 0.0)
        assert (r.r_x, r.r_z) == (0.0, 1.0)
        r = optimal_readouts(np.pi / 2, 0.0)
        assert r.r_x == pytest.approx(1.0)
        assert r.r_z == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        r = optimal_readouts(np.pi / 4, 1.0)
        assert r.r_x == pytest.approx(math.sqrt(2.0), rel=1e-12)
        assert r.r_z == pytest.approx(0.0, abs=1e-15)

    def test_stationarity_of_objective(self, strong_kick, rng):
        # d(p F + G)/dr vanishes analytically at the optimal readouts:
        # (p cos(theta) - r_x + sin(theta))/tau_x and the z analog
        n = 1_000_000
        theta = rng.uniform(0, 2 * np.pi, n)
        p = rng.uniform(-5, 5, n)
        t = rng.uniform(0, 1, n)
        r_x, r_z = optimal_readouts(theta, p)
        tz = tau_z_of_t(t, strong_kick)
        grad_x = (p * np.cos(theta) - r_x + np.sin(theta)) / strong_kick.tau_x
        grad_z = (-p * np.sin(theta) - r_z + np.cos(theta)) / tz
        assert np.max(np.abs(grad_x)) < 1e-10
        assert np.max(np.abs(grad_z)) < 1e-10


class TestDriftAndCost:
    def test_eigenstate_noiseless(self, rotor):
        assert f_drift(0.0, Readouts(0.0, 1.0), 0.1, rotor) == 0.0

    def test_rotor_drift_at_optimum(self, rotor, rng):
        theta = rng.uniform(0, 2 * np.pi, 100)
        p = rng.uniform(-3, 3, 100)
        r = optimal_readouts(theta, p)
        np.testing.assert_allclose(
            f_drift(theta, r, 0.3, rotor), p, rtol=1e-12, atol=1e-12
        )

    def test_drift_hand_value(self):
        s = MeasurementSchedule(epsilon=0.5)
        # tau_z = 0.5 at the kick peak
        val = f_drift(np.pi / 2, Readouts(1.0, 0.3), 0.5, s)
        assert val == pytest.approx(-0.6, rel=1e-12)

    def test_cost_hand_value(self, rotor):
        val = g_cost(np.pi / 2, Readouts(1.0, 0.0), 0.0, rotor)
        assert val == pytest.approx(-0.5, rel=1e-12)

    def test_cost_strictly_negative(self, strong_kick, rng):
        theta = rng.uniform(0, 2 * np.pi, 1000)
        p = rng.uniform(-5, 5, 1000)
        r = optimal_readouts(theta, p)
        assert np.all(g_cost(theta, r, 0.5, strong_kick) < 0)

    def test_hamiltonian_is_legendre_of_drift_and_cost(self, strong_kick, rng):
        theta = rng.uniform(0, 2 * np.pi, 5000)
        p = rng.uniform(-5, 5, 5000)
        t = rng.uniform(0, 1, 5000)
        r = optimal_readouts(theta, p)
        lhs = p * f_drift(theta, r, t, strong_kick) + g_cost(theta, r, t, strong_kick)
        np.testing.assert_allclose(
            lhs, h_star(theta, p, t, strong_kick), atol=1e-12
        )


class TestFourierCoefficients:
    def test_narrow_width_value(self, strong_kick):
        # for tau_m << Lambda the k = 0 coefficient tends to tau_m sqrt(2 pi)
        val = fourier_coeff_exact(1, 0, strong_kick)
        assert val == pytest.approx(0.025 * math.sqrt(2 * math.pi), rel=1e-8)

    def test_sign_alternation(self, strong_kick):
        for k in range(6):
            val = fourier_coeff_exact(1, k, strong_kick)
            assert math.copysign(1.0, val) == (-1.0) ** k

    def test_matches_gaussian_oracle(self, strong_kick):
        val = fourier_coeff_exact(2, 10, strong_kick)
        oracle = fourier_coeff_gaussian(2, 10, strong_kick)
        assert val == pytest.approx(oracle, rel=1e-8)

    def test_rejects_bad_n(self, strong_kick):
        with pytest.raises(ValueError):
            fourier_coeff_exact(0, 1, strong_kick)

    def test_scaled_period(self):
        # normalizing time by the period makes the coefficient depend on
        # tau_m / Lambda only
        s1 = MeasurementSchedule(tau_m=0.025, capital_lambda=1.0)
        s2 = MeasurementSchedule(tau_m=0.05, capital_lambda=2.0)
        assert fourier_coeff_exact(1, 3, s1) == pytest.approx(
            fourier_coeff_exact(1, 3, s2), rel=1e-12
        )


class TestSeriesReconstruction:
    def test_weak_kick_completeness(self, weak_kick, rng):
        theta = rng.uniform(0, 2 * np.pi, 40)
        t = rng.uniform(0, 1, 40)
        worst = 0.0
        scale = 0.0
        for p in (0.0, 0.5, 2.0):
            exact = h_star(theta, p, t, weak_kick)
            approx = h_star_series(theta, p, t, weak_kick, n_max=3, k_max=40)
            worst = max(worst, float(np.max(np.abs(approx - exact))))
            scale = max(scale, float(np.max(np.abs(exact))))
        assert worst / scale < 1e-3


class TestResonances:
    def test_unit_parameters(self):
        s = MeasurementSchedule()
        got = resonant_momenta(s, 3)
        expected = np.array([-3, -2, -1, 0, 1, 2, 3]) * np.pi
        np.testing.assert_allclose(got, expected, rtol=1e-15)

    def test_scaling(self):
        s = MeasurementSchedule(tau_x=2.0)
        got = resonant_momenta(s, 1)
        np.testing.assert_allclose(got, [-2 * np.pi, 0.0, 2 * np.pi])

    def test_zero_included(self):
        assert 0.0 in resonant_momenta(MeasurementSchedule(), 0)

    def test_rejects_negative_k(self):
        with pytest.raises(ValueError):
            resonant_momenta(MeasurementSchedule(), -1)


class TestCollapseThreshold:
    def test_reference_value(self):
        assert collapse_threshold(MeasurementSchedule()) == pytest.approx(0.975)

    def test_wide_kick(self):
        s = MeasurementSchedule(tau_m=1.0, tau_x=1.0)
        assert collapse_threshold(s) == pytest.approx(0.0)

    def test_slow_measurement(self):
        s = MeasurementSchedule(tau_x=2.0, tau_m=0.025)
        assert collapse_threshold(s) == pytest.approx(0.9875)

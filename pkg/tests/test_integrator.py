import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from oploc.batch import integrate_batch
from oploc.integrator import (
    IntegrationBudgetError,
    IntegratorConfig,
    PathStatus,
    flow_map,
    hamilton_rhs,
    integrate,
)
from oploc.model import MeasurementSchedule, h_star, h_star_grad


class TestRhs:
    def test_rotor(self, rotor):
        dth, dp = hamilton_rhs(0.3, 2.0, 0.1, rotor)
        assert dth == pytest.approx(2.0)
        assert dp == pytest.approx(0.0, abs=1e-15)

    def test_fixed_point_on_axis(self, strong_kick):
        dth, dp = hamilton_rhs(0.0, 0.0, 0.7, strong_kick)
        assert dth == 0.0
        assert dp == 0.0

    def test_matches_finite_difference(self, strong_kick, rng):
        for _ in range(20):
            th = rng.uniform(0, 2 * np.pi)
            p = rng.uniform(-3, 3)
            t = rng.uniform(0, 1)
            dth, dp = hamilton_rhs(th, p, t, strong_kick)
            step = 1e-6
            fd_p = (h_star(th, p + step, t, strong_kick)
                    - h_star(th, p - step, t, strong_kick)) / (2 * step)
            fd_th = (h_star(th + step, p, t, strong_kick)
                     - h_star(th - step, p, t, strong_kick)) / (2 * step)
            assert dth == pytest.approx(fd_p, rel=1e-6, abs=1e-8)
            assert dp == pytest.approx(-fd_th, rel=1e-6, abs=1e-8)


class TestRotorExactness:
    @pytest.mark.parametrize("method", ["rk4", "bs"])
    def test_straight_line(self, rotor, method):
        cfg = IntegratorConfig(method=method, dt=0.01)
        path = integrate((0.0, np.pi), 0.0, 1.0, rotor, cfg, sample_times=[1.0])
        assert path.completed
        assert path.thetas[-1] == pytest.approx(np.pi, abs=1e-9)
        assert path.ps[-1] == pytest.approx(np.pi, abs=1e-12)

    def test_momentum_identity(self, rotor, bs_cfg):
        path = integrate((1.0, 2.5), 0.0, 7.0, rotor, bs_cfg)
        assert path.ps[-1] == 2.5


class TestDivergenceHandling:
    def test_immediate_cutoff(self, strong_kick, bs_cfg):
        path = integrate((0.0, bs_cfg.p_max + 1.0), 0.0, 1.0, strong_kick, bs_cfg)
        assert path.status is PathStatus.DIVERGED
        assert path.t_div == 0.0

    def test_nan_start(self, strong_kick, bs_cfg):
        path = integrate((np.nan, 0.1), 0.0, 1.0, strong_kick, bs_cfg)
        assert path.status is PathStatus.DIVERGED

    def test_truncation_is_not_an_error(self, strong_kick):
        # a tight cutoff forces truncation somewhere inside the first kick
        cfg = IntegratorConfig(p_max=1.05)
        path = integrate((1.0, 1.0), 0.0, 2.0, strong_kick, cfg)
        assert path.status is PathStatus.DIVERGED
        assert 0.0 < path.t_div < 2.0
        assert np.all(np.abs(path.ps) <= cfg.p_max)

    def test_budget_error_names_the_start(self, strong_kick):
        cfg = IntegratorConfig(method="rk4", dt=1e-4, max_steps=10)
        with pytest.raises(IntegrationBudgetError, match="p0=1.3"):
            integrate((0.2, 1.3), 0.0, 1.0, strong_kick, cfg)


class TestAdaptiveAccuracy:
    def test_strong_kick_example_completes(self, strong_kick, bs_cfg):
        path = integrate((0.286, 1.227), 0.0, 15.0, strong_kick, bs_cfg)
        assert path.completed

    def test_forward_backward_roundtrip(self, half_kick):
        # independent backward leg: reverse-time field integrated by scipy
        cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-13)
        end = flow_map((0.4, 0.9), 0.0, 5.0, half_kick, cfg).point

        def rhs_back(s, y):
            dth, dp = hamilton_rhs(y[0], y[1], 5.0 - s, half_kick)
            return [-dth, -dp]

        sol = solve_ivp(rhs_back, (0.0, 5.0), [end.theta, end.p],
                        method="DOP853", rtol=1e-12, atol=1e-13)
        assert sol.y[0, -1] == pytest.approx(0.4, abs=1e-7)
        assert sol.y[1, -1] == pytest.approx(0.9, abs=1e-7)

    def test_strobe_composition(self, half_kick, bs_cfg):
        whole = flow_map((0.7, 0.2), 0.0, 2.0, half_kick, bs_cfg).point
        first = flow_map((0.7, 0.2), 0.0, 1.0, half_kick, bs_cfg).point
        second = flow_map(first, 1.0, 2.0, half_kick, bs_cfg).point
        assert second.theta == pytest.approx(whole.theta, abs=1e-8)
        assert second.p == pytest.approx(whole.p, abs=1e-8)

    def test_kick_step_policy(self, half_kick, bs_cfg):
        # at least 20 accepted steps inside +-3 tau_m of the kick peak
        path = integrate((0.3, 0.8), 0.0, 1.0, half_kick, bs_cfg)
        tm = half_kick.tau_m
        inside = np.sum(np.abs(path.times - 0.5) <= 3 * tm)
        assert inside >= 20

    def test_energy_conservation_frozen_time(self, half_kick):
        # the autonomous flow at frozen t* must conserve the generator
        t_star = 0.49  # on the kick flank, where both coefficients matter

        def rhs(_, y):
            dth_dp = h_star_grad(y[0], y[1], t_star, half_kick)
            return [dth_dp[1], -dth_dp[0]]

        sol = solve_ivp(rhs, (0.0, 10.0), [0.8, 0.6], method="DOP853",
                        rtol=1e-12, atol=1e-14, dense_output=True)
        e0 = h_star(0.8, 0.6, t_star, half_kick)
        samples = sol.sol(np.linspace(0, 10, 101))
        e = h_star(samples[0], samples[1], t_star, half_kick)
        assert np.max(np.abs(e - e0) / abs(e0)) < 1e-8


class TestRk4Convergence:
    def test_step_halving_order(self, half_kick):
        start = (0.3, 1.1)
        ref = integrate(
            start, 0.0, 1.0, half_kick,
            IntegratorConfig(method="rk4", dt=1.25e-4), sample_times=[1.0],
        )
        errs = []
        for dt in (2e-3, 1e-3):
            path = integrate(
                start, 0.0, 1.0, half_kick,
                IntegratorConfig(method="rk4", dt=dt), sample_times=[1.0],
            )
            errs.append(abs(path.thetas[-1] - ref.thetas[-1]))
        order = math.log2(errs[0] / errs[1])
        assert order >= 3.7


class TestLiouville:
    def test_flow_jacobian_determinant(self, half_kick, rng):
        # the flow is symplectic, so the linearized map has unit determinant
        n = 100
        th0 = rng.uniform(0, 2 * np.pi, n)
        p0 = rng.uniform(-2, 2, n)
        h = 1e-5
        cfg = IntegratorConfig(dt=1.25e-3)
        theta_in = np.concatenate([th0 + h, th0 - h, th0, th0])
        p_in = np.concatenate([p0, p0, p0 + h, p0 - h])
        res = integrate_batch(theta_in, p_in, 0.0, 1.0, half_kick, cfg)
        assert res.alive.all()
        dth_dth = (res.theta[:n] - res.theta[n:2*n]) / (2 * h)
        dp_dth = (res.p[:n] - res.p[n:2*n]) / (2 * h)
        dth_dp = (res.theta[2*n:3*n] - res.theta[3*n:]) / (2 * h)
        dp_dp = (res.p[2*n:3*n] - res.p[3*n:]) / (2 * h)
        det = dth_dth * dp_dp - dth_dp * dp_dth
        assert np.max(np.abs(det - 1.0)) < 1e-5


class TestSymmetry:
    def test_mirror_equivariance(self, strong_kick):
        cfg = IntegratorConfig(dt=2.5e-3)
        res = integrate_batch(
            [0.7, -0.7], [1.1, -1.1], 0.0, 3.0, strong_kick, cfg
        )
        assert res.alive.all()
        assert res.theta[1] == pytest.approx(-res.theta[0], abs=1e-12)
        assert res.p[1] == pytest.approx(-res.p[0], abs=1e-12)


class TestBatchEngine:
    def test_rotor_exact(self, rotor):
        cfg = IntegratorConfig()
        res = integrate_batch([0.0, 1.0], [np.pi, -2.0], 0.0, 20.0, rotor, cfg)
        assert res.theta[0] == pytest.approx(20 * np.pi, abs=1e-9)
        assert res.p[1] == -2.0

    def test_matches_adaptive_reference(self, strong_kick, rng):
        th0 = rng.uniform(0, 2 * np.pi, 12)
        p0 = rng.uniform(-1.5, 1.5, 12)
        batch = integrate_batch(
            th0, p0, 0.0, 2.0, strong_kick, IntegratorConfig(dt=1.25e-3)
        )
        ref_cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-13)
        for i in range(12):
            ref = flow_map((th0[i], p0[i]), 0.0, 2.0, strong_kick, ref_cfg)
            if ref.diverged or not batch.alive[i]:
                continue
            assert batch.theta[i] == pytest.approx(ref.point.theta, abs=1e-4)
            assert batch.p[i] == pytest.approx(ref.point.p, abs=1e-4)

    def test_sampling_matches_endpoints(self, half_kick):
        cfg = IntegratorConfig(dt=1.25e-3)
        samples = np.array([0.5, 1.0, 1.7, 2.0])
        res = integrate_batch([0.3], [0.9], 0.0, 2.0, half_kick, cfg,
                              sample_times=samples)
        assert res.sample_theta.shape == (4, 1)
        # the endpoint sample equals the final state
        assert res.sample_theta[-1, 0] == res.theta[0]
        # an intermediate sample equals an independent short integration
        part = integrate_batch([0.3], [0.9], 0.0, 1.7, half_kick, cfg)
        assert res.sample_theta[2, 0] == pytest.approx(part.theta[0], abs=1e-9)

    def test_divergence_freezes_lane(self, strong_kick):
        cfg = IntegratorConfig(p_max=1.05)
        res = integrate_batch([1.0, 0.0], [1.0, 0.0], 0.0, 2.0, strong_kick, cfg)
        assert not res.alive[0]
        assert 0.0 < res.t_div[0] < 2.0
        assert abs(res.p[0]) <= cfg.p_max  # frozen at the last live state
        assert res.alive[1]  # the origin fixed point never moves
        assert np.isnan(res.t_div[1])

    def test_sample_validation(self, rotor):
        cfg = IntegratorConfig()
        with pytest.raises(ValueError):
            integrate_batch([0.0], [1.0], 0.0, 1.0, rotor, cfg,
                            sample_times=[0.5, 0.2])
        with pytest.raises(ValueError):
            integrate_batch([0.0], [1.0], 0.0, 1.0, rotor, cfg,
                            sample_times=[2.0])

    def test_chunking_is_bit_reproducible(self, strong_kick, rng):
        th0 = rng.uniform(0, 2 * np.pi, 64)
        p0 = rng.uniform(-1, 1, 64)
        cfg = IntegratorConfig(dt=2.5e-3)
        whole = integrate_batch(th0, p0, 0.0, 1.0, strong_kick, cfg)
        half_a = integrate_batch(th0[:32], p0[:32], 0.0, 1.0, strong_kick, cfg)
        half_b = integrate_batch(th0[32:], p0[32:], 0.0, 1.0, strong_kick, cfg)
        np.testing.assert_array_equal(
            whole.theta, np.concatenate([half_a.theta, half_b.theta])
        )


class TestHermiteSampling:
    def test_dense_output_accuracy(self, half_kick):
        cfg = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-12)
        want = np.linspace(0.05, 0.95, 19)
        path = integrate((0.3, 0.8), 0.0, 1.0, half_kick, cfg, sample_times=want)
        for t, th in zip(path.times, path.thetas):
            direct = flow_map((0.3, 0.8), 0.0, float(t), half_kick, cfg).point
            assert th == pytest.approx(direct.theta, abs=1e-8)

import io
import math

import numpy as np
import pytest

from oploc.chaos import (
    DivergedPathError,
    bloch_distance,
    ic_mesh,
    lyapunov,
    lyapunov_series,
    make_triplet,
    portrait,
    triplet_distance,
)
from oploc.integrator import IntegratorConfig, flow_map
from oploc.model import MeasurementSchedule


class TestBlochDistance:
    def test_coincident(self):
        assert bloch_distance(1.3, 1.3) == 0.0

    def test_antipodal(self):
        assert bloch_distance(0.0, np.pi) == pytest.approx(2.0)

    def test_small_angle(self):
        assert bloch_distance(0.0, 0.01) == pytest.approx(
            2 * math.sin(0.005), rel=1e-12
        )

    def test_winding_insensitive(self):
        assert bloch_distance(0.3, 0.3 + 2 * np.pi) == pytest.approx(0.0, abs=1e-12)


@pytest.fixture
def rotor_triplet(rotor):
    cfg = IntegratorConfig()
    grid = np.linspace(0.5, 5.0, 10)
    return make_triplet((0.2, 1.5), 0.0, 5.0, rotor, cfg, grid)


class TestTriplet:
    def test_initial_distance(self, rotor_triplet):
        assert rotor_triplet.d0 == pytest.approx(2 * math.sin(0.005), rel=1e-12)

    def test_rotor_distance_constant(self, rotor_triplet):
        # equal momenta make the rotor flow a rigid theta-shift
        for t in rotor_triplet.times:
            assert triplet_distance(rotor_triplet, float(t)) == pytest.approx(
                rotor_triplet.d0, rel=1e-9
            )

    def test_rotor_lyapunov_zero(self, rotor_triplet):
        for t in rotor_triplet.times:
            assert lyapunov(rotor_triplet, float(t)) == pytest.approx(0.0, abs=1e-8)

    def test_exponential_distance_rate(self):
        # D(t) = D0 e^{0.25 t} must give lambda = 0.25 by definition
        d0 = 0.01
        t = 4.0
        lam = math.log(d0 * math.exp(0.25 * t) / d0) / t
        assert lam == pytest.approx(0.25)

    def test_off_grid_time_rejected(self, rotor_triplet):
        with pytest.raises(KeyError):
            triplet_distance(rotor_triplet, 0.123456)

    def test_diverged_member_named(self, strong_kick):
        # a start beyond the cutoff is dead immediately, so every later
        # query must identify the failed member
        cfg = IntegratorConfig(p_max=0.9)
        trip = make_triplet((1.0, 1.0), 0.0, 3.0, strong_kick, cfg,
                            np.linspace(0.5, 3.0, 6))
        with pytest.raises(DivergedPathError, match="main path diverged"):
            triplet_distance(trip, 3.0)

    def test_lyapunov_undefined_at_zero(self, rotor_triplet):
        with pytest.raises(ValueError):
            lyapunov(rotor_triplet, 0.0)


class TestLyapunovProperties:
    def test_finite_size_ceiling(self, strong_kick):
        # D <= 2 on the Bloch circle, so lambda <= ln(2/D0)/t always
        cfg = IntegratorConfig(dt=2.5e-3)
        grid = np.linspace(1.0, 15.0, 15)
        trip = make_triplet((0.286, 1.227), 0.0, 15.0, strong_kick, cfg, grid)
        ser = lyapunov_series(trip)
        ceiling = np.log(2.0 / trip.d0) / ser.times
        assert np.all(ser.d <= 2.0 + 1e-12)
        assert np.all(ser.lam <= ceiling + 1e-12)

    def test_mirror_symmetry(self, strong_kick):
        cfg = IntegratorConfig(dt=2.5e-3)
        grid = np.linspace(1.0, 8.0, 8)
        trip_a = make_triplet((0.7, 0.9), 0.0, 8.0, strong_kick, cfg, grid)
        trip_b = make_triplet((-0.7, -0.9), 0.0, 8.0, strong_kick, cfg, grid)
        ser_a = lyapunov_series(trip_a)
        ser_b = lyapunov_series(trip_b)
        # the mirrored triplet swaps the roles of the two auxiliaries, so
        # the symmetrized distance (and lambda) is identical
        np.testing.assert_allclose(ser_a.lam, ser_b.lam, atol=1e-9)


class TestPortrait:
    def test_rotor_records(self, rotor):
        cfg = IntegratorConfig()
        port = portrait([(0.0, 0.5), (1.0, -1.0)], 5, rotor, cfg)
        assert len(port.records) == 10
        for r in port.records:
            assert r.p == pytest.approx(r.p0, abs=1e-12)
            assert r.lam == pytest.approx(0.0, abs=1e-9)
            assert r.status == "ok"

    def test_strobe_matches_flow_map(self, half_kick):
        cfg = IntegratorConfig(dt=1.25e-3)
        port = portrait([(0.4, 0.8)], 3, half_kick, cfg)
        ref_cfg = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-12)
        rec = port.records[2]
        assert rec.n == 3
        ref = flow_map((0.4, 0.8), 0.0, 3.0, half_kick, ref_cfg).point
        assert rec.theta_mod == pytest.approx(ref.theta % (2 * np.pi), abs=1e-6)
        assert rec.p == pytest.approx(ref.p, abs=1e-6)

    def test_divergent_main_stops_contributing(self, strong_kick):
        # this start exceeds |p| = 3 during the sixth kick
        cfg = IntegratorConfig(p_max=3.0, dt=2.5e-3)
        port = portrait([(0.5, 1.5)], 10, strong_kick, cfg)
        ns = [r.n for r in port.records]
        assert 0 < len(ns) < 10
        assert ns == list(range(1, len(ns) + 1))

    def test_csv_stream(self, rotor):
        cfg = IntegratorConfig()
        port = portrait([(0.0, 1.0)], 2, rotor, cfg)
        buf = io.StringIO()
        port.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "theta0,p0,n,theta_mod_2pi,p,lambda_MHz,status"
        assert len(lines) == 3
        assert lines[1].endswith(",ok")

    def test_requires_a_strobe(self, rotor):
        with pytest.raises(ValueError):
            portrait([(0.0, 1.0)], 0, rotor, IntegratorConfig())


class TestIcMesh:
    def test_counts_and_offsets(self):
        ics = ic_mesh([0.0, 1.0], theta_count=4, p_offsets=(-0.2, 0.0, 0.2))
        assert len(ics) == 2 * 3 * 4
        ps = {round(q.p, 10) for q in ics}
        assert ps == {-0.2, 0.0, 0.2, 0.8, 1.0, 1.2}

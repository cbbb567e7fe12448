import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import euler_bicycle
from roadmcl.motion_model import (
    ZERO_NOISE,
    ControlInput,
    MotionNoise,
    OdometrySample,
    Pose,
    apply_control,
    integrate_odometry,
    normalize_angle,
    propagate,
    propagate_many,
    steering_for_turn,
)

finite = st.floats(-1e3, 1e3)
angles = st.floats(-20.0, 20.0)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestIntegrate:
    def test_straight(self):
        assert integrate_odometry([OdometrySample(1.0, 0.0, 1.0)]) == (1.0, 0.0, 0.0)

    def test_stationary(self):
        u = integrate_odometry([OdometrySample(0.0, 0.3, 0.1)] * 17)
        assert u == (0.0, 0.0, 0.0)

    def test_half_circle(self):
        L = 2.8
        samples = [OdometrySample(1.0, math.atan(L), math.pi / 100)] * 100
        de, dn, dth = integrate_odometry(samples, L)
        assert abs(de) < 0.05
        assert abs(dn - 2.0) < 0.05
        assert dth == pytest.approx(math.pi, abs=1e-12)

    def test_nonpositive_wheelbase(self):
        with pytest.raises(ValueError):
            integrate_odometry([OdometrySample(1.0, 0.0, 1.0)], 0.0)

    def test_nonpositive_dt(self):
        with pytest.raises(ValueError):
            integrate_odometry([OdometrySample(1.0, 0.0, 0.0)])

    def test_steering_for_turn_inverts_yaw_rate(self):
        d = steering_for_turn(5.0, 0.2, 0.1, 2.8)
        assert 5.0 * math.tan(d) / 2.8 * 0.1 == pytest.approx(0.2, rel=1e-12)

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.floats(0, 30), st.floats(-1.4, 1.4), st.floats(0.01, 0.5)),
                    min_size=1, max_size=30),
           st.floats(1.0, 5.0))
    def test_matches_scalar_oracle(self, samples, L):
        de, dn, dth = integrate_odometry([OdometrySample(*s) for s in samples], L)
        x, y, th = euler_bicycle(samples, L)
        assert de == pytest.approx(x, abs=1e-9)
        assert dn == pytest.approx(y, abs=1e-9)
        assert -math.pi < dth <= math.pi
        assert math.remainder(dth - th, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)

    @given(st.lists(st.tuples(st.floats(0, 30), st.floats(0.01, 0.5)), min_size=1, max_size=30))
    def test_straight_line_keeps_lateral_zero(self, samples):
        u = integrate_odometry([OdometrySample(v, 0.0, dt) for v, dt in samples])
        assert u.dn == 0.0 and u.dtheta == 0.0
        assert u.de == pytest.approx(sum(v * dt for v, dt in samples))


class TestPropagate:
    def test_identity_frame(self):
        assert propagate(Pose(0, 0, 0), ControlInput(1, 0, 0), ZERO_NOISE, rng()) == (1.0, 0.0, 0.0)

    def test_control_rotated_into_map_frame(self):
        e, n, th = propagate(Pose(0, 0, math.pi / 2), ControlInput(1, 0, 0), ZERO_NOISE, rng())
        assert e == pytest.approx(0.0, abs=1e-15)
        assert n == 1.0
        assert th == math.pi / 2

    def test_position_noise_std(self):
        poses = np.zeros((100_000, 3))
        out = propagate_many(poses, ControlInput(0, 0, 0), MotionNoise(), rng(42))
        assert abs(out[:, 0].std() / 0.1 - 1) < 0.02
        assert abs(out[:, 1].std() / 0.1 - 1) < 0.02
        assert abs(out[:, 2].std() / math.radians(3) - 1) < 0.02

    def test_scalar_and_vector_agree(self):
        x = Pose(3.0, -2.0, 2.5)
        u = ControlInput(1.5, 0.3, 0.2)
        one = propagate(x, u, MotionNoise(), rng(7))
        many = propagate_many(np.array([x]), u, MotionNoise(), rng(7))
        np.testing.assert_array_equal(many[0], one)

    def test_same_seed_same_draws(self):
        poses = rng(1).normal(size=(50, 3))
        u = ControlInput(2.0, 0.1, -0.05)
        a = propagate_many(poses, u, MotionNoise(), rng(3))
        b = propagate_many(poses, u, MotionNoise(), rng(3))
        assert np.array_equal(a, b)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            MotionNoise(-0.1, 0.0)

    @given(finite, finite, angles, finite, finite, angles)
    def test_heading_normalized(self, e, n, th, de, dn, dth):
        _, _, out = propagate(Pose(e, n, th), ControlInput(de, dn, dth), MotionNoise(), rng())
        assert -math.pi < out <= math.pi

    @given(finite, finite, angles, st.floats(0, 100), st.floats(0, 100), finite, finite, angles)
    def test_composition_without_first_rotation(self, e, n, th, a1, a2, de2, dn2, dth2):
        x = Pose(e, n, th)
        u1 = ControlInput(a1, 0.0, 0.0)
        u2 = ControlInput(de2, dn2, dth2)
        two = propagate(propagate(x, u1, ZERO_NOISE, rng()), u2, ZERO_NOISE, rng())
        one = propagate(x, ControlInput(a1 + de2, dn2, dth2), ZERO_NOISE, rng())
        np.testing.assert_allclose(two[:2], one[:2], atol=1e-9)
        assert math.remainder(two[2] - one[2], 2 * math.pi) == pytest.approx(0, abs=1e-12)


class TestNormalize:
    def test_boundaries(self):
        assert normalize_angle(math.pi) == math.pi
        assert normalize_angle(-math.pi) == math.pi
        assert normalize_angle(0.0) == 0.0

    @given(st.floats(-1e4, 1e4))
    def test_range_and_equivalence(self, a):
        b = normalize_angle(a)
        assert -math.pi < b <= math.pi
        assert math.remainder(a - b, 2 * math.pi) == pytest.approx(0, abs=1e-9)

    def test_array_matches_scalar(self):
        a = np.linspace(-50, 50, 1001)
        np.testing.assert_array_equal(normalize_angle(a), [normalize_angle(float(x)) for x in a])

    def test_apply_control_array(self):
        th = np.array([0.0, math.pi / 2])
        e, n, t = apply_control(np.zeros(2), np.zeros(2), th, ControlInput(2.0, 0.0, 0.0))
        np.testing.assert_allclose(e, [2.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(n, [0.0, 2.0])

"""Certificate values, region classification, and boundary geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest

from nclbf.certificate import Certificate, RegionLabel
from nclbf.scenario import (ObstacleParams, ObstacleSpec, ScenarioError,
                            builtin_scenario, eta1_lower_bound, w_upper_bound)


@pytest.fixture(scope="module")
def cert_a():
    return Certificate(builtin_scenario("linear2d_single"))


@pytest.fixture(scope="module")
def cert_b():
    return Certificate(builtin_scenario("nonlinear_mech_three"))


def sphere_point(cert, i, theta):
    sph = cert.boundary_sphere(i)
    return sph.center + sph.radius * np.array([math.cos(theta), math.sin(theta)])


class TestFields:
    def test_L_examples(self, cert_a):
        assert cert_a.L(np.array([0.0, 0.0])) == 0.0
        assert np.array_equal(cert_a.grad_L(np.zeros(2)), np.zeros(2))
        assert cert_a.L(np.array([2.0, 3.2])) == pytest.approx(14.24, rel=1e-12)
        assert np.allclose(cert_a.grad_L(np.array([2.0, 3.2])), [4.0, 6.4])
        assert cert_a.L(np.array([5.0, 5.0])) == 50.0

    def test_B_examples(self, cert_a):
        assert cert_a.B(0, np.array([2.0, 2.0])) == pytest.approx(36.9)
        assert cert_a.B(0, np.array([2.0, 3.2])) == pytest.approx(23.94, rel=1e-12)
        assert cert_a.B(0, np.array([0.0, 0.0])) == pytest.approx(-35.1, rel=1e-12)
        assert np.allclose(cert_a.grad_B(0, np.array([2.0, 3.2])), [0.0, -21.6])

    def test_V_examples(self, cert_a):
        assert cert_a.V(np.zeros(2)) == 0.0
        assert cert_a.V(np.array([2.0, 3.2])) == pytest.approx(23.94, rel=1e-12)
        assert cert_a.V(np.array([5.0, 5.0])) == 50.0


class TestClassify:
    def test_origin_is_stabilizer_region(self, cert_a):
        assert cert_a.classify(np.zeros(2), 1e-3) == RegionLabel("R2")

    def test_barrier_region_point(self, cert_a):
        # (2, 3.2) sits inside the unsafe ball itself; (2, 3.5) is barrier-side
        assert cert_a.classify(np.array([2.0, 3.5]), 1e-3) == RegionLabel("R1", 0)

    def test_obstacle_center_unsafe(self, cert_a):
        assert cert_a.classify(np.array([2.0, 2.0]), 1e-3) == RegionLabel("UNSAFE", 0)

    def test_point_on_boundary_sphere_is_band(self, cert_a):
        x = sphere_point(cert_a, 0, 1.3)
        assert abs(cert_a.B(0, x) - cert_a.L(x)) < 1e-10
        assert cert_a.classify(x, 1e-3) == RegionLabel("R3", 0)

    def test_partition_with_tiny_band(self, cert_a):
        rng = np.random.default_rng(3)
        counts = {"R1": 0, "R2": 0, "R3": 0, "UNSAFE": 0}
        for _ in range(4000):
            x = rng.uniform(-5, 5, size=2)
            counts[cert_a.classify(x, 1e-12).kind] += 1
        assert counts["R3"] == 0  # measure-zero surface is never hit
        assert counts["R1"] > 0 and counts["R2"] > 0 and counts["UNSAFE"] > 0

    def test_codes_round_trip(self):
        for lab in (RegionLabel("R2"), RegionLabel("R1", 0), RegionLabel("R3", 2),
                    RegionLabel("UNSAFE", 1)):
            assert RegionLabel.from_code(lab.code) == lab


class TestBoundarySphere:
    def test_single_obstacle_sphere(self, cert_a):
        sph = cert_a.boundary_sphere(0)
        assert np.allclose(sph.center, [1.8, 1.8], atol=1e-12)
        assert sph.radius_sq == pytest.approx(2.97, rel=1e-12)

    def test_third_multi_obstacle_sphere(self, cert_b):
        sph = cert_b.boundary_sphere(2)
        assert np.allclose(sph.center, [-36.0 / 19.0, 0.0], atol=1e-12)
        assert sph.radius_sq == pytest.approx((19 * 27.2 - 18 * 4) / 361, rel=1e-12)
        assert sph.radius_sq == pytest.approx(1.2322, abs=1e-4)

    def test_large_eta1_center_approaches_obstacle_center(self):
        ob = ObstacleSpec(center=np.array([2.0, 2.0]), radius_sq=2.0)
        pa = ObstacleParams.resolve(ob, eta1=1e6, c1=[1.0, 1.0], w=1.0)
        cfg = builtin_scenario("linear2d_single")
        import dataclasses
        cert = Certificate(dataclasses.replace(cfg, params=(pa,)))
        assert np.allclose(cert.boundary_sphere(0).center, ob.center, atol=1e-4)

    def test_sphere_identity_b_equals_l(self, cert_a):
        # every point with B = L lies on the sphere, and conversely
        rng = np.random.default_rng(11)
        sph = cert_a.boundary_sphere(0)
        for _ in range(300):
            x = sphere_point(cert_a, 0, rng.uniform(0, 2 * math.pi))
            assert abs(cert_a.B(0, x) - cert_a.L(x)) <= 1e-12 * max(1.0, cert_a.L(x))
            assert float((x - sph.center) @ (x - sph.center)) == pytest.approx(
                sph.radius_sq, rel=1e-12)


class TestBufferWidth:
    def test_single_obstacle_value(self, cert_a):
        assert cert_a.buffer_width(0) == pytest.approx(0.3, rel=1e-15)

    def test_radius_identity(self, cert_a):
        ob = cert_a.config.obstacles[0]
        bw = cert_a.buffer_width(0)
        rbar = cert_a.boundary_sphere(0).radius_sq
        inner = (ob.radius + ob.center_norm / (1 + 9.0)) ** 2
        assert inner + bw * bw == pytest.approx(rbar, rel=1e-12)

    def test_identity_randomized(self):
        import dataclasses
        rng = np.random.default_rng(23)
        base = builtin_scenario("linear2d_single")
        for _ in range(100):
            d = rng.normal(size=2)
            c = d / np.linalg.norm(d) * rng.uniform(1.5, 4.0)
            r = rng.uniform(0.1, 0.5 * float(c @ c))
            ob = ObstacleSpec(center=c, radius_sq=r)
            eta1 = eta1_lower_bound(ob) * rng.uniform(1.05, 3.0)
            w = w_upper_bound(eta1, ob) * rng.uniform(0.05, 0.95)
            pa = ObstacleParams.resolve(ob, eta1=eta1, c1=[1.0, 1.0], w=w)
            cert = Certificate(dataclasses.replace(base, obstacles=(ob,), params=(pa,)))
            bw = cert.buffer_width(0)
            inner = (ob.radius + ob.center_norm / (1 + eta1)) ** 2
            assert inner + bw * bw == pytest.approx(
                cert.boundary_sphere(0).radius_sq, rel=1e-12)

    def test_zero_buffer_limit(self):
        ob = ObstacleSpec(center=np.array([2.0, 2.0]), radius_sq=2.0)
        w = 1e-10
        pa = ObstacleParams.resolve(ob, eta1=9.0, c1=[1.0, 1.0], w=w)
        import dataclasses
        cert = Certificate(dataclasses.replace(
            builtin_scenario("linear2d_single"), obstacles=(ob,), params=(pa,)))
        assert cert.buffer_width(0) == pytest.approx(math.sqrt(w / 10.0), rel=1e-9)

    def test_no_positive_buffer_error(self):
        ob = ObstacleSpec(center=np.array([2.0, 2.0]), radius_sq=2.0)
        pa = ObstacleParams(eta1=9.0, eta2=9.0 * 2.0 + 18.0 - 0.5, c1=np.array([1.0, 1.0]))
        import dataclasses
        cert = Certificate(dataclasses.replace(
            builtin_scenario("linear2d_single"), obstacles=(ob,), params=(pa,)))
        with pytest.raises(ScenarioError, match="no positive buffer"):
            cert.buffer_width(0)


class TestPhi:
    def test_single_obstacle_value(self, cert_a):
        assert cert_a.phi(0) == pytest.approx(3.51, rel=1e-12)
        # the published rounded figure
        assert cert_a.phi(0) == pytest.approx(3.50, abs=0.02)

    def test_second_multi_obstacle_value(self, cert_b):
        assert cert_b.phi(1) == pytest.approx((19 * 8 - 22.7) / 20, rel=1e-12)
        assert cert_b.phi(1) == pytest.approx(6.465, abs=1e-10)

    def test_vanishes_at_eta2_upper_bound(self):
        ob = ObstacleSpec(center=np.array([2.0, 2.0]), radius_sq=2.0)
        pa = ObstacleParams(eta1=9.0, eta2=9.0 * 8.0 - 1e-6, c1=np.array([1.0, 1.0]))
        import dataclasses
        cert = Certificate(dataclasses.replace(
            builtin_scenario("linear2d_single"), obstacles=(ob,), params=(pa,)))
        assert 0 < cert.phi(0) < 1e-6


class TestContactPoints:
    def test_published_values(self, cert_a):
        a, b = cert_a.contact_points_2d(0)
        assert np.allclose(a, [1.87, 0.08], atol=0.02)
        assert np.allclose(b, [0.08, 1.87], atol=0.02)

    def test_substitution_oracle(self, cert_a):
        phi = cert_a.phi(0)
        sph = cert_a.boundary_sphere(0)
        for p in cert_a.contact_points_2d(0):
            assert abs(cert_a.L(p) - phi) < 1e-9
            assert abs(float((p - sph.center) @ (p - sph.center)) - sph.radius_sq) < 1e-9
            assert abs(cert_a.L(p) - float(p @ sph.center)) < 1e-9
            assert cert_a.contact_condition(0, p, tol=1e-9)

    def test_axis_obstacle_symmetry(self):
        ob = ObstacleSpec(center=np.array([3.0, 0.0]), radius_sq=1.0)
        pa = ObstacleParams.resolve(ob, eta1=8.0, c1=[1.0, 1.0], w=0.5)
        import dataclasses
        cert = Certificate(dataclasses.replace(
            builtin_scenario("linear2d_single"), obstacles=(ob,), params=(pa,)))
        a, b = cert.contact_points_2d(0)
        assert a[0] == pytest.approx(b[0], rel=1e-12)
        assert a[1] == pytest.approx(-b[1], rel=1e-12)

    def test_dimension_error(self, cert_a):
        import dataclasses
        cfg3 = dataclasses.replace(
            cert_a.config,
            state_box=np.array([[-5.0, 5.0]] * 3),
            obstacles=(ObstacleSpec(center=np.array([2.0, 2.0, 0.0]), radius_sq=2.0),),
            initial_states=())
        with pytest.raises(ScenarioError, match="n = 2"):
            Certificate(cfg3).contact_points_2d(0)


class TestShrunkBand:
    def find_sphere_point_with_norm_sq(self, cert, i, target):
        """Bisect the sphere angle until ||x||^2 hits the target."""
        lo, hi = math.pi, 1.5 * math.pi  # lower-left arc, monotone in angle
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if cert.L(sphere_point(cert, i, mid)) > target:
                lo = mid
            else:
                hi = mid
        return sphere_point(cert, i, 0.5 * (lo + hi))

    def test_sphere_point_below_phi_is_inside(self, cert_a):
        x = self.find_sphere_point_with_norm_sq(cert_a, 0, 1.0)
        assert cert_a.L(x) == pytest.approx(1.0, abs=1e-9)
        assert cert_a.in_shrunk_band(x, 0, 1e-3)

    def test_contact_point_is_boundary(self, cert_a):
        assert not cert_a.in_shrunk_band(np.array([1.87, 0.08]), 0, 1e-3)

    def test_far_point_not_in_band(self, cert_a):
        assert not cert_a.in_shrunk_band(np.array([5.0, 5.0]), 0, 1e-3)


class TestCertificateInvariants:
    def test_positive_definite_and_max_structure(self, cert_a):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-5, 5, size=(10_000, 2))
        for x in pts:
            v = cert_a.V(x)
            L = cert_a.L(x)
            b = float(np.max(cert_a.B_values(x)))
            assert v >= 0.0
            assert (v >= L) == True  # noqa: E712 - v is max(L, ...)
            assert (v > L) == (b > L)
            if not np.allclose(x, 0.0):
                assert v > 0.0
        assert cert_a.V(np.zeros(2)) == 0.0

    def test_unsafe_ball_level_floor(self, cert_a):
        # inside the ball, V = B and stays above eta2 - eta1*r > 0
        rng = np.random.default_rng(6)
        ob = cert_a.config.obstacles[0]
        floor = 36.9 - 9.0 * ob.radius_sq
        assert floor > 0
        for _ in range(2000):
            d = rng.normal(size=2)
            d *= rng.uniform(0, ob.radius) / np.linalg.norm(d)
            x = ob.center + d
            assert cert_a.V(x) == pytest.approx(cert_a.B(0, x), rel=1e-12)
            assert cert_a.V(x) > floor - 1e-9

    def test_min_dists_sign_tracks_safety(self, cert_b):
        rng = np.random.default_rng(8)
        for _ in range(2000):
            x = rng.uniform(-5, 5, size=2)
            md = cert_b.min_dists(x)
            unsafe = cert_b.unsafe_index(x)
            assert (unsafe is not None) == bool(np.any(md < 0))

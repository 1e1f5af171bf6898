"""Generalized-derivative evaluation, grid certification, trajectory checks."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from conftest import max_v_step_increase
from nclbf.certificate import RegionLabel
from nclbf.controller import RegionMemory, make_controller
from nclbf.scenario import builtin_scenario
from nclbf.simulator import StepSample, TrajectoryRecord, simulate
from nclbf.verify import (grid_decrease_check, trajectory_invariants,
                          upper_derivative)


@pytest.fixture(scope="module")
def ctrl_a():
    return make_controller(builtin_scenario("linear2d_single"))


class TestUpperDerivative:
    def test_barrier_branch_matches_gain_identity(self, ctrl_a):
        x = np.array([2.0, 3.2])
        u = ctrl_a.kappa1(0, x)
        d = upper_derivative(ctrl_a, x, u)
        assert d.d_value == pytest.approx(-20.0 * 14.24, rel=1e-9)
        assert d.d_value == pytest.approx(-284.8, rel=1e-9)

    def test_stabilizer_branch_matches_sontag_identity(self, ctrl_a):
        x = np.array([1.0, 0.0])
        u = ctrl_a.kappa2(x)
        d = upper_derivative(ctrl_a, x, u)
        assert d.region == RegionLabel("R2")
        assert d.d_value == pytest.approx(-math.sqrt(4.0 + 1.6), rel=1e-12)

    def test_band_without_memory_is_max_of_branches(self, ctrl_a):
        cert = ctrl_a.cert
        sph = cert.boundary_sphere(0)
        x = sph.center + sph.radius * np.array([math.cos(2.2), math.sin(2.2)])
        u = np.array([0.3, -0.4])
        d = upper_derivative(ctrl_a, x, u, memory=None)
        F = ctrl_a.system.f(x) + ctrl_a.system.g(x) @ u
        d1 = float(cert.grad_B(0, x) @ F)
        d2 = float(cert.grad_L(x) @ F)
        assert d.d_value == pytest.approx(max(d1, d2), rel=1e-12)
        assert d.d_value == pytest.approx(0.5 * (d1 + d2) + 0.5 * abs(d1 - d2), rel=1e-12)

    def test_band_memory_resolution(self, ctrl_a):
        cert = ctrl_a.cert
        sph = cert.boundary_sphere(0)
        x = sph.center + sph.radius * np.array([math.cos(0.7), math.sin(0.7)])
        u = np.array([0.1, 0.2])
        F = ctrl_a.system.f(x) + ctrl_a.system.g(x) @ u
        d1 = float(cert.grad_B(0, x) @ F)
        d2 = float(cert.grad_L(x) @ F)
        got_r1 = upper_derivative(ctrl_a, x, u, RegionMemory(RegionLabel("R1", 0)))
        got_r2 = upper_derivative(ctrl_a, x, u, RegionMemory(RegionLabel("R2")))
        got_r3 = upper_derivative(ctrl_a, x, u, RegionMemory(RegionLabel("R3", 0)))
        assert got_r1.d_value == pytest.approx(d1, rel=1e-12)
        assert got_r2.d_value == pytest.approx(d2, rel=1e-12)
        assert got_r3.d_value == pytest.approx(d2, rel=1e-12)

    def test_components_and_h2(self, ctrl_a):
        x = np.array([4.0, 1.0])
        u = np.array([0.5, 0.5])
        d = upper_derivative(ctrl_a, x, u)
        assert d.h2 == pytest.approx(ctrl_a.cert.B(0, x) - 17.0, rel=1e-12)
        assert set(d.components) == {"B_f", "B_g_u", "L_f", "L_g_u"}


class TestGridDecrease:
    def test_single_obstacle_fixture(self, cfg_a):
        report = grid_decrease_check(cfg_a, resolution=51)
        assert report.passed
        # Sontag gives a constant decrease ratio for this system
        assert report.rho0_star == pytest.approx(math.sqrt(5.6), rel=1e-6)
        assert report.counts["excluded_unsafe"] > 0

    def test_multi_obstacle_fixture(self, cfg_b):
        report = grid_decrease_check(cfg_b, resolution=51)
        assert report.passed
        assert report.rho0_star > 0.0
        assert report.degenerate_ok

    def test_degenerate_gain_fails(self, cfg_a):
        ctrl = make_controller(cfg_a)
        ctrl.c1[0] = np.zeros(2)  # force the rejected-upstream degenerate case
        report = grid_decrease_check(cfg_a, resolution=31, controller=ctrl)
        assert not report.passed
        assert report.rho0_star <= 0.0
        # the worst point sits on the barrier side, where the decrease is
        # proportional to the (now zero) gain sum
        wp = np.asarray(report.worst_point)
        assert ctrl.cert.classify(wp, cfg_a.integrator.eps_band).kind in ("R1", "R3")

    def test_resolution_floor(self, cfg_a):
        with pytest.raises(ValueError):
            grid_decrease_check(cfg_a, resolution=5)


class TestTrajectoryInvariants:
    def test_single_obstacle_run_passes_all(self, cfg_a, records_a):
        report = trajectory_invariants(records_a[(5.0, 5.0)], cfg_a)
        assert report.passed
        assert len(report.checks) == 4
        assert report.fd_constant >= 0.0

    def test_corrupted_record_fails_safety(self, cfg_a, records_a):
        rec = records_a[(5.0, 2.0)]
        bad = rec.samples[100]
        inside = np.array([2.0, 2.0])
        from nclbf.certificate import Certificate
        cert = Certificate(cfg_a)
        corrupted = StepSample(t=bad.t, x=inside, u=bad.u, V=cert.V(inside),
                               region=RegionLabel("UNSAFE", 0), law="-",
                               min_dist=cert.min_dists(inside))
        doctored = TrajectoryRecord(
            samples=rec.samples[:100] + (corrupted,) + rec.samples[101:],
            outcome=rec.outcome)
        report = trajectory_invariants(doctored, cfg_a)
        safety = next(c for c in report.checks if c.name.startswith("safety"))
        assert not safety.passed

    def test_multi_obstacle_run_reports_attracting_surface(self, cfg_b, records_b):
        # The (2,5) run crosses an attracting patch of obstacle 2's surface
        # where every admissible input yields dV/dt ~ +1.4, and later rides
        # obstacle 1's sphere well below phi (the drift keeps pushing inward
        # there, so the "bounce back" premise fails).  The checks report both
        # honestly while safety holds throughout; see the README's discussion.
        report = trajectory_invariants(records_b[(2.0, 5.0)], cfg_b)
        names = {c.name: c for c in report.checks}
        assert names[[n for n in names if n.startswith("safety")][0]].passed
        decrease = names[[n for n in names if "certificate decrease" in n][0]]
        assert not decrease.passed
        assert "0.0013" in decrease.detail or "0.0014" in decrease.detail
        band = names[[n for n in names if "shrunk-band" in n][0]]
        assert not band.passed

    def test_other_multi_obstacle_runs_decrease(self, cfg_b, records_b):
        for x0, rec in records_b.items():
            if x0 == (2.0, 5.0):
                continue
            assert max_v_step_increase(rec, cfg_b.integrator.eps_conv) <= 1e-6

    def test_fd_residual_bound_halves_with_dt(self, cfg_a):
        # the residual bound is C*dt with C a per-run constant, so halving dt
        # halves the bound while C itself stays of the same order
        rec1 = simulate(cfg_a, np.array([5.0, 2.0]))
        c1 = trajectory_invariants(rec1, cfg_a).fd_constant
        cfg_half = dataclasses.replace(
            cfg_a, integrator=dataclasses.replace(cfg_a.integrator, dt=5e-4))
        rec2 = simulate(cfg_half, np.array([5.0, 2.0]))
        c2 = trajectory_invariants(rec2, cfg_half).fd_constant
        assert c1 > 0.0
        bound1 = c1 * cfg_a.integrator.dt
        bound2 = c2 * cfg_half.integrator.dt
        assert bound2 <= 0.65 * bound1
        assert 0.5 * c1 <= c2 <= 2.0 * c1

    def test_empty_record_rejected(self, cfg_a):
        with pytest.raises(ValueError):
            trajectory_invariants(TrajectoryRecord(samples=(), outcome=None), cfg_a)

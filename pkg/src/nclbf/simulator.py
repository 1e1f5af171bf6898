"""Closed-loop simulation: fixed-step RK4, safety/convergence monitoring.

Samples are recorded on the fixed dt grid.  Between samples the engine
integrates the piecewise-smooth closed loop exactly enough for the
certificate to behave as the theory prescribes:

* away from the surface max_i B_i = L the control is held over the step
  (zero-order hold) and the step is bisected to end on the surface whenever
  the held flow crosses it;
* on the surface, when the stabilizer pushes inward and the barrier law
  pushes outward, the flow slides.  The engine applies the equivalent
  control: the stabilizer kappa2 corrected through the input channel so the
  surface is tracked from just below (the state stays in the band, the
  recorded samples classify R3, and V equals L).  Where the corrected
  stabilizer field vanishes (head-on approach along the obstacle axis, where
  the barrier and stabilizer gradients are collinear) the rate-matched
  kappa1/kappa2 blend supplies the tangential tie-break, which carries the
  c1 weighting and breaks the symmetry exactly as the barrier law does.

Sliding ends where the stabilizer field stops pushing inward, which is the
tangency (contact-point) condition; the state then peels off toward the
origin.  Runs are deterministic: repeated simulation of the same scenario is
bit-identical.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .certificate import RegionLabel
from .controller import Controller, RegionMemory, make_controller
from .scenario import ScenarioConfig, _admissible
from .systems import ControlAffineSystem, resolve_system


class NumericBlowupError(RuntimeError):
    """Integration produced a non-finite state."""


def _rk4(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray,
         dt: float, f0: np.ndarray | None = None,
         g0: np.ndarray | None = None) -> np.ndarray:
    f, g = system.f, system.g
    if f0 is None:
        k1 = f(x) + g(x) @ u
    else:
        k1 = f0 + g0 @ u
    x2 = k1 * (0.5 * dt)
    x2 += x
    k2 = f(x2) + g(x2) @ u
    x3 = k2 * (0.5 * dt)
    x3 += x
    k3 = f(x3) + g(x3) @ u
    x4 = k3 * dt
    x4 += x
    k4 = f(x4) + g(x4) @ u
    acc = k2
    acc += k3
    acc *= 2.0
    acc += k1
    acc += k4
    acc *= dt / 6.0
    acc += x
    return acc


def rk4_step(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray,
             dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of xdot = f(x) + g(x) u, u held fixed."""
    out = _rk4(system, np.asarray(x, float), np.asarray(u, float), dt)
    if not np.all(np.isfinite(out)):
        raise NumericBlowupError(f"non-finite state after step from {x!r}")
    return out


@dataclass(frozen=True)
class StepSample:
    t: float
    x: np.ndarray
    u: np.ndarray
    V: float
    region: RegionLabel
    law: str
    min_dist: np.ndarray


@dataclass(frozen=True)
class Outcome:
    kind: str                  # converged | timeout | safety_violation | init_rejected | numeric_blowup
    t: float | None = None
    obstacle: int | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.t is not None:
            d["t"] = self.t
        if self.obstacle is not None:
            d["obstacle"] = self.obstacle
        return d


@dataclass(frozen=True)
class TrajectoryRecord:
    samples: tuple[StepSample, ...]
    outcome: Outcome | None


@dataclass(frozen=True)
class SimulationSummary:
    runs: tuple[dict, ...]
    wall_time_s: float

    def to_dict(self) -> dict:
        return {"runs": list(self.runs), "wall_time_s": self.wall_time_s}


# ---------------------------------------------------------------------------
# Event/sliding engine
# ---------------------------------------------------------------------------

_SLIDE_RAMP = 1e-6        # band-target deepening per dt/4 of slide time
_SADDLE_SPEED = 1e-2      # below this projected speed, use the blend tie-break
_SUB_MIN_FRACTION = 64.0  # smallest slide substep is dt/64


@dataclass
class _SlideState:
    active: bool = False
    i: int = -1
    h_tgt: float = 0.0
    sub: float = 0.0
    alpha: float = 0.0        # warm start for the pinning correction


class _Engine:
    """Integrates one scenario; per-run state lives in the caller."""

    def __init__(self, config: ScenarioConfig, system: ControlAffineSystem,
                 controller: Controller | None = None):
        self.config = config
        self.system = system
        self.ctrl = controller if controller is not None else make_controller(config, system)
        self.cert = self.ctrl.cert
        self.dt = config.integrator.dt
        self.eps_band = config.integrator.eps_band
        self.h_floor = -0.25 * self.eps_band
        self.centers = self.cert.centers
        self.eta1 = self.cert.eta1
        self.eta2 = self.cert.eta2
        self.radii_sq = self.cert.radii_sq
        self.radii = self.cert.radii
        nobs = config.n_obstacles
        self._lab_r2 = RegionLabel("R2")
        self._lab_r1 = tuple(RegionLabel("R1", j) for j in range(nobs))
        self._lab_r3 = tuple(RegionLabel("R3", j) for j in range(nobs))
        self._lab_unsafe = tuple(RegionLabel("UNSAFE", j) for j in range(nobs))
        self._rsq_list = tuple(float(v) for v in self.radii_sq)
        # scalar fast path for the planar case (the hot loop is Python-bound)
        self._fast2 = config.n == 2
        self._cxy = tuple((float(c[0]), float(c[1])) for c in self.centers)
        self._e1l = tuple(float(v) for v in self.eta1)
        self._e2l = tuple(float(v) for v in self.eta2)

    def _h_dd(self, x: np.ndarray) -> tuple[int, float, np.ndarray]:
        """Dominant obstacle, its B - L value, and squared center distances."""
        if self._fast2:
            a, c = float(x[0]), float(x[1])
            best_i, best_b = 0, -math.inf
            dds = []
            for j, (cx, cy) in enumerate(self._cxy):
                d0 = a - cx
                d1 = c - cy
                ddj = d0 * d0 + d1 * d1
                dds.append(ddj)
                bj = self._e2l[j] - self._e1l[j] * ddj
                if bj > best_b:
                    best_b, best_i = bj, j
            return best_i, best_b - (a * a + c * c), np.array(dds)
        d = x - self.centers
        dd = np.einsum("ij,ij->i", d, d)
        b = self.eta2 - self.eta1 * dd
        i = int(np.argmax(b))
        return i, float(b[i]) - float(x @ x), dd

    def label_of(self, i: int, h: float, unsafe: int | None) -> RegionLabel:
        if unsafe is not None:
            return self._lab_unsafe[unsafe]
        if h > self.eps_band:
            return self._lab_r1[i]
        if -h > self.eps_band:
            return self._lab_r2
        return self._lab_r3[i]

    def _h(self, x: np.ndarray) -> tuple[int, float]:
        if self._fast2:
            a, c = float(x[0]), float(x[1])
            best_i, best_b = 0, -math.inf
            for j, (cx, cy) in enumerate(self._cxy):
                d0 = a - cx
                d1 = c - cy
                bj = self._e2l[j] - self._e1l[j] * (d0 * d0 + d1 * d1)
                if bj > best_b:
                    best_b, best_i = bj, j
            return best_i, best_b - (a * a + c * c)
        d = x - self.centers
        b = self.eta2 - self.eta1 * np.einsum("ij,ij->i", d, d)
        i = int(np.argmax(b))
        return i, float(b[i]) - float(x @ x)

    def _hdot(self, i: int, x: np.ndarray, u: np.ndarray) -> float:
        gh = self.cert.grad_B(i, x) - 2.0 * x
        return float(gh @ (self.system.f(x) + self.system.g(x) @ u))

    def _locate(self, x: np.ndarray, u: np.ndarray, span: float, h0: float) -> float:
        """Bisect tau in (0, span] where the held flow crosses the surface."""
        lo, hi = 0.0, span
        pos0 = h0 > 0.0
        for _ in range(70):
            mid = 0.5 * (lo + hi)
            _, hm = self._h(_rk4(self.system, x, u, mid))
            if (hm > 0.0) == pos0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * span:
                break
        return hi

    def _pinned(self, x: np.ndarray, i: int, nominal: np.ndarray, h_tgt: float,
                tau: float, warm: float) -> tuple[np.ndarray, float] | None:
        """nominal + alpha*w through g, with alpha solved so h(end) = h_tgt."""
        gh = self.cert.grad_B(i, x) - 2.0 * x
        hg = gh @ self.system.g(x)
        n2 = float(hg @ hg)
        if n2 < 1e-18:
            return None
        w = hg / n2
        ci, ei1, ei2 = self.centers[i], self.eta1[i], self.eta2[i]

        def h_end(alpha: float) -> float:
            xe = _rk4(self.system, x, nominal + alpha * w, tau)
            d = xe - ci
            return float(ei2 - ei1 * (d @ d) - xe @ xe)

        a = warm
        fa = h_end(a) - h_tgt
        b = a + max(1e-8, 1e-3 * abs(a))
        fb = h_end(b) - h_tgt
        for _ in range(25):
            if fb == fa:
                break
            c = b - fb * (b - a) / (fb - fa)
            fc = h_end(c) - h_tgt
            a, fa, b, fb = b, fb, c, fc
            if abs(fb) <= 1e-13 * (1.0 + abs(h_tgt)):
                break
        if not math.isfinite(b) or abs(fb) > 1e-6:
            return None
        return nominal + b * w, b

    def _slide_nominal(self, x: np.ndarray, i: int) -> np.ndarray | None:
        """Surface nominal: projected kappa2, or the rate blend at saddles.

        Returns None when the stabilizer no longer pushes inward (tangency:
        the slide is over).
        """
        f0 = self.system.f(x)
        g0 = self.system.g(x)
        gh = self.cert.grad_B(i, x) - 2.0 * x
        hg = gh @ g0
        n2 = float(hg @ hg)
        if n2 < 1e-18:
            return None
        u2 = self.ctrl.kappa2(x)
        hd2 = float(gh @ (f0 + g0 @ u2))
        if hd2 <= 0.0:
            return None
        w = hg / n2
        ua = u2 - hd2 * w  # kappa2 projected onto the surface through g
        xa = f0 + g0 @ ua
        vda = 2.0 * float(x @ xa)
        speed_a = math.sqrt(float(xa @ xa))

        u1 = self.ctrl.kappa1(i, x)
        hd1 = float(gh @ (f0 + g0 @ u1))
        if hd1 < 0.0:
            lam = hd2 / (hd2 - hd1)
            ub = lam * u1 + (1.0 - lam) * u2
            xb = f0 + g0 @ ub
            vdb = 2.0 * float(x @ xb)
            tie = 1e-9 * (1.0 + abs(vda))
            if vdb < vda - tie or (abs(vdb - vda) <= tie and speed_a < _SADDLE_SPEED):
                return ub
        return ua

    def advance(self, x: np.ndarray, i: int, h: float, dd: np.ndarray,
                mem: RegionMemory, slide: _SlideState, forced_k1: int):
        """Integrate one recorded step.

        Returns (x_next, i_next, h_next, dd_next, u_first, law_first, forced);
        the (i, h, dd) triple describes x_next so the caller can build the
        next sample without re-evaluating the barriers.
        """
        remaining = self.dt
        sub_min = self.dt / _SUB_MIN_FRACTION
        u_first: np.ndarray | None = None
        law_first: str | None = None
        cur_valid = True
        while remaining > 1e-15 * self.dt:
            if not cur_valid:
                i, h, dd = self._h_dd(x)
                cur_valid = True
            if slide.active:
                if slide.i != i:
                    slide.active = False
                    continue
                nominal = self._slide_nominal(x, i)
                if nominal is None:
                    slide.active = False
                    continue
                tau = min(remaining, slide.sub)
                slide.h_tgt = max(slide.h_tgt - _SLIDE_RAMP * (4.0 * tau / self.dt),
                                  self.h_floor)
                pin = self._pinned(x, i, nominal, slide.h_tgt, tau, slide.alpha)
                if pin is None:
                    if slide.sub > sub_min:
                        slide.sub = max(slide.sub * 0.5, sub_min)
                        continue
                    slide.active = False
                    continue
                u, slide.alpha = pin
                if u_first is None:
                    u_first, law_first = u, f"K3:{i + 1}>K2"
                x = _rk4(self.system, x, u, tau)
                remaining -= tau
                slide.sub = min(slide.sub * 2.0, self.dt)
                cur_valid = False
                continue

            f0 = self.system.f(x)
            g0 = self.system.g(x)
            if forced_k1 == i and abs(h) <= self.eps_band:
                u, law = self.ctrl.kappa1(i, x, f0, g0), f"K1:{i + 1}"
            else:
                forced_k1 = -1
                dec = self.ctrl.dispatch(self.label_of(i, h, None), x, mem, f0, g0)
                u, law = dec.u, dec.law
            if u_first is None:
                u_first, law_first = u, law

            x_try = _rk4(self.system, x, u, remaining, f0, g0)
            i_try, h_try, dd_try = self._h_dd(x_try)
            if (h > 0.0) == (h_try > 0.0) or h == 0.0:
                x, i, h, dd = x_try, i_try, h_try, dd_try
                remaining = 0.0
                continue
            tau = self._locate(x, u, remaining, h)
            x = _rk4(self.system, x, u, tau)
            remaining -= tau
            i, h, dd = self._h_dd(x)
            hd2 = self._hdot(i, x, self.ctrl.kappa2(x))
            hd1 = self._hdot(i, x, self.ctrl.kappa1(i, x))
            if hd2 > 0.0 > hd1:
                slide.active = True
                slide.i = i
                slide.h_tgt = min(h, 0.0)
                slide.sub = self.dt / 4.0
                slide.alpha = 0.0
                forced_k1 = -1
            elif hd2 > 0.0 and hd1 >= 0.0:
                # both fields point inward: the flow properly enters the
                # barrier region, where kappa1 governs
                forced_k1 = i
            else:
                forced_k1 = -1
        if not cur_valid:
            i, h, dd = self._h_dd(x)
        if u_first is None:
            u_first, law_first = np.zeros(self.system.m), "-"
        return x, i, h, dd, u_first, law_first, forced_k1


# ---------------------------------------------------------------------------
# Public simulation entry points
# ---------------------------------------------------------------------------

def simulate(config: ScenarioConfig, x0: np.ndarray,
             system: ControlAffineSystem | None = None,
             override_init: bool = False) -> TrajectoryRecord:
    """Run the closed loop from x0 until convergence, timeout, or violation."""
    sys_ = system if system is not None else resolve_system(config)
    engine = _Engine(config, sys_)
    return _run(engine, np.asarray(x0, float), override_init)


def _run(engine: _Engine, x0: np.ndarray, override_init: bool) -> TrajectoryRecord:
    config = engine.config
    integ = config.integrator
    eps_conv_sq = integ.eps_conv ** 2
    ok, _why = _admissible(config, x0)
    if not ok and not override_init:
        return TrajectoryRecord(samples=(), outcome=Outcome("init_rejected"))

    n_steps = int(round(integ.t_max / integ.dt))
    x = x0.copy()
    mem = RegionMemory(prev=engine.cert.classify(x, integ.eps_band))
    slide = _SlideState()
    forced_k1 = -1
    samples: list[StepSample] = []
    m = engine.system.m
    zeros_u = np.zeros(m)

    def push(t, xs, u, V, region, law, mind):
        samples.append(StepSample(t=t, x=xs, u=np.asarray(u, float), V=V,
                                  region=region, law=law, min_dist=mind))

    outcome: Outcome | None = None
    k = 0
    i, h, dd = engine._h_dd(x)
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            t = k * integ.dt
            L = float(x @ x)
            V = L + h if h > 0.0 else L
            mind = np.sqrt(dd) - engine.radii
            unsafe = None
            for j, rsq in enumerate(engine._rsq_list):
                if dd[j] < rsq:
                    unsafe = j
                    break
            region = engine.label_of(i, h, unsafe)
            if unsafe is not None:
                push(t, x, zeros_u, V, region, "-", mind)
                outcome = Outcome("safety_violation", t=t, obstacle=unsafe)
                break
            if L <= eps_conv_sq:
                dec = engine.ctrl.dispatch(region, x, mem)
                push(t, x, dec.u, V, region, dec.law, mind)
                outcome = Outcome("converged", t=t)
                break
            if k >= n_steps:
                dec = engine.ctrl.dispatch(region, x, mem)
                push(t, x, dec.u, V, region, dec.law, mind)
                outcome = Outcome("timeout", t=t)
                break
            x_next, i, h, dd, u_first, law_first, forced_k1 = engine.advance(
                x, i, h, dd, mem, slide, forced_k1)
            push(t, x, u_first, V, region, law_first, mind)
            if not np.all(np.isfinite(x_next)):
                outcome = Outcome("numeric_blowup", t=t)
                break
            mem.prev = region
            x = x_next
            k += 1
    return TrajectoryRecord(samples=tuple(samples), outcome=outcome)


def resolve_workers() -> int:
    """Worker count from NCLBF_THREADS (0 = auto); defaults to 1."""
    raw = os.environ.get("NCLBF_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    if k == 0:
        return os.cpu_count() or 1
    return max(1, k)


def run_batch(config: ScenarioConfig, system: ControlAffineSystem | None = None,
              override_init: bool = False) -> tuple[SimulationSummary, tuple[TrajectoryRecord, ...]]:
    """Simulate every initial state; output order follows input order."""
    sys_ = system if system is not None else resolve_system(config)
    t0 = time.perf_counter()
    workers = resolve_workers()

    def one(x0):
        return simulate(config, x0, system=sys_, override_init=override_init)

    if workers > 1 and len(config.initial_states) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = tuple(ex.map(one, config.initial_states))
    else:
        records = tuple(one(x0) for x0 in config.initial_states)

    runs = []
    for idx, (x0, rec) in enumerate(zip(config.initial_states, records)):
        entry = {"index": idx, "x0": list(map(float, x0)),
                 "outcome": rec.outcome.to_dict() if rec.outcome else None,
                 "n_samples": len(rec.samples)}
        if rec.samples:
            eps = config.integrator.eps_conv
            vs = [s.V for s in rec.samples]
            dv = [b - a for s, (a, b) in zip(rec.samples, zip(vs, vs[1:]))
                  if float(s.x @ s.x) > eps * eps]
            entry["final_norm"] = float(np.linalg.norm(rec.samples[-1].x))
            entry["max_v_increase"] = max(dv) if dv else 0.0
            entry["min_min_dist"] = min(float(np.min(s.min_dist)) for s in rec.samples)
        runs.append(entry)
    return SimulationSummary(runs=tuple(runs), wall_time_s=time.perf_counter() - t0), records


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

def trajectory_header(n: int, m: int, n_obstacles: int) -> list[str]:
    return (["t"] + [f"x{i+1}" for i in range(n)] + [f"u{j+1}" for j in range(m)]
            + ["V", "region", "law"] + [f"mindist{i+1}" for i in range(n_obstacles)])


def write_trajectory_csv(record: TrajectoryRecord, fp) -> None:
    if not record.samples:
        raise ValueError("cannot write an empty trajectory")
    s0 = record.samples[0]
    wr = csv.writer(fp, lineterminator="\n")
    wr.writerow(trajectory_header(len(s0.x), len(s0.u), len(s0.min_dist)))
    for s in record.samples:
        wr.writerow([repr(s.t)] + [repr(float(v)) for v in s.x]
                    + [repr(float(v)) for v in s.u]
                    + [repr(s.V), s.region.code, s.law]
                    + [repr(float(v)) for v in s.min_dist])


def trajectory_csv_text(record: TrajectoryRecord) -> str:
    buf = io.StringIO()
    write_trajectory_csv(record, buf)
    return buf.getvalue()


def read_trajectory_csv(fp) -> TrajectoryRecord:
    rd = csv.reader(fp)
    header = next(rd)
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    nobs = sum(1 for h in header if h.startswith("mindist"))
    samples = []
    for row in rd:
        t = float(row[0])
        x = np.array([float(v) for v in row[1:1 + n]])
        u = np.array([float(v) for v in row[1 + n:1 + n + m]])
        V = float(row[1 + n + m])
        region = RegionLabel.from_code(row[2 + n + m])
        law = row[3 + n + m]
        md = np.array([float(v) for v in row[4 + n + m:4 + n + m + nobs]])
        samples.append(StepSample(t=t, x=x, u=u, V=V, region=region, law=law, min_dist=md))
    return TrajectoryRecord(samples=tuple(samples), outcome=None)

"""Control-affine systems xdot = f(x) + g(x) u and sampled structural checks.

Two benchmarks are built in: a decoupled planar linear system and a nonlinear
mechanical system with velocity-dependent damping.  Custom systems register
through the same evaluator interface; no expression parser is provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .certificate import Certificate
from .scenario import ScenarioConfig


@dataclass(frozen=True)
class ControlAffineSystem:
    name: str
    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]


def builtin_linear2d() -> ControlAffineSystem:
    """x1dot = -x1 + u1, x2dot = -x2 + u2."""
    eye = np.eye(2)

    def f(x):
        return -x

    def g(x):
        return eye

    return ControlAffineSystem(name="linear2d", n=2, m=2, f=f, g=g)


def builtin_nonlinear_mech() -> ControlAffineSystem:
    """x1dot = x2; x2dot = -x1 - x2 - (0.8 + 0.2 e^{-100|x2|}) tanh(10 x2) + u."""
    col = np.array([[0.0], [1.0]])

    def f(x):
        x2 = x[1]
        damp = (0.8 + 0.2 * math.exp(-100.0 * abs(x2))) * math.tanh(10.0 * x2)
        return np.array([x2, -x[0] - x2 - damp])

    def g(x):
        return col

    return ControlAffineSystem(name="nonlinear_mech", n=2, m=1, f=f, g=g)


SYSTEMS: dict[str, Callable[[], ControlAffineSystem]] = {
    "linear2d": builtin_linear2d,
    "nonlinear_mech": builtin_nonlinear_mech,
}


def register_system(name: str, factory: Callable[[], ControlAffineSystem]) -> None:
    SYSTEMS[name] = factory


def resolve_system(config: ScenarioConfig) -> ControlAffineSystem:
    try:
        return SYSTEMS[config.system_id]()
    except KeyError:
        raise ValueError(f"unknown system id '{config.system_id}' "
                         f"(registered: {', '.join(sorted(SYSTEMS))})") from None


# ---------------------------------------------------------------------------
# Sampled assumption checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionEntry:
    condition: str
    points_checked: int
    degenerate_points: int
    violations: tuple[tuple[float, ...], ...]
    escape_notes: tuple[tuple[float, ...], ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"condition": self.condition, "points_checked": self.points_checked,
                "degenerate_points": self.degenerate_points,
                "violations": [list(v) for v in self.violations],
                "escape_in_finite_time": [list(v) for v in self.escape_notes],
                "passed": self.passed}


@dataclass(frozen=True)
class AssumptionReport:
    entries: tuple[AssumptionEntry, ...]
    g_min_singular_value: float
    g_full_rank: bool
    fields_finite: bool
    zero_state_detectability: str
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return (all(e.passed for e in self.entries) and self.g_full_rank
                and self.fields_finite)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "entries": [e.to_dict() for e in self.entries],
                "g_min_singular_value": self.g_min_singular_value,
                "g_full_rank": self.g_full_rank,
                "fields_finite": self.fields_finite,
                "zero_state_detectability": self.zero_state_detectability,
                "notes": list(self.notes)}


def _grid(config: ScenarioConfig, resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in config.state_box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def control_row_transversal(system: ControlAffineSystem, row_fn, x: np.ndarray) -> bool:
    """Does the row x -> row_fn(x) change along the drift at x?

    True means the drift carries the state off the row's zero set in finite
    time (finite-difference directional derivative along f).
    """
    fx = system.f(x)
    nf = float(np.linalg.norm(fx))
    if nf == 0.0:
        return False
    h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    step = (h / nf) * fx
    r0, r1 = row_fn(x), row_fn(x + step)
    return float(np.linalg.norm(r1 - r0)) / h > 1e-6


def check_assumptions(system: ControlAffineSystem, config: ScenarioConfig,
                      grid_resolution: int = 101, tol_f: float = 1e-9) -> AssumptionReport:
    """Grid-sampled necessary checks of the drift conditions.

    At grid points where the relevant gradient-control row vanishes (below a
    tolerance scaled to the grid median of its norm), the drift derivative
    must be <= tol_f.  A pointwise failure is downgraded to an informational
    "escapes in finite time" note when the control row's derivative along the
    drift is nonzero there (the trajectory leaves the degenerate set).  These
    are sampled necessary conditions, not proofs; zero-state detectability is
    not decidable by sampling and is reported as such.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    cert = Certificate(config)
    pts = _grid(config, grid_resolution)
    eps_band = config.integrator.eps_band

    fs = np.array([system.f(x) for x in pts])
    gs = [system.g(x) for x in pts]
    svals = np.array([np.linalg.svd(g, compute_uv=False)[-1] for g in gs])
    g_min_sv = float(np.min(svals))
    g_full_rank = g_min_sv > 1e-9
    fields_finite = bool(np.all(np.isfinite(fs))
                         and all(np.all(np.isfinite(g)) for g in gs))

    labels = [cert.classify(x, eps_band) for x in pts]
    entries = []

    def run_condition(name, member, grad, tol_scale_rows):
        norms = np.array([float(np.linalg.norm(r)) for r in tol_scale_rows])
        med = float(np.median(norms[norms > 0])) if np.any(norms > 0) else 1.0
        tol_g = 1e-6 * med
        checked = degenerate = 0
        violations, escapes = [], []
        for k, x in enumerate(pts):
            if not member(labels[k], x):
                continue
            checked += 1
            row = grad(x) @ gs[k]
            if float(np.linalg.norm(row)) > tol_g:
                continue
            degenerate += 1
            drift = float(grad(x) @ fs[k])
            if drift <= tol_f:
                continue
            if control_row_transversal(system, lambda y: grad(y) @ system.g(y), x):
                escapes.append(tuple(x.tolist()) + (drift,))
            else:
                violations.append(tuple(x.tolist()) + (drift,))
        entries.append(AssumptionEntry(condition=name, points_checked=checked,
                                       degenerate_points=degenerate,
                                       violations=tuple(violations),
                                       escape_notes=tuple(escapes)))

    rows_L = [cert.grad_L(x) @ gs[k] for k, x in enumerate(pts)]
    run_condition("grad L . f <= 0 where grad L . g = 0 (in R2 or any band)",
                  lambda lab, x: lab.kind in ("R2", "R3"),
                  cert.grad_L, rows_L)
    for i in range(config.n_obstacles):
        rows_B = [cert.grad_B(i, x) @ gs[k] for k, x in enumerate(pts)]
        run_condition(
            f"grad B[{i}] . f <= 0 where grad B[{i}] . g = 0 (in R1[{i}] or band[{i}])",
            lambda lab, x, i=i: lab.kind in ("R1", "R3") and lab.index == i,
            lambda x, i=i: cert.grad_B(i, x), rows_B)

    notes = []
    if any(e.escape_notes for e in entries):
        notes.append("pointwise drift-positive degenerate points leave the degenerate "
                     "set in finite time (transversal drift); reported informationally")
    return AssumptionReport(
        entries=tuple(entries), g_min_singular_value=g_min_sv, g_full_rank=g_full_rank,
        fields_finite=fields_finite,
        zero_state_detectability="not machine-checked (not decidable by sampling); "
                                 "grid evidence attached",
        notes=tuple(notes))

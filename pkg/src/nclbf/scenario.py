"""Scenario configuration: obstacle geometry, design constants, and file I/O.

A scenario bundles a control-affine system id, ball-shaped unsafe sets, the
per-obstacle barrier constants (eta1, eta2, optional buffer parameter w, input
weights c1), the stabilizer gain gamma, integrator settings, and initial
states.  Configs are immutable after construction and safe to share across
workers.

Scenario files are JSON; see ``save_scenario`` for the schema.  Obstacles are
given by center and *radius* in the file (human units); internally the squared
radius is the primary quantity entering every formula.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
import numpy as np


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObstacleSpec:
    """Open ball of unsafe states: ||x - center|| < sqrt(radius_sq)."""

    center: np.ndarray
    radius_sq: float

    def __post_init__(self):
        object.__setattr__(self, "center", _readonly(self.center))
        object.__setattr__(self, "radius_sq", float(self.radius_sq))
        if self.center.ndim != 1:
            raise ScenarioError("obstacle center must be a flat vector")
        if not np.all(np.isfinite(self.center)) or not math.isfinite(self.radius_sq):
            raise ScenarioError("obstacle center/radius must be finite")
        if self.radius_sq <= 0.0:
            raise ScenarioError("obstacle radius must be positive")
        if self.center_norm_sq <= self.radius_sq:
            raise ScenarioError(
                "origin inside unsafe ball: require ||center||^2 > radius^2 "
                f"(got {self.center_norm_sq:.6g} <= {self.radius_sq:.6g})"
            )

    @classmethod
    def from_radius(cls, center, radius: float) -> "ObstacleSpec":
        return cls(center=np.asarray(center, float), radius_sq=float(radius) ** 2)

    @property
    def radius(self) -> float:
        return math.sqrt(self.radius_sq)

    @property
    def center_norm_sq(self) -> float:
        return float(self.center @ self.center)

    @property
    def center_norm(self) -> float:
        return math.sqrt(self.center_norm_sq)

    def max_L_over_closure(self) -> float:
        """Largest ||x||^2 over the closed ball: (||c|| + sqrt(r))^2.

        Expanded as ||c||^2 + r + 2*sqrt(||c||^2 * r) so that the common case
        of a perfect-square product evaluates exactly in floating point.
        """
        cc = self.center_norm_sq
        return cc + self.radius_sq + 2.0 * math.sqrt(cc * self.radius_sq)


def eta1_lower_bound(obstacle: ObstacleSpec) -> float:
    """(||c|| + sqrt(r)) / (||c|| - sqrt(r)); requires the origin outside."""
    c, s = obstacle.center_norm, obstacle.radius
    return (c + s) / (c - s)


def w_upper_bound(eta1: float, obstacle: ObstacleSpec) -> float:
    """Admissible buffer range is 0 < w < eta1*(||c||^2 - r) - (||c||+sqrt(r))^2."""
    return eta1 * (obstacle.center_norm_sq - obstacle.radius_sq) - obstacle.max_L_over_closure()


def derive_eta2(eta1: float, obstacle: ObstacleSpec, w: float) -> float:
    """eta2 = eta1*r + max_{closure} ||x||^2 + w, with bound checks.

    Raises ScenarioError naming the violated inequality when (eta1, w) fall
    outside their admissible ranges for this obstacle.
    """
    lb = eta1_lower_bound(obstacle)
    if eta1 < lb:
        raise ScenarioError(
            f"eta1 violates eta1 >= (||c||+sqrt(r))/(||c||-sqrt(r)) = {lb:.6g} (got {eta1:.6g})"
        )
    wub = w_upper_bound(eta1, obstacle)
    if not (0.0 < w < wub):
        raise ScenarioError(
            f"w violates 0 < w < eta1*(||c||^2-r) - (||c||+sqrt(r))^2 = {wub:.6g} (got {w:.6g})"
        )
    return eta1 * obstacle.radius_sq + obstacle.max_L_over_closure() + w


# Relative agreement required when a config gives both w and eta2.
ETA2_CONSISTENCY_RTOL = 1e-9


@dataclass(frozen=True)
class ObstacleParams:
    """Barrier constants for one obstacle: B = eta2 - eta1*||x - c||^2."""

    eta1: float
    eta2: float
    c1: np.ndarray
    w: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "c1", _readonly(self.c1))
        object.__setattr__(self, "eta1", float(self.eta1))
        object.__setattr__(self, "eta2", float(self.eta2))
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ScenarioError("eta1 and eta2 must be positive")
        if self.c1.ndim != 1 or np.any(self.c1 <= 0):
            raise ScenarioError("c1 must be a vector of positive entries")

    @classmethod
    def resolve(cls, obstacle: ObstacleSpec, eta1: float, c1,
                w: float | None = None, eta2: float | None = None) -> "ObstacleParams":
        """Build params from (eta1, w), (eta1, eta2), or both (must agree)."""
        if w is None and eta2 is None:
            raise ScenarioError("params need w or eta2 (or both)")
        if w is not None:
            derived = derive_eta2(eta1, obstacle, w)
            if eta2 is None:
                eta2 = derived
            elif abs(eta2 - derived) > ETA2_CONSISTENCY_RTOL * max(abs(eta2), abs(derived)):
                raise ScenarioError(
                    f"eta2 = {eta2!r} disagrees with eta1/w-derived value {derived!r} "
                    f"beyond {ETA2_CONSISTENCY_RTOL:g} relative"
                )
        return cls(eta1=float(eta1), eta2=float(eta2), c1=np.asarray(c1, float), w=w)

    def effective_w(self, obstacle: ObstacleSpec) -> float:
        """w recovered from eta2 when not given explicitly."""
        if self.w is not None:
            return self.w
        return self.eta2 - self.eta1 * obstacle.radius_sq - obstacle.max_L_over_closure()


@dataclass(frozen=True)
class ControllerGains:
    gamma: float

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ScenarioError("gamma must be positive")


@dataclass(frozen=True)
class IntegratorSettings:
    dt: float = 1e-3
    t_max: float = 20.0
    eps_conv: float = 1e-2
    eps_band: float = 1e-3

    def __post_init__(self):
        if not (0 < self.dt < self.t_max):
            raise ScenarioError("require 0 < dt < t_max")
        if self.eps_conv <= 0 or self.eps_band <= 0:
            raise ScenarioError("eps_conv and eps_band must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    """Immutable scenario: system id, state box, obstacles, params, gains."""

    system_id: str
    state_box: np.ndarray            # (n, 2) per-axis [lo, hi]; advisory
    obstacles: tuple[ObstacleSpec, ...]
    params: tuple[ObstacleParams, ...]
    gains: ControllerGains
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    initial_states: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "state_box", _readonly(self.state_box))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "initial_states", tuple(_readonly(x) for x in self.initial_states))
        if self.state_box.ndim != 2 or self.state_box.shape[1] != 2:
            raise ScenarioError("state_box must have shape (n, 2)")
        n = self.n
        if len(self.obstacles) != len(self.params):
            raise ScenarioError("obstacles and params lists must have the same length")
        if not self.obstacles:
            raise ScenarioError("at least one obstacle is required")
        for ob in self.obstacles:
            if ob.center.shape != (n,):
                raise ScenarioError(f"obstacle center dimension {ob.center.shape[0]} != state dimension {n}")
        for x0 in self.initial_states:
            if x0.shape != (n,):
                raise ScenarioError(f"initial state dimension {x0.shape[0]} != state dimension {n}")
            if not np.all(np.isfinite(x0)):
                raise ScenarioError("initial states must be finite")

    @property
    def n(self) -> int:
        return self.state_box.shape[0]

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)


# ---------------------------------------------------------------------------
# Parameter validation report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    value: float
    bound: float
    slack: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "bound": self.bound, "slack": self.slack}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ValidationCheck, ...]
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "notes": list(self.notes)}


def boundary_radius_sq(obstacle: ObstacleSpec, params: ObstacleParams) -> float:
    """Squared radius of the sphere where B = L: [(1+e1)e2 - e1||c||^2]/(1+e1)^2."""
    e1 = params.eta1
    return ((1.0 + e1) * params.eta2 - e1 * obstacle.center_norm_sq) / (1.0 + e1) ** 2


def validate_params(config: ScenarioConfig) -> ValidationReport:
    """Check every design inequality with numeric slack; failures are entries.

    Covers, per obstacle: origin strictly outside, the eta1 lower bound, the
    eta2 interval, the w range when w is given, positivity of c1; pairwise:
    obstacle balls disjoint and boundary spheres disjoint.  Initial states are
    reported admissible iff they classify into the stabilizer region (outside
    every obstacle, below every barrier by more than eps_band).
    """
    checks: list[ValidationCheck] = []
    notes: list[str] = []
    multi = config.n_obstacles > 1

    for i, (ob, pa) in enumerate(zip(config.obstacles, config.params)):
        tag = f"obstacle[{i}]"
        v = ob.center_norm_sq - ob.radius_sq
        checks.append(ValidationCheck(f"{tag} origin outside: ||c||^2 - r > 0", v > 0, v, 0.0, v))

        lb = eta1_lower_bound(ob)
        ok = pa.eta1 > lb if multi else pa.eta1 >= lb
        rel = ">" if multi else ">="
        checks.append(ValidationCheck(f"{tag} eta1 {rel} (||c||+sqrt(r))/(||c||-sqrt(r))",
                                      ok, pa.eta1, lb, pa.eta1 - lb))

        lo = pa.eta1 * ob.radius_sq + ob.max_L_over_closure()
        checks.append(ValidationCheck(f"{tag} eta1*r + max L(closure) <= eta2",
                                      lo <= pa.eta2, pa.eta2, lo, pa.eta2 - lo))
        hi = pa.eta1 * ob.center_norm_sq
        checks.append(ValidationCheck(f"{tag} eta2 < eta1*||c||^2",
                                      pa.eta2 < hi, pa.eta2, hi, hi - pa.eta2))

        if pa.w is not None:
            wub = w_upper_bound(pa.eta1, ob)
            checks.append(ValidationCheck(f"{tag} 0 < w", pa.w > 0, pa.w, 0.0, pa.w))
            checks.append(ValidationCheck(f"{tag} w < eta1*(||c||^2-r) - max L(closure)",
                                          pa.w < wub, pa.w, wub, wub - pa.w))
        rbar = boundary_radius_sq(ob, pa)
        checks.append(ValidationCheck(f"{tag} boundary sphere radius^2 > 0", rbar > 0, rbar, 0.0, rbar))

    for i in range(config.n_obstacles):
        for j in range(i + 1, config.n_obstacles):
            oi, oj = config.obstacles[i], config.obstacles[j]
            dist = float(np.linalg.norm(oi.center - oj.center))
            balls = oi.radius + oj.radius
            checks.append(ValidationCheck(
                f"obstacles[{i},{j}] balls disjoint: ||ci-cj|| > sqrt(ri)+sqrt(rj)",
                dist > balls, dist, balls, dist - balls))
            ri = boundary_radius_sq(config.obstacles[i], config.params[i])
            rj = boundary_radius_sq(config.obstacles[j], config.params[j])
            if ri > 0 and rj > 0:
                spheres = math.sqrt(ri) + math.sqrt(rj)
                checks.append(ValidationCheck(
                    f"spheres[{i},{j}] disjoint: ||ci-cj|| > sqrt(rbar_i)+sqrt(rbar_j)",
                    dist > spheres, dist, spheres, dist - spheres))

    for k, x0 in enumerate(config.initial_states):
        ok, why = _admissible(config, x0)
        checks.append(ValidationCheck(f"initial_state[{k}] admissible ({why})",
                                      ok, float(np.linalg.norm(x0)), 0.0, 0.0))
    if config.n_obstacles > 0:
        notes.append("disjointness of boundary spheres checked pairwise on ||c_i - c_j||")
    return ValidationReport(checks=tuple(checks), notes=tuple(notes))


def _admissible(config: ScenarioConfig, x0: np.ndarray) -> tuple[bool, str]:
    """Admissible = outside every obstacle and strictly below every barrier."""
    L = float(x0 @ x0)
    for i, (ob, pa) in enumerate(zip(config.obstacles, config.params)):
        d = x0 - ob.center
        if float(d @ d) < ob.radius_sq:
            return False, f"inside obstacle {i}"
        b = pa.eta2 - pa.eta1 * float(d @ d)
        if b - L > -config.integrator.eps_band:
            return False, f"in barrier region of obstacle {i}"
    return True, "stabilizer region"


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------

def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"missing field '{key}' in {where}")
    return d[key]


def load_scenario(text: str | bytes) -> ScenarioConfig:
    """Parse a scenario JSON document.

    When a params entry gives w and omits eta2, eta2 is derived; when it gives
    both they must agree to 1e-9 relative.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")

    system_id = _require(doc, "system", "scenario")
    state_box = np.asarray(_require(doc, "state_box", "scenario"), float)
    obstacles_doc = _require(doc, "obstacles", "scenario")
    params_doc = _require(doc, "params", "scenario")
    if len(obstacles_doc) != len(params_doc):
        raise ScenarioError("obstacles and params arrays must have the same length")

    obstacles = []
    for k, od in enumerate(obstacles_doc):
        center = np.asarray(_require(od, "center", f"obstacles[{k}]"), float)
        radius = float(_require(od, "radius", f"obstacles[{k}]"))
        obstacles.append(ObstacleSpec.from_radius(center, radius))

    params = []
    for k, pd in enumerate(params_doc):
        eta1 = float(_require(pd, "eta1", f"params[{k}]"))
        c1 = np.asarray(_require(pd, "c1", f"params[{k}]"), float)
        w = pd.get("w")
        eta2 = pd.get("eta2")
        params.append(ObstacleParams.resolve(
            obstacles[k], eta1, c1,
            w=None if w is None else float(w),
            eta2=None if eta2 is None else float(eta2)))

    gains = ControllerGains(gamma=float(_require(doc, "gamma", "scenario")))
    integ_doc = doc.get("integrator", {})
    integrator = IntegratorSettings(
        dt=float(integ_doc.get("dt", 1e-3)),
        t_max=float(integ_doc.get("t_max", 20.0)),
        eps_conv=float(integ_doc.get("eps_conv", 1e-2)),
        eps_band=float(integ_doc.get("eps_band", 1e-3)))
    initial_states = tuple(np.asarray(v, float) for v in doc.get("initial_states", []))

    return ScenarioConfig(system_id=system_id, state_box=state_box,
                          obstacles=tuple(obstacles), params=tuple(params),
                          gains=gains, integrator=integrator,
                          initial_states=initial_states)


def save_scenario(config: ScenarioConfig) -> str:
    """Serialize to the scenario JSON schema (radius, not radius squared)."""
    doc = {
        "system": config.system_id,
        "state_box": config.state_box.tolist(),
        "obstacles": [{"center": ob.center.tolist(), "radius": ob.radius}
                      for ob in config.obstacles],
        "params": [
            {k: v for k, v in (("eta1", pa.eta1), ("w", pa.w), ("eta2", pa.eta2),
                               ("c1", pa.c1.tolist())) if v is not None}
            for pa in config.params],
        "gamma": config.gains.gamma,
        "integrator": {"dt": config.integrator.dt, "t_max": config.integrator.t_max,
                       "eps_conv": config.integrator.eps_conv,
                       "eps_band": config.integrator.eps_band},
        "initial_states": [x.tolist() for x in config.initial_states],
    }
    return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# Built-in fixtures
# ---------------------------------------------------------------------------

def linear2d_single() -> ScenarioConfig:
    """Planar linear benchmark: one unsafe ball at (2,2), radius sqrt(2)."""
    box = np.array([[-5.0, 5.0], [-5.0, 5.0]])
    ob = ObstacleSpec(center=np.array([2.0, 2.0]), radius_sq=2.0)
    pa = ObstacleParams.resolve(ob, eta1=9.0, c1=[10.0, 20.0], w=0.9)
    return ScenarioConfig(
        system_id="linear2d", state_box=box, obstacles=(ob,), params=(pa,),
        gains=ControllerGains(gamma=0.1),
        integrator=IntegratorSettings(dt=1e-3, t_max=20.0, eps_conv=1e-2, eps_band=1e-3),
        initial_states=tuple(np.array(v) for v in
                             [(5.0, 5.0), (4.0, 4.0), (3.5, 3.5), (5.0, 2.0), (3.0, 5.0)]))


def nonlinear_mech_three() -> ScenarioConfig:
    """Nonlinear mechanical benchmark with three unsafe balls.

    Obstacle 0 stores the published eta2 = 16 directly (the value derived from
    its w would be 16.0466...; the published figure is authoritative here).
    t_max is 60 because the closed loop's slow mode needs ~50 s to bring
    ||x|| under eps_conv.
    """
    box = np.array([[-5.0, 5.0], [-5.0, 5.0]])
    obs = (
        ObstacleSpec(center=np.array([2.0, 0.0]), radius_sq=0.7),
        ObstacleSpec(center=np.array([2.0, 2.0]), radius_sq=0.5),
        ObstacleSpec(center=np.array([-2.0, 0.0]), radius_sq=1.0),
    )
    pas = (
        ObstacleParams.resolve(obs[0], eta1=11.0, c1=[10.0], eta2=16.0),
        ObstacleParams.resolve(obs[1], eta1=19.0, c1=[20.0], w=0.7),
        ObstacleParams.resolve(obs[2], eta1=18.0, c1=[20.0], w=0.2),
    )
    return ScenarioConfig(
        system_id="nonlinear_mech", state_box=box, obstacles=obs, params=pas,
        gains=ControllerGains(gamma=5.0),
        integrator=IntegratorSettings(dt=1e-3, t_max=60.0, eps_conv=1e-2, eps_band=1e-3),
        initial_states=tuple(np.array(v) for v in
                             [(-5.0, 5.0), (-4.0, -5.0), (-5.0, 0.0), (5.0, -5.0),
                              (5.0, 0.0), (4.0, 4.0), (3.0, 2.0), (2.0, 5.0)]))


BUILTIN_SCENARIOS = {
    "linear2d_single": linear2d_single,
    "nonlinear_mech_three": nonlinear_mech_three,
}


def builtin_scenario(name: str) -> ScenarioConfig:
    try:
        return BUILTIN_SCENARIOS[name]()
    except KeyError:
        raise ScenarioError(f"unknown builtin scenario '{name}' "
                            f"(have: {', '.join(sorted(BUILTIN_SCENARIOS))})") from None

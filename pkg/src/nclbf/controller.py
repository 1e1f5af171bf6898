"""Piecewise feedback laws and the region-dispatched controller.

kappa1 pushes the dominant barrier down at rate (sum of active c1)*||x||^2,
kappa2 is Sontag's universal law on L, and kappa3 resolves the band B = L
through the previous sample's region.  Control is dispatched on the region
classification; the band uses a one-sample memory (the sample period plays
the role of the lookback interval).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certificate import Certificate, RegionLabel
from .scenario import ScenarioConfig
from .systems import ControlAffineSystem

# Absolute threshold below which a gradient-control row counts as vanished.
TOL_G = 1e-9


class SafetyViolationError(RuntimeError):
    """Control requested inside an unsafe ball."""


class MemoryStateError(RuntimeError):
    """Region memory holds a state the controller cannot have reached."""


def mu(y: np.ndarray) -> np.ndarray:
    """y^T / ||y||^2; satisfies y @ mu(y) = 1.  Rejects the zero vector."""
    y = np.asarray(y, float)
    n2 = float(y @ y)
    if n2 == 0.0:
        raise ZeroDivisionError("mu undefined for the zero vector")
    return y / n2

def mu_bar(y: np.ndarray, tol: float = TOL_G) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise reciprocal with masking: (vector, active mask).

    Component j is 1/y_j when |y_j| > tol and 0 (inactive) otherwise.
    """
    y = np.asarray(y, float)
    active = np.abs(y) > tol
    out = np.zeros_like(y)
    out[active] = 1.0 / y[active]
    return out, active


@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray
    law: str              # "K1:1", "K2", "K3:1>K1", "K3:1>K2" (1-based index)
    region: RegionLabel


@dataclass
class RegionMemory:
    """Region at the previous sample; seeded with the initial classification."""

    prev: RegionLabel


class Controller:
    """Bundles system, certificate, and gains; all methods are pure in x."""

    def __init__(self, system: ControlAffineSystem, certificate: Certificate,
                 config: ScenarioConfig, tol_g: float = TOL_G):
        self.system = system
        self.cert = certificate
        self.gamma = config.gains.gamma
        self.c1 = [pa.c1 for pa in config.params]
        self.tol_g = tol_g
        self.eps_band = config.integrator.eps_band

    def kappa1(self, i: int, x: np.ndarray, f0: np.ndarray | None = None,
               g0: np.ndarray | None = None) -> np.ndarray:
        """Barrier-decrease law: grad B.(f + g u) = -(sum of active c1)*||x||^2."""
        if f0 is None:
            f0, g0 = self.system.f(x), self.system.g(x)
        gB = self.cert.grad_B(i, x)
        Bf = float(gB @ f0)
        Bg = gB @ g0
        if math.sqrt(float(Bg @ Bg)) <= self.tol_g:
            return np.zeros(self.system.m)
        bar, _ = mu_bar(Bg, self.tol_g)
        return -mu(Bg) * Bf - self.c1[i] * bar * self.cert.L(x)

    def kappa2(self, x: np.ndarray, f0: np.ndarray | None = None,
               g0: np.ndarray | None = None) -> np.ndarray:
        """Sontag's law: grad L.(f + g u) = -sqrt(L_f^2 + gamma*||L_g||^4)."""
        if f0 is None:
            f0, g0 = self.system.f(x), self.system.g(x)
        gL = 2.0 * x
        Lf = float(gL @ f0)
        Lg = gL @ g0
        n2 = float(Lg @ Lg)
        if math.sqrt(n2) <= self.tol_g:
            return np.zeros(self.system.m)
        return -(Lf + math.sqrt(Lf * Lf + self.gamma * n2 * n2)) * (Lg / n2)

    def kappa3(self, i: int, x: np.ndarray, memory: RegionMemory,
               f0: np.ndarray | None = None, g0: np.ndarray | None = None) -> np.ndarray:
        """Band law resolved by the previous sample's region."""
        prev = memory.prev
        if prev.kind == "UNSAFE":
            raise MemoryStateError("previous sample inside an unsafe ball; "
                                   "the safety monitor should have halted")
        if prev.kind == "R1" and prev.index == i:
            return self.kappa1(i, x, f0, g0)
        # prev R2, prev R3 (sliding), and cross-obstacle histories all fall
        # through to the stabilizer; the spheres are disjoint so cross-obstacle
        # memory only arises from numerical band overlap.
        return self.kappa2(x, f0, g0)

    def control(self, x: np.ndarray, memory: RegionMemory,
                eps_band: float | None = None) -> ControlDecision:
        """Dispatch on the region classification of x."""
        band = self.eps_band if eps_band is None else eps_band
        return self.dispatch(self.cert.classify(x, band), x, memory)

    def dispatch(self, region: RegionLabel, x: np.ndarray, memory: RegionMemory,
                 f0: np.ndarray | None = None,
                 g0: np.ndarray | None = None) -> ControlDecision:
        """Dispatch for an already-classified state."""
        if region.kind == "UNSAFE":
            raise SafetyViolationError(
                f"state inside unsafe ball {region.index} (obstacle {region.index + 1})")
        if region.kind == "R1":
            return ControlDecision(self.kappa1(region.index, x, f0, g0),
                                   f"K1:{region.index + 1}", region)
        if region.kind == "R2":
            return ControlDecision(self.kappa2(x, f0, g0), "K2", region)
        u = self.kappa3(region.index, x, memory, f0, g0)
        prev = memory.prev
        branch = "K1" if (prev.kind == "R1" and prev.index == region.index) else "K2"
        return ControlDecision(u, f"K3:{region.index + 1}>{branch}", region)


def make_controller(config: ScenarioConfig,
                    system: ControlAffineSystem | None = None) -> Controller:
    from .systems import resolve_system
    sys_ = system if system is not None else resolve_system(config)
    return Controller(sys_, Certificate(config), config)

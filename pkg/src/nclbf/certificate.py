"""The nonsmooth certificate V = max(L, B_i) and its geometry.

L(x) = ||x||^2 pulls the state to the origin; each B_i(x) = eta_{i,2} -
eta_{i,1}*||x - c_i||^2 caps an unsafe ball.  The surface {B_i = L} is a
sphere (the virtual boundary) whose center and radius follow from completing
the square; its tangency points with rays through the origin are the contact
points where sliding trajectories peel off toward the origin.

All functions are pure in (certificate, x); obstacle indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig, ScenarioError


@dataclass(frozen=True)
class RegionLabel:
    """One of R1(i) (barrier i dominates), R2, R3(i) (band), UNSAFE(i)."""

    kind: str                 # "R1" | "R2" | "R3" | "UNSAFE"
    index: int | None = None  # 0-based obstacle index; None for R2

    def __post_init__(self):
        if self.kind not in ("R1", "R2", "R3", "UNSAFE"):
            raise ValueError(f"bad region kind {self.kind!r}")
        if (self.index is None) != (self.kind == "R2"):
            raise ValueError("index required exactly for R1/R3/UNSAFE")

    @property
    def code(self) -> str:
        """Short code with 1-based obstacle index, e.g. 'R1:1', 'R2', 'U:2'."""
        if self.kind == "R2":
            return "R2"
        tag = "U" if self.kind == "UNSAFE" else self.kind
        return f"{tag}:{self.index + 1}"

    @classmethod
    def from_code(cls, code: str) -> "RegionLabel":
        if code == "R2":
            return cls("R2")
        tag, _, idx = code.partition(":")
        kind = "UNSAFE" if tag == "U" else tag
        return cls(kind, int(idx) - 1)


@dataclass(frozen=True)
class BoundarySphere:
    """Sphere {x : B_i(x) = L(x)} with center eta1*c/(1+eta1)."""

    center: np.ndarray
    radius_sq: float

    @property
    def radius(self) -> float:
        return math.sqrt(self.radius_sq)


class Certificate:
    """Evaluator for V = max(L, max_i B_i) over a scenario's obstacles."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.n = config.n
        self.n_obstacles = config.n_obstacles
        self.centers = np.array([ob.center for ob in config.obstacles])        # (N, n)
        self.eta1 = np.array([pa.eta1 for pa in config.params])                # (N,)
        self.eta2 = np.array([pa.eta2 for pa in config.params])                # (N,)
        self.radii_sq = np.array([ob.radius_sq for ob in config.obstacles])    # (N,)
        self.radii = np.sqrt(self.radii_sq)

    # -- scalar fields ------------------------------------------------------

    def L(self, x: np.ndarray) -> float:
        return float(x @ x)

    def grad_L(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * np.asarray(x, float)

    def B_values(self, x: np.ndarray) -> np.ndarray:
        d = x - self.centers
        return self.eta2 - self.eta1 * np.einsum("ij,ij->i", d, d)

    def B(self, i: int, x: np.ndarray) -> float:
        d = x - self.centers[i]
        return float(self.eta2[i] - self.eta1[i] * (d @ d))

    def grad_B(self, i: int, x: np.ndarray) -> np.ndarray:
        return -2.0 * self.eta1[i] * (x - self.centers[i])

    def V(self, x: np.ndarray) -> float:
        return max(self.L(x), float(np.max(self.B_values(x))))

    # -- regions ------------------------------------------------------------

    def unsafe_index(self, x: np.ndarray) -> int | None:
        """Index of an obstacle whose open ball contains x, else None."""
        d = x - self.centers
        inside = np.einsum("ij,ij->i", d, d) < self.radii_sq
        hits = np.nonzero(inside)[0]
        return int(hits[0]) if hits.size else None

    def dominant_obstacle(self, x: np.ndarray) -> int:
        """argmax_i B_i(x); ties break to the lowest index."""
        return int(np.argmax(self.B_values(x)))

    def classify(self, x: np.ndarray, eps_band: float) -> RegionLabel:
        """Unsafe test first, then band the comparison of max B against L."""
        u = self.unsafe_index(x)
        if u is not None:
            return RegionLabel("UNSAFE", u)
        b = self.B_values(x)
        i = int(np.argmax(b))
        h = float(b[i]) - self.L(x)
        if h > eps_band:
            return RegionLabel("R1", i)
        if -h > eps_band:
            return RegionLabel("R2")
        return RegionLabel("R3", i)

    def min_dists(self, x: np.ndarray) -> np.ndarray:
        """Per-obstacle ||x - c_i|| - sqrt(r_i); positive means clear."""
        d = x - self.centers
        return np.sqrt(np.einsum("ij,ij->i", d, d)) - self.radii

    # -- virtual boundary geometry -------------------------------------------

    def boundary_sphere(self, i: int) -> BoundarySphere:
        e1, e2 = self.eta1[i], self.eta2[i]
        c = self.centers[i]
        center = e1 * c / (1.0 + e1)
        radius_sq = ((1.0 + e1) * e2 - e1 * float(c @ c)) / (1.0 + e1) ** 2
        if radius_sq <= 0:
            raise ScenarioError(f"obstacle {i}: boundary sphere is empty (radius_sq <= 0)")
        return BoundarySphere(center=center, radius_sq=radius_sq)

    def buffer_width(self, i: int) -> float:
        """sqrt(w / (eta1 + 1)): gap between the sphere and the unsafe ball."""
        w = self.config.params[i].effective_w(self.config.obstacles[i])
        if w <= 0:
            raise ScenarioError(f"obstacle {i}: no positive buffer (eta2 at or below "
                                "eta1*r + max L over the closed ball)")
        return math.sqrt(w / (self.eta1[i] + 1.0))

    def phi(self, i: int) -> float:
        """(eta1*||c||^2 - eta2)/(eta1 + 1): squared norm at the contact points."""
        e1 = self.eta1[i]
        return (e1 * float(self.centers[i] @ self.centers[i]) - self.eta2[i]) / (e1 + 1.0)

    def contact_points_2d(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Tangency points of origin rays with the boundary sphere (n = 2).

        Solves ||x - cbar||^2 = rbar together with ||x||^2 = x.cbar, which
        forces ||x||^2 = phi.  Ordered by descending first coordinate.
        """
        if self.n != 2:
            raise ScenarioError(f"contact points in closed form need n = 2 (n = {self.n})")
        sph = self.boundary_sphere(i)
        cbar = sph.center
        d2 = float(cbar @ cbar)
        p = self.phi(i)
        if p <= 0 or d2 <= sph.radius_sq:
            raise ScenarioError(f"obstacle {i}: no real contact points "
                                "(boundary sphere reaches the origin)")
        t_sq = p - p * p / d2
        if t_sq < 0:
            raise ScenarioError(f"obstacle {i}: no real contact points")
        base = (p / d2) * cbar
        perp = np.array([-cbar[1], cbar[0]]) / math.sqrt(d2)
        t = math.sqrt(t_sq)
        a, b = base + t * perp, base - t * perp
        return (a, b) if a[0] >= b[0] else (b, a)

    def contact_condition(self, i: int, x: np.ndarray, tol: float = 1e-9) -> bool:
        """General-n membership test for the contact set: ||x||^2 = x.cbar."""
        cbar = self.boundary_sphere(i).center
        return abs(self.L(x) - float(x @ cbar)) <= tol

    def in_shrunk_band(self, x: np.ndarray, i: int, eps_band: float) -> bool:
        """|B_i - L| <= eps_band and ||x||^2 < phi(c_i)."""
        h = self.B(i, x) - self.L(x)
        return abs(h) <= eps_band and self.L(x) < self.phi(i)

    def shrunk_band_margin(self, i: int, eps_band: float) -> float:
        """Tangency-cone margin on phi for trajectory checks.

        Along the tangent ray through a contact point, |B - L| = (1+eta1)*phi*s^2
        while phi - ||x||^2 ~ 2*phi*s, so samples within the band stay within
        2*sqrt(eps_band*phi/(1+eta1)) of phi without being on the surface.
        """
        p = self.phi(i)
        return 3.0 * math.sqrt(eps_band * max(p, 0.0) / (1.0 + self.eta1[i]))

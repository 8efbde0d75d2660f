"""Nonuniform time meshes: uniform, graded, random, and graded+random-tail.

A mesh stores the points 0 = t_0 < t_1 < ... < t_N = T together with the
step sizes tau_k = t_k - t_{k-1} and the adjoint step ratios
r_k = tau_k / tau_{k-1} (k >= 2).  All arrays are read-only after
construction, so meshes can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeMesh",
    "AGReport",
    "build_uniform",
    "build_graded",
    "build_random",
    "build_graded_random",
    "check_AG",
    "min_ratio",
    "save_points",
    "load_points",
]

# steps/ratios must agree with the point differences to this relative level
_CONSISTENCY_RTOL = 1e-14


@dataclass(frozen=True)
class TimeMesh:
    """Strictly increasing time levels with derived steps and step ratios."""

    points: np.ndarray
    steps: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)
    uniform: bool = False

    @classmethod
    def from_points(cls, points) -> "TimeMesh":
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("mesh needs at least two time points")
        if pts[0] != 0.0:
            raise ValueError("mesh must start at t=0")
        steps = np.diff(pts)
        if not np.all(steps > 0.0):
            raise ValueError("time points must be strictly increasing")
        uniform = bool(
            steps.size == 1
            or np.all(np.abs(steps - steps[0]) <= 1e-12 * steps[0])
        )
        ratios = steps[1:] / steps[:-1]
        for arr in (pts, steps, ratios):
            arr.setflags(write=False)
        return cls(points=pts, steps=steps, ratios=ratios, uniform=uniform)

    def __post_init__(self):
        d = np.diff(self.points)
        scale = np.abs(self.steps)
        if np.any(np.abs(self.steps - d) > _CONSISTENCY_RTOL * scale):
            raise ValueError("steps inconsistent with points")
        if self.steps.size > 1:
            r = self.steps[1:] / self.steps[:-1]
            if np.any(np.abs(self.ratios - r) > _CONSISTENCY_RTOL * np.abs(r)):
                raise ValueError("ratios inconsistent with steps")

    @property
    def N(self) -> int:
        return self.steps.size

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def tau_max(self) -> float:
        return float(self.steps.max())


def build_uniform(N: int, T: float) -> TimeMesh:
    """Uniform partition t_k = k*T/N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    pts = np.linspace(0.0, T, N + 1)
    return TimeMesh.from_points(pts)


def build_graded(N: int, gamma: float, T: float) -> TimeMesh:
    """Graded partition t_k = T*(k/N)**gamma, clustering steps near t=0."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    k = np.arange(N + 1, dtype=float)
    pts = T * (k / N) ** gamma
    pts[-1] = T
    return TimeMesh.from_points(pts)


def build_random(N: int, T: float, seed: int) -> TimeMesh:
    """Random partition with steps tau_k = T*eps_k/sum(eps), eps_k ~ U(0,1)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(seed)
    eps = rng.random(N)
    while np.any(eps == 0.0):  # U(0,1) draw; zero has measure zero but guard anyway
        eps[eps == 0.0] = rng.random(np.count_nonzero(eps == 0.0))
    steps = T * eps / eps.sum()
    pts = np.concatenate(([0.0], np.cumsum(steps)))
    pts[-1] = T
    return TimeMesh.from_points(pts)


def graded_cell_size(N: int, gamma: float, T: float) -> tuple[float, int]:
    """Graded-cell endpoint T0 = min(1/gamma, T) and count N0 = ceil(N/(T+1-1/gamma))."""
    T0 = min(1.0 / gamma, T)
    N0 = math.ceil(N / (T + 1.0 - 1.0 / gamma))
    return T0, N0


def build_graded_random(N: int, gamma: float, T: float, seed: int) -> TimeMesh:
    """Graded cell on [0, T0] followed by a seeded random tail on [T0, T].

    The first N0 points follow t_k = T0*(k/N0)**gamma with
    T0 = min(1/gamma, T) and N0 = ceil(N/(T+1-1/gamma)); the remaining
    N-N0 steps are (T-T0)*eps_k/S1 with eps_k ~ U(0,1) from the seeded
    generator and S1 = sum(eps_k).  The final point is snapped to T.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    T0, N0 = graded_cell_size(N, gamma, T)
    if N0 > N:
        raise ValueError(
            f"mesh infeasible: graded cell needs N0={N0} subintervals but N={N}"
        )
    N1 = N - N0
    if N1 == 0 and abs(T0 - T) > 1e-14 * T:
        raise ValueError("mesh infeasible: no subintervals left for the tail")

    k = np.arange(N0 + 1, dtype=float)
    head = T0 * (k / N0) ** gamma
    head[-1] = T0
    if N1 == 0:
        pts = head
        pts[-1] = T
    else:
        rng = np.random.default_rng(seed)
        eps = rng.random(N1)
        while np.any(eps == 0.0):
            eps[eps == 0.0] = rng.random(np.count_nonzero(eps == 0.0))
        tail_steps = (T - T0) * eps / eps.sum()
        pts = np.concatenate((head, T0 + np.cumsum(tail_steps)))
        pts[-1] = T
    return TimeMesh.from_points(pts)


@dataclass(frozen=True)
class AGReport:
    """Smallest constants for the graded-mesh regularity conditions.

    c_step bounds tau_k <= tau * min(1, c * t_k**(1-1/gamma)); c_ratio bounds
    t_k <= c * t_{k-1} for k >= 2.  `satisfied` means both are finite and at
    most `threshold`.
    """

    c_step: float
    c_ratio: float
    satisfied: bool
    threshold: float


def check_AG(mesh: TimeMesh, gamma: float, threshold: float = 100.0) -> AGReport:
    """Estimate the mesh-regularity constants for grading exponent gamma."""
    tau = mesh.tau_max
    t = mesh.points[1:]
    ex = 1.0 - 1.0 / gamma
    # per-k requirement is C >= min(tau_k/(tau*t_k^ex), t_k^-ex): either the
    # step condition holds outright or the min(1, .) clamp is active
    with np.errstate(divide="ignore"):
        c_direct = mesh.steps / (tau * t**ex)
        c_clamp = t ** (-ex)
    c_step = float(np.max(np.minimum(c_direct, c_clamp)))
    if mesh.N >= 2:
        c_ratio = float(np.max(mesh.points[2:] / mesh.points[1:-1]))
    else:
        c_ratio = 1.0
    ok = (
        math.isfinite(c_step)
        and math.isfinite(c_ratio)
        and max(c_step, c_ratio) <= threshold
    )
    return AGReport(c_step=c_step, c_ratio=c_ratio, satisfied=ok, threshold=threshold)


def min_ratio(mesh: TimeMesh) -> float:
    """Minimum step ratio r_* = min(1, min_k r_k)."""
    if mesh.ratios.size == 0:
        return 1.0
    return float(min(1.0, mesh.ratios.min()))


def save_points(mesh: TimeMesh, path) -> None:
    """Write the time points as one full-precision float per line."""
    with open(path, "w") as fh:
        for t in mesh.points:
            fh.write(f"{float(t)!r}\n")


def load_points(path) -> TimeMesh:
    """Read a mesh previously written by save_points."""
    with open(path) as fh:
        pts = [float(line) for line in fh if line.strip()]
    return TimeMesh.from_points(np.asarray(pts))

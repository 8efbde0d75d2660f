"""Model ingredients: nonlinear flux, chemical potential, and energies.

The height field phi evolves by a fractional-in-time gradient flow of the
energy E[phi] = (eps2/2)*||lap phi||^2 + (1/4)*|| |grad phi|^2 - 1 ||^2,
whose variational derivative is the chemical potential
mu = eps2*lap^2 phi - div f(grad phi) with f(v) = (|v|^2 - 1) v.

The variational energy augments E with a DCC-weighted history of ||mu||^2
and is the quantity that decays monotonically step by step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelSet, rl_weight
from .spectral import SpectralGrid

__all__ = [
    "ModelParams",
    "nonlinear_flux",
    "flux_divergence",
    "chemical_potential",
    "free_energy",
    "variational_energy",
    "l2_stability_margin",
]


@dataclass(frozen=True)
class ModelParams:
    """Interface parameter squared, mobility, and fractional order."""

    eps2: float
    kappa: float
    alpha: float

    def __post_init__(self):
        if self.eps2 <= 0:
            raise ValueError("eps2 must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0,1)")


def nonlinear_flux(wx: np.ndarray, wy: np.ndarray):
    """Pointwise slope-selection flux f(w) = (|w|^2 - 1) * w."""
    fac = wx * wx + wy * wy - 1.0
    return fac * wx, fac * wy


def flux_divergence(phi: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """div f(grad phi) evaluated by collocation."""
    wx, wy = grid.grad(phi)
    fx, fy = nonlinear_flux(wx, wy)
    return grid.div(fx, fy)


def chemical_potential(phi: np.ndarray, grid: SpectralGrid,
                       p: ModelParams) -> np.ndarray:
    """mu = eps2 * lap^2 phi - div f(grad phi); mean-free by construction."""
    return p.eps2 * grid.bilaplacian(phi) - flux_divergence(phi, grid)


def free_energy(phi: np.ndarray, grid: SpectralGrid, p: ModelParams) -> float:
    """Discrete energy (eps2/2)||lap phi||^2 + (1/4)|| |grad phi|^2 - 1 ||^2."""
    lap = grid.laplacian(phi)
    wx, wy = grid.grad(phi)
    slope = wx * wx + wy * wy - 1.0
    quad = grid.h**2 * float(np.sum(np.square(slope)))
    return 0.5 * p.eps2 * grid.h**2 * float(np.sum(np.square(lap))) + 0.25 * quad


def variational_energy(E: float, kset: KernelSet, mu_sq_hist, n: int,
                       p: ModelParams) -> float:
    """E plus the DCC-weighted ||mu||^2 history, (kappa/2)*sum_j p^(n)_{n-j}*||mu^j||^2.

    mu_sq_hist[j-1] holds ||mu^j||^2 for j = 1..n; at n = 0 the variational
    energy is defined as E itself.
    """
    if n == 0:
        return float(E)
    hist = np.asarray(mu_sq_hist, dtype=float)
    if hist.shape[0] < n:
        raise ValueError(f"need {n} ||mu||^2 history entries, got {hist.shape[0]}")
    prow = kset.p_row(n)
    return float(E + 0.5 * p.kappa * np.dot(prow[::-1], hist[:n]))


def l2_stability_margin(phi_n: np.ndarray, phi_0: np.ndarray,
                        grid: SpectralGrid, p: ModelParams, t_n: float,
                        alpha: float | None = None) -> float:
    """Slack in the L2 bound: ||phi0||^2 + (kappa/2)|Omega|*w_{1+a}(t_n) - ||phi_n||^2.

    Nonnegative for solutions produced by the scheme.  Pass alpha=1.0 to get
    the backward-Euler limit bound with weight t_n.
    """
    a = p.alpha if alpha is None else alpha
    wt = float(rl_weight(1.0 + a, t_n)) if t_n > 0 else 0.0
    bound = grid.norm(phi_0) ** 2 + 0.5 * p.kappa * grid.volume * wt
    return float(bound - grid.norm(phi_n) ** 2)

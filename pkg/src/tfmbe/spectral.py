"""Fourier pseudo-spectral operators on a periodic square collocation grid.

Fields are plain real (M, M) arrays over the grid x_i = i*h, y_j = j*h with
h = L/M; axis 0 indexes y and axis 1 indexes x (row-major, x fastest).
Derivatives act mode-wise with base wavenumber nu = 2*pi/L: i*nu*m for
first derivatives (Nyquist weight zeroed), -(nu**2)*(m**2+n**2) for the
Laplacian and its square for the bi-Laplacian (Nyquist kept).  Transforms
use the real-to-complex layout internally; fields stay real outside.

All operators are pure functions of their inputs and safe to call
concurrently.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as _fft

__all__ = ["SpectralGrid"]


class SpectralGrid:
    """Uniform M x M periodic grid with cached derivative multipliers."""

    def __init__(self, M: int, L: float = 2.0 * np.pi, *, dealias: bool = False):
        if M < 4 or M % 2 != 0:
            raise ValueError("M must be even and >= 4")
        if L <= 0:
            raise ValueError("L must be positive")
        self.M = int(M)
        self.L = float(L)
        self.h = self.L / self.M
        self.nu = 2.0 * np.pi / self.L
        self.dealias = bool(dealias)

        ax = np.arange(M) * self.h
        self.X, self.Y = np.meshgrid(ax, ax)  # X[j,i] = x_i, Y[j,i] = y_j

        m = np.fft.rfftfreq(M, d=1.0 / M)          # x modes 0..M/2
        n = np.fft.fftfreq(M, d=1.0 / M)           # y modes, signed
        mm, nn = np.meshgrid(m, n)
        m_odd = np.where(mm == M // 2, 0.0, mm)    # Nyquist dropped for odd derivatives
        n_odd = np.where(nn == -M // 2, 0.0, nn)
        self._ikx = 1j * self.nu * m_odd
        self._iky = 1j * self.nu * n_odd
        k2 = self.nu**2 * (mm**2 + nn**2)
        self._lap = -k2
        self._bilap = k2**2
        keep = (np.abs(mm) < M / 3.0) & (np.abs(nn) < M / 3.0)
        self._dealias_mask = keep

    # -- transforms ---------------------------------------------------------

    def fft(self, u: np.ndarray) -> np.ndarray:
        return _fft.rfft2(u)

    def ifft(self, uh: np.ndarray) -> np.ndarray:
        return _fft.irfft2(uh, s=(self.M, self.M))

    # -- derivative operators ------------------------------------------------

    def grad(self, u: np.ndarray):
        uh = self.fft(u)
        return self.ifft(self._ikx * uh), self.ifft(self._iky * uh)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return self.ifft(self._lap * self.fft(u))

    def bilaplacian(self, u: np.ndarray) -> np.ndarray:
        return self.ifft(self._bilap * self.fft(u))

    def div(self, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
        dh = self._ikx * self.fft(wx) + self._iky * self.fft(wy)
        if self.dealias:
            dh = dh * self._dealias_mask
        return self.ifft(dh)

    # -- quadrature, inner products, norms ------------------------------------

    def _check(self, u: np.ndarray) -> None:
        if np.shape(u) != (self.M, self.M):
            raise ValueError(f"field shape {np.shape(u)} does not match grid M={self.M}")

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        self._check(u)
        self._check(v)
        return float(self.h**2 * np.sum(u * v))

    def integral(self, u: np.ndarray) -> float:
        """Quadrature of u over the box, <u, 1> = h^2 * sum(u)."""
        return float(self.h**2 * np.sum(u))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(self.h**2 * np.sum(np.square(u))))

    def lp_norm(self, u: np.ndarray, p: float) -> float:
        return float((self.h**2 * np.sum(np.abs(u) ** p)) ** (1.0 / p))

    def norms(self, u: np.ndarray, p: float = 2.0) -> dict:
        """Discrete l2, lp, H1 and H2 norms of a grid function."""
        self._check(u)
        ux, uy = self.grad(u)
        l2sq = self.h**2 * np.sum(np.square(u))
        gsq = self.h**2 * (np.sum(np.square(ux)) + np.sum(np.square(uy)))
        lsq = self.h**2 * np.sum(np.square(self.laplacian(u)))
        return {
            "l2": float(np.sqrt(l2sq)),
            "lp": self.lp_norm(u, p),
            "h1": float(np.sqrt(l2sq + gsq)),
            "h2": float(np.sqrt(l2sq + gsq + lsq)),
        }

    def hat_norm(self, uh: np.ndarray) -> float:
        """Discrete L2 norm computed from half-spectrum coefficients."""
        M = self.M
        w = np.full(uh.shape[1], 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        s = np.sum(w * np.abs(uh) ** 2)
        return float(self.L * np.sqrt(s) / M**2)

    @property
    def volume(self) -> float:
        """Measure of the computational box, |Omega_h| = L^2."""
        return self.L**2

    # -- initial data ---------------------------------------------------------

    def project_initial(self, phi0) -> np.ndarray:
        """Collocate a closed-form function of (x, y) onto the grid."""
        vals = np.asarray(phi0(self.X, self.Y), dtype=float)
        if vals.shape == ():
            vals = np.full((self.M, self.M), float(vals))
        self._check(vals)
        if not np.all(np.isfinite(vals)):
            raise ValueError("initial data evaluated to non-finite values")
        return vals

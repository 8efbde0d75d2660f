"""Discrete convolution kernels for the variable-step L1 Caputo derivative.

Three kernel families are maintained per time level n:

* L1 kernels      a^(n)_{n-k} = (1/tau_k) * integral of w_{1-a}(t_n - s)
                  over (t_{k-1}, t_k), evaluated in closed form through the
                  antiderivative w_{2-a};
* DOC kernels     theta^(n)_{n-k}, the convolution inverse of the L1 kernels
                  (sum_{j=k}^n theta^(n)_{n-j} a^(j)_{j-k} = delta_{nk});
* DCC kernels     p^(n)_{n-k} = sum_{j=k}^n theta^(j)_{j-k}, complementary to
                  the L1 kernels (sum_{j=k}^n p^(n)_{n-j} a^(j)_{j-k} = 1)
                  and acting as discrete weights of the fractional integral.

Here w_b(t) = t^(b-1)/Gamma(b) is the Riemann-Liouville weight.  Rows are
built strictly in level order (row n needs rows < n); completed rows are
immutable and may be read concurrently.

Also provided: the Mittag-Leffler series, the convergence/solvability step
bounds, the weighted global consistency bound, and the error-envelope
diagnostic.
"""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as _gamma

from .timemesh import TimeMesh

__all__ = [
    "rl_weight",
    "KernelSet",
    "mittag_leffler",
    "step_bounds",
    "StepBounds",
    "consistency_bound",
    "error_envelope",
]


def rl_weight(beta: float, t):
    """Riemann-Liouville weight w_beta(t) = t**(beta-1) / Gamma(beta)."""
    return np.asarray(t) ** (beta - 1.0) / _gamma(beta)


class KernelSet:
    """Lower-triangular kernel tables tied to a (possibly growing) time grid.

    Construct from a TimeMesh for fixed-mesh runs, or with no mesh and feed
    time levels through add_time() for adaptive runs.  Uniform meshes take a
    translation-invariant fast path: every kernel family collapses to a
    single sequence indexed by n-k.
    """

    def __init__(self, alpha: float, mesh: TimeMesh | None = None, *,
                 force_general: bool = False):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0,1)")
        self.alpha = float(alpha)
        self.mesh = mesh
        self._g2 = _gamma(2.0 - alpha)
        self._t = [0.0]
        self._uniform = False
        self._tau_uniform = None
        # general tables: row n occupies [n, 0:n]; grown geometrically
        self._a2 = None
        self._th2 = None
        self._p2 = None
        # uniform sequences indexed by j = n-k
        self._a1 = None
        self._th1 = None
        self._p1 = None
        self._built = 0  # highest level with all three rows present
        if mesh is not None:
            self._t = list(map(float, mesh.points))
            if mesh.uniform and not force_general:
                self._uniform = True
                self._tau_uniform = mesh.T / mesh.N

    # -- time bookkeeping -------------------------------------------------

    @property
    def n_max(self) -> int:
        """Largest level currently defined by the registered time points."""
        return len(self._t) - 1

    def add_time(self, t: float) -> int:
        """Append a new time level (adaptive runs); returns its index."""
        if t <= self._t[-1]:
            raise ValueError("time levels must increase")
        self._t.append(float(t))
        return len(self._t) - 1

    def times(self) -> np.ndarray:
        return np.asarray(self._t)

    def tau(self, n: int) -> float:
        """Step size t_n - t_{n-1}."""
        self._check_level(n)
        return self._t[n] - self._t[n - 1]

    def _check_level(self, n: int) -> None:
        if not 1 <= n <= self.n_max:
            raise ValueError(f"level n={n} outside 1..{self.n_max}")

    # -- L1 kernels --------------------------------------------------------

    def _l1_row_values(self, n: int) -> np.ndarray:
        """Closed-form row a^(n)_j, j = 0..n-1 (j = n-k)."""
        t = self._t
        alpha = self.alpha
        row = np.empty(n)
        tau_n = t[n] - t[n - 1]
        row[0] = tau_n ** (-alpha) / self._g2
        if n > 1:
            k = np.arange(1, n)          # k = 1..n-1, stored at j = n-k
            s1 = t[n] - np.asarray(t[1:n])       # t_n - t_k   (> 0)
            s2 = t[n] - np.asarray(t[0:n - 1])   # t_n - t_{k-1}
            tau = s2 - s1
            # w_{2-a}(s2) - w_{2-a}(s1) = s1^(1-a) * expm1((1-a)*log(s2/s1)) / G(2-a)
            vals = s1 ** (1.0 - alpha) * np.expm1((1.0 - alpha) * np.log(s2 / s1))
            row[n - k] = vals / (self._g2 * tau)
        return row

    def _ensure(self, n: int) -> None:
        self._check_level(n)
        if self._uniform:
            self._ensure_uniform(n)
        else:
            self._ensure_general(n)

    def _ensure_uniform(self, n: int) -> None:
        if self._a1 is None:
            tau, alpha = self._tau_uniform, self.alpha
            j = np.arange(self.n_max, dtype=float)
            # a_j = [w_{2-a}((j+1)tau) - w_{2-a}(j tau)] / tau
            w = (tau * (j + 1.0)) ** (1.0 - alpha) - (tau * j) ** (1.0 - alpha)
            self._a1 = w / (self._g2 * tau)
            self._th1 = np.empty(self.n_max)
            self._th1[0] = 1.0 / self._a1[0]
            self._p1 = np.empty(self.n_max)
            self._p1[0] = self._th1[0]
            self._built = 1
        while self._built < n:
            m = self._built  # new theta index
            conv = np.dot(self._th1[:m][::-1], self._a1[1:m + 1])
            self._th1[m] = -conv / self._a1[0]
            self._p1[m] = self._p1[m - 1] + self._th1[m]
            self._built += 1

    def _grow_tables(self, n: int) -> None:
        need = n + 1
        if self._a2 is None:
            cap = max(64, need)
            self._a2 = np.zeros((cap, cap))
            self._th2 = np.zeros((cap, cap))
            self._p2 = np.zeros((cap, cap))
        elif self._a2.shape[0] < need:
            cap = max(need, 2 * self._a2.shape[0])
            for name in ("_a2", "_th2", "_p2"):
                old = getattr(self, name)
                new = np.zeros((cap, cap))
                new[:old.shape[0], :old.shape[1]] = old
                setattr(self, name, new)

    def _ensure_general(self, n: int) -> None:
        self._grow_tables(n)
        a2, th2, p2 = self._a2, self._th2, self._p2
        while self._built < n:
            m = self._built + 1
            a2[m, :m] = self._l1_row_values(m)
            # DOC row by recursion: theta^(m)_i = -(1/a0^(m-i)) sum over the
            # already-known entries; the gathered a-values lie on one diagonal
            th = th2[m]
            th[0] = 1.0 / a2[m, 0]
            for i in range(1, m):
                dvec = np.diagonal(a2, offset=i - m)  # dvec[q] = a2[m-i+q, q]
                s = np.dot(th[:i][::-1], dvec[1:i + 1])
                th[i] = -s / a2[m - i, 0]
            # DCC row: shift previous row then add the fresh DOC row
            p2[m, 0] = th[0]
            if m > 1:
                p2[m, 1:m] = p2[m - 1, :m - 1] + th[1:m]
            self._built = m

    def l1_row(self, n: int) -> np.ndarray:
        """L1 kernel row a^(n)_j for j = 0..n-1 (j = n-k)."""
        self._ensure(n)
        if self._uniform:
            return self._a1[:n]
        return self._a2[n, :n]

    def doc_row(self, n: int) -> np.ndarray:
        """DOC kernel row theta^(n)_j for j = 0..n-1."""
        self._ensure(n)
        if self._uniform:
            return self._th1[:n]
        return self._th2[n, :n]

    def dcc_update(self, n: int) -> np.ndarray:
        """DCC kernel row p^(n)_j for j = 0..n-1, maintained incrementally."""
        self._ensure(n)
        if self._uniform:
            return self._p1[:n]
        return self._p2[n, :n]

    # common aliases used by the solver
    a_row = l1_row
    p_row = dcc_update

    def a0(self, n: int) -> float:
        return float(self.l1_row(n)[0])

    # -- discrete Caputo application ----------------------------------------

    def caputo_apply(self, diffs, n: int):
        """Discrete Caputo value sum_{k=1}^n a^(n)_{n-k} * diffs[k-1].

        diffs holds the increments v^k - v^{k-1} (scalars or fields) for
        k = 1..n; the result is linear in them.
        """
        row = self.l1_row(n)
        arr = np.asarray(diffs, dtype=float)
        if arr.shape[0] != n:
            raise ValueError(f"expected {n} increments, got {arr.shape[0]}")
        return np.tensordot(row[::-1], arr, axes=(0, 0))


def mittag_leffler(alpha: float, z: float) -> float:
    """One-parameter Mittag-Leffler function E_a(z) = sum z^k / Gamma(1+k*a).

    Partial-sum evaluation with a 1e-15 relative term-size stopping rule;
    equals exp(z) at alpha = 1.  Supported for 0 < alpha <= 1 and
    0 <= z <= 50; sums exceeding double range come back as math.inf.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0,1]")
    if not 0.0 <= z <= 50.0:
        raise ValueError("z outside supported range [0, 50]")
    if z == 0.0:
        return 1.0
    logz = math.log(z)
    total = 0.0
    prev = math.inf
    for k in range(100_000):
        term = math.exp(k * logz - math.lgamma(1.0 + k * alpha))
        if math.isinf(term) or math.isinf(total):
            return math.inf
        total += term
        if term <= prev and term <= 1e-15 * total:
            return total
        prev = term
    raise RuntimeError("Mittag-Leffler series failed to converge")


StepBounds = namedtuple("StepBounds", ["tau_conv", "tau_solv"])


def step_bounds(alpha: float, eps2: float, kappa: float) -> StepBounds:
    """Maximum step sizes for convergence and for unique solvability.

    tau_conv = (2*w_{2-a}(1)*eps2/kappa)**(1/a) and tau_solv the same with
    factor 4; both tend to 2*eps2/kappa and 4*eps2/kappa as alpha -> 1.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0,1]")
    if eps2 <= 0 or kappa <= 0:
        raise ValueError("eps2 and kappa must be positive")
    w1 = 1.0 / _gamma(2.0 - alpha)
    return StepBounds(
        tau_conv=(2.0 * w1 * eps2 / kappa) ** (1.0 / alpha),
        tau_solv=(4.0 * w1 * eps2 / kappa) ** (1.0 / alpha),
    )


def consistency_bound(kset: KernelSet, second_deriv_norm, n: int,
                      quad_tol: float = 1e-10) -> float:
    """Weighted global consistency bound of the L1 formula at level n.

    Evaluates 2 * sum_k p^(n)_{n-k} a0^(k) * integral over (t_{k-1}, t_k) of
    (t - t_{k-1}) * second_deriv_norm(t), with adaptive quadrature per
    subinterval.  second_deriv_norm may be singular (integrably) at t=0.
    """
    p = kset.p_row(n)
    t = kset.times()
    total = 0.0
    for k in range(1, n + 1):
        tk0, tk1 = t[k - 1], t[k]
        val, err, *rest = quad(
            lambda s, lo=tk0: (s - lo) * second_deriv_norm(s),
            tk0, tk1, epsabs=quad_tol * 1e-2, epsrel=quad_tol,
            limit=200, full_output=1,
        )
        if len(rest) > 1:  # quadpack appended an explanation message
            raise RuntimeError(
                f"quadrature failed on ({tk0}, {tk1}): {rest[1]}"
            )
        total += p[n - k] * kset.a0(k) * val
    return 2.0 * total


def error_envelope(alpha: float, kappa: float, eps2: float, r_star: float,
                   t_n: float, consistency: float,
                   projection: float = 0.0) -> float:
    """Error-bound envelope 2*E_a(kappa*t^a/(2*eps2*r_*))*(projection + consistency).

    Diagnostic only; the prefactor uses the Mittag-Leffler series above.
    """
    if r_star <= 0:
        raise ValueError("r_star must be positive")
    z = kappa * t_n**alpha / (2.0 * eps2 * r_star)
    return 2.0 * mittag_leffler(alpha, z) * (projection + consistency)

"""Time stepping: implicit variable-step L1 scheme and its variants.

Each step solves the semilinear system

    a0*(phi - phi_prev) + hist + kappa*(eps2*lap^2 phi - div f(grad phi)) = g

by fixed-point iteration: the stiff linear part (a0 + kappa*eps2*lap^2) is
inverted exactly (it is diagonal in transform space) while the slope flux is
frozen at the previous iterate.  The iteration starts from phi_prev and
terminates on the successive-iterate distance, with an independent residual
check of the full equation guarding against false convergence.

Variants: convex splitting lags the concave -lap(phi) part to the previous
level and needs no step bound for solvability; backward Euler replaces the
fractional kernel with 1/tau and serves as the alpha -> 1 comparison target.

A single run is strictly sequential in n (the fractional memory term needs
the whole increment history); independent runs may execute in parallel.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import KernelSet, StepBounds, rl_weight, step_bounds
from .model import ModelParams, chemical_potential, flux_divergence, free_energy
from .spectral import SpectralGrid
from .timemesh import TimeMesh

__all__ = [
    "SolverConfig",
    "AdaptiveConfig",
    "Problem",
    "HistoryBuffer",
    "RunRecord",
    "StepConvergenceError",
    "StepBoundError",
    "RunAborted",
    "step_l1",
    "step_convex_splitting",
    "step_backward_euler",
    "adaptive_tau",
    "run",
    "save_checkpoint",
    "load_checkpoint",
]

SCHEMES = ("l1", "splitting", "euler")
ENFORCE = ("off", "convergence", "solvability")


class StepConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach tolerance."""

    def __init__(self, level, iters, residual):
        super().__init__(
            f"step {level}: no convergence after {iters} iterations "
            f"(residual {residual:.3e})"
        )
        self.level = level
        self.iters = iters
        self.residual = residual


class StepBoundError(ValueError):
    """Requested step size violates the enforced bound."""


class RunAborted(RuntimeError):
    """A step failed mid-run; carries the partial record."""

    def __init__(self, record, cause):
        super().__init__(f"run aborted at level {record.n[-1] if record.n.size else 0}: {cause}")
        self.record = record
        self.cause = cause


@dataclass(frozen=True)
class AdaptiveConfig:
    """Step controller tau = max(tau_min, tau_max / sqrt(1 + eta*||d phi/dt||^2))."""

    tau_min: float
    tau_max: float
    eta: float

    def __post_init__(self):
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    fp_tol: float = 1e-12
    fp_max_iters: int = 500
    scheme: str = "l1"
    enforce_step_bound: str = "off"
    adaptive: AdaptiveConfig | None = None
    zero_flux: bool = False  # test hook: drop the nonlinear flux entirely

    def __post_init__(self):
        if self.fp_tol <= 0:
            raise ValueError("fp_tol must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.enforce_step_bound not in ENFORCE:
            raise ValueError(f"enforce_step_bound must be one of {ENFORCE}")


@dataclass
class Problem:
    """Grid, model parameters, initial field, optional forcing, horizon."""

    grid: SpectralGrid
    params: ModelParams
    phi0: np.ndarray
    forcing: Callable[[float], np.ndarray] | None = None
    T: float | None = None


class HistoryBuffer:
    """Increment history nabla_tau phi^k with an O(1)-amortized append.

    weighted_sum computes sum_k w[k-1] * inc_k without copying the stack.
    """

    def __init__(self, shape: tuple, capacity: int = 64):
        self._buf = np.empty((capacity,) + tuple(shape))
        self._n = 0
        self.phi_prev: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self._n

    def append(self, inc: np.ndarray) -> None:
        if self._n == self._buf.shape[0]:
            grown = np.empty((2 * self._n,) + self._buf.shape[1:])
            grown[: self._n] = self._buf
            self._buf = grown
        self._buf[self._n] = inc
        self._n += 1

    def increments(self) -> np.ndarray:
        return self._buf[: self._n]

    def weighted_sum(self, w: np.ndarray):
        if self._n == 0:
            return 0.0
        if w.shape[0] != self._n:
            raise ValueError(f"history holds {self._n} increments, got {w.shape[0]} weights")
        return np.tensordot(w, self._buf[: self._n], axes=(0, 0))


@dataclass
class RunRecord:
    """Per-step time series of a run plus its metadata."""

    COLUMNS = ("n", "t_n", "tau_n", "E", "E_alpha", "volume",
               "l2_norm", "l2_margin", "fp_iters")

    n: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    E: np.ndarray
    E_alpha: np.ndarray
    volume: np.ndarray
    l2_norm: np.ndarray
    l2_margin: np.ndarray
    fp_iters: np.ndarray
    metadata: dict = field(default_factory=dict)
    phi_final: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        key = {"n": "n", "t_n": "t", "tau_n": "tau", "E": "E",
               "E_alpha": "E_alpha", "volume": "volume", "l2_norm": "l2_norm",
               "l2_margin": "l2_margin", "fp_iters": "fp_iters"}[name]
        return getattr(self, key)

    @property
    def steps_taken(self) -> int:
        return int(self.n[-1]) if self.n.size else 0


class _Recorder:
    def __init__(self):
        self.rows = {k: [] for k in RunRecord.COLUMNS}

    def add(self, **kw):
        for k, v in kw.items():
            self.rows[k].append(v)

    def build(self, metadata, phi_final=None) -> RunRecord:
        r = self.rows
        return RunRecord(
            n=np.asarray(r["n"], dtype=int),
            t=np.asarray(r["t_n"]),
            tau=np.asarray(r["tau_n"]),
            E=np.asarray(r["E"]),
            E_alpha=np.asarray(r["E_alpha"]),
            volume=np.asarray(r["volume"]),
            l2_norm=np.asarray(r["l2_norm"]),
            l2_margin=np.asarray(r["l2_margin"]),
            fp_iters=np.asarray(r["fp_iters"], dtype=int),
            metadata=metadata,
            phi_final=phi_final,
        )


# -- single-step solves ------------------------------------------------------


def _solve_semilinear(phi_prev, a0, hist_field, grid, p, cfg, forcing, scheme):
    """Fixed-point solve of the implicit step; returns (phi, iters, residual)."""
    kappa = p.kappa
    rhs_const = a0 * phi_prev
    if hist_field is not None:
        rhs_const = rhs_const - hist_field
    if forcing is not None:
        rhs_const = rhs_const + forcing
    if scheme == "splitting":
        rhs_const = rhs_const - kappa * grid.laplacian(phi_prev)

    A_hat = a0 + kappa * p.eps2 * grid._bilap

    if cfg.zero_flux:
        def nl(u):
            return 0.0
    elif scheme == "splitting":
        def nl(u):
            wx, wy = grid.grad(u)
            fac = wx * wx + wy * wy
            return kappa * grid.div(fac * wx, fac * wy)
    else:
        def nl(u):
            return kappa * flux_divergence(u, grid)

    phi = phi_prev
    phi_hat = grid.fft(phi_prev)
    rhat = grid.fft(rhs_const + nl(phi))
    fp_tol = cfg.fp_tol
    residual = np.inf
    relax = 1.0
    diffs = []
    for s in range(1, cfg.fp_max_iters + 1):
        if relax == 1.0:
            phi_hat = rhat / A_hat
        else:
            # damped update breaks the neutral oscillatory modes the plain
            # map cannot contract; the fixed point is unchanged
            phi_hat = (1.0 - relax) * phi_hat + relax * (rhat / A_hat)
        phi_new = grid.ifft(phi_hat)
        diff = grid.norm(phi_new - phi)
        rhat_new = grid.fft(rhs_const + nl(phi_new))
        residual = grid.hat_norm(A_hat * phi_hat - rhat_new)
        phi, rhat = phi_new, rhat_new
        if residual <= fp_tol or (diff <= fp_tol and residual <= 10.0 * fp_tol):
            return phi, s, residual
        diffs.append(diff)
        if relax == 1.0 and s >= 8 and diffs[-1] > 0.6 * diffs[-7]:
            relax = 0.5
    raise StepConvergenceError(None, cfg.fp_max_iters, residual)


def _bound_limit(p: ModelParams, cfg: SolverConfig, scheme: str) -> float | None:
    if cfg.enforce_step_bound == "off":
        return None
    alpha = 1.0 if scheme == "euler" else p.alpha
    b = step_bounds(alpha, p.eps2, p.kappa)
    return b.tau_conv if cfg.enforce_step_bound == "convergence" else b.tau_solv


def _check_bound(tau_n, p, cfg, scheme, level):
    limit = _bound_limit(p, cfg, scheme)
    if limit is not None and tau_n > limit * (1.0 + 1e-12):
        raise StepBoundError(
            f"step {level}: tau={tau_n:.6g} exceeds enforced "
            f"{cfg.enforce_step_bound} bound {limit:.6g}"
        )


def step_l1(phi_prev, hist: HistoryBuffer, kset: KernelSet, p: ModelParams,
            cfg: SolverConfig, n: int, grid: SpectralGrid, forcing=None):
    """Advance the fully implicit L1 scheme one level; returns (phi, iters, residual)."""
    row = kset.l1_row(n)
    if cfg.enforce_step_bound != "off":
        _check_bound(kset.tau(n), p, cfg, "l1", n)
    hist_field = hist.weighted_sum(row[1:n][::-1]) if n > 1 else None
    try:
        return _solve_semilinear(phi_prev, row[0], hist_field, grid, p, cfg, forcing, "l1")
    except StepConvergenceError as e:
        raise StepConvergenceError(n, e.iters, e.residual) from None


def step_convex_splitting(phi_prev, hist, kset, p, cfg, n, grid, forcing=None):
    """Convex-splitting variant: concave -lap(phi) lagged to the previous level.

    Unconditionally solvable, so only a configured convergence bound is
    enforced; the solvability setting imposes nothing here.
    """
    row = kset.l1_row(n)
    if cfg.enforce_step_bound == "convergence":
        _check_bound(kset.tau(n), p, cfg, "splitting", n)
    hist_field = hist.weighted_sum(row[1:n][::-1]) if n > 1 else None
    try:
        return _solve_semilinear(phi_prev, row[0], hist_field, grid, p, cfg,
                                 forcing, "splitting")
    except StepConvergenceError as e:
        raise StepConvergenceError(n, e.iters, e.residual) from None


def step_backward_euler(phi_prev, tau_n, p, cfg, forcing=None, grid=None, level=None):
    """Single-level step with kernel a0 = 1/tau; the alpha -> 1 limit scheme."""
    _check_bound(tau_n, p, cfg, "euler", level)
    try:
        return _solve_semilinear(phi_prev, 1.0 / tau_n, None, grid, p, cfg, forcing, "l1")
    except StepConvergenceError as e:
        raise StepConvergenceError(level, e.iters, e.residual) from None


def adaptive_tau(phi_n, phi_prev, tau_n, cfg: SolverConfig, grid: SpectralGrid,
                 p: ModelParams = None, t_n: float = None, T: float = None) -> float:
    """Next step size max(tau_min, tau_max/sqrt(1 + eta*||(phi^n-phi^{n-1})/tau||^2)).

    When step-bound enforcement is active the result is clamped to the
    enforced bound; when t_n and T are given it never exceeds the remaining
    time (with a snap onto T to avoid a sliver final step).
    """
    ad = cfg.adaptive
    if ad is None:
        raise ValueError("adaptive configuration missing")
    rate = grid.norm(phi_n - phi_prev) / tau_n
    tau = max(ad.tau_min, ad.tau_max / np.sqrt(1.0 + ad.eta * rate * rate))
    if p is not None:
        limit = _bound_limit(p, cfg, cfg.scheme)
        if limit is not None:
            tau = min(tau, limit)
    if t_n is not None and T is not None:
        remaining = T - t_n
        tau = min(tau, remaining)
        if remaining - tau < 1e-9 * T:
            tau = remaining
    return float(tau)


# -- graded startup cell for adaptive runs ------------------------------------


def graded_prefix_points(alpha: float, tau_min: float, T: float) -> np.ndarray:
    """Startup cell [0, T0], T0 = min(1/g, T) with g = (2-alpha)/alpha, graded
    so that the final cell step just reaches tau_min (smallest such count)."""
    g = (2.0 - alpha) / alpha
    T0 = min(1.0 / g, T)

    def last_step(n0):
        return T0 * (1.0 - ((n0 - 1.0) / n0) ** g)

    hi = 1
    while last_step(hi) > tau_min:
        hi *= 2
        if hi > 10**8:
            raise ValueError("tau_min too small for a graded startup cell")
    lo = max(1, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if last_step(mid) <= tau_min:
            hi = mid
        else:
            lo = mid + 1
    n0 = lo
    pts = T0 * (np.arange(n0 + 1) / n0) ** g
    pts[-1] = T0
    return pts


# -- full runs ----------------------------------------------------------------


def run(problem: Problem, cfg: SolverConfig, mesh: TimeMesh | None = None, *,
        on_step=None, metadata: dict | None = None,
        checkpoint_path=None, checkpoint_every: int | None = None,
        resume_from=None) -> RunRecord:
    """Advance from t=0 to T, recording the per-step diagnostics.

    Fixed-mesh runs walk the supplied TimeMesh; adaptive runs (cfg.adaptive
    set, mesh None) prepend the graded startup cell and then follow the step
    controller until problem.T.  Step failures abort with the partial record
    attached to the raised RunAborted.
    """
    grid, p = problem.grid, problem.params
    scheme = cfg.scheme
    adaptive = cfg.adaptive is not None and mesh is None
    if mesh is None and not adaptive:
        raise ValueError("need a mesh or an adaptive configuration")
    if adaptive and problem.T is None:
        raise ValueError("adaptive runs need problem.T")
    T = problem.T if adaptive else mesh.T

    kset = None
    if scheme != "euler":
        if adaptive:
            kset = KernelSet(p.alpha)
        else:
            kset = KernelSet(p.alpha, mesh)

    prefix_pts = None
    if adaptive:
        prefix_pts = graded_prefix_points(p.alpha, cfg.adaptive.tau_min, T)
        for tv in prefix_pts[1:]:
            kset.add_time(float(tv))

    meta = {
        "scheme": scheme,
        "alpha": p.alpha,
        "eps2": p.eps2,
        "kappa": p.kappa,
        "M": grid.M,
        "L": grid.L,
        "fp_tol": cfg.fp_tol,
        "enforce_step_bound": cfg.enforce_step_bound,
        "T": T,
    }
    if adaptive:
        meta.update({
            "adaptive_eta": cfg.adaptive.eta,
            "adaptive_tau_min": cfg.adaptive.tau_min,
            "adaptive_tau_max": cfg.adaptive.tau_max,
            "prefix_N0": int(prefix_pts.size - 1),
        })
    else:
        meta["mesh_N"] = mesh.N
    if metadata:
        meta.update(metadata)

    rec = _Recorder()
    t_start = time.perf_counter()
    phi0 = problem.phi0

    if resume_from is not None:
        state = resume_from if isinstance(resume_from, dict) else load_checkpoint(resume_from)
        if scheme == "euler":
            raise ValueError("resume is not supported for the backward Euler scheme")
        n = int(state["n"])
        times = state["times"]
        if adaptive:
            have = kset.times()
            if not np.array_equal(have[: min(len(have), n + 1)], times[: min(len(have), n + 1)]):
                raise ValueError("checkpoint times disagree with the startup cell")
            for tv in times[len(have):]:
                kset.add_time(float(tv))
        else:
            if not np.array_equal(mesh.points[: n + 1], times):
                raise ValueError("checkpoint times disagree with the mesh")
        phi = state["phi"].copy()
        hist = HistoryBuffer(phi.shape)
        for inc in state["increments"]:
            hist.append(inc)
        mu_sq = list(state["mu_sq"])
        t_n = float(times[-1])
        tau_n = float(times[-1] - times[-2]) if n >= 1 else 0.0
        phi_prev = phi - state["increments"][-1] if n >= 1 else phi.copy()
        meta["resumed_at"] = n
    else:
        n = 0
        phi = phi0.copy()
        phi_prev = phi0.copy()
        hist = HistoryBuffer(phi.shape)
        mu_sq = []
        t_n = 0.0
        tau_n = 0.0
        E0 = free_energy(phi, grid, p)
        rec.add(n=0, t_n=0.0, tau_n=0.0, E=E0, E_alpha=E0,
                volume=grid.integral(phi), l2_norm=grid.norm(phi),
                l2_margin=0.0, fp_iters=0)
        if on_step is not None:
            on_step(0, 0.0, phi)

    hist.phi_prev = phi_prev
    tau_hist: list[float] = []
    norm0_sq = grid.norm(phi0) ** 2

    def record_level(nn, tt, tau, phi_new, phi_old, iters):
        mu = _scheme_mu(phi_new, phi_old, grid, p, scheme)
        mu_sq.append(grid.norm(mu) ** 2)
        tau_hist.append(tau)
        E = free_energy(phi_new, grid, p)
        if scheme == "euler":
            Ea = E + 0.5 * p.kappa * float(
                np.dot(np.asarray(tau_hist), np.asarray(mu_sq)))
            margin_alpha = 1.0
        else:
            prow = kset.p_row(nn)
            Ea = E + 0.5 * p.kappa * float(np.dot(prow[::-1], np.asarray(mu_sq)))
            margin_alpha = p.alpha
        margin = (norm0_sq
                  + 0.5 * p.kappa * grid.volume * float(rl_weight(1.0 + margin_alpha, tt))
                  - grid.norm(phi_new) ** 2)
        rec.add(n=nn, t_n=tt, tau_n=tau, E=E, E_alpha=Ea,
                volume=grid.integral(phi_new),
                l2_norm=grid.norm(phi_new), l2_margin=margin, fp_iters=iters)

    def advance(nn, tt, tau):
        nonlocal phi, phi_prev
        g = problem.forcing(tt) if problem.forcing is not None else None
        if scheme == "euler":
            phi_new, iters, _res = step_backward_euler(
                phi, tau, p, cfg, forcing=g, grid=grid, level=nn)
        elif scheme == "splitting":
            phi_new, iters, _res = step_convex_splitting(
                phi, hist, kset, p, cfg, nn, grid, forcing=g)
        else:
            phi_new, iters, _res = step_l1(
                phi, hist, kset, p, cfg, nn, grid, forcing=g)
        if not np.all(np.isfinite(phi_new)):
            raise StepConvergenceError(nn, iters, float("nan"))
        if scheme != "euler":
            hist.append(phi_new - phi)
        record_level(nn, tt, tau, phi_new, phi, iters)
        phi_prev = phi
        phi = phi_new
        hist.phi_prev = phi_prev
        if on_step is not None:
            on_step(nn, tt, phi)
        if (checkpoint_path is not None and checkpoint_every
                and kset is not None and nn % checkpoint_every == 0):
            save_checkpoint(checkpoint_path, n=nn, times=kset.times()[: nn + 1],
                            phi=phi, increments=hist.increments(),
                            mu_sq=np.asarray(mu_sq))

    try:
        if adaptive:
            npts = prefix_pts.size
            while n + 1 < npts:
                n += 1
                tau_n = float(prefix_pts[n] - prefix_pts[n - 1])
                t_n = float(prefix_pts[n])
                advance(n, t_n, tau_n)
            while t_n < T * (1.0 - 1e-14):
                tau_next = adaptive_tau(phi, hist.phi_prev, tau_n, cfg, grid,
                                        p=p, t_n=t_n, T=T)
                n += 1
                t_n = min(t_n + tau_next, T)
                tau_n = tau_next
                if kset is not None:
                    kset.add_time(t_n)
                advance(n, t_n, tau_n)
        else:
            start = n
            for nn in range(start + 1, mesh.N + 1):
                n = nn
                tau_n = float(mesh.steps[nn - 1])
                t_n = float(mesh.points[nn])
                advance(nn, t_n, tau_n)
    except (StepConvergenceError, StepBoundError) as exc:
        meta["wall_time"] = time.perf_counter() - t_start
        meta["aborted"] = True
        raise RunAborted(rec.build(meta, phi_final=phi), exc) from exc

    meta["wall_time"] = time.perf_counter() - t_start
    meta["steps"] = int(n)
    return rec.build(meta, phi_final=phi)


def _scheme_mu(phi_new, phi_old, grid, p, scheme):
    """Chemical potential consistent with the scheme that produced phi_new."""
    if scheme == "splitting":
        wx, wy = grid.grad(phi_new)
        fac = wx * wx + wy * wy
        return (p.eps2 * grid.bilaplacian(phi_new)
                - grid.div(fac * wx, fac * wy)
                + grid.laplacian(phi_old))
    return chemical_potential(phi_new, grid, p)


# -- checkpointing --------------------------------------------------------------

_CKPT_MAGIC = b"TFMBCKPT"
_CKPT_VERSION = 1


def save_checkpoint(path, *, n: int, times, phi, increments, mu_sq) -> None:
    """Write the resumable state after level n.

    Binary layout, little-endian: 8-byte magic "TFMBCKPT", 1 version byte,
    uint64 n, uint64 M, then float64 arrays back to back: times (n+1),
    phi (M*M), increments (n*M*M, k = 1..n in order), mu_sq (n).
    """
    phi = np.ascontiguousarray(phi, dtype="<f8")
    M = phi.shape[0]
    times = np.ascontiguousarray(times, dtype="<f8")
    incs = np.ascontiguousarray(increments, dtype="<f8")
    mu = np.ascontiguousarray(mu_sq, dtype="<f8")
    if times.size != n + 1 or incs.shape[0] != n or mu.size != n:
        raise ValueError("inconsistent checkpoint state")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<B", _CKPT_VERSION))
        fh.write(struct.pack("<QQ", n, M))
        times.tofile(fh)
        phi.tofile(fh)
        incs.tofile(fh)
        mu.tofile(fh)


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by save_checkpoint."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n, M = struct.unpack("<QQ", fh.read(16))
        times = np.fromfile(fh, dtype="<f8", count=n + 1)
        phi = np.fromfile(fh, dtype="<f8", count=M * M).reshape(M, M)
        incs = np.fromfile(fh, dtype="<f8", count=n * M * M).reshape(n, M, M)
        mu = np.fromfile(fh, dtype="<f8", count=n)
    return {"n": int(n), "times": times, "phi": phi, "increments": incs, "mu_sq": mu}

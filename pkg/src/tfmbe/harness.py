"""Experiment drivers: convergence studies, coarsening runs, kernel audits.

The manufactured problem feeds the scheme a forcing built from the closed
form Phi = w_{1+a}(t) * sin(x)sin(y), whose Caputo derivative is exactly
sin(x)sin(y); all spatial pieces are band-limited, so the pseudo-spectral
forcing evaluation is exact and measured errors are purely temporal.

Independent (gamma, N) study cells own their solver state; the result table
is assembled by key, not completion order, and a fixed seed makes every
cell bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .kernels import KernelSet, rl_weight
from .model import ModelParams, flux_divergence
from .spectral import SpectralGrid
from .stepper import AdaptiveConfig, Problem, RunRecord, SolverConfig, run
from .timemesh import TimeMesh, build_graded, build_graded_random, build_random, build_uniform

__all__ = [
    "ConvergenceRow",
    "manufactured_problem",
    "convergence_study",
    "measured_order",
    "coarsening_initial",
    "coarsening_run",
    "kernels_check",
    "emit",
    "write_field",
]


# -- manufactured accuracy test ------------------------------------------------


def manufactured_problem(grid: SpectralGrid, params: ModelParams, T: float = 1.0):
    """Problem with exact solution w_{1+a}(t)*sin(x)sin(y) via forcing.

    Returns (problem, exact) where exact(t) evaluates the solution on the
    grid.
    """
    S = np.sin(grid.X) * np.sin(grid.Y)
    bilapS = grid.bilaplacian(S)
    alpha = params.alpha

    def exact(t):
        return float(rl_weight(1.0 + alpha, t)) * S if t > 0 else 0.0 * S

    def forcing(t):
        amp = float(rl_weight(1.0 + alpha, t))
        # d^alpha/dt^alpha of w_{1+a} is exactly 1
        return S + params.kappa * (params.eps2 * amp * bilapS
                                   - flux_divergence(amp * S, grid))

    problem = Problem(grid=grid, params=params, phi0=np.zeros_like(S),
                      forcing=forcing, T=T)
    return problem, exact


@dataclass
class ConvergenceRow:
    N: int
    tau_max: float
    eN: float
    order: float | None


def measured_order(rows: list[ConvergenceRow]) -> None:
    """Fill the order column: log(e(N)/e(2N)) / log(tau(N)/tau(2N))."""
    for prev, cur in zip(rows, rows[1:]):
        cur.order = math.log(prev.eN / cur.eN) / math.log(prev.tau_max / cur.tau_max)


def _cell_seed(seed: int, N: int, gamma: float) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(N, int(round(1000 * gamma))))


def convergence_study(alpha: float, gammas, Ns, *, eps2: float = 0.25,
                      kappa: float = 1.0, M: int = 32, T: float = 1.0,
                      seed: int = 2025, scheme: str = "l1",
                      keep_records: bool = False):
    """Graded+random-tail accuracy sweep; returns {gamma: [ConvergenceRow...]}.

    eN is the max-over-levels discrete L2 error against the manufactured
    solution.  With keep_records the per-cell RunRecords come back too,
    keyed (gamma, N).
    """
    grid = SpectralGrid(M)
    params = ModelParams(eps2=eps2, kappa=kappa, alpha=alpha)
    tables: dict[float, list[ConvergenceRow]] = {}
    records: dict[tuple, RunRecord] = {}
    for gamma in gammas:
        rows = []
        for N in Ns:
            mesh = build_graded_random(N, gamma, T, _cell_seed(seed, N, gamma))
            problem, exact = manufactured_problem(grid, params, T)
            err = {"max": 0.0}

            def track(n, t, phi, _exact=exact, _err=err):
                if n > 0:
                    _err["max"] = max(_err["max"], grid.norm(phi - _exact(t)))

            cfg = SolverConfig(scheme=scheme)
            rec = run(problem, cfg, mesh, on_step=track,
                      metadata={"mesh": f"graded_random N={N} gamma={gamma}",
                                "seed": seed})
            rows.append(ConvergenceRow(N=N, tau_max=mesh.tau_max,
                                       eN=err["max"], order=None))
            if keep_records:
                records[(gamma, N)] = rec
        measured_order(rows)
        tables[gamma] = rows
    if keep_records:
        return tables, records
    return tables


# -- coarsening dynamics ---------------------------------------------------------


def coarsening_initial(grid: SpectralGrid) -> np.ndarray:
    """Benchmark initial datum 0.1*(sin3x*sin2y + sin5x*sin5y)."""
    X, Y = grid.X, grid.Y
    return 0.1 * (np.sin(3 * X) * np.sin(2 * Y) + np.sin(5 * X) * np.sin(5 * Y))


def coarsening_run(alpha: float, *, eps2: float = 0.1, kappa: float = 1.0,
                   T: float = 30.0, M: int = 64, scheme: str = "l1",
                   adaptive: AdaptiveConfig | None = None,
                   uniform_tau: float | None = None,
                   enforce_step_bound: str = "solvability",
                   snapshot_times=(), fp_tol: float = 1e-12):
    """Coarsening benchmark run; returns (record, snapshots).

    Exactly one of adaptive / uniform_tau selects the stepping.  Snapshots
    are taken at the grid time nearest each requested time and returned as
    {requested: (actual_t, field)}.
    """
    if (adaptive is None) == (uniform_tau is None):
        raise ValueError("pass exactly one of adaptive or uniform_tau")
    grid = SpectralGrid(M)
    params = ModelParams(eps2=eps2, kappa=kappa, alpha=alpha)
    phi0 = coarsening_initial(grid)
    problem = Problem(grid=grid, params=params, phi0=phi0, forcing=None, T=T)

    want = list(snapshot_times)
    best = {tq: (np.inf, None, None) for tq in want}

    def snap(n, t, phi):
        for tq in want:
            d = abs(t - tq)
            if d < best[tq][0]:
                best[tq] = (d, t, phi.copy())

    if adaptive is not None:
        cfg = SolverConfig(scheme=scheme, adaptive=adaptive, fp_tol=fp_tol,
                           enforce_step_bound=enforce_step_bound)
        rec = run(problem, cfg, None, on_step=snap if want else None,
                  metadata={"mesh": f"adaptive eta={adaptive.eta}"})
    else:
        N = int(round(T / uniform_tau))
        mesh = build_uniform(N, T)
        cfg = SolverConfig(scheme=scheme, fp_tol=fp_tol,
                           enforce_step_bound=enforce_step_bound)
        rec = run(problem, cfg, mesh, on_step=snap if want else None,
                  metadata={"mesh": f"uniform tau={uniform_tau}"})
    snaps = {tq: (best[tq][1], best[tq][2]) for tq in want}
    return rec, snaps


def check_monitors(record: RunRecord, *, dissipation: bool = True,
                   vol_tol: float = 1e-9, margin_tol: float = 1e-8,
                   energy_slack: float = 1e-9) -> list[str]:
    """Return a list of violated run invariants (empty when clean).

    Checks volume conservation against |Omega|, the L2-bound margin, and
    (optionally) monotone decay of the variational energy.
    """
    issues = []
    omega = record.metadata["L"] ** 2
    drift = np.max(np.abs(record.volume - record.volume[0]))
    if drift > vol_tol * omega:
        issues.append(f"volume drift {drift:.3e} exceeds {vol_tol:.1e}*|Omega|")
    if np.min(record.l2_margin) < -margin_tol:
        issues.append(f"L2 stability margin {np.min(record.l2_margin):.3e} below -{margin_tol:.1e}")
    if dissipation and record.E_alpha.size > 1:
        Ea = record.E_alpha
        slack = energy_slack * np.maximum(1.0, np.abs(Ea[:-1]))
        worst = np.max(Ea[1:] - Ea[:-1] - slack)
        if worst > 0:
            issues.append(f"variational energy increased by {worst:.3e} beyond slack")
    return issues


# -- kernel identity audit ---------------------------------------------------------


def kernels_check(alpha: float, mesh_kind: str, N: int, gamma: float = 2.0,
                  seed: int = 0, T: float = 1.0) -> dict:
    """Max identity residuals and DCC margins over all levels n <= N."""
    if mesh_kind == "uniform":
        mesh = build_uniform(N, T)
    elif mesh_kind == "graded":
        mesh = build_graded(N, gamma, T)
    elif mesh_kind == "random":
        mesh = build_random(N, T, seed)
    else:
        raise ValueError("mesh kind must be uniform, graded, or random")
    kset = KernelSet(alpha, mesh)
    worst_orth = 0.0
    worst_comp = 0.0
    min_p = np.inf
    min_gap = np.inf
    a_rows = [None] + [kset.l1_row(n) for n in range(1, N + 1)]
    for n in range(1, N + 1):
        th = kset.doc_row(n)
        pr = kset.dcc_update(n)
        for k in range(1, n + 1):
            # sum_{j=k}^n theta^(n)_{n-j} a^(j)_{j-k} and the same with p
            so = sum(th[n - j] * a_rows[j][j - k] for j in range(k, n + 1))
            sc = sum(pr[n - j] * a_rows[j][j - k] for j in range(k, n + 1))
            worst_orth = max(worst_orth, abs(so - (1.0 if k == n else 0.0)))
            worst_comp = max(worst_comp, abs(sc - 1.0))
        min_p = min(min_p, float(pr.min()))
        gap = float(rl_weight(1.0 + alpha, mesh.points[n])) - float(pr.sum())
        min_gap = min(min_gap, gap)
    return {
        "alpha": alpha,
        "mesh": mesh_kind,
        "N": N,
        "max_orthogonality_residual": worst_orth,
        "max_complementarity_residual": worst_comp,
        "min_dcc": min_p,
        "min_integral_cap_gap": min_gap,
    }


# -- emission ------------------------------------------------------------------


def emit(record: RunRecord, fmt: str, path) -> None:
    """Write a run record as CSV (metadata as # comments) or JSON."""
    cols = RunRecord.COLUMNS
    if fmt == "csv":
        with open(path, "w") as fh:
            for key in sorted(record.metadata):
                fh.write(f"# {key}={record.metadata[key]}\n")
            fh.write(",".join(cols) + "\n")
            for i in range(record.n.size):
                vals = []
                for c in cols:
                    v = record.column(c)[i]
                    vals.append(str(int(v)) if c in ("n", "fp_iters") else repr(float(v)))
                fh.write(",".join(vals) + "\n")
    elif fmt == "json":
        payload = {
            "metadata": {k: record.metadata[k] for k in sorted(record.metadata)},
            "columns": list(cols),
            "rows": [
                [
                    int(record.column(c)[i]) if c in ("n", "fp_iters")
                    else float(record.column(c)[i])
                    for c in cols
                ]
                for i in range(record.n.size)
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError("format must be csv or json")


def parse_emitted(path) -> tuple[dict, dict]:
    """Read back an emitted file; returns (metadata, columns-as-arrays)."""
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            payload = json.load(fh)
        cols = {c: np.asarray([row[i] for row in payload["rows"]])
                for i, c in enumerate(payload["columns"])}
        return payload["metadata"], cols
    meta = {}
    rows = []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(x) for x in line.split(",")])
    data = np.asarray(rows) if rows else np.zeros((0, len(header)))
    return meta, {c: data[:, i] for i, c in enumerate(header)}


def write_field(phi: np.ndarray, path, fmt: str = "bin") -> None:
    """Field snapshot: raw little-endian float64 (row-major, rows = y index)
    or a CSV matrix with one grid row per line."""
    if fmt == "bin":
        np.ascontiguousarray(phi, dtype="<f8").tofile(path)
    elif fmt == "csv":
        np.savetxt(path, phi, delimiter=",", fmt="%.17g")
    else:
        raise ValueError("snapshot format must be bin or csv")
